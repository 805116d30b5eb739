"""Synthetic data for the e-health hierarchical regression model.

Outcomes come in two blocks.  Indexed outcomes ``outcome.y`` are linked
to a person and carry four covariates::

    y = sum_m beta[m] x_m + region + source_region * source + person + eps

Non-indexed outcomes ``outcome.z`` have no person record::

    z = lambda + region + source_region * source + eta

One person is given ``dominance`` times the mean observation count of the
others, so that its random effect has far more children than any other
person effect.
"""

from __future__ import annotations

import argparse
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .data import DataEnvironment, format_data
from .errors import ParabugsError

TRUTH = {
    "beta": [-0.07, -0.26, 0.13, 0.13],
    "lambda": 0.2,
    "mu.region": 0.5,
    "mu.source": -0.3,
    "sd.region": 1.2,
    "sd.source": 0.37,
    "sd.person": 0.5,
    "sd.epsilon": 1.0,
    "sd.eta": 1.0,
}

FILES = {
    "model": "ehealth.bug",
    "id_available": "ehealth_data_id_available.txt",
    "id_missing": "ehealth_data_id_missing.txt",
    "n": "ehealth_data_n.txt",
    "inits1": "ehealth_inits1.txt",
    "inits2": "ehealth_inits2.txt",
    "truth": "ehealth_truth.json",
}


def model_source():
    return resources.files("parabugs").joinpath("fixtures/ehealth.bug").read_text(encoding="utf-8")


def _counts(rng, persons, total, dominance):
    """Observation count per person; person 0 dominates."""
    mean = total / (persons - 1 + dominance)
    big = int(round(dominance * mean))
    rest = total - big
    if mean < 1 or rest < persons - 1:
        raise ParabugsError(
            f"{total} indexed outcomes cannot give {persons} persons at least one each "
            f"with a {dominance}x dominant person"
        )
    others = 1 + rng.multinomial(rest - (persons - 1), np.full(persons - 1, 1.0 / (persons - 1)))
    return np.concatenate([[big], others])


def generate_ehealth(persons, regions, prescriptions, seed, missing_fraction=0.2, dominance=40):
    """Simulate the three data blocks and return them with the true values.

    Parameters
    ----------
    persons, regions : int
    prescriptions : int
        Total number of outcome records (indexed plus non-indexed).
    seed : int
    missing_fraction : float
        Share of records without a person identifier.

    Returns
    -------
    (dict of DataEnvironment, dict)
        Environments keyed ``id_available``, ``id_missing`` and ``n``,
        plus the ground-truth parameters (including random effects).
    """
    persons, regions, prescriptions = int(persons), int(regions), int(prescriptions)
    if persons < 2 or regions < 1 or prescriptions < 2:
        raise ParabugsError("need at least 2 persons, 1 region and 2 prescriptions")
    if regions > persons:
        raise ParabugsError("need at least as many persons as regions")
    n_z = max(1, int(round(missing_fraction * prescriptions)))
    n_y = prescriptions - n_z
    rng = np.random.default_rng(seed)

    counts = _counts(rng, persons, n_y, dominance)
    person_region = np.concatenate([np.arange(regions), rng.integers(0, regions, persons - regions)])
    region_eff = TRUTH["mu.region"] + TRUTH["sd.region"] * rng.standard_normal(regions)
    source_eff = TRUTH["mu.source"] + TRUTH["sd.source"] * rng.standard_normal(regions)
    person_eff = TRUTH["sd.person"] * rng.standard_normal(persons)
    beta = np.array(TRUTH["beta"])

    person_idx = np.repeat(np.arange(persons), counts)
    person_idx = person_idx[rng.permutation(n_y)]
    region_y = person_region[person_idx]
    source_y = rng.integers(0, 2, n_y)
    x = np.column_stack(
        [
            rng.standard_normal(n_y),
            rng.integers(0, 2, n_y),
            rng.standard_normal(n_y),
            rng.integers(0, 2, n_y),
        ]
    ).astype(float)
    y = (
        x @ beta
        + region_eff[region_y]
        + source_eff[region_y] * source_y
        + person_eff[person_idx]
        + TRUTH["sd.epsilon"] * rng.standard_normal(n_y)
    )
    region_z = rng.integers(0, regions, n_z)
    source_z = rng.integers(0, 2, n_z)
    z = (
        TRUTH["lambda"]
        + region_eff[region_z]
        + source_eff[region_z] * source_z
        + TRUTH["sd.eta"] * rng.standard_normal(n_z)
    )

    available = DataEnvironment(
        {
            "outcome.y": np.round(y, 6),
            "x1": np.round(x[:, 0], 6),
            "x2": x[:, 1],
            "x3": np.round(x[:, 2], 6),
            "x4": x[:, 3],
            "region.indexed": region_y + 1,
            "source.indexed": source_y,
            "person.indexed": person_idx + 1,
        }
    )
    missing = DataEnvironment(
        {
            "outcome.z": np.round(z, 6),
            "region.nonindexed": region_z + 1,
            "source.nonindexed": source_z,
        }
    )
    sizes = DataEnvironment(
        {"n.indexed": n_y, "n.nonindexed": n_z, "n.persons": persons, "n.regions": regions}
    )
    truth = dict(TRUTH)
    truth.update(
        {
            "region.effect": region_eff.tolist(),
            "source.effect": source_eff.tolist(),
            "person.effect": person_eff.tolist(),
            "dominant_person": 1,
            "observations_per_person": counts.tolist(),
        }
    )
    return {"id_available": available, "id_missing": missing, "n": sizes}, truth


def fixture_generate_ehealth(persons, regions, prescriptions, seed, out_dir, **kw):
    """Write model, data, inits and truth files; return their paths by role."""
    envs, truth = generate_ehealth(persons, regions, prescriptions, seed, **kw)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {role: out / name for role, name in FILES.items()}
    paths["model"].write_text(model_source(), encoding="utf-8")
    for role, env in envs.items():
        paths[role].write_text(format_data(env), encoding="utf-8")
    fixtures = resources.files("parabugs").joinpath("fixtures")
    for k in ("inits1", "inits2"):
        paths[k].write_text(fixtures.joinpath(FILES[k]).read_text(encoding="utf-8"), encoding="utf-8")
    paths["truth"].write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def main(argv=None):
    p = argparse.ArgumentParser(prog="parabugs-ehealth", description="Generate e-health model data.")
    p.add_argument("--persons", type=int, default=200)
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--prescriptions", type=int, default=5000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--missing-fraction", type=float, default=0.2)
    p.add_argument("--out-dir", default=".")
    args = p.parse_args(argv)
    try:
        paths = fixture_generate_ehealth(
            args.persons, args.regions, args.prescriptions, args.seed, args.out_dir,
            missing_fraction=args.missing_fraction,
        )
    except ParabugsError as exc:
        print(f"error: {exc}")
        return 1
    for role, path in paths.items():
        print(f"{role}: {path}")
    return 0
