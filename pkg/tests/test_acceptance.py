"""Acceptance criteria, one test each, run at their stated tolerances."""

import csv
import math
import os
import time
from functools import lru_cache
from pathlib import Path
import tempfile

import numpy as np
import pytest

from conftest import ehealth_parts, report, seeds_inits, seeds_parts
from oracles import d_separated, random_dag_model, serial_reference
from parabugs import compile_graph, fixtures, parse_data, parse_model
from parabugs.diagnostics import bgr, mc_error
from parabugs.graph import PARAMETER, mean_children, topological_depth
from parabugs.runtime import run_chains
from parabugs.samplers import (
    generate_initial_values,
    initial_state,
    log_likelihood,
    log_likelihood_partial,
)
from parabugs.scheduler import (
    PARTIAL,
    SAMPLE,
    ScheduleTable,
    build_schedule,
    find_conditionally_independent,
    find_partial_product_parallel,
)
from parabugs.script import run_script

SEEDS_PARAMS = {"alpha0", "alpha1", "alpha2", "alpha12", "sigma"}


def seeds_start(dag, k=0):
    state = initial_state(dag, seeds_inits()[k])
    for v in dag.array_nodes("beta"):
        state.values[v] = 0.0
    return state


@lru_cache(maxsize=None)
def seeds_script(total_cores, seed=1, rep=0):
    """Run the bundled seeds script at ``total_cores`` (2 chains); cache by key."""
    text = fixtures.read("seeds_script.txt").replace("modelDistribute(4)", f"modelDistribute({total_cores})")
    out = Path(tempfile.mkdtemp(prefix=f"seeds{total_cores}_{rep}_"))
    t0 = time.perf_counter()
    status, stdout, err = run_script(text, base_dir=fixtures.DIR, seed=seed, out_dir=out)
    elapsed = time.perf_counter() - t0
    assert status == 0, err
    with open(out / "samples.csv") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=float)
    chains = {
        name: [body[body[:, 0] == c, j] for c in (1, 2)] for j, name in enumerate(head) if j >= 2
    }
    return {"stats": (out / "stats.txt").read_bytes(), "chains": chains, "seconds": elapsed,
            "samples": (out / "samples.csv").read_bytes()}


# ----------------------------------------------------------------------


def test_criterion_01_schedule_golden(seeds_dag):
    t0 = time.perf_counter()
    table = build_schedule(seeds_dag, 4)
    elapsed = time.perf_counter() - t0
    label = lambda c: None if c is None else c.label(seeds_dag)  # noqa: E731
    betas = [f"beta[{i}]" for i in range(1, 22)] + [None] * 3
    head_ok = all(
        table.rows[r].kind == SAMPLE and [label(c) for c in table.rows[r].cells] == betas[4 * r : 4 * r + 4]
        for r in range(6)
    )
    tail = table.rows[6:]
    tail_ok = all(r.kind == PARTIAL and len(set(r.cells)) == 1 for r in tail)
    names = {label(r.cells[0]) for r in tail}
    ok = len(table.rows) == 11 and head_ok and tail_ok and names == SEEDS_PARAMS and elapsed < 1.0
    report(1, ok, f"{len(table.rows)} rows, 3 blanks in row 6, partial set {sorted(names)}, {elapsed:.3f}s")
    assert ok


def test_criterion_02_heuristic_threshold(seeds_dag):
    mean = mean_children(seeds_dag)
    selected = {seeds_dag.names[v] for v in seeds_dag.parameters if seeds_dag.n_children[v] > 2 * mean}
    index = topological_depth(seeds_dag)
    table, _ = find_partial_product_parallel(seeds_dag, 4, 1, index.max_depth, ScheduleTable(4))
    by_heuristic = {r.cells[0].label(seeds_dag) for r in table.rows}
    ok = mean == 126 / 26 and selected == SEEDS_PARAMS and by_heuristic == SEEDS_PARAMS
    report(2, ok, f"mean children {mean:.4f}, selected {sorted(selected)}")
    assert ok


def test_criterion_03_d_separation_safety():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    pairs = violations = 0
    for _ in range(200):
        src, data = random_dag_model(rng, 30)
        dag = compile_graph(parse_model(src), parse_data(data))
        edges = list(zip(*[a.tolist() for a in dag.edges()]))
        everyone = set(range(len(dag)))
        for layer in topological_depth(dag).sets.values():
            layer = [v for v in layer if dag.kind[v] == PARAMETER]
            if len(layer) < 2:
                continue
            for group in find_conditionally_independent(dag, layer):
                for i in range(len(group)):
                    for j in range(i + 1, len(group)):
                        pairs += 1
                        given = everyone - {group[i], group[j]}
                        violations += not d_separated(edges, group[i], group[j], given)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and pairs > 0 and elapsed < 30
    report(3, ok, f"200 DAGs, {pairs} pairs, {violations} violations, {elapsed:.1f}s")
    assert ok


def test_criterion_04_partition_identity(seeds_dag, ehealth_small):
    dag_e, truth = ehealth_small
    state_e = initial_state(dag_e)
    for name, value in truth.items():
        if name not in ("dominant_person", "observations_per_person"):
            state_e.values[dag_e.array_nodes(name)] = np.atleast_1d(value)
    worst = 0.0
    for dag, state in ((seeds_dag, seeds_start(seeds_dag)), (dag_e, state_e)):
        for cores in (1, 2, 4, 8):
            for v in dag.parameters:
                parts = sum(log_likelihood_partial(dag, v, c, cores, state) for c in range(1, cores + 1))
                worst = max(worst, abs(parts - log_likelihood(dag, v, state)))
    ok = worst < 1e-10
    report(4, ok, f"max |sum of partials - likelihood| = {worst:.2e}")
    assert ok


def test_criterion_05_serial_equivalence(seeds_dag):
    table = build_schedule(seeds_dag, 1)
    start = seeds_start(seeds_dag)
    start.adapt_until = 500
    monitors = ["alpha0", "alpha1", "alpha2", "alpha12", "sigma", "beta"]
    res = run_chains(seeds_dag, table, iterations=1000, monitors=monitors, states=[start.copy()],
                     master_seed=17, adapt=False)
    idx = [seeds_dag.node(n) for n in res.buffer.names]
    ref = serial_reference(seeds_dag, table, start.copy(), 17, 0, 1000, idx)
    ok = np.array_equal(res.buffer.trace(0), ref)
    report(5, ok, f"1000 iterations x {len(idx)} monitors bit-identical to the serial loop")
    assert ok


def test_criterion_06_determinism():
    a, b = seeds_script(8, rep=0), seeds_script(8, rep=1)
    other = seeds_script(4)
    same = a["stats"] == b["stats"] and a["samples"] == b["samples"]
    differs = a["samples"] != other["samples"]
    ok = same and differs
    report(6, ok, f"C=4 x 2 chains rerun byte-identical: {same}; C=2 trace differs: {differs}")
    assert ok


def test_criterion_07_statistical_agreement():
    runs = {c: seeds_script(2 * c) for c in (1, 2, 4)}
    seconds = sum(r["seconds"] for r in runs.values())
    worst_z = 0.0
    for name in ("alpha1", "sigma"):
        for c1, c2 in ((1, 2), (1, 4), (2, 4)):
            x, y = runs[c1]["chains"][name], runs[c2]["chains"][name]
            diff = abs(np.concatenate(x).mean() - np.concatenate(y).mean())
            worst_z = max(worst_z, diff / math.hypot(mc_error(x), mc_error(y)))
    worst_bgr = max(bgr(r["chains"][n]) for r in runs.values() for n in SEEDS_PARAMS)
    ok = worst_z < 3 and worst_bgr < 1.05 and seconds < 300
    report(7, ok, f"max pairwise gap {worst_z:.2f} combined MC errors, max BGR {worst_bgr:.4f}, {seconds:.0f}s")
    assert ok


def test_criterion_08_conjugate_oracle():
    y = np.array([1.2, 0.4, 2.2, 1.7, 0.9])
    dag = compile_graph(
        parse_model("model { m ~ dnorm(0, 0.01) \n for (i in 1:5) { y[i] ~ dnorm(m, 1) } }"),
        parse_data("list(y = c(1.2, 0.4, 2.2, 1.7, 0.9))"),
    )
    prec = 0.01 + len(y)
    mean, sd = y.sum() / prec, 1 / math.sqrt(prec)
    state = initial_state(dag, parse_data("list(m = 0)"))
    res = run_chains(dag, iterations=205_000, burn_in=5_000, monitors=["m"], states=[state], master_seed=8)
    x = res.buffer.trace(0)[:, 0]
    err_mean = mc_error([x])
    # delta method on the batch-means error of the squared deviations
    err_sd = mc_error([(x - x.mean()) ** 2]) / (2 * x.std(ddof=1))
    z_mean, z_sd = abs(x.mean() - mean) / err_mean, abs(x.std(ddof=1) - sd) / err_sd
    ok = len(x) == 200_000 and z_mean < 3 and z_sd < 3
    report(8, ok, f"mean off by {z_mean:.2f} MC errors, sd off by {z_sd:.2f} MC errors")
    assert ok


def test_criterion_09_ehealth_shape():
    ast, env, _ = ehealth_parts(persons=5000, regions=8, prescriptions=12000, seed=1)
    dag = compile_graph(ast, env)
    table = build_schedule(dag, 4)
    partial = {r.cells[0].label(dag) for r in table.rows if r.kind == PARTIAL}
    groups = {}
    for r in table.rows:
        if r.kind == SAMPLE:
            groups.setdefault(r.group, set()).update(c.label(dag) for c in r.cells if c is not None)
    persons = [f"person.effect[{i}]" for i in range(1, 5001)]
    sampled = set().union(*groups.values())
    others_ok = all(p in sampled for p in persons[1:])
    dominant_ok = persons[0] in partial
    threshold = 2 * mean_children(dag)
    depth1 = [v for v in topological_depth(dag).sets[1] if dag.kind[v] == PARAMETER]
    heavy_ok = all(dag.names[v] in partial for v in depth1 if dag.n_children[v] > threshold)
    pair = lambda a, b: any({a, b} <= g for g in groups.values())  # noqa: E731
    means_ok = pair("mu.region", "mu.source")
    sds_ok = pair("sd.region", "sd.source")
    ok = others_ok and dominant_ok and heavy_ok and means_ok and sds_ok
    report(9, ok, f"dominant partial {dominant_ok}, others sampled {others_ok}, heavy scalars partial {heavy_ok}, "
                  f"means paired {means_ok}, sds paired {sds_ok}")
    assert ok


def test_criterion_10_scaling():
    cpus = os.cpu_count() or 1
    if cpus < 4:
        report(10, "UNVERIFIED", f"host has {cpus} CPU(s); the criterion needs a host with at least 4 cores")
        pytest.skip(f"UNVERIFIED: scaling needs >= 4 cores, host has {cpus}")
    ast, env, _ = ehealth_parts(persons=5000, regions=8, prescriptions=62500, seed=1)
    dag = compile_graph(ast, env)
    inits = parse_data(fixtures.read("ehealth_inits1.txt"))
    start = generate_initial_values(dag, np.random.default_rng(0), inits)
    times = {}
    for cores in (1, 4):
        t0 = time.perf_counter()
        run_chains(dag, total_cores=cores, iterations=500, burn_in=500, states=[start.copy()],
                   backend="process")
        times[cores] = time.perf_counter() - t0
    ok = times[4] < times[1]
    report(10, ok, f"500 iterations: 1 worker {times[1]:.1f}s, 4 workers {times[4]:.1f}s")
    assert ok


def test_criterion_11_bgr_sanity():
    rng = np.random.default_rng(11)
    chain = rng.standard_normal(5000)
    same = bgr([chain, chain.copy()])
    apart = bgr([rng.standard_normal(5000) - 5, rng.standard_normal(5000) + 5])
    ok = same <= 1 + 1e-9 and apart > 2
    report(11, ok, f"duplicated chains {same:.12f}, separated chains {apart:.2f}")
    assert ok
