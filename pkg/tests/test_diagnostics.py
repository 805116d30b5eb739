import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabugs.diagnostics import (
    COLUMNS,
    DiagnosticsError,
    MonitorBuffer,
    bgr,
    ess,
    format_number,
    format_table,
    mc_error,
    summarise,
    summary,
)


def ar1(rng, n, phi):
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_constant_series():
    s = summarise([np.full(500, 7.0)])
    assert s.mean == 7.0 and s.sd == 0.0 and s.mc_error == 0.0
    assert s.median == 7.0 and s.ess == 500


def test_iid_normal():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(20_000)
    s = summarise([x])
    assert abs(s.mean) < 0.03
    assert abs(s.sd - 1) < 0.03
    assert abs(s.ess / 20_000 - 1) < 0.15
    assert s.mc_error == pytest.approx(1 / math.sqrt(20_000), rel=0.3)
    assert s.q025 == pytest.approx(-1.96, abs=0.06)


def test_ar1_ess_matches_closed_form():
    x = ar1(np.random.default_rng(2), 100_000, 0.9)
    expected = (1 - 0.9) / (1 + 0.9)
    assert abs(ess(x) / len(x) - expected) < 0.3 * expected


def test_ar1_mc_error_tracks_ess():
    x = ar1(np.random.default_rng(3), 100_000, 0.9)
    # long-run sd of the mean: sigma_x / sqrt(n * (1 - phi) / (1 + phi))
    expected = (1 / math.sqrt(1 - 0.81)) / math.sqrt(len(x) * 0.1 / 1.9)
    assert mc_error([x]) == pytest.approx(expected, rel=0.35)


def test_anticorrelated_series_clamped():
    x = np.tile([1.0, -1.0], 500) + np.random.default_rng(4).normal(0, 0.01, 1000)
    assert ess(x) <= len(x)


def test_ess_needs_samples():
    with pytest.raises(DiagnosticsError):
        ess(np.arange(5.0))


def test_bgr_cases():
    rng = np.random.default_rng(5)
    a = rng.standard_normal(2000)
    assert bgr([a, a.copy()]) <= 1 + 1e-9
    same = [rng.standard_normal(2000) for _ in range(3)]
    assert bgr(same) < 1.05
    apart = [rng.standard_normal(2000) - 5, rng.standard_normal(2000) + 5]
    assert bgr(apart) > 2
    assert bgr([np.ones(5), np.ones(5)]) == 1.0
    assert bgr([np.ones(5), np.full(5, 2.0)]) == math.inf
    with pytest.raises(DiagnosticsError):
        bgr([a])
    with pytest.raises(DiagnosticsError):
        bgr([a, a[:10]])


def test_bgr_closed_form():
    x = [np.array([1.0, 2.0, 3.0]), np.array([2.0, 3.0, 4.0])]
    w, b, n = 1.0, 3 * 0.5, 3
    assert bgr(x) == pytest.approx(math.sqrt((n - 1) / n + b / (n * w)), abs=1e-15)


def test_buffer_and_summary():
    buf = MonitorBuffer(["a", "b"], 2)
    buf.append(0, [11, 12], [[1.0, 2.0], [3.0, 4.0]])
    buf.append(0, [13], [[5.0, 6.0]])
    buf.append(1, [11, 12, 13], [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert buf.start == 11 and buf.sample == 3
    np.testing.assert_array_equal(buf.samples("a")[0], [1.0, 3.0, 5.0])
    s = summary(buf, "a")
    assert s.mean == pytest.approx(2.0) and s.sample == 6 and s.start == 11
    with pytest.raises(DiagnosticsError, match="not monitored"):
        buf.samples("c")
    with pytest.raises(DiagnosticsError):
        buf.append(0, [1, 2], [[1.0, 2.0, 3.0]])


def test_buffer_without_monitors():
    buf = MonitorBuffer([], 1)
    buf.append(0, [1, 2], np.zeros((2, 0)))
    assert list(buf.records()) == []


@pytest.mark.parametrize(
    "x, text",
    [
        (0.0, "0.0"),
        (5.784e-4, "5.784E-4"),
        (-0.04597, "-0.04597"),
        (0.2824, "0.2824"),
        (1.3562, "1.356"),
        (123456.0, "1.235E5"),
        (12.0, "12"),
        (1001, "1001"),
    ],
)
def test_format_number(x, text):
    assert format_number(x) == text


def test_format_table_columns():
    rng = np.random.default_rng(6)
    rows = [summarise([rng.standard_normal(100)], name) for name in ("alpha0", "sigma")]
    text = format_table(rows)
    lines = text.splitlines()
    assert lines[0].split() == list(COLUMNS)
    assert lines[1].split()[0] == "alpha0" and len(lines[1].split()) == 10
    assert text == format_table(rows)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(20, 400))
def test_summary_invariants(seed, n):
    rng = np.random.default_rng(seed)
    chains = [rng.normal(rng.normal(), rng.uniform(0.1, 3), n) for _ in range(2)]
    s = summarise(chains)
    assert s.q025 <= s.median <= s.q975
    assert s.sd >= 0 and s.mc_error >= 0
    assert 0 < s.ess <= 2 * n
    swapped = summarise(chains[::-1])
    assert swapped.mean == pytest.approx(s.mean, abs=1e-12)
    assert swapped.ess == pytest.approx(s.ess, rel=1e-12)
    assert bgr(chains) == pytest.approx(bgr(chains[::-1]), rel=1e-12)
    assert bgr(chains) > 0
