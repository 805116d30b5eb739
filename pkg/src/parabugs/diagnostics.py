"""Monitored samples, posterior summaries and convergence diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParabugsError

N_BATCHES = 50
COLUMNS = ("mean", "median", "sd", "MC_error", "val2.5pc", "val97.5pc", "start", "sample", "ESS")


class DiagnosticsError(ParabugsError):
    pass


class MonitorBuffer:
    """Retained samples of monitored quantities, one trace per chain.

    Parameters
    ----------
    names : list of str
        Monitored node names (columns).
    chains : int
    """

    def __init__(self, names, chains):
        self.names = list(names)
        self.n_chains = int(chains)
        self._column = {n: i for i, n in enumerate(self.names)}
        self._values = [[] for _ in range(self.n_chains)]
        self._iters = [[] for _ in range(self.n_chains)]

    def append(self, chain, iterations, values):
        iterations = np.asarray(iterations, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if values.size != len(iterations) * len(self.names):
            raise DiagnosticsError("iteration and value counts differ")
        values = values.reshape(len(iterations), len(self.names))
        if len(iterations):
            self._values[chain].append(values)
            self._iters[chain].append(iterations)

    def iterations(self, chain=0):
        parts = self._iters[chain]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def trace(self, chain):
        """``(n_samples, n_names)`` array for one chain."""
        parts = self._values[chain]
        if not parts:
            return np.zeros((0, len(self.names)))
        if len(parts) > 1:
            self._values[chain] = parts = [np.concatenate(parts)]
            self._iters[chain] = [np.concatenate(self._iters[chain])]
        return parts[0]

    def column(self, name):
        try:
            return self._column[name]
        except KeyError:
            raise DiagnosticsError(f"{name!r} is not monitored") from None

    def samples(self, name):
        """Per-chain sample vectors for ``name``."""
        j = self.column(name)
        return [self.trace(c)[:, j] for c in range(self.n_chains)]

    @property
    def sample(self):
        """Retained count per chain."""
        return len(self.iterations(0))

    @property
    def start(self):
        it = self.iterations(0)
        return int(it[0]) if len(it) else 0

    def records(self):
        """Wire records ``(chain, iteration, name, value)`` in iteration order."""
        for c in range(self.n_chains):
            trace, iters = self.trace(c), self.iterations(c)
            for k, it in enumerate(iters):
                for j, name in enumerate(self.names):
                    yield (c, int(it), name, float(trace[k, j]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration"] + self.names)
            for c in range(self.n_chains):
                trace, iters = self.trace(c), self.iterations(c)
                for k, it in enumerate(iters):
                    w.writerow([c + 1, int(it)] + [repr(float(x)) for x in trace[k]])

    def digest(self):
        import hashlib

        h = hashlib.sha256()
        for c in range(self.n_chains):
            h.update(np.ascontiguousarray(self.iterations(c)).tobytes())
            h.update(np.ascontiguousarray(self.trace(c)).tobytes())
        return h.hexdigest()


# ----------------------------------------------------------------------


def _autocorrelation(x):
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess(series):
    """Effective sample size with Geyer's initial positive sequence.

    ``n / (1 + 2 sum rho_k)``, where the sum of autocorrelations is cut at
    the first pair ``rho_{2k} + rho_{2k+1}`` that is not positive.  The
    result is clamped to ``(0, n]``; a constant series has ESS ``n``.
    ``series`` may also be a list of chains, whose ESS values are added.
    """
    if isinstance(series, (list, tuple)) and len(series) and np.ndim(series[0]) == 1:
        return float(sum(ess(s) for s in series))
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 10:
        raise DiagnosticsError("ESS needs at least 10 samples")
    if np.all(x == x[0]):
        return float(n)
    rho = _autocorrelation(x)
    m = (n - 1) // 2
    pairs = rho[: 2 * m].reshape(m, 2).sum(axis=1) if m else np.zeros(0)
    stop = np.flatnonzero(pairs <= 0)
    k = stop[0] if len(stop) else len(pairs)
    tau = -1.0 + 2.0 * pairs[:k].sum()
    if not tau > 0:
        return float(n)
    return float(min(n, n / tau))


def batch_means(x, n_batches=N_BATCHES):
    """Means of ``n_batches`` equal consecutive batches; the remainder is dropped."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    if size == 0:
        return x.copy()
    return x[: size * n_batches].reshape(n_batches, size).mean(axis=1)


def mc_error(chains, n_batches=N_BATCHES):
    """Batch-means Monte Carlo standard error of the pooled mean."""
    means = np.concatenate([batch_means(c, n_batches) for c in chains])
    if len(means) < 2:
        return 0.0
    return float(np.std(means, ddof=1) / math.sqrt(len(means)))


@dataclass(frozen=True)
class Summary:
    name: str
    mean: float
    median: float
    sd: float
    mc_error: float
    q025: float
    q975: float
    start: int
    sample: int
    ess: float

    def row(self):
        return (
            self.mean,
            self.median,
            self.sd,
            self.mc_error,
            self.q025,
            self.q975,
            self.start,
            self.sample,
            self.ess,
        )


def summarise(chains, name="x", start=1):
    chains = [np.asarray(c, dtype=float) for c in chains]
    pooled = np.concatenate(chains)
    if len(pooled) < 2:
        raise DiagnosticsError("summary needs at least 2 retained samples")
    sd = float(np.std(pooled, ddof=1))
    if np.all(pooled == pooled[0]):
        sd = 0.0
    lo, med, hi = np.quantile(pooled, [0.025, 0.5, 0.975])
    usable = [c for c in chains if len(c) >= 10]
    return Summary(
        name,
        float(pooled.mean()),
        float(med),
        sd,
        0.0 if sd == 0.0 else mc_error(chains),
        float(lo),
        float(hi),
        int(start),
        len(pooled),
        ess(usable) if usable else float(len(pooled)),
    )


def summary(buffer, name):
    """Pooled-over-chains summary record for one monitored name."""
    return summarise(buffer.samples(name), name, buffer.start)


def bgr(buffer, name=None):
    """Potential scale reduction factor ``sqrt((n-1)/n + B/(n W))``.

    ``buffer`` is a MonitorBuffer (with ``name``) or a list of equal-length
    chains.  ``B`` is ``n`` times the variance of the chain means and
    ``W`` the mean within-chain variance.
    """
    chains = buffer.samples(name) if isinstance(buffer, MonitorBuffer) else buffer
    chains = [np.asarray(c, dtype=float) for c in chains]
    if len(chains) < 2:
        raise DiagnosticsError("the scale reduction factor needs at least 2 chains")
    n = len(chains[0])
    if n < 2 or any(len(c) != n for c in chains):
        raise DiagnosticsError("chains must have equal length of at least 2")
    x = np.stack(chains)
    w = float(x.var(axis=1, ddof=1).mean())
    b = n * float(x.mean(axis=1).var(ddof=1))
    if w == 0.0:
        return 1.0 if b == 0.0 else math.inf
    return math.sqrt((n - 1) / n + b / (n * w))


# ----------------------------------------------------------------------


def format_number(x):
    """Four significant figures; E notation for very small or large values."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x == 0.0:
        return "0.0"
    if not math.isfinite(x):
        return str(x)
    ax = abs(x)
    if ax < 1e-3 or ax >= 1e5:
        mant, exp = f"{x:.3E}".split("E")
        mant = mant.rstrip("0").rstrip(".")
        return f"{mant}E{int(exp)}"
    return f"{x:.4g}"


def format_table(summaries):
    """Plain-text summary table with the usual BUGS column set."""
    rows = [
        [s.name]
        + [format_number(v) for v in s.row()[:6]]
        + [str(s.start), str(s.sample), str(int(round(s.ess)))]
        for s in summaries
    ]
    head = [""] + list(COLUMNS)
    widths = [max([len(head[j])] + [len(r[j]) for r in rows]) for j in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths)).rstrip()]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"
