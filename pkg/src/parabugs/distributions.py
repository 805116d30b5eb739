"""Vectorised log densities, prior draws and vector-expression evaluation."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, logit, xlog1py, xlogy

LOG_2PI = float(np.log(2.0 * np.pi))

_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
    "neg": np.negative,
    "ilogit": expit,
    "logit": logit,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}


def evaluate(expr, values):
    """Evaluate a bound vector expression against the node value array.

    Leaves are ``('lit', x)``, ``('fixed', array)``, ``('scalar', node)``,
    or ``('ref', node_indices)``.
    """
    tag = expr[0]
    if tag == "ref":
        return values[expr[1]]
    if tag == "scalar":
        return values[expr[1]]
    if tag == "lit" or tag == "fixed":
        return expr[1]
    return _OPS[tag](*(evaluate(sub, values) for sub in expr[1:]))


def compile_expr(expr):
    """Turn a bound vector expression into a function of the value array."""
    tag = expr[0]
    if tag == "lit" or tag == "fixed":
        const = expr[1]
        return lambda values: const
    if tag == "ref" or tag == "scalar":
        idx = expr[1]
        return lambda values: values[idx]
    op = _OPS[tag]
    subs = [compile_expr(sub) for sub in expr[1:]]
    if len(subs) == 1:
        (a,) = subs
        return lambda values: op(a(values))
    a, b = subs
    return lambda values: op(a(values), b(values))


def _dnorm(x, mu, tau):
    out = 0.5 * (np.log(tau) - LOG_2PI) - 0.5 * tau * np.square(x - mu)
    return np.where(tau > 0, out, -np.inf)


def _dunif(x, lower, upper):
    out = -np.log(upper - lower)
    return np.where((x >= lower) & (x <= upper) & (upper > lower), out, -np.inf)


def _dbin(x, p, n):
    out = (
        gammaln(n + 1.0)
        - gammaln(x + 1.0)
        - gammaln(n - x + 1.0)
        + xlogy(x, p)
        + xlog1py(n - x, -p)
    )
    ok = (x >= 0) & (x <= n) & (x == np.floor(x)) & (p >= 0) & (p <= 1)
    return np.where(ok, out, -np.inf)


LOGPDF = {"dnorm": _dnorm, "dunif": _dunif, "dbin": _dbin}


def logpdf(dist, x, params):
    """Elementwise log density; -inf outside the support (NaN for NaN input)."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return LOGPDF[dist](x, *params)


def kernel(dist, x, params):
    """Compiled log-density function for bound ``x`` and ``params``.

    A binomial term whose count and size are both fixed gets its log
    binomial coefficient computed once.
    """
    fx = compile_expr(x)
    fp = [compile_expr(p) for p in params]
    if dist == "dbin" and x[0] == "fixed" and params[1][0] in ("fixed", "lit"):
        xv, nv = np.asarray(x[1], dtype=float), np.asarray(params[1][1], dtype=float)
        with np.errstate(all="ignore"):
            coef = gammaln(nv + 1.0) - gammaln(xv + 1.0) - gammaln(nv - xv + 1.0)
        coef = np.where((xv >= 0) & (xv <= nv) & (xv == np.floor(xv)), coef, -np.inf)
        rest = nv - xv
        prob = fp[0]

        def binomial(values):
            p = prob(values)
            out = coef + xlogy(xv, p) + xlog1py(rest, -p)
            return np.where((p >= 0) & (p <= 1), out, -np.inf)

        return binomial
    if dist == "dnorm":
        mu_f, tau_f = fp

        def normal(values):
            tau = tau_f(values)
            out = 0.5 * (np.log(tau) - LOG_2PI) - 0.5 * tau * np.square(fx(values) - mu_f(values))
            return np.where(tau > 0, out, -np.inf)

        return normal
    f = LOGPDF[dist]
    return lambda values: f(fx(values), *(g(values) for g in fp))


def draw(dist, params, rng, size=None):
    """Draw from the distribution (used for generating initial values)."""
    if dist == "dnorm":
        mu, tau = params
        return mu + rng.standard_normal(size) / np.sqrt(tau)
    if dist == "dunif":
        lo, hi = params
        return lo + (hi - lo) * rng.random(size)
    if dist == "dbin":
        p, n = params
        return rng.binomial(np.asarray(n, dtype=np.int64), p, size).astype(float)
    raise ValueError(f"unsupported distribution {dist!r}")
