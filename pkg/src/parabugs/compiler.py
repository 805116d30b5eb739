"""Turn a parsed model plus data into a :class:`~parabugs.graph.Dag`.

Compilation unrolls every loop, resolves indices against the data,
inlines logical relations into the parameters of the stochastic nodes
that use them, and finally stacks instances of the same relation into
vectorised :class:`~parabugs.graph.Family` records so that densities can
be evaluated a whole partition of children at a time.
"""

from __future__ import annotations

import math

import numpy as np

from . import graph
from .errors import CompileError, GraphError
from .parser import BinOp, Call, ForLoop, Logical, Neg, Num, Stochastic, Var

_BINOPS = {"+": "add", "-": "sub", "*": "mul", "/": "div"}


def _ilogit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


_SCALAR_FUNCS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "pow": lambda a, b: a**b,
    "neg": lambda a: -a,
    "ilogit": _ilogit,
    "logit": lambda p: math.log(p / (1.0 - p)),
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
}


def _key_name(name, idx):
    if not idx:
        return name
    return f"{name}[{','.join(str(i) for i in idx)}]"


class _Compiler:
    def __init__(self, ast, data):
        self.ast = ast
        self.data = data
        self.stoch_names = set()
        self.logical_names = set()
        for rel, _ in ast.relations():
            (self.stoch_names if isinstance(rel, Stochastic) else self.logical_names).add(
                rel.target.name
            )
        self.stochastic = []  # (stmt, env, key)
        self.stoch_index = {}
        self.logical = {}  # key -> (stmt, env)
        self.resolved = {}  # logical key -> tree
        self.active = set()
        self.names = []
        self.const_values = []
        self.const_index = {}

    # -- index / integer evaluation (data and loop variables only) --------
    def fail(self, msg, node):
        line, col = node.pos if node.pos != (0, 0) else (None, None)
        raise CompileError(msg, line, col)

    def data_value(self, var, idx):
        arr = self.data[var.name]
        if len(idx) != arr.ndim:
            self.fail(
                f"{var.name!r} has {arr.ndim} dimension(s) but is indexed with {len(idx)}",
                var,
            )
        for i, n in zip(idx, arr.shape):
            if not 1 <= i <= n:
                self.fail(f"index {_key_name(var.name, idx)} out of range", var)
        return float(arr[tuple(i - 1 for i in idx)])

    def const_eval(self, e, env):
        if isinstance(e, Num):
            return e.value
        if isinstance(e, Var):
            if not e.indices and e.name in env:
                return float(env[e.name])
            if e.name in self.stoch_names or e.name in self.logical_names:
                self.fail(f"{e.name!r} is not data and cannot be used as an index or range", e)
            if e.name not in self.data:
                self.fail(f"undefined name {e.name!r}", e)
            idx = self.indices(e, env)
            v = self.data_value(e, idx)
            if math.isnan(v):
                self.fail(f"missing value for {_key_name(e.name, idx)}", e)
            return v
        if isinstance(e, Neg):
            return -self.const_eval(e.operand, env)
        if isinstance(e, BinOp):
            a, b = self.const_eval(e.left, env), self.const_eval(e.right, env)
            try:
                return _SCALAR_FUNCS[_BINOPS[e.op]](a, b)
            except ZeroDivisionError:
                self.fail("division by zero in index expression", e)
        args = [self.const_eval(a, env) for a in e.args]
        try:
            return _SCALAR_FUNCS[e.func](*args)
        except (ValueError, OverflowError, ZeroDivisionError):
            self.fail(f"invalid argument to {e.func}", e)

    def int_eval(self, e, env):
        v = self.const_eval(e, env)
        if v != math.floor(v):
            self.fail(f"expected an integer, got {v}", e)
        return int(v)

    def indices(self, var, env):
        return tuple(self.int_eval(i, env) for i in var.indices)

    # -- unrolling ---------------------------------------------------------
    def unroll(self, stmts, env):
        for s in stmts:
            if isinstance(s, ForLoop):
                lo, hi = self.int_eval(s.lower, env), self.int_eval(s.upper, env)
                for v in range(lo, hi + 1):
                    self.unroll(s.body, {**env, s.var: v})
            elif isinstance(s, Stochastic):
                key = (s.target.name, self.indices(s.target, env))
                if key in self.stoch_index:
                    self.fail(f"{_key_name(*key)} is defined more than once", s)
                self.stoch_index[key] = len(self.stochastic)
                self.stochastic.append((s, env, key))
            else:
                key = (s.target.name, self.indices(s.target, env))
                if key in self.logical:
                    self.fail(f"{_key_name(*key)} is defined more than once", s)
                self.logical[key] = (s, env)

    # -- expression resolution ---------------------------------------------
    def constant(self, key, value):
        i = self.const_index.get(key)
        if i is None:
            i = self.const_index[key] = len(self.const_values)
            self.names.append(_key_name(*key))
            self.const_values.append(value)
        return ("node", i, True)

    def literal_node(self, value):
        i = len(self.const_values)
        self.names.append(f"#{i}:{value:g}")
        self.const_values.append(value)
        return ("node", i, True)

    def resolve(self, e, env):
        """Resolve to a tree with leaves ('lit', x) or ('node', i, is_const)."""
        if isinstance(e, Num):
            return ("lit", e.value)
        if isinstance(e, Var):
            if not e.indices and e.name in env:
                return ("lit", float(env[e.name]))
            idx = self.indices(e, env)
            key = (e.name, idx)
            if key in self.stoch_index:
                return ("node", self.stoch_index[key], False)
            if key in self.logical:
                return self.inline(key, e)
            if e.name in self.data:
                v = self.data_value(e, idx)
                if math.isnan(v):
                    self.fail(f"missing value for data node {_key_name(*key)}", e)
                return self.constant(key, v)
            if e.name in self.stoch_names or e.name in self.logical_names:
                self.fail(f"{_key_name(*key)} is used but never defined", e)
            self.fail(f"undefined name {e.name!r}", e)
        if isinstance(e, Neg):
            return self.fold(("neg", self.resolve(e.operand, env)))
        if isinstance(e, BinOp):
            return self.fold(
                (_BINOPS[e.op], self.resolve(e.left, env), self.resolve(e.right, env))
            )
        return self.fold((e.func,) + tuple(self.resolve(a, env) for a in e.args))

    def fold(self, tree):
        if all(sub[0] == "lit" for sub in tree[1:]):
            try:
                return ("lit", float(_SCALAR_FUNCS[tree[0]](*(s[1] for s in tree[1:]))))
            except (ValueError, OverflowError, ZeroDivisionError):
                pass
        return tree

    def inline(self, key, var):
        tree = self.resolved.get(key)
        if tree is not None:
            return tree
        if key in self.active:
            raise CompileError(f"cyclic dependency through {_key_name(*key)}", *var.pos)
        self.active.add(key)
        stmt, env = self.logical[key]
        tree = self.resolved[key] = self.resolve(stmt.expr, env)
        self.active.discard(key)
        return tree

    # -- main -----------------------------------------------------------------
    def compile(self):
        self.unroll(self.ast.statements, {})
        n_stoch = len(self.stochastic)
        kinds, values = [], []
        stoch_names = []
        for stmt, env, key in self.stochastic:
            stoch_names.append(_key_name(*key))
            observed = False
            if key[0] in self.data:
                arr = self.data[key[0]]
                if arr.ndim != len(key[1]):
                    self.fail(f"data for {key[0]!r} does not match its use in the model", stmt)
                v = self.data_value(stmt.target, key[1])
                observed = not math.isnan(v)
            kinds.append(graph.OBSERVED if observed else graph.PARAMETER)
            values.append(v if observed else np.nan)

        groups = {}
        for s_idx, (stmt, env, key) in enumerate(self.stochastic):
            params = []
            for arg in stmt.dist.args:
                tree = self.resolve(arg, env)
                if tree[0] == "lit":
                    tree = self.literal_node(tree[1])
                params.append(tree)
            sig = (id(stmt), tuple(_signature(p) for p in params))
            groups.setdefault(sig, (stmt, []))[1].append((s_idx, params))

        offset = n_stoch
        self.names = stoch_names + self.names
        kinds += [graph.CONSTANT] * len(self.const_values)
        values += self.const_values

        families = []
        for stmt, members in groups.values():
            nodes = np.array([m[0] for m in members], dtype=np.int64)
            params = tuple(
                _stack([m[1][j] for m in members], offset)
                for j in range(len(stmt.dist.args))
            )
            families.append(graph.Family(stmt.target.name, stmt.dist.name, nodes, params))
        families.sort(key=lambda f: int(f.nodes[0]))

        dag = graph.Dag(self.names, kinds, values, families)
        try:
            graph.topological_depth(dag)
        except GraphError as exc:
            raise CompileError(f"cyclic dependency: {exc}") from None
        return dag


def _signature(tree):
    if tree[0] == "lit":
        return "L"
    if tree[0] == "node":
        return "N"
    return (tree[0],) + tuple(_signature(t) for t in tree[1:])


def _stack(trees, offset):
    """Stack same-shaped instance trees into one vector expression."""
    head = trees[0]
    if head[0] == "lit":
        vals = np.array([t[1] for t in trees])
        if np.all(vals == vals[0]):
            return ("lit", float(vals[0]))
        return ("litv", vals)
    if head[0] == "node":
        return (
            "ref",
            np.array([t[1] + (offset if t[2] else 0) for t in trees], dtype=np.int64),
        )
    return (head[0],) + tuple(
        _stack([t[k] for t in trees], offset) for k in range(1, len(head))
    )


def compile_graph(ast, data=None):
    """Unroll, inline and index a model.

    Parameters
    ----------
    ast : ModelAst
    data : DataEnvironment, optional
        Supplies loop bounds, index arrays, covariates and observations.
        A stochastic node whose element has a (non-NA) data value is
        observed.

    Raises
    ------
    CompileError
        Undefined names, missing data, cycles, or out-of-range indices.
    """
    from .data import DataEnvironment

    return _Compiler(ast, data if data is not None else DataEnvironment()).compile()
