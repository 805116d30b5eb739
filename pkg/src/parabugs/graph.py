"""Compiled model graph and the structural queries the scheduler needs.

A :class:`Dag` holds only stochastic and constant nodes: logical
relations have already been folded into the parameter expressions of
their stochastic descendants.  Node indices follow declaration order of
the unrolled model (stochastic nodes first, then constants in order of
first use), and every later tie-break refers to that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import GraphError

CONSTANT = 0
OBSERVED = 1
PARAMETER = 2

KIND_NAMES = {CONSTANT: "constant", OBSERVED: "observed-stochastic", PARAMETER: "stochastic-parameter"}

DISCRETE_DISTRIBUTIONS = frozenset({"dbin"})


@dataclass(frozen=True)
class Family:
    """Instances of one relation that share a distribution and expression shape.

    ``params`` are vector expressions over the family's instances: tuples
    whose leaves are ``('lit', x)``, ``('litv', array)`` or
    ``('ref', node_indices)``.
    """

    label: str
    dist: str
    nodes: np.ndarray
    params: tuple


def _leaf_refs(expr):
    if expr[0] == "ref":
        yield expr[1]
    elif expr[0] not in ("lit", "litv"):
        for sub in expr[1:]:
            yield from _leaf_refs(sub)


def _csr(src, dst, n):
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    return np.cumsum(ptr), dst.astype(np.int64)


class Dag:
    """Immutable compiled graph.

    Parameters
    ----------
    names : list of str
        Node names, indexed by node id.
    kind : array of int
        ``CONSTANT``, ``OBSERVED`` or ``PARAMETER`` per node.
    values : array of float
        Fixed values of constant and observed nodes (NaN for parameters).
    families : list of Family
        Distribution descriptors; every stochastic node is in exactly one.
    """

    def __init__(self, names, kind, values, families):
        n = len(names)
        self.names = list(names)
        self.kind = np.asarray(kind, dtype=np.int8)
        self.values = np.asarray(values, dtype=float)
        self.values.setflags(write=False)
        self.families = list(families)
        self.index = {name: i for i, name in enumerate(self.names)}

        self.family = np.full(n, -1, dtype=np.int64)
        self.position = np.full(n, -1, dtype=np.int64)
        src, dst = [], []
        for f, fam in enumerate(self.families):
            self.family[fam.nodes] = f
            self.position[fam.nodes] = np.arange(len(fam.nodes))
            for param in fam.params:
                for refs in _leaf_refs(param):
                    src.append(np.asarray(refs, dtype=np.int64))
                    dst.append(fam.nodes)
        if np.any((self.family >= 0) != (self.kind != CONSTANT)):
            raise GraphError("every stochastic node needs exactly one distribution")
        if src:
            src = np.concatenate(src)
            dst = np.concatenate(dst)
            code = np.unique(src * n + dst)
            src, dst = code // n, code % n
        else:
            src = dst = np.zeros(0, dtype=np.int64)
        self.n_edges = len(src)
        self._child_ptr, self._child_idx = _csr(src, dst, n)
        self._parent_ptr, self._parent_idx = _csr(dst, src, n)
        self.n_children = np.diff(self._child_ptr)
        self.parameters = np.flatnonzero(self.kind == PARAMETER)
        self.discrete = np.zeros(n, dtype=bool)
        for fam in self.families:
            if fam.dist in DISCRETE_DISTRIBUTIONS:
                self.discrete[fam.nodes] = True
        self._cache = {}

    def __len__(self):
        return len(self.names)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state

    def __repr__(self):
        return (
            f"Dag({len(self)} nodes, {len(self.parameters)} parameters, "
            f"{self.n_edges} edges)"
        )

    # ------------------------------------------------------------------
    def node(self, name):
        """Index of the node called ``name``."""
        try:
            return self.index[name]
        except KeyError:
            raise GraphError(f"no node named {name!r}") from None

    def name_of(self, v):
        return self.names[v]

    def parents(self, v):
        return self._parent_idx[self._parent_ptr[v] : self._parent_ptr[v + 1]]

    def children(self, v):
        """Sorted child indices of ``v`` (a read-only view)."""
        return self._child_idx[self._child_ptr[v] : self._child_ptr[v + 1]]

    def edges(self):
        src = np.repeat(np.arange(len(self)), self.n_children)
        return src, self._child_idx.copy()

    def is_parameter(self, v):
        return self.kind[v] == PARAMETER

    def distribution(self, v):
        f = self.family[v]
        return None if f < 0 else self.families[f].dist

    def array_nodes(self, name):
        """All node indices belonging to the array ``name``, in index order."""
        if name in self.index:
            return [self.index[name]]
        prefix = name + "["
        found = [i for i, nm in enumerate(self.names) if nm.startswith(prefix)]
        if not found:
            raise GraphError(f"no node named {name!r}")
        return found

    def cached(self, key, build):
        """Memoise derived structures (evaluation plans, depth index)."""
        try:
            return self._cache[key]
        except KeyError:
            value = self._cache[key] = build()
            return value


# ----------------------------------------------------------------------
# Queries


@dataclass(frozen=True)
class DepthIndex:
    """Topological depth of every node and the depth sets of parameters."""

    depth: np.ndarray
    sets: dict

    @property
    def max_depth(self):
        return max(self.sets) if self.sets else 0


def _compute_depth(dag):
    n = len(dag)
    depth = np.zeros(n, dtype=np.int64)
    indeg = np.diff(dag._parent_ptr).copy()
    frontier = np.flatnonzero(indeg == 0)
    seen = len(frontier)
    # level-synchronous Kahn: a node's depth is fixed once all parents are done
    while len(frontier):
        lo, hi = dag._child_ptr[frontier], dag._child_ptr[frontier + 1]
        counts = hi - lo
        if counts.sum() == 0:
            break
        offsets = np.repeat(lo - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        kids = dag._child_idx[offsets]
        src_depth = np.repeat(depth[frontier], counts)
        np.maximum.at(depth, kids, src_depth + 1)
        np.subtract.at(indeg, kids, 1)
        frontier = np.unique(kids[indeg[kids] == 0])
        seen += len(frontier)
    if seen != n:
        cyc = [dag.names[i] for i in np.flatnonzero(indeg > 0)[:5]]
        raise GraphError(f"graph contains a cycle through {', '.join(cyc)}")
    sets = {}
    for v in dag.parameters:
        sets.setdefault(int(depth[v]), []).append(int(v))
    return DepthIndex(depth, {h: np.array(vs, dtype=np.int64) for h, vs in sorted(sets.items())})


def topological_depth(dag):
    """Depth 0 for parentless nodes, otherwise one more than the deepest parent.

    Raises
    ------
    GraphError
        If the edge set contains a cycle.
    """
    return dag.cached("depth", lambda: _compute_depth(dag))


def mean_children(dag):
    """Mean number of children over the stochastic parameters."""
    if len(dag.parameters) == 0:
        raise GraphError("model has no stochastic parameters")
    return float(dag.n_children[dag.parameters].sum()) / len(dag.parameters)


def children_of_block(dag, block):
    """Union of the children of the block members, excluding the members."""
    block = np.unique(np.asarray(list(block), dtype=np.int64))
    if len(block) == 0:
        return block
    bad = [dag.names[b] for b in block if dag.kind[b] != PARAMETER]
    if bad:
        raise GraphError(f"block members must be stochastic parameters: {', '.join(bad)}")
    kids = np.unique(np.concatenate([dag.children(b) for b in block]))
    return kids[~np.isin(kids, block)]


def to_json(dag, indent=None):
    """Debug export: nodes (with depth and distribution) and edge list."""
    depth = topological_depth(dag).depth
    nodes = []
    for v, name in enumerate(dag.names):
        rec = {
            "index": v,
            "name": name,
            "kind": KIND_NAMES[int(dag.kind[v])],
            "depth": int(depth[v]),
            "parents": dag.parents(v).tolist(),
        }
        if dag.kind[v] != PARAMETER:
            rec["value"] = float(dag.values[v])
        if dag.family[v] >= 0:
            rec["distribution"] = dag.distribution(v)
        nodes.append(rec)
    src, dst = dag.edges()
    doc = {"nodes": nodes, "edges": [[int(a), int(b)] for a, b in zip(src, dst)]}
    return json.dumps(doc, indent=indent)
