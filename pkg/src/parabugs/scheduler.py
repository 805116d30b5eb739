"""Computation schedule: which parameters are sampled side by side on
different workers and which have their likelihood split across all of
them.

The three entry points mirror the planning procedure step by step:
:func:`find_partial_product_parallel` picks the parameters whose
likelihood is worth splitting, :func:`find_conditionally_independent`
groups the rest into sets with no shared child, and :func:`build_schedule`
walks the depth sets from deepest to shallowest assembling the table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ScheduleError
from .graph import PARAMETER, children_of_block, mean_children, topological_depth

SAMPLE = "sample"
PARTIAL = "partial"


@dataclass(frozen=True)
class Unit:
    """One sampling unit: a single parameter or a block updated jointly."""

    members: tuple

    @property
    def is_block(self):
        return len(self.members) > 1

    @property
    def key(self):
        return self.members[0]

    def label(self, dag):
        if not self.is_block:
            return dag.names[self.members[0]]
        return "{" + ",".join(dag.names[m] for m in self.members) + "}"


def unit_children(dag, unit):
    if not unit.is_block:
        return dag.children(unit.members[0])
    return dag.cached(("block-children", unit.members), lambda: children_of_block(dag, unit.members))


@dataclass(frozen=True)
class Row:
    """A schedule row: ``cells[c]`` is the unit worker ``c`` handles, or None."""

    kind: str
    cells: tuple
    depth: int
    group: int = -1  # index of the conditionally independent set (sample rows)


@dataclass(frozen=True)
class ScheduleTable:
    cores: int
    rows: tuple = ()
    gathers: tuple = ()  # indices of rows after which an all-gather runs
    blocks: tuple = field(default=(), compare=False)

    def appended(self, rows, gather=False):
        rows = self.rows + tuple(rows)
        gathers = self.gathers + ((len(rows) - 1,) if gather and rows else ())
        return ScheduleTable(self.cores, rows, gathers, self.blocks)

    @property
    def n_blanks(self):
        return sum(cell is None for row in self.rows for cell in row.cells)

    def sample_units(self):
        return [c for r in self.rows if r.kind == SAMPLE for c in r.cells if c is not None]

    def partial_units(self):
        return [r.cells[0] for r in self.rows if r.kind == PARTIAL]

    def render(self, dag):
        """Fixed-width text table with one column per core."""
        labels = [
            ["" if cell is None else cell.label(dag) for cell in row.cells]
            for row in self.rows
        ]
        heads = ["Row"] + [f"Core {c + 1}" for c in range(self.cores)]
        widths = [max([len(heads[0])] + [len(str(len(self.rows)))])]
        for c in range(self.cores):
            widths.append(max([len(heads[c + 1])] + [len(r[c]) for r in labels]))
        lines = ["  ".join(h.ljust(w) for h, w in zip(heads, widths)).rstrip()]
        for i, row in enumerate(labels):
            cells = [str(i + 1)] + row
            lines.append("  ".join(s.ljust(w) for s, w in zip(cells, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_json(self, dag, indent=None):
        doc = {
            "cores": self.cores,
            "rows": [
                {
                    "row": i + 1,
                    "kind": row.kind,
                    "depth": row.depth,
                    "cells": [None if c is None else c.label(dag) for c in row.cells],
                }
                for i, row in enumerate(self.rows)
            ],
            "gather_after_rows": [g + 1 for g in self.gathers],
        }
        return json.dumps(doc, indent=indent)


# ----------------------------------------------------------------------


def _as_units(dag, nodes):
    out = []
    for u in nodes:
        if isinstance(u, Unit):
            out.append(u)
        else:
            out.append(Unit((int(u),)))
    return out


def _depth_units(dag, depth_index, blocks):
    """Units per depth, with each block standing in for its members."""
    blocked = {m: b for b in blocks for m in b.members}
    sets = {}
    for h, nodes in depth_index.sets.items():
        for v in nodes:
            if int(v) not in blocked:
                sets.setdefault(h, []).append(Unit((int(v),)))
    for b in blocks:
        h = int(max(depth_index.depth[m] for m in b.members))
        sets.setdefault(h, []).append(b)
    for h in sets:
        sets[h].sort(key=lambda u: min(u.members))
    return sets


def find_conditionally_independent(dag, u_set):
    """Greedily split ``u_set`` into sets whose members share no child.

    Nodes are visited in canonical order; each pass sweeps the remaining
    nodes once, taking every node none of whose children is already
    claimed by the set being built.

    Returns
    -------
    list of list
        ``W_1, ..., W_l`` as lists of units (or node indices, matching
        the input).
    """
    units = _as_units(dag, u_set)
    plain = not any(isinstance(u, Unit) for u in u_set)
    depth = topological_depth(dag).depth
    depths = {int(max(depth[m] for m in u.members)) for u in units}
    if len(depths) > 1:
        raise ScheduleError(f"nodes have mixed topological depths {sorted(depths)}")
    remaining = sorted(units, key=lambda u: min(u.members))
    sets = []
    while remaining:
        marked = set()
        current, rest = [], []
        for u in remaining:
            kids = unit_children(dag, u).tolist()
            if marked.isdisjoint(kids):
                current.append(u)
                marked.update(kids)
            else:
                rest.append(u)
        sets.append(current)
        remaining = rest
    if plain:
        return [[u.members[0] for u in w] for w in sets]
    return sets


def find_partial_product_parallel(dag, cores, depth, max_depth, table, units=None):
    """Append a full partial-product row for every heavy unit at ``depth``.

    A unit is selected when it has more than twice the mean number of
    children, or unconditionally when the model is flat (``max_depth == 1``).

    Returns
    -------
    (ScheduleTable, list)
        The extended table and the units left for parallel sampling.
    """
    if units is None:
        units = [Unit((int(v),)) for v in topological_depth(dag).sets.get(depth, ())]
    threshold = 2.0 * mean_children(dag)
    rows, remaining = [], []
    for u in sorted(units, key=lambda u: min(u.members)):
        if len(unit_children(dag, u)) > threshold or max_depth == 1:
            rows.append(Row(PARTIAL, (u,) * cores, depth))
        else:
            remaining.append(u)
    return table.appended(rows), remaining


def build_schedule(dag, cores, blocks=()):
    """Build the ``cores``-column computation schedule table.

    Parameters
    ----------
    dag : Dag
    cores : int
        Workers per chain (table width).
    blocks : sequence of node-index sequences or BlockSpec, optional
        Parameters to update jointly; each block is scheduled as a single
        unit at the depth of its deepest member.
    """
    if int(cores) < 1:
        raise ScheduleError("cores must be at least 1")
    cores = int(cores)
    block_units = []
    seen = set()
    for b in blocks:
        members = tuple(sorted(int(m) for m in getattr(b, "members", b)))
        if not members or any(dag.kind[m] != PARAMETER for m in members):
            raise ScheduleError("block members must be stochastic parameters")
        if seen.intersection(members) or len(set(members)) != len(members):
            raise ScheduleError("blocks must be disjoint")
        seen.update(members)
        block_units.append(Unit(members))

    index = topological_depth(dag)
    if len(dag.parameters) == 0:
        return ScheduleTable(cores, blocks=tuple(block_units))
    units_by_depth = _depth_units(dag, index, block_units)
    max_depth = index.max_depth
    table = ScheduleTable(cores, blocks=tuple(block_units))
    group = 0
    for h in range(max_depth, 0, -1):
        if h not in units_by_depth:
            continue
        table, remaining = find_partial_product_parallel(
            dag, cores, h, max_depth, table, units=units_by_depth[h]
        )
        for w in find_conditionally_independent(dag, remaining):
            n_kids = {u: len(unit_children(dag, u)) for u in w}
            # descending child count; Python's sort is stable so ties keep
            # canonical order.  Zero-child units are placed last.
            ordered = sorted(w, key=lambda u: -n_kids[u])
            rows = []
            for start in range(0, len(ordered), cores):
                cells = tuple(ordered[start : start + cores])
                cells += (None,) * (cores - len(cells))
                rows.append(Row(SAMPLE, cells, h, group))
            table = table.appended(rows, gather=True)
            group += 1
    return table


def partition_children(dag, node, cores):
    """Split ``ch(node)`` so that worker ``c`` gets every ``cores``-th child.

    ``node`` may be a node index or a :class:`Unit`.
    """
    unit = node if isinstance(node, Unit) else Unit((int(node),))
    kids = unit_children(dag, unit)
    return [kids[c::cores] for c in range(int(cores))]


def idle_slots(n, cores):
    return (cores - n % cores) % cores
