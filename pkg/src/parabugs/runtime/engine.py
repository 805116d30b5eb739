"""Execute a computation schedule on cooperating workers.

Each chain owns a worker group of ``C`` ranks.  Every rank keeps a full
copy of the chain state and walks the schedule rows in order:

* sample rows: the rank updates the units in its own column with its
  specific stream; after the last row of a conditionally independent set
  the new values (and accept flags, so adaptation stays in step) are
  exchanged with one all-gather;
* partial-product rows: all ranks propose the same candidate and run the
  same accept test from the common stream, and only the likelihood is
  split, each rank adding up every ``C``-th child before an all-reduce.

Consequently all ranks of a chain hold bit-identical states after every
iteration, and the number of collectives per iteration is fixed by the
schedule: one reduce per partial-product row plus one gather per set.
"""

from __future__ import annotations

import multiprocessing as mp
import queue as queue_mod
import threading
from dataclasses import dataclass, field

import numpy as np

from ..diagnostics import MonitorBuffer
from ..errors import ChainAborted, ParabugsError, SamplerError
from ..graph import PARAMETER
from ..samplers import (
    BatchUpdate,
    generate_initial_values,
    initial_state,
    likelihood_plan,
    _unit_step,
    record,
    target_rate,
)
from ..scheduler import PARTIAL, SAMPLE, build_schedule
from .collectives import ProcessGroup, SoloCommunicator, ThreadGroup, all_gather, all_reduce_sum
from .streams import RngStreams

BACKENDS = ("thread", "process")


class ParallelLikelihood:
    """Evaluator for one rank's share of a partial-product row."""

    def __init__(self, plan, comm):
        self.plan = plan
        self.comm = comm

    def partial(self, values):
        return float(self.plan.evaluate(values)[0])

    def combine(self, delta):
        return all_reduce_sum(self.comm, delta)


class _SampleStep:
    """One conditionally independent set: local batch update plus gather.

    Gather payloads are laid out as the member values of the sending
    rank's units (schedule-cell order) followed by one accept flag per
    unit.
    """

    def __init__(self, dag, layout, rank):
        self.layout = layout
        own = layout[rank]
        self.batch = BatchUpdate(dag, own) if own else None
        self.members = []  # per rank: flattened member indices
        self.expand = []  # per rank: member -> unit position
        for units in layout:
            dims = [len(u.members) for u in units]
            self.members.append(np.array([m for u in units for m in u.members], dtype=np.int64))
            self.expand.append(np.repeat(np.arange(len(units)), dims).astype(np.int64))
        self.all_members = np.concatenate(self.members)
        targets = [target_rate(len(u.members)) for units in layout for u in units]
        offsets = np.cumsum([0] + [len(units) for units in layout])
        self.all_targets = np.concatenate(
            [np.asarray(targets[offsets[r] : offsets[r + 1]])[self.expand[r]] for r in range(len(layout))]
        ) if len(self.all_members) else np.zeros(0)


@dataclass
class _PartialStep:
    unit: object
    evaluator: ParallelLikelihood


def compile_program(dag, schedule, rank, comm):
    """Translate the schedule into the step list executed by ``rank``."""
    steps = []
    pending = []
    gathers = set(schedule.gathers)
    for i, row in enumerate(schedule.rows):
        if row.kind == PARTIAL:
            plan = likelihood_plan(dag, row.cells[rank], schedule.cores, rank)
            steps.append(_PartialStep(row.cells[rank], ParallelLikelihood(plan, comm)))
        else:
            pending.append(row)
        if i in gathers:
            layout = [[r.cells[c] for r in pending if r.cells[c] is not None] for c in range(schedule.cores)]
            steps.append(_SampleStep(dag, layout, rank))
            pending = []
    if pending:
        raise ParabugsError("schedule has sample rows after its last gather")
    return steps


def gather_capacity(schedule):
    """Longest payload any rank sends in one collective."""
    cap = 1
    pending = []
    for i, row in enumerate(schedule.rows):
        if row.kind == SAMPLE:
            pending.append(row)
        if i in schedule.gathers:
            for c in range(schedule.cores):
                cap = max(cap, sum(len(r.cells[c].members) + 1 for r in pending if r.cells[c] is not None))
            pending = []
    return cap


def expected_collectives(schedule):
    """Collective calls per iteration implied by the schedule."""
    return sum(r.kind == PARTIAL for r in schedule.rows) + len(schedule.gathers)


class WorkerGroup:
    """One rank's view of its chain's group: communicator plus streams."""

    def __init__(self, chain, comm, streams):
        self.chain = int(chain)
        self.comm = comm
        self.streams = streams
        self._program = None
        self._key = None

    @property
    def rank(self):
        return self.comm.rank

    @property
    def size(self):
        return self.comm.size

    @property
    def is_lead(self):
        return self.comm.rank == 0

    def program(self, dag, schedule):
        if self._key is None or self._key[0] is not dag or self._key[1] is not schedule:
            if schedule.cores != self.size:
                raise ParabugsError(
                    f"schedule has {schedule.cores} columns but the group has {self.size} workers"
                )
            self._program = compile_program(dag, schedule, self.rank, self.comm)
            self._key = (dag, schedule)
        return self._program


def _sample_set(group, step, state):
    values = state.values
    batch = step.batch
    if batch is not None:
        z = group.streams.specific.standard_normal(batch.n_draws)
        u = group.streams.specific.random(len(batch.units))
        accepted = batch.step(state, z, u)
        payload = np.concatenate([values[batch.members], accepted.astype(float)])
    else:
        payload = np.zeros(0)
    parts = all_gather(group.comm, payload)
    flags = []
    for members, expand, part in zip(step.members, step.expand, parts):
        k = len(members)
        values[members] = part[:k]
        flags.append(part[k:][expand] != 0.0)
    if len(step.all_members):
        record(state, step.all_members, np.concatenate(flags), step.all_targets)


def run_iteration(group, schedule, dag, state):
    """Advance ``state`` by one sweep of the schedule (in place)."""
    state.iteration += 1
    for step in group.program(dag, schedule):
        if isinstance(step, _PartialStep):
            _unit_step(dag, step.unit, state, group.streams.common, step.evaluator)
        else:
            _sample_set(group, step, state)
    return state


# ----------------------------------------------------------------------
# chains


def resolve_monitors(dag, monitors):
    """Expand monitor names (arrays give all elements) into node indices."""
    idx, labels = [], []
    for name in monitors:
        try:
            nodes = dag.array_nodes(name)
        except ParabugsError:
            raise ParabugsError(f"cannot monitor {name!r}: no such node") from None
        nodes = [v for v in nodes if dag.kind[v] == PARAMETER]
        if not nodes:
            raise ParabugsError(f"cannot monitor {name!r}: it is not a stochastic parameter")
        for v in nodes:
            if v not in idx:
                idx.append(v)
                labels.append(dag.names[v])
    return np.array(idx, dtype=np.int64), labels


@dataclass
class RunResult:
    buffer: MonitorBuffer
    states: list
    stream_states: list
    digests: list
    collectives: list
    iterations: int = 0
    errors: list = field(default_factory=list)


def _work(dag, schedule, chain, comm, state, stream_state, seed, iterations, burn_in, monitor_idx, adapt):
    streams = RngStreams(seed, chain, comm.rank)
    if stream_state is not None:
        streams.set_state(stream_state)
    group = WorkerGroup(chain, comm, streams)
    if adapt:
        state.adapt_until = state.iteration + burn_in
    keep = iterations - burn_in if group.is_lead else 0
    trace = np.empty((keep, len(monitor_idx)))
    iters = np.empty(keep, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for k in range(iterations):
            run_iteration(group, schedule, dag, state)
            if group.is_lead and k >= burn_in:
                trace[k - burn_in] = state.values[monitor_idx]
                iters[k - burn_in] = state.iteration
    return {
        "state": state,
        "streams": streams.get_state(),
        "digest": state.digest(),
        "collectives": comm.n_collectives,
        "trace": trace,
        "iters": iters,
    }


def initial_states(dag, chains, master_seed, inits=None):
    """One starting state per chain: supplied inits, the rest drawn from priors."""
    states = []
    for c in range(chains):
        env = inits[c] if inits is not None and c < len(inits) else None
        stream = RngStreams(master_seed, c, 0).inits()
        states.append(generate_initial_values(dag, stream, env))
    return states


def run_chains(
    dag,
    schedule=None,
    chains=1,
    total_cores=1,
    iterations=1000,
    burn_in=0,
    monitors=(),
    master_seed=0,
    inits=None,
    states=None,
    stream_states=None,
    backend="thread",
    adapt=True,
):
    """Run ``chains`` chains on ``total_cores`` workers split equally.

    Parameters
    ----------
    schedule : ScheduleTable, optional
        Built for ``total_cores // chains`` workers when omitted.
    burn_in : int
        Leading iterations that are not monitored; proposal scales adapt
        during them when ``adapt`` is true and are frozen afterwards.
    states, stream_states : optional
        Continue from an earlier :class:`RunResult`.

    Returns
    -------
    RunResult
        The master-side monitor buffer plus final states, stream states,
        per-rank state digests and per-rank collective counts.
    """
    chains, total_cores = int(chains), int(total_cores)
    if chains < 1 or total_cores < 1:
        raise ParabugsError("chains and cores must be positive")
    if total_cores % chains:
        raise ParabugsError(
            f"{total_cores} cores cannot be divided equally across {chains} chains"
        )
    cores = total_cores // chains
    if schedule is None:
        schedule = build_schedule(dag, cores)
    if schedule.cores != cores:
        raise ParabugsError(f"schedule is for {schedule.cores} workers per chain, not {cores}")
    if not 0 <= burn_in <= iterations:
        raise ParabugsError("burn-in must lie between 0 and the number of iterations")
    if backend not in BACKENDS:
        raise ParabugsError(f"unknown backend {backend!r}")
    monitor_idx, labels = resolve_monitors(dag, monitors)
    if states is None:
        states = initial_states(dag, chains, master_seed, inits)
    common = dict(
        seed=master_seed, iterations=int(iterations), burn_in=int(burn_in),
        monitor_idx=monitor_idx, adapt=adapt,
    )
    jobs = [
        (c, r, states[c].copy(), None if stream_states is None else stream_states[c][r])
        for c in range(chains)
        for r in range(cores)
    ]
    if backend == "process" and cores * chains > 1:
        results = _run_processes(dag, schedule, chains, cores, jobs, common)
    else:
        results = _run_threads(dag, schedule, chains, cores, jobs, common)

    buffer = MonitorBuffer(labels, chains)
    out = RunResult(buffer, [None] * chains, [[None] * cores for _ in range(chains)],
                    [[None] * cores for _ in range(chains)], [[0] * cores for _ in range(chains)],
                    int(iterations))
    for (c, r), res in sorted(results.items()):
        out.stream_states[c][r] = res["streams"]
        out.digests[c][r] = res["digest"]
        out.collectives[c][r] = res["collectives"]
        if r == 0:
            out.states[c] = res["state"]
            buffer.append(c, res["iters"], res["trace"])
    return out


def _failure(chain, rank, exc):
    if isinstance(exc, SamplerError):
        return SamplerError(f"chain {chain + 1}: {exc}")
    return ChainAborted(f"chain {chain + 1}, worker {rank + 1} failed: {exc}")


def _run_threads(dag, schedule, chains, cores, jobs, kw):
    results, errors = {}, []
    if cores == 1 and chains == 1:
        c, r, state, ss = jobs[0]
        results[(c, r)] = _work(dag, schedule, c, SoloCommunicator(), state, ss, **kw)
        return results
    groups = [ThreadGroup(cores) if cores > 1 else None for _ in range(chains)]
    lock = threading.Lock()

    def target(c, r, state, ss):
        comm = groups[c].communicator(r) if groups[c] else SoloCommunicator()
        try:
            res = _work(dag, schedule, c, comm, state, ss, **kw)
            with lock:
                results[(c, r)] = res
        except ChainAborted:
            pass
        except BaseException as exc:  # noqa: BLE001 - propagated to the caller
            with lock:
                errors.append(_failure(c, r, exc))
            if groups[c]:
                groups[c].abort()

    threads = [threading.Thread(target=target, args=job, daemon=True) for job in jobs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    if len(results) != len(jobs):
        raise ChainAborted("a worker group aborted")
    return results


def _process_entry(dag, schedule, group, c, r, state, ss, kw, q):
    try:
        res = _work(dag, schedule, c, group.communicator(r), state, ss, **kw)
        q.put(("ok", c, r, res))
    except ChainAborted:
        q.put(("aborted", c, r, None))
    except BaseException as exc:  # noqa: BLE001
        group.abort()
        q.put(("error", c, r, repr(exc) if not isinstance(exc, ParabugsError) else str(exc)))


def _run_processes(dag, schedule, chains, cores, jobs, kw):
    ctx = mp.get_context("fork")
    cap = gather_capacity(schedule)
    groups = [ProcessGroup(ctx, cores, cap) for _ in range(chains)]
    q = ctx.Queue()
    procs = {}
    for c, r, state, ss in jobs:
        p = ctx.Process(target=_process_entry, args=(dag, schedule, groups[c], c, r, state, ss, kw, q))
        p.daemon = True
        p.start()
        procs[(c, r)] = p
    results, errors = {}, []
    done = set()
    while len(done) < len(procs):
        try:
            status, c, r, payload = q.get(timeout=0.5)
        except queue_mod.Empty:
            for key, p in procs.items():
                if key not in done and not p.is_alive() and p.exitcode not in (0, None):
                    done.add(key)
                    errors.append(ChainAborted(f"chain {key[0] + 1}, worker {key[1] + 1} died"))
                    groups[key[0]].abort()
            continue
        done.add((c, r))
        if status == "ok":
            results[(c, r)] = payload
        elif status == "error":
            errors.append(ChainAborted(f"chain {c + 1}, worker {r + 1} failed: {payload}"))
    for p in procs.values():
        p.join()
    if errors:
        raise errors[0]
    if len(results) != len(jobs):
        raise ChainAborted("a worker group aborted")
    return results
