import threading

import numpy as np
import pytest

from conftest import seeds_inits
from oracles import serial_reference
from parabugs.errors import ChainAborted, ParabugsError, SamplerError
from parabugs.runtime import (
    RngStreams,
    SoloCommunicator,
    ThreadGroup,
    all_gather,
    all_reduce_sum,
    expected_collectives,
    run_chains,
)
from parabugs.runtime import engine
from parabugs.runtime.engine import ParallelLikelihood
from parabugs.samplers import initial_state, likelihood_plan, log_likelihood
from parabugs.scheduler import build_schedule


def on_threads(size, fn):
    """Run ``fn(comm)`` on ``size`` thread ranks; return results by rank."""
    group = ThreadGroup(size, timeout=30)
    out = [None] * size

    def target(r):
        out[r] = fn(group.communicator(r))

    threads = [threading.Thread(target=target, args=(r,)) for r in range(size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return out


def seeds_start(dag):
    state = initial_state(dag, seeds_inits()[0])
    for v in dag.array_nodes("beta"):
        state.values[v] = 0.0
    return state


def test_all_reduce_sum_rank_order():
    assert on_threads(4, lambda c: all_reduce_sum(c, c.rank + 1.0)) == [10.0] * 4
    assert all_reduce_sum(SoloCommunicator(), 2.5) == 2.5


def test_all_gather_returns_rank_vectors():
    out = on_threads(3, lambda c: [p.tolist() for p in all_gather(c, np.arange(c.rank + 1.0))])
    assert all(o == [[0.0], [0.0, 1.0], [0.0, 1.0, 2.0]] for o in out)


def test_parallel_likelihood_matches_serial(seeds_dag):
    state = seeds_start(seeds_dag)
    state.values[seeds_dag.node("alpha1")] = 0.3
    v = seeds_dag.node("alpha1")

    def share(comm):
        plan = likelihood_plan(seeds_dag, v, 4, comm.rank)
        ev = ParallelLikelihood(plan, comm)
        return ev.combine(ev.partial(state.values))

    out = on_threads(4, share)
    assert len(set(out)) == 1
    assert out[0] == pytest.approx(log_likelihood(seeds_dag, v, state), abs=1e-10)


def test_seeds_gather_position_and_collective_count(seeds_dag):
    table = build_schedule(seeds_dag, 4)
    assert table.gathers == (5,)
    assert expected_collectives(table) == 6
    res = run_chains(seeds_dag, table, chains=1, total_cores=4, iterations=50,
                     states=[seeds_start(seeds_dag)], master_seed=3)
    assert res.collectives == [[300] * 4]


def test_ranks_agree_after_100_iterations(seeds_dag):
    for cores in (2, 3, 4):
        res = run_chains(seeds_dag, chains=2, total_cores=2 * cores, iterations=100,
                         states=[seeds_start(seeds_dag)] * 2, master_seed=5)
        for digests in res.digests:
            assert len(set(digests)) == 1


def test_width_one_matches_serial_reference(seeds_dag):
    table = build_schedule(seeds_dag, 1)
    mon = ["alpha0", "alpha1", "sigma", "beta"]
    start = seeds_start(seeds_dag)
    start.adapt_until = 0
    res = run_chains(seeds_dag, table, iterations=200, monitors=mon, states=[start],
                     master_seed=9, adapt=False)
    idx = [seeds_dag.node(n) for n in res.buffer.names]
    ref = serial_reference(seeds_dag, table, start.copy(), 9, 0, 200, idx)
    np.testing.assert_array_equal(res.buffer.trace(0), ref)


def test_process_backend_matches_threads(seeds_dag):
    kw = dict(chains=2, total_cores=4, iterations=60, burn_in=20, monitors=["alpha1", "sigma"],
              states=[seeds_start(seeds_dag)] * 2, master_seed=2)
    a = run_chains(seeds_dag, backend="thread", **kw)
    b = run_chains(seeds_dag, backend="process", **kw)
    assert a.buffer.digest() == b.buffer.digest()
    assert a.digests == b.digests
    assert a.collectives == b.collectives


def test_continuation_equals_one_run(seeds_dag):
    kw = dict(chains=1, total_cores=2, monitors=["alpha0"], master_seed=4, adapt=False)
    whole = run_chains(seeds_dag, iterations=40, states=[seeds_start(seeds_dag)], **kw)
    first = run_chains(seeds_dag, iterations=15, states=[seeds_start(seeds_dag)], **kw)
    second = run_chains(seeds_dag, iterations=25, states=first.states,
                        stream_states=first.stream_states, **kw)
    np.testing.assert_array_equal(whole.buffer.trace(0)[15:], second.buffer.trace(0))
    assert whole.digests == second.digests


def test_bad_arguments(seeds_dag):
    with pytest.raises(ParabugsError, match="divided equally"):
        run_chains(seeds_dag, chains=2, total_cores=3, iterations=1)
    with pytest.raises(ParabugsError, match="not a stochastic parameter"):
        run_chains(seeds_dag, iterations=1, monitors=["r"])
    with pytest.raises(ParabugsError, match="no such node"):
        run_chains(seeds_dag, iterations=1, monitors=["gamma"])
    with pytest.raises(ParabugsError):
        run_chains(seeds_dag, build_schedule(seeds_dag, 2), total_cores=4, iterations=1)


def test_worker_failure_aborts_chain(seeds_dag, monkeypatch):
    real = engine._sample_set

    def flaky(group, step, state):
        if group.rank == 1 and state.iteration == 3:
            raise RuntimeError("injected")
        return real(group, step, state)

    monkeypatch.setattr(engine, "_sample_set", flaky)
    with pytest.raises(ChainAborted, match="worker 2"):
        run_chains(seeds_dag, chains=1, total_cores=4, iterations=10,
                   states=[seeds_start(seeds_dag)])


def test_bad_state_raises_sampler_error(seeds_dag):
    bad = seeds_start(seeds_dag)
    bad.values[seeds_dag.node("sigma")] = 50.0
    for backend in ("thread", "process"):
        with pytest.raises((SamplerError, ChainAborted), match="sigma"):
            run_chains(seeds_dag, chains=1, total_cores=2, iterations=5, states=[bad], backend=backend)


def test_streams():
    a, b = RngStreams(7, 0, 0), RngStreams(7, 0, 1)
    assert a.common.random() == b.common.random()
    assert a.specific.random() != b.specific.random()
    assert RngStreams(7, 1, 0).common.random() != RngStreams(7, 0, 0).common.random()
    s = RngStreams(7, 0, 0)
    saved = s.get_state()
    x = s.specific.standard_normal(3)
    np.testing.assert_array_equal(s.set_state(saved).specific.standard_normal(3), x)


def test_monitor_records_in_iteration_order(seeds_dag):
    res = run_chains(seeds_dag, chains=2, total_cores=2, iterations=30, burn_in=10,
                     monitors=["alpha0", "sigma"], states=[seeds_start(seeds_dag)] * 2)
    recs = list(res.buffer.records())
    assert len(recs) == 2 * 20 * 2
    for c in range(2):
        its = [r[1] for r in recs if r[0] == c]
        assert its == sorted(its) and its[0] == 11 and its[-1] == 30
    assert res.buffer.start == 11 and res.buffer.sample == 20
