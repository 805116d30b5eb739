"""Parallel MCMC for BUGS-style directed acyclic graph models."""

from .compiler import compile_graph
from .data import DataEnvironment, format_data, parse_data
from .diagnostics import MonitorBuffer, bgr, ess, format_table, summary
from .errors import (
    ChainAborted,
    CompileError,
    DataError,
    GraphError,
    ModelError,
    ModelSyntaxError,
    ParabugsError,
    SamplerError,
    ScheduleError,
    ScriptError,
)
from .graph import Dag, DepthIndex, children_of_block, mean_children, topological_depth
from .parser import ModelAst, format_model, parse_model
from .runtime import RngStreams, WorkerGroup, all_gather, all_reduce_sum, run_chains, run_iteration
from .samplers import (
    BlockSpec,
    ChainState,
    block_rw_metropolis_step,
    generate_initial_values,
    log_conditional,
    log_likelihood_partial,
    log_prior,
    rw_metropolis_step,
)
from .scheduler import (
    ScheduleTable,
    build_schedule,
    find_conditionally_independent,
    find_partial_product_parallel,
    partition_children,
)
from .script import run_script

__version__ = "0.1.0"
