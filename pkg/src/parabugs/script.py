"""Procedural batch scripts: check, load, compile, distribute, update, inspect.

A script is one command per line, e.g.::

    modelCheck('seeds.bug')
    modelData('seeds_data.txt')
    modelCompile(2)
    modelGenInits()
    modelDistribute(8)
    modelUpdate(1000)
    samplesSet('alpha1')
    modelUpdate(10000)
    samplesStats('*')

Arguments are Python literals.  Relative paths are resolved against the
script's directory.  ``modelUpdate`` calls made before the first
``samplesSet`` count as burn-in: nothing is recorded and proposal scales
adapt; afterwards the scales are frozen.
"""

from __future__ import annotations

import ast as pyast
import os
import re
from pathlib import Path

import numpy as np

from . import diagnostics
from .compiler import compile_graph
from .data import DataEnvironment, parse_data
from .errors import ModelError, ParabugsError, ScriptError
from .graph import PARAMETER, to_json
from .parser import parse_model
from .runtime.engine import resolve_monitors, run_chains
from .runtime.streams import RngStreams
from .samplers import apply_inits, generate_initial_values, initial_state
from .scheduler import build_schedule

CORES_ENV = "PARABUGS_CORES"

_LINE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_.]*)\s*(?:\((.*)\))?\s*;?\s*$")


def default_cores(fallback=1):
    raw = os.environ.get(CORES_ENV)
    if raw is None or raw.strip() == "":
        return fallback
    try:
        value = int(raw)
    except ValueError:
        raise ScriptError(f"{CORES_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ScriptError(f"{CORES_ENV} must be a positive integer, got {raw!r}")
    return value


def parse_script(text):
    """List of ``(line_no, verb, args)`` commands."""
    commands = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ScriptError(f"line {no}: cannot parse command {raw.strip()!r}")
        verb, arg_text = m.group(1), (m.group(2) or "").strip()
        args = ()
        if arg_text:
            try:
                args = pyast.literal_eval(f"({arg_text},)")
            except (ValueError, SyntaxError):
                raise ScriptError(f"line {no}: malformed arguments {arg_text!r}") from None
        commands.append((no, verb, tuple(args)))
    return commands


class Session:
    """Model state driven by script commands."""

    def __init__(self, base_dir=".", seed=1, cores=None, chains=1, out_dir=None, backend="thread"):
        self.base_dir = Path(base_dir)
        self.seed = int(seed)
        self.default_cores = cores
        self.default_chains = int(chains)
        self.out_dir = Path(out_dir) if out_dir else None
        self.backend = backend
        self.output = []
        self.ast = None
        self.data = DataEnvironment()
        self.dag = None
        self.chains = None
        self.states = None
        self.cores = None
        self.schedule = None
        self.stream_states = None
        self.iteration = 0
        self.monitors = []
        self.samples = {}  # label -> (start, [per-chain list of arrays])

    # -- helpers ---------------------------------------------------------
    def emit(self, text):
        self.output.append(text if text.endswith("\n") else text + "\n")

    def path(self, name):
        p = Path(name)
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.exists():
            raise ScriptError(f"file not found: {name}")
        return p

    def read(self, name):
        p = self.path(name)
        return p.read_text(encoding="utf-8"), str(p)

    def need_checked(self):
        if self.ast is None:
            raise ScriptError("model must be checked first (modelCheck)")

    def need_compiled(self):
        if self.dag is None:
            raise ScriptError("model must be compiled (modelCompile)")

    def need_initialised(self):
        self.need_compiled()
        missing = [
            (c, self.dag.names[v])
            for c, s in enumerate(self.states)
            for v in self.dag.parameters
            if np.isnan(s.values[v])
        ]
        if missing:
            c, name = missing[0]
            raise ScriptError(
                f"model must be initialised (modelInits or modelGenInits): "
                f"{name} has no value in chain {c + 1}"
            )

    # -- verbs -----------------------------------------------------------
    def modelCheck(self, path):
        text, name = self.read(path)
        try:
            self.ast = parse_model(text)
        except ModelError as exc:
            raise ScriptError(exc.format(name)) from None
        self.data = DataEnvironment()
        self.dag = None
        self.emit("model is syntactically correct")

    def modelData(self, path):
        self.need_checked()
        if self.dag is not None:
            raise ScriptError("data must be loaded before modelCompile")
        text, name = self.read(path)
        try:
            self.data = self.data.merged(parse_data(text))
        except ModelError as exc:
            raise ScriptError(exc.format(name)) from None
        self.emit("data loaded")

    def modelCompile(self, chains=None):
        self.need_checked()
        chains = self.default_chains if chains is None else int(chains)
        if chains < 1:
            raise ScriptError("number of chains must be positive")
        try:
            self.dag = compile_graph(self.ast, self.data)
        except ModelError as exc:
            raise ScriptError(exc.format()) from None
        self.chains = chains
        self.states = [initial_state(self.dag) for _ in range(chains)]
        self.schedule = None
        self.stream_states = None
        self.iteration = 0
        self.emit("model compiled")

    def modelInits(self, path, chain=1):
        self.need_compiled()
        chain = int(chain)
        if not 1 <= chain <= self.chains:
            raise ScriptError(f"chain {chain} outside 1..{self.chains}")
        text, name = self.read(path)
        try:
            env = parse_data(text)
        except ModelError as exc:
            raise ScriptError(exc.format(name)) from None
        apply_inits(self.dag, self.states[chain - 1], env)
        self.emit(f"initial values loaded for chain {chain}")

    def modelGenInits(self):
        self.need_compiled()
        for c, state in enumerate(self.states):
            generate_initial_values(self.dag, RngStreams(self.seed, c, 0).inits(), state=state)
        self.emit("initial values generated")

    def modelDistribute(self, cores):
        self.need_compiled()
        cores = int(cores)
        if cores < 1:
            raise ScriptError("number of cores must be positive")
        if cores % self.chains:
            raise ScriptError(
                f"{cores} cores cannot be divided equally across {self.chains} chains"
            )
        if self.iteration and cores != self.cores:
            raise ScriptError("the number of cores cannot change once updating has started")
        self.cores = cores
        self.schedule = build_schedule(self.dag, cores // self.chains)
        self.emit(f"distributed over {cores} cores ({cores // self.chains} per chain)")

    def modelUpdate(self, iterations, *_):
        self.need_initialised()
        n = int(iterations)
        if n < 1:
            raise ScriptError("number of updates must be positive")
        if self.schedule is None:
            fallback = self.default_cores or default_cores(self.chains)
            self.modelDistribute(fallback)
        recording = bool(self.monitors)
        result = run_chains(
            self.dag,
            self.schedule,
            chains=self.chains,
            total_cores=self.cores,
            iterations=n,
            burn_in=0 if recording else n,
            monitors=self.monitors,
            master_seed=self.seed,
            states=self.states,
            stream_states=self.stream_states,
            backend=self.backend,
            adapt=not recording,
        )
        self.states = result.states
        self.stream_states = result.stream_states
        self.iteration += n
        if recording:
            buf = result.buffer
            for label in buf.names:
                start, parts = self.samples.setdefault(label, (buf.start, [[] for _ in range(self.chains)]))
                for c, vec in enumerate(buf.samples(label)):
                    parts[c].append(vec)
        self.emit(f"{n} updates took place")

    def samplesSet(self, name):
        self.need_compiled()
        try:
            _, labels = resolve_monitors(self.dag, [name])
        except ParabugsError as exc:
            raise ScriptError(str(exc)) from None
        for label in labels:
            if label not in self.monitors:
                self.monitors.append(label)
        self.emit(f"monitor set for {name}")

    def _selected(self, name):
        if name in ("*", None):
            return [m for m in self.monitors if m in self.samples]
        _, labels = resolve_monitors(self.dag, [name])
        missing = [m for m in labels if m not in self.samples]
        if missing:
            raise ScriptError(f"no samples recorded for {missing[0]}")
        return labels

    def buffer(self, label):
        start, parts = self.samples[label]
        buf = diagnostics.MonitorBuffer([label], self.chains)
        for c, chunks in enumerate(parts):
            vec = np.concatenate(chunks) if chunks else np.zeros(0)
            buf.append(c, np.arange(start, start + len(vec)), vec)
        return buf

    def samplesStats(self, name="*"):
        self.need_compiled()
        labels = self._selected(name)
        if not labels:
            raise ScriptError("no monitored samples to summarise")
        rows = [diagnostics.summary(self.buffer(m), m) for m in labels]
        table = diagnostics.format_table(rows)
        self.emit(table)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "stats.txt").write_text(table)
            self.write_samples()

    def samplesBgr(self, name="*"):
        self.need_compiled()
        labels = self._selected(name)
        if self.chains < 2:
            raise ScriptError("the scale reduction factor needs at least 2 chains")
        width = max(len(m) for m in labels) if labels else 0
        lines = [f"{m.ljust(width)}  {diagnostics.format_number(diagnostics.bgr(self.buffer(m), m))}" for m in labels]
        self.emit("\n".join(lines))

    def write_samples(self):
        labels = [m for m in self.monitors if m in self.samples]
        if not labels:
            return
        buf = diagnostics.MonitorBuffer(labels, self.chains)
        for c in range(self.chains):
            cols = [np.concatenate(self.samples[m][1][c]) for m in labels]
            start = self.samples[labels[0]][0]
            n = min(len(x) for x in cols)
            buf.append(c, np.arange(start, start + n), np.column_stack([x[-n:] for x in cols]))
        buf.to_csv(self.out_dir / "samples.csv")

    def infoDistribution(self):
        self.need_compiled()
        if self.schedule is None:
            raise ScriptError("model must be distributed (modelDistribute)")
        self.emit(self.schedule.render(self.dag))
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "schedule.json").write_text(self.schedule.to_json(self.dag, indent=2) + "\n")

    def infoGraph(self):
        self.need_compiled()
        self.emit(to_json(self.dag, indent=2))

    def seed_(self, value):
        if self.iteration:
            raise ScriptError("seed must be set before updating")
        self.seed = int(value)
        self.emit(f"seed set to {self.seed}")

    VERBS = {
        "modelCheck": "modelCheck",
        "modelData": "modelData",
        "modelCompile": "modelCompile",
        "modelInits": "modelInits",
        "modelGenInits": "modelGenInits",
        "modelDistribute": "modelDistribute",
        "modelUpdate": "modelUpdate",
        "samplesSet": "samplesSet",
        "samplesStats": "samplesStats",
        "samplesBgr": "samplesBgr",
        "infoDistribution": "infoDistribution",
        "infoGraph": "infoGraph",
        "seed": "seed_",
    }

    def execute(self, verb, args):
        method = self.VERBS.get(verb)
        if method is None:
            raise ScriptError(f"unknown command {verb!r}")
        try:
            getattr(self, method)(*args)
        except TypeError as exc:
            raise ScriptError(f"bad arguments for {verb}: {exc}") from None


def run_script(text, base_dir=".", seed=1, cores=None, chains=1, out_dir=None, backend="thread"):
    """Execute a script.

    Returns
    -------
    (int, str, str)
        Exit status (0 when every command succeeded), standard output and
        error text.  Execution stops at the first failing command.
    """
    session = Session(base_dir, seed, cores, chains, out_dir, backend)
    try:
        commands = parse_script(text)
    except ScriptError as exc:
        return 1, "", f"error: {exc}\n"
    for no, verb, args in commands:
        try:
            session.execute(verb, args)
        except ParabugsError as exc:
            return 1, "".join(session.output), f"error: line {no}: {verb}: {exc}\n"
    return 0, "".join(session.output), ""
