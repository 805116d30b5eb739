"""Reader for R-dump style ``list(...)`` data and initial-value files.

Supported entries are scalars, ``c(...)`` vectors and
``structure(.Data = c(...), .Dim = c(...))`` arrays.  ``NA`` marks a
missing value and is stored as NaN.  Arrays are filled column-major, as R
does.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import DataError

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?L?)
  | (?P<name>[A-Za-z.][A-Za-z0-9._]*)
  | (?P<op>[(),=])
    """,
    re.VERBOSE,
)


class DataEnvironment:
    """Mapping from names to numeric arrays.

    Scalars are stored as 0-d float arrays; missing entries are NaN.
    """

    def __init__(self, bindings=None):
        self.bindings = {}
        for name, value in (bindings or {}).items():
            self.bindings[name] = np.asarray(value, dtype=float)

    def __contains__(self, name):
        return name in self.bindings

    def __getitem__(self, name):
        return self.bindings[name]

    def __iter__(self):
        return iter(self.bindings)

    def __len__(self):
        return len(self.bindings)

    def __eq__(self, other):
        if not isinstance(other, DataEnvironment):
            return NotImplemented
        if self.bindings.keys() != other.bindings.keys():
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b, equal_nan=True)
            for a, b in ((self[k], other[k]) for k in self.bindings)
        )

    def __repr__(self):
        return f"DataEnvironment({sorted(self.bindings)})"

    def items(self):
        return self.bindings.items()

    def merged(self, other):
        """Return a new environment holding both sets of bindings."""
        clash = sorted(set(self.bindings) & set(other.bindings))
        if clash:
            raise DataError(f"name {clash[0]!r} defined more than once")
        out = DataEnvironment()
        out.bindings = {**self.bindings, **other.bindings}
        return out


def _tokenize(source):
    out = []
    line, start, i = 1, 0, 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        if m is None:
            raise DataError(f"unexpected character {source[i]!r}", line, i - start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            start = m.end()
        elif kind not in ("ws", "comment"):
            out.append((kind, m.group(), line, m.start() - start + 1))
        i = m.end()
    out.append(("eof", "", line, i - start + 1))
    return out


class _Reader:
    def __init__(self, source):
        self.toks = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def fail(self, what, tok=None):
        kind, text, line, col = tok or self.peek()
        found = "end of input" if kind == "eof" else repr(text)
        raise DataError(f"expected {what}, found {found}", line, col)

    def take(self, text):
        tok = self.peek()
        if tok[1] != text or tok[0] == "eof":
            self.fail(repr(text))
        self.i += 1
        return tok

    def name(self):
        tok = self.peek()
        if tok[0] != "name":
            self.fail("a name")
        self.i += 1
        return tok

    def parse(self):
        tok = self.name()
        if tok[1] != "list":
            self.fail("'list'", tok)
        self.take("(")
        bindings = {}
        if self.peek()[1] != ")":
            while True:
                key = self.name()
                self.take("=")
                value = self.value()
                if key[1] in bindings:
                    raise DataError(f"duplicate name {key[1]!r}", key[2], key[3])
                bindings[key[1]] = value
                if self.peek()[1] == ",":
                    self.i += 1
                    continue
                break
        self.take(")")
        if self.peek()[0] != "eof":
            self.fail("end of input")
        env = DataEnvironment()
        env.bindings = bindings
        return env

    def scalar(self):
        kind, text, line, col = self.peek()
        if kind == "number":
            self.i += 1
            return float(text.rstrip("L"))
        if kind == "name" and text == "NA":
            self.i += 1
            return np.nan
        self.fail("a number or NA")

    def vector(self):
        self.take("(")
        vals = []
        if self.peek()[1] != ")":
            vals.append(self.scalar())
            while self.peek()[1] == ",":
                self.i += 1
                vals.append(self.scalar())
        self.take(")")
        return np.array(vals, dtype=float)

    def value(self):
        kind, text, line, col = self.peek()
        if kind == "name" and text == "c":
            self.i += 1
            return self.vector()
        if kind == "name" and text == "structure":
            self.i += 1
            return self.structure(line, col)
        if kind == "name" and text == "list":
            raise DataError("nested lists are not supported", line, col)
        return np.array(self.scalar())

    def structure(self, line, col):
        self.take("(")
        parts = {}
        while True:
            key = self.name()
            if key[1] not in (".Data", ".Dim"):
                raise DataError(f"unsupported structure field {key[1]!r}", key[2], key[3])
            if key[1] in parts:
                raise DataError(f"duplicate structure field {key[1]!r}", key[2], key[3])
            self.take("=")
            c = self.name()
            if c[1] != "c":
                self.fail("'c'", c)
            parts[key[1]] = self.vector()
            if self.peek()[1] == ",":
                self.i += 1
                continue
            break
        self.take(")")
        if ".Data" not in parts or ".Dim" not in parts:
            raise DataError("structure needs both .Data and .Dim", line, col)
        dims = parts[".Dim"]
        if np.any(np.isnan(dims)) or np.any(dims < 1) or np.any(dims != np.round(dims)):
            raise DataError(".Dim entries must be positive integers", line, col)
        shape = tuple(int(d) for d in dims)
        data = parts[".Data"]
        if int(np.prod(shape)) != data.size:
            raise DataError(
                f".Dim product {int(np.prod(shape))} does not match .Data length {data.size}",
                line,
                col,
            )
        return np.reshape(data, shape, order="F")


def parse_data(source):
    """Parse an R-dump ``list(...)`` into a :class:`DataEnvironment`."""
    if not isinstance(source, str):
        raise DataError("data source must be text")
    return _Reader(source).parse()


def _fmt(v):
    if np.isnan(v):
        return "NA"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def format_data(env):
    """Write an environment back out in R-dump form."""
    entries = []
    for name, arr in env.items():
        if arr.ndim == 0:
            entries.append(f"{name} = {_fmt(float(arr))}")
        elif arr.ndim == 1:
            entries.append(f"{name} = c({', '.join(_fmt(v) for v in arr)})")
        else:
            flat = ", ".join(_fmt(v) for v in arr.ravel(order="F"))
            dims = ", ".join(str(d) for d in arr.shape)
            entries.append(f"{name} = structure(.Data = c({flat}), .Dim = c({dims}))")
    return "list(" + ",\n     ".join(entries) + ")\n"
