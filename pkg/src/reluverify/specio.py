"""Property ingestion: VNNLIB subset and a native JSON property format.

Both formats produce a :class:`PropertyFile`: an input box over the
declared X variables plus an output condition over the Y variables.
The VNNLIB convention is followed: asserted output constraints describe
what a COUNTEREXAMPLE satisfies, so they become the unsafe disjuncts of
the spec and the property holds iff no input reaches any disjunct.

Every parse failure raises :class:`PropertyError` carrying a location
(line/column for text, JSON path for the native format); no input text
crashes the parser.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .bab import Problem
from .geometry import HalfSpace, Hyperrectangle, OutputSpec
from .model import Model

__all__ = [
    "PropertyError",
    "PropertyFile",
    "parse_vnnlib",
    "parse_property_json",
    "serialize_property",
    "to_problem",
]


class PropertyError(Exception):
    """Parse or validation failure with a source location."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None, path: str | None = None):
        self.message = message
        self.line = line
        self.col = col
        self.path = path
        if line is not None:
            prefix = f"line {line}, col {col}: " if col is not None else f"line {line}: "
        elif path is not None:
            prefix = f"at {path}: "
        else:
            prefix = ""
        super().__init__(prefix + message)


@dataclass(frozen=True, eq=False)
class PropertyFile:
    """Input box plus output condition in disjunctive normal form.

    ``mode == "unsafe"``: the disjuncts are the counterexample condition
    (each a conjunction of halfspaces a violator's output satisfies).
    ``mode == "safe"``: the single conjunction is the polytope every
    output must stay inside (native JSON format only).

    The bounds are kept exactly as parsed so serialization round-trips
    bitwise; the center/radius box is derived on demand.
    """

    input_low: np.ndarray
    input_high: np.ndarray
    mode: str
    output: tuple  # tuple of conjunctions, each a tuple of HalfSpace
    num_inputs: int
    num_outputs: int

    @property
    def input_box(self) -> Hyperrectangle:
        return Hyperrectangle.from_bounds(self.input_low, self.input_high)


# ---------------------------------------------------------------------------
# VNNLIB subset
# ---------------------------------------------------------------------------

_NUMERAL = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_XVAR = re.compile(r"^X_(\d+)$")
_YVAR = re.compile(r"^Y_(\d+)$")


def _tokenize(text: str):
    tokens = []
    line, col, i = 1, 1, 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line, col, i = line + 1, 1, i + 1
        elif ch in " \t\r":
            col, i = col + 1, i + 1
        elif ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif ch in "()":
            tokens.append((ch, line, col))
            col, i = col + 1, i + 1
        else:
            j = i
            while j < len(text) and text[j] not in " \t\r\n();":
                j += 1
            tokens.append((text[i:j], line, col))
            col += j - i
            i = j
    return tokens


def _read_sexprs(tokens):
    """Group tokens into nested ("list", items, l, c) / ("sym", s, l, c)."""
    pos = 0

    def one():
        nonlocal pos
        tok, line, col = tokens[pos]
        if tok == "(":
            pos += 1
            items = []
            while True:
                if pos >= len(tokens):
                    raise PropertyError("unclosed parenthesis", line, col)
                if tokens[pos][0] == ")":
                    pos += 1
                    return ("list", items, line, col)
                items.append(one())
        if tok == ")":
            raise PropertyError("unexpected ')'", line, col)
        pos += 1
        return ("sym", tok, line, col)

    exprs = []
    while pos < len(tokens):
        exprs.append(one())
    return exprs


class _Vnnlib:
    """Stateful semantic pass over the parsed statements."""

    def __init__(self):
        self.x_declared: set = set()
        self.y_declared: set = set()
        self.x_lower: dict = {}
        self.x_upper: dict = {}
        self.conj_atoms: list = []  # Y atoms asserted unconditionally
        self.disjunction: list | None = None  # at most one or-assert
        self.disjunction_loc: tuple = (None, None)

    def statement(self, expr):
        kind, payload, line, col = expr
        if kind != "list" or not payload:
            raise PropertyError("expected a parenthesized statement", line, col)
        head = payload[0]
        if head[0] != "sym":
            raise PropertyError("statement must start with a keyword", line, col)
        if head[1] == "declare-const":
            self._declare(payload, line, col)
        elif head[1] == "assert":
            if len(payload) != 2:
                raise PropertyError("assert takes exactly one formula", line, col)
            self._assert(payload[1])
        else:
            raise PropertyError(f"unknown statement {head[1]!r}", line, col)

    def _declare(self, payload, line, col):
        if len(payload) != 3 or payload[1][0] != "sym" or payload[2][0] != "sym":
            raise PropertyError("malformed declare-const", line, col)
        name, sort = payload[1][1], payload[2][1]
        if sort != "Real":
            raise PropertyError(f"unsupported sort {sort!r}", payload[2][2], payload[2][3])
        mx, my = _XVAR.match(name), _YVAR.match(name)
        if mx:
            idx = int(mx.group(1))
            if idx in self.x_declared:
                raise PropertyError(f"variable {name} declared twice", line, col)
            self.x_declared.add(idx)
        elif my:
            idx = int(my.group(1))
            if idx in self.y_declared:
                raise PropertyError(f"variable {name} declared twice", line, col)
            self.y_declared.add(idx)
        else:
            raise PropertyError(
                f"variable {name!r} must look like X_<i> or Y_<i>", line, col
            )

    def _assert(self, formula):
        shape = self._formula(formula, depth=0)
        if shape[0] == "conj":
            for atom in shape[1]:
                self._take_atom(atom)
        else:
            _, disjuncts, line, col = shape
            if self.disjunction is not None:
                raise PropertyError(
                    "only one disjunction is supported (nesting beyond DNF depth 2)",
                    line,
                    col,
                )
            self.disjunction = disjuncts
            self.disjunction_loc = (line, col)

    def _formula(self, expr, depth: int):
        kind, payload, line, col = expr
        if kind != "list" or not payload or payload[0][0] != "sym":
            raise PropertyError("expected a formula", line, col)
        head = payload[0][1]
        if head in ("<=", ">="):
            return ("conj", [self._atom(payload, head, line, col)], line, col)
        if head in ("<", ">"):
            raise PropertyError(
                f"strict comparison {head!r} is not supported", line, col
            )
        if head == "and":
            if len(payload) < 2:
                raise PropertyError("empty and", line, col)
            atoms = []
            for sub in payload[1:]:
                shape = self._formula(sub, depth + 1)
                if shape[0] != "conj":
                    raise PropertyError(
                        "or nested under and exceeds DNF depth 2",
                        shape[2],
                        shape[3],
                    )
                atoms.extend(shape[1])
            return ("conj", atoms, line, col)
        if head == "or":
            if depth > 0:
                raise PropertyError("nesting beyond DNF depth 2", line, col)
            if len(payload) < 2:
                raise PropertyError("empty or", line, col)
            disjuncts = []
            for sub in payload[1:]:
                shape = self._formula(sub, depth + 1)
                if shape[0] != "conj":
                    raise PropertyError("nesting beyond DNF depth 2", shape[2], shape[3])
                disjuncts.append(shape[1])
            return ("disj", disjuncts, line, col)
        raise PropertyError(f"unknown operator {head!r}", line, col)

    def _term(self, expr):
        kind, payload, line, col = expr
        if kind != "sym":
            raise PropertyError(
                "unsupported term (only variables and decimal numerals)", line, col
            )
        mx, my = _XVAR.match(payload), _YVAR.match(payload)
        if mx:
            idx = int(mx.group(1))
            if idx not in self.x_declared:
                raise PropertyError(f"undeclared variable {payload}", line, col)
            return ("x", idx)
        if my:
            idx = int(my.group(1))
            if idx not in self.y_declared:
                raise PropertyError(f"undeclared variable {payload}", line, col)
            return ("y", idx)
        if _NUMERAL.match(payload):
            return ("const", float(payload))
        raise PropertyError(f"unknown token {payload!r}", line, col)

    def _atom(self, payload, op, line, col):
        if len(payload) != 3:
            raise PropertyError(f"{op} takes exactly two terms", line, col)
        lhs, rhs = self._term(payload[1]), self._term(payload[2])
        if op == ">=":  # a >= b  <=>  b <= a
            lhs, rhs = rhs, lhs
        kinds = (lhs[0], rhs[0])
        if kinds == ("const", "const"):
            raise PropertyError("constraint without a variable", line, col)
        if "x" in kinds and "y" in kinds:
            raise PropertyError(
                "atoms may not mix input and output variables", line, col
            )
        if kinds == ("x", "x"):
            raise PropertyError(
                "comparisons between input variables are not supported", line, col
            )
        # Everything below is  lhs <= rhs.
        if "x" in kinds:
            if lhs[0] == "x":
                return ("x_upper", lhs[1], rhs[1], line, col)
            return ("x_lower", rhs[1], lhs[1], line, col)
        if kinds == ("y", "y"):
            return ("y_atom", {lhs[1]: 1.0, rhs[1]: -1.0}, 0.0, line, col)
        if lhs[0] == "y":
            return ("y_atom", {lhs[1]: 1.0}, rhs[1], line, col)
        return ("y_atom", {rhs[1]: -1.0}, -lhs[1], line, col)

    def _take_atom(self, atom, in_disjunct: bool = False):
        tag = atom[0]
        if tag == "x_upper":
            _, idx, val, line, col = atom
            if in_disjunct:
                raise PropertyError(
                    "input constraints under a disjunction would describe "
                    "multiple input boxes, which is not supported",
                    line,
                    col,
                )
            self.x_upper[idx] = min(self.x_upper.get(idx, np.inf), val)
        elif tag == "x_lower":
            _, idx, val, line, col = atom
            if in_disjunct:
                raise PropertyError(
                    "input constraints under a disjunction would describe "
                    "multiple input boxes, which is not supported",
                    line,
                    col,
                )
            self.x_lower[idx] = max(self.x_lower.get(idx, -np.inf), val)
        else:
            self.conj_atoms.append(atom)

    def finish(self) -> PropertyFile:
        if not self.x_declared:
            raise PropertyError("no input variables declared")
        for declared, name in ((self.x_declared, "X"), (self.y_declared, "Y")):
            if declared and sorted(declared) != list(range(len(declared))):
                raise PropertyError(
                    f"{name} variable indices must be contiguous from 0"
                )
        n = len(self.x_declared)
        low = np.empty(n)
        high = np.empty(n)
        for i in range(n):
            if i not in self.x_lower or i not in self.x_upper:
                raise PropertyError(f"X_{i} is missing a lower or upper bound")
            low[i], high[i] = self.x_lower[i], self.x_upper[i]
            if low[i] > high[i]:
                raise PropertyError(f"X_{i} has an empty range [{low[i]}, {high[i]}]")

        m = len(self.y_declared)
        if m == 0:
            raise PropertyError("no output variables declared")
        base = [self._halfspace(a, m) for a in self.conj_atoms]
        if self.disjunction is not None:
            disjuncts = []
            for conj in self.disjunction:
                atoms = list(base)
                for atom in conj:
                    if atom[0] != "y_atom":
                        self._take_atom(atom, in_disjunct=True)
                    atoms.append(self._halfspace(atom, m))
                disjuncts.append(tuple(atoms))
        elif base:
            disjuncts = [tuple(base)]
        else:
            raise PropertyError("no output constraints asserted")
        return PropertyFile(low, high, "unsafe", tuple(disjuncts), n, m)

    @staticmethod
    def _halfspace(atom, m: int) -> HalfSpace:
        _, coeffs, offset, line, col = atom
        a = np.zeros(m)
        for j, c in coeffs.items():
            a[j] = c
        try:
            return HalfSpace(a, offset)
        except ValueError as exc:
            raise PropertyError(str(exc), line, col) from None


def parse_vnnlib(text: str) -> PropertyFile:
    """Parse the VNNLIB subset: declarations plus <=/>=/and/or asserts."""
    sem = _Vnnlib()
    for expr in _read_sexprs(_tokenize(text)):
        sem.statement(expr)
    return sem.finish()


# ---------------------------------------------------------------------------
# Native JSON property format
# ---------------------------------------------------------------------------


def _num_list(obj, path: str) -> np.ndarray:
    if not isinstance(obj, list) or not obj:
        raise PropertyError("expected a non-empty array of numbers", path=path)
    for i, v in enumerate(obj):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise PropertyError("expected a number", path=f"{path}[{i}]")
    return np.asarray(obj, dtype=np.float64)


def _conjunction(obj, path: str, dim: list) -> tuple:
    if not isinstance(obj, list) or not obj:
        raise PropertyError("expected a non-empty array of halfspaces", path=path)
    atoms = []
    for i, hs in enumerate(obj):
        hpath = f"{path}[{i}]"
        if not isinstance(hs, dict) or set(hs) != {"a", "b"}:
            raise PropertyError('expected an object with fields "a" and "b"', path=hpath)
        a = _num_list(hs["a"], f"{hpath}.a")
        if not isinstance(hs["b"], (int, float)) or isinstance(hs["b"], bool):
            raise PropertyError("expected a number", path=f"{hpath}.b")
        if dim[0] is None:
            dim[0] = a.size
        elif a.size != dim[0]:
            raise PropertyError(
                f"halfspace dimension {a.size} differs from earlier {dim[0]}",
                path=f"{hpath}.a",
            )
        try:
            atoms.append(HalfSpace(a, float(hs["b"])))
        except ValueError as exc:
            raise PropertyError(str(exc), path=hpath) from None
    return tuple(atoms)


def parse_property_json(text: str) -> PropertyFile:
    """Parse the native JSON property format.

    Schema: ``input`` {low, high}; then either ``unsafe`` (array of
    conjunctions, the counterexample condition) or ``safe`` (single
    conjunction the outputs must satisfy).  ``"complement": true`` with
    ``safe`` flips it into the unsafe region, mirroring a complemented
    halfspace output set.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PropertyError(f"not valid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise PropertyError("expected a JSON object", path="$")
    allowed = {"input", "unsafe", "safe", "complement"}
    unknown = set(doc) - allowed
    if unknown:
        raise PropertyError(f"unknown field(s) {sorted(unknown)}", path="$")
    if "input" not in doc or not isinstance(doc["input"], dict):
        raise PropertyError('missing "input" object', path="$")
    if set(doc["input"]) != {"low", "high"}:
        raise PropertyError('input must have exactly "low" and "high"', path="input")
    low = _num_list(doc["input"]["low"], "input.low")
    high = _num_list(doc["input"]["high"], "input.high")
    if low.size != high.size:
        raise PropertyError("low and high differ in length", path="input")
    if np.any(low > high):
        i = int(np.argmax(low > high))
        raise PropertyError("low exceeds high", path=f"input.low[{i}]")

    if ("unsafe" in doc) == ("safe" in doc):
        raise PropertyError('exactly one of "unsafe" or "safe" is required', path="$")
    complement = doc.get("complement", False)
    if not isinstance(complement, bool):
        raise PropertyError("complement must be a boolean", path="complement")
    dim = [None]
    if "unsafe" in doc:
        if complement:
            raise PropertyError(
                'complement applies only to "safe"', path="complement"
            )
        if not isinstance(doc["unsafe"], list) or not doc["unsafe"]:
            raise PropertyError(
                "expected a non-empty array of conjunctions", path="unsafe"
            )
        disjuncts = tuple(
            _conjunction(conj, f"unsafe[{i}]", dim)
            for i, conj in enumerate(doc["unsafe"])
        )
        mode = "unsafe"
    else:
        conj = _conjunction(doc["safe"], "safe", dim)
        disjuncts = (conj,)
        mode = "unsafe" if complement else "safe"
    return PropertyFile(low, high, mode, disjuncts, low.size, dim[0])


def serialize_property(pf: PropertyFile) -> str:
    """Render a PropertyFile in the native JSON format."""
    doc = {
        "input": {
            "low": np.asarray(pf.input_low).tolist(),
            "high": np.asarray(pf.input_high).tolist(),
        }
    }
    as_obj = lambda hs: {"a": hs.normal.tolist(), "b": hs.offset}
    if pf.mode == "safe":
        doc["safe"] = [as_obj(hs) for hs in pf.output[0]]
    else:
        doc["unsafe"] = [[as_obj(hs) for hs in conj] for conj in pf.output]
    return json.dumps(doc, indent=2)


def to_problem(pf: PropertyFile, model: Model) -> Problem:
    """Bind a parsed property to a model, checking dimensions."""
    if pf.num_inputs != model.input_dim:
        raise PropertyError(
            f"property declares {pf.num_inputs} inputs, model takes {model.input_dim}"
        )
    if pf.num_outputs != model.output_dim:
        raise PropertyError(
            f"property declares {pf.num_outputs} outputs, model produces {model.output_dim}"
        )
    spec = OutputSpec(pf.mode, pf.output)
    return Problem(model, pf.input_box, spec)
