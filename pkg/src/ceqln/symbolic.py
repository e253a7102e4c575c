"""Render learned basis functions as readable analytic expressions, parse
them back, and verify constraint satisfaction of a (parameters, weights)
pair.

Expression grammar (EBNF), shared by the renderer and the parser::

    expression := ["-"] term { ("+" | "-") term }
    term       := factor { "*" factor }
    factor     := number [ primary ]          (juxtaposition multiplies)
                | primary
    primary    := "t" | name | function "(" expression ")"
                | "(" expression ")"
    function   := "sin" | "cos" | "sigma" | "sech"
    name       := "f" digits
    number     := digits [ "." digits ]

Hidden units are named f0, f1, ... in evaluation order across layers; units
of deeper layers reference earlier names inside their arguments. Displayed
coefficients are rounded to a fixed number of decimals (trailing zeros
trimmed) while full precision is retained in the model itself.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .assembly import ConstraintSet, EqualityRow
from .errors import ConfigurationError
from .network import (
    NetworkParams,
    NetworkSpec,
    model_from_json,
    sech,
    sigmoid,
)
from .training import _design_rows

_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "sigma": sigmoid,
    "sech": sech,
}

_KIND_TO_FUNC = {"sine": "sin", "cosine": "cos", "sigmoid": "sigma", "sech": "sech"}


def format_coefficient(value: float, digits: int) -> str:
    text = f"{value:.{digits}f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def _affine_text(coeffs: Sequence[tuple[float, str]], bias: float, digits: int) -> str:
    """Render sum(c_i * sym_i) + bias with signs folded into the joins."""
    parts: list[tuple[str, str]] = []  # (sign, body)
    for c, sym in coeffs:
        mag = format_coefficient(abs(c), digits)
        if mag == "0":
            continue
        parts.append(("-" if c < 0 else "+", f"{mag} {sym}"))
    bias_mag = format_coefficient(abs(bias), digits)
    if bias_mag != "0" or not parts:
        parts.append(("-" if bias < 0 else "+", bias_mag))
    first_sign, first_body = parts[0]
    text = ("-" if first_sign == "-" else "") + first_body
    for sign, body in parts[1:]:
        text += f" {sign} {body}"
    return text


def unit_expressions(params: NetworkParams, spec: NetworkSpec, digits: int = 3) -> list[str]:
    """One expression string per hidden unit, named f0, f1, ... in order."""
    if not spec.hidden:
        raise ConfigurationError("network has no hidden layer to render")
    exprs: list[str] = []
    in_names: list[str] | None = None  # None means the scalar input t
    name_counter = 0
    for layer_spec, layer in zip(spec.hidden, params.layers):
        layer_names: list[str] = []

        def slot_arg(slot: int) -> str:
            if in_names is None:
                return _affine_text([(layer.W[slot, 0], "t")], layer.b[slot], digits)
            pairs = [(layer.W[slot, j], in_names[j]) for j in range(len(in_names))]
            return _affine_text(pairs, layer.b[slot], digits)

        slot = 0
        for kind in layer_spec.activations:
            if kind == "product":
                expr = f"({slot_arg(slot)})*({slot_arg(slot + 1)})"
                slot += 2
            elif kind == "identity":
                expr = f"({slot_arg(slot)})"
                slot += 1
            else:
                expr = f"{_KIND_TO_FUNC[kind]}({slot_arg(slot)})"
                slot += 1
            exprs.append(expr)
            layer_names.append(f"f{name_counter}")
            name_counter += 1
        in_names = layer_names
    return exprs


def basis_expressions(params: NetworkParams, spec: NetworkSpec, digits: int = 3) -> list[str]:
    """Each basis function as a weighted sum of the last layer's units."""
    if not spec.hidden:
        raise ConfigurationError("network has no hidden layer to render")
    n_before = sum(l.output_width for l in spec.hidden[:-1])
    last_names = [f"f{n_before + i}" for i in range(spec.hidden[-1].output_width)]
    out = []
    Wf, bf = params.final.W, params.final.b
    for m in range(spec.n_basis):
        pairs = [(Wf[m, j], last_names[j]) for j in range(len(last_names))]
        out.append(_affine_text(pairs, bf[m], digits))
    return out


def export_expressions(
    params: NetworkParams, spec: NetworkSpec, digits: int = 3
) -> dict[str, list[str]]:
    """Full rendering: hidden units plus basis combinations."""
    return {
        "units": unit_expressions(params, spec, digits),
        "basis": basis_expressions(params, spec, digits),
    }


# -- parser -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d+)?)|(?P<func>sin|cos|sigma|sech)\b"
    r"|(?P<name>f\d+)|(?P<t>t)\b|(?P<op>[()*+-]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigurationError(f"cannot tokenize expression at {text[pos:pos + 12]!r}")
        pos = m.end()
        for kind in ("number", "func", "name", "t", "op"):
            val = m.group(kind)
            if val is not None:
                tokens.append((kind, val))
                break
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def accept(self, kind: str, value: str | None = None):
        k, v = self.peek()
        if k == kind and (value is None or v == value):
            self.pos += 1
            return v
        return None

    def expect(self, kind: str, value: str | None = None) -> str:
        got = self.accept(kind, value)
        if got is None:
            raise ConfigurationError(
                f"expected {value or kind} at token {self.pos} of {self.tokens}"
            )
        return got

    def parse(self):
        node = self.expression()
        if self.pos != len(self.tokens):
            raise ConfigurationError(f"trailing tokens: {self.tokens[self.pos:]}")
        return node

    def expression(self):
        negate = self.accept("op", "-") is not None
        node = self.term()
        if negate:
            node = ("neg", node)
        while True:
            if self.accept("op", "+") is not None:
                node = ("add", node, self.term())
            elif self.accept("op", "-") is not None:
                node = ("sub", node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while self.accept("op", "*") is not None:
            node = ("mul", node, self.factor())
        return node

    def factor(self):
        k, v = self.peek()
        if k == "number":
            self.pos += 1
            k2, _ = self.peek()
            if k2 in ("t", "name", "func") or self.peek() == ("op", "("):
                return ("mul", ("const", float(v)), self.primary())
            return ("const", float(v))
        return self.primary()

    def primary(self):
        k, v = self.peek()
        if k == "t":
            self.pos += 1
            return ("t",)
        if k == "name":
            self.pos += 1
            return ("ref", v)
        if k == "func":
            self.pos += 1
            self.expect("op", "(")
            node = self.expression()
            self.expect("op", ")")
            return ("call", v, node)
        if self.accept("op", "(") is not None:
            node = self.expression()
            self.expect("op", ")")
            return node
        raise ConfigurationError(f"unexpected token {self.peek()} in expression")


def parse_expression(text: str):
    """Parse one expression into an AST usable by :func:`evaluate_ast`."""
    return _Parser(text).parse()


def evaluate_ast(node, t: np.ndarray, env: dict[str, np.ndarray]) -> np.ndarray:
    op = node[0]
    if op == "const":
        return np.full_like(t, node[1], dtype=float)
    if op == "t":
        return t
    if op == "ref":
        if node[1] not in env:
            raise ConfigurationError(f"undefined unit reference {node[1]}")
        return env[node[1]]
    if op == "neg":
        return -evaluate_ast(node[1], t, env)
    if op == "add":
        return evaluate_ast(node[1], t, env) + evaluate_ast(node[2], t, env)
    if op == "sub":
        return evaluate_ast(node[1], t, env) - evaluate_ast(node[2], t, env)
    if op == "mul":
        return evaluate_ast(node[1], t, env) * evaluate_ast(node[2], t, env)
    if op == "call":
        return _FUNCTIONS[node[1]](evaluate_ast(node[2], t, env))
    raise ConfigurationError(f"unknown AST node {op!r}")


def compile_expressions(
    unit_exprs: Sequence[str], basis_exprs: Sequence[str]
) -> Callable[[np.ndarray], np.ndarray]:
    """Build a callable evaluating the rendered basis at a time vector."""
    unit_asts = [parse_expression(s) for s in unit_exprs]
    basis_asts = [parse_expression(s) for s in basis_exprs]

    def evaluate(times: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        env: dict[str, np.ndarray] = {}
        for i, ast in enumerate(unit_asts):
            env[f"f{i}"] = evaluate_ast(ast, t, env)
        return np.vstack([evaluate_ast(ast, t, env) for ast in basis_asts])

    return evaluate


# -- constraint verification ---------------------------------------------------


@dataclass
class VerificationRow:
    t: float
    dim: int
    target: float
    achieved: float

    @property
    def residual(self) -> float:
        return self.achieved - self.target


@dataclass
class VerificationReport:
    rows: list[VerificationRow]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(abs(row.residual) <= self.tolerance for row in self.rows)

    @property
    def max_abs_residual(self) -> float:
        return max((abs(row.residual) for row in self.rows), default=0.0)


def verify_constraints(
    design_at: Callable[[np.ndarray], np.ndarray],
    w_star: np.ndarray,
    cs: ConstraintSet,
    tolerance: float,
) -> VerificationReport:
    """Evaluate each pinned value against the model ``w_star`` represents.

    ``design_at`` maps a time vector to design rows (ones column included);
    ``w_star`` is (D, M). Failures are report entries, never exceptions.
    """
    w_star = np.atleast_2d(np.asarray(w_star, dtype=float))
    rows = []
    for e in cs.equalities:
        design_row = np.asarray(design_at(np.array([e.t])), dtype=float)[0]
        achieved = float(design_row @ w_star[e.dim])
        rows.append(VerificationRow(t=e.t, dim=e.dim, target=e.value, achieved=achieved))
    return VerificationReport(rows=rows, tolerance=tolerance)


def verify_model_constraints(
    params: NetworkParams,
    spec: NetworkSpec,
    w_star: np.ndarray,
    cs: ConstraintSet,
    tolerance: float,
) -> VerificationReport:
    return verify_constraints(
        lambda times: _design_rows(params, spec, times), w_star, cs, tolerance
    )


# -- bundled reference model ---------------------------------------------------

REFERENCE_RESOURCE = "reference_letter2d.json"


def load_reference_model() -> tuple[NetworkParams, NetworkSpec, np.ndarray, ConstraintSet]:
    """Load the bundled 2D-letter reference model.

    Returns (params, spec, w_star, constraint set); the weights were fitted
    for the endpoint targets carried by the constraint set.
    """
    with resources.files("ceqln.data").joinpath(REFERENCE_RESOURCE).open(
        "r", encoding="utf-8"
    ) as fh:
        doc = json.load(fh)
    params, spec = model_from_json(doc["model"])
    w_star = np.array(doc["weights"], dtype=float)
    times = doc["constraints"]["times"]
    targets = doc["constraints"]["targets"]
    equalities = []
    for t, point in zip(times, targets):
        for dim, value in enumerate(point):
            equalities.append(EqualityRow(t=float(t), dim=dim, value=float(value)))
    cs = ConstraintSet(index=1, equalities=equalities)
    return params, spec, w_star, cs
