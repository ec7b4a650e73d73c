"""Hypothesis-string parsing.

Turns strings like ``"a = b > c; (a, b) > 0"`` into per-hypothesis constraint
matrices over a named parameter space.  ';' separates competing hypotheses,
'&' separates constraints within one hypothesis, and chains/comma-groups are
expanded into elementary rows.  '<' rows are negated so that every order
constraint is stored in ``RO @ theta > rO`` form.

Coefficients are parsed as exact rationals and rows are normalized (first
nonzero coefficient positive for equalities, smallest integer representation)
so that equivalent spellings produce identical matrices.
"""
from __future__ import annotations

import re as _re
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd

import numpy as np
from scipy.optimize import linprog

_NAME_RE = _re.compile(r"[A-Za-z][A-Za-z0-9_.]*")
_NUMBER_RE = _re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")

_FEAS_TOL = 1e-9


class ParseError(ValueError):
    """Syntax or semantic error in a hypothesis string, with position."""

    def __init__(self, message: str, text: str = "", pos: int | None = None):
        self.pos = pos
        if pos is not None:
            caret = " " * pos + "^"
            message = f"{message}\n  {text}\n  {caret}"
        super().__init__(message)


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered collection of parameter names the hypotheses may refer to."""

    names: tuple

    def __init__(self, names):
        object.__setattr__(self, "names", tuple(names))
        if not self.names:
            raise ValueError("parameter space is empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError("parameter names must be unique")

    @property
    def P(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass
class ConstraintMatrices:
    """One hypothesis: equality rows RE theta = rE, order rows RO theta > rO."""

    RE: np.ndarray
    rE: np.ndarray
    RO: np.ndarray
    rO: np.ndarray
    complement: bool = False

    @classmethod
    def empty(cls, P: int, complement: bool = False) -> "ConstraintMatrices":
        z = np.zeros((0, P))
        return cls(z, np.zeros(0), z.copy(), np.zeros(0), complement)

    @property
    def P(self) -> int:
        return self.RE.shape[1]

    @property
    def n_eq(self) -> int:
        return self.RE.shape[0]

    @property
    def n_order(self) -> int:
        return self.RO.shape[0]

    def order_only(self) -> bool:
        return self.n_eq == 0 and self.n_order > 0


@dataclass
class HypothesisSystem:
    hypotheses: list
    labels: list
    complement_included: bool
    prior_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        k = len(self.hypotheses)
        if self.prior_weights is None:
            w = np.full(k, 1.0 / k)
        else:
            w = np.asarray(self.prior_weights, float)
            if w.shape != (k,):
                raise ValueError(
                    f"expected {k} prior weights (including the complement), got {w.size}")
            if (w < 0).any():
                raise ValueError("prior weights must be non-negative")
            if w.sum() <= 0:
                raise ValueError("prior weights sum to zero")
            w = w / w.sum()
        self.prior_weights = w


# ---------------------------------------------------------------------------
# Tokenizer


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        m = _NUMBER_RE.match(text, i)
        if m:
            tokens.append(("NUM", m.group(), i))
            i = m.end()
            continue
        m = _NAME_RE.match(text, i)
        if m:
            tokens.append(("NAME", m.group(), i))
            i = m.end()
            continue
        if ch in "=<>&;(),+-*":
            tokens.append((ch, ch, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", text, i)
    tokens.append(("END", "", n))
    return tokens


def _fraction_from_literal(lit: str) -> Fraction:
    # exact decimal/scientific parsing without binary-float round trips
    mant, exp = lit, 0
    for e in ("e", "E"):
        if e in lit:
            mant, estr = lit.split(e)
            exp = int(estr)
            break
    if "." in mant:
        whole, frac = mant.split(".")
        digits = (whole + frac) or "0"
        val = Fraction(int(digits), 10 ** len(frac))
    else:
        val = Fraction(int(mant or "0"))
    return val * Fraction(10) ** exp


class _LinExpr:
    """Linear form: coefficient map over parameter indices plus a constant."""

    __slots__ = ("coef", "const")

    def __init__(self):
        self.coef: dict[int, Fraction] = {}
        self.const = Fraction(0)

    def add_term(self, idx: int | None, value: Fraction, sign: int):
        if idx is None:
            self.const += sign * value
        else:
            self.coef[idx] = self.coef.get(idx, Fraction(0)) + sign * value


class _Parser:
    def __init__(self, text: str, space: ParameterSpace, aliases=None):
        self.text = text
        self.space = space
        self.aliases = aliases or {}
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None):
        tok = self.toks[self.i]
        if kind is not None and tok[0] != kind:
            raise ParseError(f"expected {kind}, found {tok[1] or 'end of input'!r}",
                             self.text, tok[2])
        self.i += 1
        return tok

    # grammar: system := hypothesis (';' hypothesis)*
    def system(self):
        out = [self.hypothesis()]
        while self.peek()[0] == ";":
            self.take()
            out.append(self.hypothesis())
        self.take("END")
        return out

    # hypothesis := constraint ('&' constraint)*
    def hypothesis(self):
        eq_rows, eq_rhs, ord_rows, ord_rhs = [], [], [], []
        self.constraint(eq_rows, eq_rhs, ord_rows, ord_rhs)
        while self.peek()[0] == "&":
            self.take()
            self.constraint(eq_rows, eq_rhs, ord_rows, ord_rhs)
        return eq_rows, eq_rhs, ord_rows, ord_rhs

    # constraint := side (cmp side)+
    def constraint(self, eq_rows, eq_rhs, ord_rows, ord_rhs):
        pos0 = self.peek()[2]
        sides = [self.side()]
        cmps = []
        while self.peek()[0] in ("=", "<", ">"):
            cmps.append(self.take()[0])
            sides.append(self.side())
        if not cmps:
            tok = self.peek()
            raise ParseError("expected '=', '<' or '>'", self.text, tok[2])
        for (left, cmp_op, right) in zip(sides, cmps, sides[1:]):
            for le in left:
                for ri in right:
                    self._emit(le, cmp_op, ri, eq_rows, eq_rhs, ord_rows, ord_rhs, pos0)

    def _emit(self, left: _LinExpr, op: str, right: _LinExpr,
              eq_rows, eq_rhs, ord_rows, ord_rhs, pos: int):
        coef = dict(left.coef)
        for idx, v in right.coef.items():
            coef[idx] = coef.get(idx, Fraction(0)) - v
        rhs = right.const - left.const
        if all(v == 0 for v in coef.values()):
            raise ParseError("degenerate constraint: all coefficients cancel",
                             self.text, pos)
        if op == "=":
            eq_rows.append(coef)
            eq_rhs.append(rhs)
        elif op == ">":
            ord_rows.append(coef)
            ord_rhs.append(rhs)
        else:  # '<' is stored as the negated '>' row
            ord_rows.append({k: -v for k, v in coef.items()})
            ord_rhs.append(-rhs)

    # side := group | expr
    def side(self):
        if self.peek()[0] == "(":
            self.take()
            exprs = [self.expr()]
            while self.peek()[0] == ",":
                self.take()
                exprs.append(self.expr())
            if len(exprs) < 2:
                tok = self.peek()
                raise ParseError("a parenthesized group needs at least two members",
                                 self.text, tok[2])
            self.take(")")
            return exprs
        return [self.expr()]

    # expr := term (('+'|'-') term)*
    def expr(self):
        e = _LinExpr()
        sign = 1
        while self.peek()[0] in "+-":
            if self.take()[0] == "-":
                sign = -sign
        self.term(e, sign)
        while self.peek()[0] in "+-":
            sign = 1
            while self.peek()[0] in "+-":
                if self.take()[0] == "-":
                    sign = -sign
            self.term(e, sign)
        return e

    # term := number ['*' name] | name | number
    def term(self, e: _LinExpr, sign: int):
        tok = self.peek()
        if tok[0] == "NUM":
            self.take()
            value = _fraction_from_literal(tok[1])
            if self.peek()[0] == "*":
                self.take()
                name_tok = self.take("NAME")
                e.add_term(self._resolve(name_tok), value, sign)
            elif self.peek()[0] == "NAME":
                nxt = self.peek()
                raise ParseError("missing '*' between coefficient and name",
                                 self.text, nxt[2])
            else:
                e.add_term(None, value, sign)
        elif tok[0] == "NAME":
            self.take()
            e.add_term(self._resolve(tok), Fraction(1), sign)
        else:
            raise ParseError(f"expected a name or number, found {tok[1] or 'end of input'!r}",
                             self.text, tok[2])

    def _resolve(self, tok) -> int:
        name = self.aliases.get(tok[1], tok[1])
        try:
            return self.space.index(name)
        except ValueError:
            raise ParseError(f"unknown parameter {tok[1]!r}", self.text, tok[2]) from None


# ---------------------------------------------------------------------------
# Row normalization and assembly


def _normalize_row(coef: dict, rhs: Fraction, P: int, flip_sign_ok: bool):
    row = [coef.get(i, Fraction(0)) for i in range(P)]
    denom = 1
    for v in row + [rhs]:
        denom = denom * v.denominator // gcd(denom, v.denominator)
    ints = [int(v * denom) for v in row]
    rhs_i = int(rhs * denom)
    g = 0
    for v in ints + [rhs_i]:
        g = gcd(g, abs(v))
    if g > 1:
        ints = [v // g for v in ints]
        rhs_i //= g
    if flip_sign_ok:
        lead = next(v for v in ints if v != 0)
        if lead < 0:
            ints = [-v for v in ints]
            rhs_i = -rhs_i
    return tuple(ints), rhs_i


def _assemble(rows, rhss, P, equality: bool, text: str):
    eq_rhs_by_key = {}
    seen_pairs = set()
    out_rows, out_rhs = [], []
    for coef, rhs in zip(rows, rhss):
        key, r = _normalize_row(coef, rhs, P, flip_sign_ok=equality)
        if equality:
            prev = eq_rhs_by_key.get(key)
            if prev is not None and prev != r:
                raise ParseError(
                    "contradictory equality constraints on the same combination", text)
            eq_rhs_by_key[key] = r
        if (key, r) in seen_pairs:
            continue
        seen_pairs.add((key, r))
        out_rows.append(key)
        out_rhs.append(r)
    R = np.array(out_rows, float).reshape(len(out_rows), P)
    return R, np.array(out_rhs, float)


def _check_feasible(cm: ConstraintMatrices, text: str):
    """Parse-time rejection of hypotheses with no interior/solution set."""
    P = cm.P
    if cm.n_eq:
        # consistency of the equality system
        sol, res, rank, _ = np.linalg.lstsq(cm.RE, cm.rE, rcond=None)
        if not np.allclose(cm.RE @ sol, cm.rE, atol=1e-8):
            raise ParseError("infeasible hypothesis: equality constraints are inconsistent",
                             text)
    if cm.n_order == 0:
        return
    # maximize slack s subject to RO x >= rO + s (and RE x = rE), s <= 1
    c = np.zeros(P + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-cm.RO, np.ones((cm.n_order, 1))])
    A_eq = np.hstack([cm.RE, np.zeros((cm.n_eq, 1))]) if cm.n_eq else None
    res = linprog(c, A_ub=A_ub, b_ub=-cm.rO, A_eq=A_eq,
                  b_eq=cm.rE if cm.n_eq else None,
                  bounds=[(None, None)] * P + [(None, 1.0)], method="highs")
    if res.status != 0 or res.x is None or res.x[-1] <= _FEAS_TOL:
        raise ParseError("infeasible hypothesis: constraints admit no interior point", text)


def parse(hypothesis_string: str, space: ParameterSpace, aliases=None):
    """Parse a hypothesis string into a list of ConstraintMatrices.

    ``aliases`` optionally maps alternative spellings to canonical parameter
    names (used e.g. for symmetric correlation names).
    """
    if not hypothesis_string or not hypothesis_string.strip():
        raise ParseError("empty hypothesis string")
    p = _Parser(hypothesis_string, space, aliases)
    out = []
    for eq_rows, eq_rhs, ord_rows, ord_rhs in p.system():
        RE, rE = _assemble(eq_rows, eq_rhs, space.P, True, hypothesis_string)
        RO, rO = _assemble(ord_rows, ord_rhs, space.P, False, hypothesis_string)
        cm = ConstraintMatrices(RE, rE, RO, rO)
        _check_feasible(cm, hypothesis_string)
        out.append(cm)
    return out


# ---------------------------------------------------------------------------
# Pretty printing (used for legends and round-trip tests)


def _fmt_number(x: float) -> str:
    if x == int(x):
        return str(int(x))
    return repr(x)


def _fmt_row(row: np.ndarray, names) -> str:
    parts = []
    for v, name in zip(row, names):
        if v == 0:
            continue
        mag = abs(v)
        term = name if mag == 1 else f"{_fmt_number(mag)}*{name}"
        if not parts:
            parts.append(term if v > 0 else f"-{term}")
        else:
            parts.append(f"+ {term}" if v > 0 else f"- {term}")
    return " ".join(parts)


def pretty(cm: ConstraintMatrices, space: ParameterSpace) -> str:
    if cm.complement:
        return "complement"
    pieces = []
    for row, rhs in zip(cm.RE, cm.rE):
        pieces.append(f"{_fmt_row(row, space.names)} = {_fmt_number(rhs)}")
    for row, rhs in zip(cm.RO, cm.rO):
        # rows whose leading coefficient is negative came from a '<': flip back
        lead = row[np.nonzero(row)[0][0]]
        if lead < 0:
            pieces.append(f"{_fmt_row(-row, space.names)} < {_fmt_number(-rhs)}")
        else:
            pieces.append(f"{_fmt_row(row, space.names)} > {_fmt_number(rhs)}")
    return " & ".join(pieces)


# ---------------------------------------------------------------------------
# Complement attachment and nesting warnings


def _single_row_signature(cm: ConstraintMatrices):
    """(row, rhs, kind) for one-constraint hypotheses, in sign-normalized form."""
    if cm.n_eq + cm.n_order != 1:
        return None
    if cm.n_eq == 1:
        return tuple(cm.RE[0]), float(cm.rE[0]), "="
    row, rhs = cm.RO[0], float(cm.rO[0])
    lead = row[np.nonzero(row)[0][0]]
    if lead < 0:
        return tuple(-row), -rhs, "<"
    return tuple(row), rhs, ">"


def _covers_space(hyps) -> bool:
    """Exact coverage detection for single-row patterns ({=,<,>} or {<,>})."""
    sigs = [_single_row_signature(cm) for cm in hyps]
    if any(s is None for s in sigs):
        return False
    keys = {(s[0], s[1]) for s in sigs}
    if len(keys) != 1:
        return False
    kinds = {s[2] for s in sigs}
    return kinds in ({"=", "<", ">"}, {"<", ">"})


def add_complement(hyps, space: ParameterSpace, prior_weights=None) -> HypothesisSystem:
    """Wrap parsed hypotheses in a HypothesisSystem, adding the complement.

    The complement is skipped when the listed hypotheses provably cover the
    space (e.g. the ``=, <, >`` triad on one combination).  Its measures are
    later evaluated as one minus the union of the other order regions.
    """
    hyps = list(hyps)
    add = bool(hyps) and not _covers_space(hyps)
    if add:
        hyps.append(ConstraintMatrices.empty(space.P, complement=True))
    labels = [f"H{i + 1}" for i in range(len(hyps))]
    return HypothesisSystem(hyps, labels, complement_included=add,
                            prior_weights=prior_weights)


def _cone_subset(inner: ConstraintMatrices, outer: ConstraintMatrices) -> bool:
    """True when the order cone of `inner` lies inside that of `outer`."""
    P = inner.P
    for j in range(outer.n_order):
        # look for a point strictly inside `inner` strictly violating row j
        c = np.zeros(P + 1)
        c[-1] = -1.0
        A_ub = [np.hstack([-inner.RO, np.ones((inner.n_order, 1))])]
        b_ub = [-inner.rO]
        A_ub.append(np.hstack([outer.RO[j:j + 1], np.ones((1, 1))]))
        b_ub.append(outer.rO[j:j + 1])
        res = linprog(c, A_ub=np.vstack(A_ub), b_ub=np.concatenate(b_ub),
                      bounds=[(None, None)] * P + [(None, 1.0)], method="highs")
        if res.status == 0 and res.x is not None and res.x[-1] > _FEAS_TOL:
            return False
    return True


def warn_nested_orders(hyps) -> list:
    """Warnings for order hypotheses whose cones are nested inside another."""
    order_hyps = [(i, cm) for i, cm in enumerate(hyps)
                  if not cm.complement and cm.order_only()]
    warnings = []
    for ai in range(len(order_hyps)):
        for bi in range(len(order_hyps)):
            if ai == bi:
                continue
            i, a = order_hyps[ai]
            j, b = order_hyps[bi]
            if _cone_subset(a, b):
                warnings.append(
                    f"hypothesis {i + 1} is nested inside hypothesis {j + 1}; "
                    "their Bayes factor reflects only the difference in complexity")
    return warnings
