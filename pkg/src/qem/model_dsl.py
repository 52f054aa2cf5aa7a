"""A line-oriented text language for plated models, and CSV dataset loading.

Example::

    plate States[4]
    plate Readings[20]
    covariate Basement[States, Readings] : real
    latent GlobalMean ~ Gaussian(0, 1)
    latent StateMean[States] ~ Gaussian(GlobalMean, 1) proposal Gaussian(0, 1)
    observe Radon[States, Readings] ~ Gaussian(StateMean + Basement, 1) from Radon

Each statement occupies one line and ``#`` starts a comment.  Proposal
numbers are conventional parameters of the proposal family.  ``proposal
prior`` draws the latent from its prior conditional instead of a learned
proposal.  Latents may be referenced before they are declared.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import FAMILIES, ConventionalParams, conventional_to_mean
from .errors import DomainError, SchemaError
from .graph import (BinOp, Call, Const, CovariateDecl, Gather, LatentDecl, ModelIR, Neg, ObservationDecl,
                    PlateDecl, Ref, validate)

KEYWORDS = {"plate", "covariate", "latent", "observe", "proposal", "from", "real", "int", "prior"}
FUNCS = {"exp", "sigmoid"}


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int = 1


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    kind: str
    message: str

    def format(self, source: str | None = None) -> str:
        head = f"{self.span.line}:{self.span.column}: {self.kind}: {self.message}"
        if source is None:
            return head
        lines = source.splitlines()
        if 1 <= self.span.line <= len(lines):
            text = lines[self.span.line - 1]
            return f"{head}\n  {text}\n  {' ' * (self.span.column - 1)}{'^' * self.span.length}"
        return head


class _Fail(Exception):
    def __init__(self, span, kind, message):
        super().__init__(message)
        self.error = ParseError(span, kind, message)


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[\[\](),:~+\-*/])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str   # num | ident | op | end
    text: str
    span: SourceSpan


def tokenize_line(text: str, lineno: int) -> list:
    out = []
    pos = 0
    while pos < len(text):
        if text[pos] == "#":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise _Fail(SourceSpan(lineno, pos + 1, 1), "syntax", f"unexpected character {text[pos]!r}")
        if m.lastgroup != "ws":
            out.append(Token(m.lastgroup, m.group(), SourceSpan(lineno, pos + 1, len(m.group()))))
        pos = m.end()
    out.append(Token("end", "", SourceSpan(lineno, max(1, min(pos, len(text))), 1)))
    return out


class _Line:
    def __init__(self, tokens, refs):
        self.toks = tokens
        self.i = 0
        self.refs = refs    # list of (name, span) referenced in expressions

    @property
    def tok(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text=None, kind=None, what=None):
        t = self.tok
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = what or (repr(text) if text else kind)
            got = "end of line" if t.kind == "end" else repr(t.text)
            raise _Fail(t.span, "syntax", f"expected {want}, found {got}")
        return self.take()

    def accept(self, text):
        if self.tok.text == text and self.tok.kind != "end":
            return self.take()
        return None

    def ident(self, what="identifier"):
        t = self.expect(kind="ident", what=what)
        if t.text in KEYWORDS:
            raise _Fail(t.span, "syntax", f"{t.text!r} is a keyword and cannot be used as {what}")
        return t

    # expressions -------------------------------------------------------
    def expr(self):
        left = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.take().text
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.take().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.tok.kind == "op" and self.tok.text == "-":
            self.take()
            if self.tok.kind == "num":
                return Const(-float(self.take().text))
            return Neg(self.unary())
        return self.primary()

    def primary(self):
        t = self.tok
        if t.kind == "num":
            self.take()
            return Const(float(t.text))
        if t.kind == "ident":
            self.take()
            if t.text in FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            if t.text == "gather":
                self.expect("(")
                table = self.ident("a table name")
                self.expect(",")
                index = self.ident("an index covariate")
                self.expect(")")
                self.refs.append((table.text, table.span))
                self.refs.append((index.text, index.span))
                return Gather(table.text, index.text)
            if t.text in KEYWORDS:
                raise _Fail(t.span, "syntax", f"unexpected keyword {t.text!r} in expression")
            self.refs.append((t.text, t.span))
            return Ref(t.text)
        if t.text == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        got = "end of line" if t.kind == "end" else repr(t.text)
        raise _Fail(t.span, "syntax", f"expected an expression, found {got}")

    def plates(self):
        names = []
        if self.accept("["):
            names.append(self.ident("a plate name"))
            while self.accept(","):
                names.append(self.ident("a plate name"))
            self.expect("]")
        return names

    def family(self):
        t = self.expect(kind="ident", what="a distribution family")
        fam = FAMILIES.get(t.text)
        if fam is None:
            raise _Fail(t.span, "unsupported-family", f"unknown family {t.text!r} (known: {', '.join(FAMILIES)})")
        return fam, t

    def args(self):
        self.expect("(")
        out = [self.expr()]
        while self.accept(","):
            out.append(self.expr())
        self.expect(")")
        return out

    def number(self):
        neg = self.accept("-") is not None
        t = self.expect(kind="num", what="a number")
        v = float(t.text)
        return -v if neg else v

    def end(self):
        if self.tok.kind != "end":
            raise _Fail(self.tok.span, "syntax", f"unexpected {self.tok.text!r} after statement")


def _default_proposal(fam):
    return {"Gaussian": (0.0, 1.0), "Bernoulli": (0.5,), "Beta": (1.0, 1.0), "Gamma": (1.0, 1.0)}.get(fam.name)


def parse(source: str):
    """Parse model text into a validated :class:`ModelIR`, or a list of
    :class:`ParseError` (never raises on bad input)."""
    errors = []
    plates, covs, lats, obss = [], [], [], []
    spans = {}        # declared name -> span of the name token
    ref_spans = {}    # (owner, name) -> span of first reference
    for lineno, text in enumerate(source.splitlines(), start=1):
        try:
            toks = tokenize_line(text, lineno)
            if toks[0].kind == "end":
                continue
            refs = []
            p = _Line(toks, refs)
            head = p.expect(kind="ident", what="a statement keyword")
            if head.text == "plate":
                name = p.ident("a plate name")
                p.expect("[")
                size_tok = p.expect(kind="num", what="a plate size")
                if not re.fullmatch(r"\d+", size_tok.text):
                    raise _Fail(size_tok.span, "syntax", "plate size must be an integer")
                p.expect("]")
                p.end()
                plates.append(PlateDecl(name.text, int(size_tok.text)))
                _note(spans, name, errors)
            elif head.text == "covariate":
                name = p.ident("a covariate name")
                pl = p.plates()
                p.expect(":")
                dt = p.expect(kind="ident", what="'real' or 'int'")
                if dt.text not in ("real", "int"):
                    raise _Fail(dt.span, "syntax", "covariate type must be 'real' or 'int'")
                p.end()
                covs.append(CovariateDecl(name.text, tuple(t.text for t in pl), dt.text))
                _note(spans, name, errors, pl)
            elif head.text == "latent":
                name = p.ident("a latent name")
                pl = p.plates()
                p.expect("~")
                fam, fam_tok = p.family()
                args = p.args()
                kind, qfam, init = "independent", fam, None
                if p.accept("proposal"):
                    if p.accept("prior"):
                        kind = "prior"
                    else:
                        qfam, qtok = p.family()
                        p.expect("(")
                        nums = [p.number()]
                        while p.accept(","):
                            nums.append(p.number())
                        p.expect(")")
                        init = _proposal_mean(qfam, nums, qtok)
                p.end()
                if kind == "independent" and init is None:
                    default = _default_proposal(fam)
                    if default is None:
                        raise _Fail(fam_tok.span, "unsupported-family", f"{fam.name} cannot be a latent's family")
                    init = conventional_to_mean(ConventionalParams(fam, default))
                lats.append(LatentDecl(name.text, tuple(t.text for t in pl), fam, tuple(args),
                                       qfam if kind == "independent" else fam, init, kind))
                _note(spans, name, errors, pl)
                for r, sp in refs:
                    ref_spans.setdefault((name.text, r), sp)
            elif head.text == "observe":
                name = p.ident("an observation name")
                pl = p.plates()
                p.expect("~")
                fam, _ = p.family()
                args = p.args()
                p.expect("from")
                src = p.ident("a data column")
                p.end()
                obss.append(ObservationDecl(name.text, tuple(t.text for t in pl), fam, tuple(args), src.text))
                _note(spans, name, errors, pl)
                for r, sp in refs:
                    ref_spans.setdefault((name.text, r), sp)
            else:
                raise _Fail(head.span, "syntax", f"unknown statement {head.text!r}")
        except _Fail as f:
            errors.append(f.error)
    if errors:
        return errors
    model = ModelIR(plates, covs, lats, obss)
    report = validate(model)
    if report.ok:
        return model
    out = []
    for issue in report.errors:
        span = None
        if len(issue.names) >= 2:
            span = ref_spans.get((issue.names[0], issue.names[1])) or spans.get(issue.names[1])
        if span is None and issue.names:
            span = spans.get(issue.names[0])
        out.append(ParseError(span or SourceSpan(1, 1, 1), issue.kind, issue.message))
    return out


def _note(spans, name_tok, errors, plate_toks=()):
    if name_tok.text in spans:
        errors.append(ParseError(name_tok.span, "duplicate-name", f"{name_tok.text!r} is already declared"))
    else:
        spans[name_tok.text] = name_tok.span
    for t in plate_toks:
        spans.setdefault(t.text, t.span)


def _proposal_mean(fam, nums, tok):
    if not fam.proposal:
        raise _Fail(tok.span, "unsupported-family", f"{fam.name} cannot be a proposal family")
    try:
        return conventional_to_mean(ConventionalParams(fam, tuple(nums)))
    except DomainError as exc:
        raise _Fail(tok.span, "syntax", f"invalid proposal parameters: {exc}") from None


def parse_or_raise(source: str) -> ModelIR:
    result = parse(source)
    if isinstance(result, list):
        raise ValueError("\n".join(e.format(source) for e in result))
    return result


def load_model(path) -> ModelIR:
    return parse_or_raise(Path(path).read_text(encoding="utf-8"))


def shipped_model_path(name: str) -> Path:
    """Path of a model file shipped with the package, e.g. ``"radon_full"``."""
    path = Path(__file__).with_name("model_files") / f"{name}.qem"
    if not path.is_file():
        raise FileNotFoundError(f"no shipped model file named {name!r}")
    return path


# ---------------------------------------------------------------------------
# pretty printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_number(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x)) if x >= 0 else f"({int(x)})"
    s = repr(float(x))
    return s if x >= 0 else f"({s})"


def format_expr(e, parent_prec=0, right=False) -> str:
    if isinstance(e, Const):
        return format_number(e.value)
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({format_expr(e.arg)})"
    if isinstance(e, Gather):
        return f"gather({e.table}, {e.index})"
    if isinstance(e, Neg):
        return f"-{format_expr(e.operand, 3)}"
    if isinstance(e, BinOp):
        prec = _PREC[e.op]
        s = f"{format_expr(e.left, prec)} {e.op} {format_expr(e.right, prec, True)}"
        if prec < parent_prec or (right and prec == parent_prec):
            return f"({s})"
        return s
    raise TypeError(e)


def _proposal_number(v) -> str:
    x = float(np.asarray(v))
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _plates(pl):
    return f"[{', '.join(pl)}]" if pl else ""


def pretty_print(model: ModelIR) -> str:
    lines = [f"plate {p.name}[{p.size}]" for p in model.plates]
    lines += [f"covariate {c.name}{_plates(c.plates)} : {c.dtype}" for c in model.covariates]
    for lat in model.latents:
        args = ", ".join(format_expr(a) for a in lat.prior_params)
        s = f"latent {lat.name}{_plates(lat.plates)} ~ {lat.prior_family.name}({args})"
        if lat.proposal == "prior":
            s += " proposal prior"
        else:
            conv = lat.proposal_family.from_mean(lat.proposal_init.m)
            nums = ", ".join(_proposal_number(v) for v in conv)
            s += f" proposal {lat.proposal_family.name}({nums})"
        lines.append(s)
    for obs in model.observations:
        args = ", ".join(format_expr(a) for a in obs.params)
        lines.append(f"observe {obs.name}{_plates(obs.plates)} ~ {obs.family.name}({args}) from {obs.source}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def read_columns(path) -> dict:
    """Read a CSV whose columns may have different lengths (trailing blanks)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    cols = {h: [] for h in header}
    ended = {h: False for h in header}
    for r, row in enumerate(rows[1:], start=2):
        for j, h in enumerate(header):
            cell = row[j].strip() if j < len(row) else ""
            if cell == "":
                ended[h] = True
                continue
            if ended[h]:
                raise SchemaError(f"{path}: column {h!r} has a gap before row {r}")
            try:
                cols[h].append(float(cell))
            except ValueError:
                raise SchemaError(f"{path}: column {h!r} row {r}: {cell!r} is not a number") from None
    return cols


def write_columns(path, columns: dict):
    """Write columns of possibly different lengths, blank-padding short ones."""
    names = list(columns)
    arrays = [np.ravel(np.asarray(columns[n])) for n in names]
    n = max((len(a) for a in arrays), default=0)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt_cell(a[i]) if i < len(a) else "" for a in arrays])


def _fmt_cell(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def write_dataset(path, model: ModelIR):
    """Write every bound covariate and observation column of ``model`` to one CSV."""
    names = [c.name for c in model.covariates] + [o.source for o in model.observations]
    write_columns(path, {n: model.data[n] for n in names if n in model.data})


def load_dataset(paths, model: ModelIR) -> ModelIR:
    """Bind covariate and observation columns from one or more CSV files."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    cols = {}
    for p in paths:
        cols.update(read_columns(p))
    data = {}
    wanted = [(c.name, c.plates, None, c.dtype) for c in model.covariates]
    wanted += [(o.source, o.plates, o.family, "real") for o in model.observations]
    for name, plates, fam, dtype in wanted:
        if name not in cols:
            raise SchemaError(f"missing column {name!r}")
        shape = model.shape_of(plates)
        expected = int(np.prod(shape, dtype=np.int64))
        values = np.asarray(cols[name], dtype=float)
        if len(values) != expected:
            raise SchemaError(f"column {name!r} has {len(values)} rows, expected {expected} "
                              f"(plates {list(plates)} of sizes {list(shape)})")
        if dtype == "int":
            bad = np.flatnonzero(values != np.floor(values))
            if bad.size:
                raise SchemaError(f"column {name!r} row {bad[0] + 2}: {values[bad[0]]!r} is not an integer")
        if fam is not None:
            for i, v in enumerate(values):
                try:
                    fam.check_value(np.array([v]))
                except DomainError:
                    raise SchemaError(f"column {name!r} row {i + 2}: value {v!r} is outside the support of "
                                      f"{fam.name}") from None
        data[name] = values.reshape(shape).astype(np.int64) if dtype == "int" else values.reshape(shape)
    return model.bind(data)


__all__ = ["SourceSpan", "ParseError", "parse", "parse_or_raise", "load_model", "shipped_model_path", "pretty_print",
           "format_expr", "load_dataset", "write_dataset", "read_columns", "write_columns"]
