"""Model intermediate representation: plates, latents, observations, expressions.

Values flowing through expressions are :class:`Tensor` objects, numpy arrays
with a name for every axis.  Plate axes are named after their plate; the copy
axis of a latent declaration is named ``copy_axis(latent)``.  Binary operations
broadcast by axis name, so a ``(K, S)`` latent combines with an ``(S, R)``
covariate into a ``(K, S, R)`` result without any positional bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy import special

from .distributions import Family, MeanParams
from .errors import BroadcastError

COPY_PREFIX = "K:"


def copy_axis(latent: str) -> str:
    return COPY_PREFIX + latent


def is_copy_axis(dim: str) -> bool:
    return dim.startswith(COPY_PREFIX)


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

class Expr:
    """Base class of expression nodes."""

    def __add__(self, other): return BinOp("+", self, as_expr(other))
    def __radd__(self, other): return BinOp("+", as_expr(other), self)
    def __sub__(self, other): return BinOp("-", self, as_expr(other))
    def __rsub__(self, other): return BinOp("-", as_expr(other), self)
    def __mul__(self, other): return BinOp("*", self, as_expr(other))
    def __rmul__(self, other): return BinOp("*", as_expr(other), self)
    def __truediv__(self, other): return BinOp("/", self, as_expr(other))
    def __rtruediv__(self, other): return BinOp("/", as_expr(other), self)
    def __neg__(self): return Neg(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Ref(Expr):
    name: str


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str  # "exp" or "sigmoid"
    arg: Expr


@dataclass(frozen=True)
class Gather(Expr):
    """``table[index]``: pick entries of ``table`` along its one plate axis
    that ``index`` does not carry, using the integer covariate ``index``."""

    table: str
    index: str


FUNCTIONS = ("exp", "sigmoid")


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, str):
        return Ref(x)
    return Const(float(x))


def exp(x): return Call("exp", as_expr(x))
def sigmoid(x): return Call("sigmoid", as_expr(x))


def expr_refs(expr: Expr) -> set:
    if isinstance(expr, Ref):
        return {expr.name}
    if isinstance(expr, Gather):
        return {expr.table, expr.index}
    if isinstance(expr, BinOp):
        return expr_refs(expr.left) | expr_refs(expr.right)
    if isinstance(expr, Neg):
        return expr_refs(expr.operand)
    if isinstance(expr, Call):
        return expr_refs(expr.arg)
    return set()


# ---------------------------------------------------------------------------
# named tensors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tensor:
    values: np.ndarray
    dims: tuple

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != len(self.dims):
            raise BroadcastError(f"array of rank {values.ndim} labelled with dims {self.dims}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dims", tuple(self.dims))

    @property
    def sizes(self):
        return dict(zip(self.dims, self.values.shape))

    def align(self, dims) -> np.ndarray:
        """View of ``values`` laid out along ``dims`` (size-1 where absent)."""
        missing = [d for d in self.dims if d not in dims]
        if missing:
            raise BroadcastError(f"cannot align dims {self.dims} to {tuple(dims)}")
        order = [self.dims.index(d) for d in dims if d in self.dims]
        v = np.transpose(self.values, order) if order != list(range(len(order))) else self.values
        shape = [self.values.shape[self.dims.index(d)] if d in self.dims else 1 for d in dims]
        return v.reshape(shape)

    def sum_over(self, dims) -> "Tensor":
        axes = tuple(i for i, d in enumerate(self.dims) if d in dims)
        if not axes:
            return self
        keep = tuple(d for d in self.dims if d not in dims)
        return Tensor(self.values.sum(axis=axes), keep)


def union_dims(*tensors) -> tuple:
    out = []
    for t in tensors:
        for d in t.dims:
            if d not in out:
                out.append(d)
    return tuple(out)


def check_sizes(*tensors):
    sizes = {}
    for t in tensors:
        for d, n in zip(t.dims, t.values.shape):
            if sizes.setdefault(d, n) != n:
                raise BroadcastError(f"axis {d!r} has size {sizes[d]} in one operand and {n} in another")
    return sizes


def broadcast_apply(fn, *tensors) -> Tensor:
    check_sizes(*tensors)
    dims = union_dims(*tensors)
    return Tensor(fn(*(t.align(dims) for t in tensors)), dims)


_BINOPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
}


def eval_expr(expr: Expr, bindings: Mapping[str, Tensor]) -> Tensor:
    """Evaluate ``expr`` with every referenced name bound to a named tensor.

    The result carries the union of the operands' axes.
    """
    if isinstance(expr, Const):
        return Tensor(np.float64(expr.value), ())
    if isinstance(expr, Ref):
        try:
            return bindings[expr.name]
        except KeyError:
            raise BroadcastError(f"unbound name {expr.name!r}") from None
    if isinstance(expr, BinOp):
        return broadcast_apply(_BINOPS[expr.op], eval_expr(expr.left, bindings), eval_expr(expr.right, bindings))
    if isinstance(expr, Neg):
        t = eval_expr(expr.operand, bindings)
        return Tensor(-t.values, t.dims)
    if isinstance(expr, Call):
        t = eval_expr(expr.arg, bindings)
        fn = np.exp if expr.fn == "exp" else special.expit
        return Tensor(fn(t.values), t.dims)
    if isinstance(expr, Gather):
        return _gather(bindings[expr.table], bindings[expr.index], expr)
    raise TypeError(f"not an expression: {expr!r}")


def _gather(table: Tensor, index: Tensor, expr: Gather) -> Tensor:
    axis = [d for d in table.dims if not is_copy_axis(d) and d not in index.dims]
    if len(axis) != 1:
        raise BroadcastError(
            f"gather({expr.table}, {expr.index}) needs exactly one plate of {expr.table} "
            f"missing from {expr.index}, found {axis}")
    g = axis[0]
    check_sizes(Tensor(table.values.sum(axis=table.dims.index(g)), tuple(d for d in table.dims if d != g)), index)
    rest = tuple(d for d in table.dims if d != g)
    dims = rest + tuple(d for d in index.dims if d not in rest)
    arr = table.align(dims + (g,))
    idx = index.align(dims)[..., None].astype(np.intp)
    n = table.sizes[g]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise BroadcastError(f"index covariate {expr.index!r} out of range for plate {g!r} of size {n}")
    out = np.take_along_axis(arr, idx, axis=-1)[..., 0]
    shape = [max(a, b) for a, b in zip(arr.shape[:-1], idx.shape[:-1])]
    return Tensor(np.broadcast_to(out, shape), dims)


# ---------------------------------------------------------------------------
# declarations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlateDecl:
    name: str
    size: int


@dataclass(frozen=True)
class CovariateDecl:
    name: str
    plates: tuple = ()
    dtype: str = "real"  # or "int"


@dataclass(frozen=True, eq=False)
class LatentDecl:
    """A latent declaration with one copy axis shared by all its plate cells.

    ``proposal`` is ``"independent"`` (an exponential-family proposal with its
    own parameters, initialised from ``proposal_init``) or ``"prior"`` (sample
    from the prior conditional, a fixed proposal that depends on the parents).
    """

    name: str
    plates: tuple
    prior_family: Family
    prior_params: tuple
    proposal_family: Family | None = None
    proposal_init: MeanParams | None = None
    proposal: str = "independent"

    def __post_init__(self):
        object.__setattr__(self, "plates", tuple(self.plates))
        object.__setattr__(self, "prior_params", tuple(as_expr(p) for p in self.prior_params))
        if self.proposal_family is None:
            object.__setattr__(self, "proposal_family", self.prior_family)


@dataclass(frozen=True, eq=False)
class ObservationDecl:
    name: str
    plates: tuple
    family: Family
    params: tuple
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "plates", tuple(self.plates))
        object.__setattr__(self, "params", tuple(as_expr(p) for p in self.params))
        if not self.source:
            object.__setattr__(self, "source", self.name)


@dataclass(frozen=True, eq=False)
class ModelIR:
    plates: tuple = ()
    covariates: tuple = ()
    latents: tuple = ()
    observations: tuple = ()
    data: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for name in ("plates", "covariates", "latents", "observations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "data", dict(self.data))

    @cached_property
    def plate_sizes(self) -> dict:
        return {p.name: p.size for p in self.plates}

    @cached_property
    def latent(self) -> dict:
        return {lat.name: lat for lat in self.latents}

    @cached_property
    def covariate(self) -> dict:
        return {c.name: c for c in self.covariates}

    def shape_of(self, plates) -> tuple:
        return tuple(self.plate_sizes[p] for p in plates)

    def bind(self, data: Mapping) -> "ModelIR":
        """Copy of the model with ``data`` merged over the existing bindings."""
        merged = dict(self.data)
        merged.update({k: np.asarray(v) for k, v in data.items()})
        return ModelIR(self.plates, self.covariates, self.latents, self.observations, merged)

    def with_plate_sizes(self, sizes: Mapping) -> "ModelIR":
        plates = tuple(PlateDecl(p.name, sizes.get(p.name, p.size)) for p in self.plates)
        return ModelIR(plates, self.covariates, self.latents, self.observations, {})

    def covariate_tensor(self, name) -> Tensor:
        decl = self.covariate[name]
        values = np.asarray(self.data[name])
        if decl.dtype == "int":
            values = values.astype(np.int64)
        else:
            values = values.astype(float)
        return Tensor(values, decl.plates)

    def observed_tensor(self, obs: ObservationDecl) -> Tensor:
        return Tensor(np.asarray(self.data[obs.source], dtype=float), obs.plates)

    @cached_property
    def report(self) -> "ValidationReport":
        return validate(self)

    @property
    def order(self) -> tuple:
        """Latent names in a topological order of the prior."""
        rep = self.report
        if not rep.ok:
            raise ValueError("model is invalid: " + "; ".join(e.message for e in rep.errors))
        return rep.order

    @property
    def parents(self) -> dict:
        return self.report.parents

    @property
    def obs_deps(self) -> dict:
        return self.report.obs_deps


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Issue:
    kind: str  # syntax | unknown-identifier | duplicate-name | cycle | plate-mismatch | unsupported-family
    message: str
    names: tuple = ()


@dataclass
class ValidationReport:
    ok: bool
    order: tuple = ()
    parents: dict = field(default_factory=dict)
    obs_deps: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def format(self) -> str:
        lines = ["OK" if self.ok else "INVALID"]
        if self.ok:
            lines.append("order: " + ", ".join(self.order))
            for name, pa in self.parents.items():
                lines.append(f"  {name} <- {{{', '.join(pa)}}}")
            for name, deps in self.obs_deps.items():
                lines.append(f"  observe {name} <- {{{', '.join(deps)}}}")
        for e in self.errors:
            lines.append(f"error[{e.kind}]: {e.message}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


_SUPPORT = {"Gaussian": "real", "Bernoulli": "binary", "Beta": "unit", "Gamma": "positive"}


def latent_refs(expr: Expr, model: ModelIR) -> tuple:
    """Latents referenced by ``expr`` in declaration order."""
    refs = expr_refs(expr)
    return tuple(lat.name for lat in model.latents if lat.name in refs)


def expr_plates(expr: Expr, model: ModelIR) -> set:
    """Static plate set of an expression's value (excluding copy axes)."""
    if isinstance(expr, Const):
        return set()
    if isinstance(expr, Ref):
        decl = model.latent.get(expr.name) or model.covariate.get(expr.name)
        if decl is None:
            raise KeyError(expr.name)
        return set(decl.plates)
    if isinstance(expr, Gather):
        table = expr_plates(Ref(expr.table), model)
        index = expr_plates(Ref(expr.index), model)
        free = table - index
        if len(free) != 1:
            raise BroadcastError(
                f"gather({expr.table}, {expr.index}) needs exactly one plate of {expr.table} "
                f"missing from {expr.index}")
        return (table - free) | index
    if isinstance(expr, BinOp):
        return expr_plates(expr.left, model) | expr_plates(expr.right, model)
    if isinstance(expr, Neg):
        return expr_plates(expr.operand, model)
    if isinstance(expr, Call):
        return expr_plates(expr.arg, model)
    raise TypeError(expr)


def _find_cycle(graph: dict) -> list | None:
    state = {}
    stack = []

    def visit(v):
        state[v] = 1
        stack.append(v)
        for w in graph[v]:
            if state.get(w) == 1:
                return stack[stack.index(w):]
            if w not in state:
                found = visit(w)
                if found:
                    return found
        state[v] = 2
        stack.pop()
        return None

    for v in graph:
        if v not in state:
            found = visit(v)
            if found:
                return found
    return None


def validate(model: ModelIR) -> ValidationReport:
    """Check a model; errors are returned as data, never raised."""
    errors = []
    warnings = []
    seen = {}
    decls = ([("plate", p.name) for p in model.plates] + [("covariate", c.name) for c in model.covariates]
             + [("latent", lat.name) for lat in model.latents] + [("observation", o.name) for o in model.observations])
    for kind, name in decls:
        if name in seen:
            errors.append(Issue("duplicate-name", f"{kind} {name!r} already declared as a {seen[name]}", (name,)))
        else:
            seen[name] = kind
    for p in model.plates:
        if p.size < 1:
            errors.append(Issue("plate-mismatch", f"plate {p.name!r} must have size >= 1, got {p.size}", (p.name,)))

    plate_names = set(model.plate_sizes)
    for decl in list(model.covariates) + list(model.latents) + list(model.observations):
        for p in decl.plates:
            if p not in plate_names:
                errors.append(Issue("unknown-identifier", f"{decl.name!r} uses undeclared plate {p!r}", (decl.name, p)))
        if len(set(decl.plates)) != len(decl.plates):
            errors.append(Issue("duplicate-name", f"{decl.name!r} lists a plate twice", (decl.name,)))

    resolvable = set(model.latent) | set(model.covariate)
    int_covs = {c.name for c in model.covariates if c.dtype == "int"}

    def check_expr(owner, expr, allowed_plates):
        ok = True
        for ref in sorted(expr_refs(expr)):
            if ref not in resolvable:
                errors.append(Issue("unknown-identifier", f"{owner!r} refers to undeclared name {ref!r}", (owner, ref)))
                ok = False
        for node in _walk(expr):
            if isinstance(node, Gather) and node.index in resolvable and node.index not in int_covs:
                errors.append(Issue("syntax", f"gather index {node.index!r} in {owner!r} must be an int covariate",
                                    (owner, node.index)))
                ok = False
        if not ok or any(p not in plate_names for decl in _decls_in(expr, model) for p in decl.plates):
            return
        try:
            plates = expr_plates(expr, model)
        except BroadcastError as exc:
            errors.append(Issue("plate-mismatch", f"{owner!r}: {exc}", (owner,)))
            return
        extra = plates - set(allowed_plates)
        if extra:
            errors.append(Issue("plate-mismatch",
                                f"{owner!r} is declared over plates {list(allowed_plates)} but its parameters "
                                f"vary over {sorted(extra)}", (owner,)))

    for lat in model.latents:
        fam = lat.prior_family
        if fam.name not in _SUPPORT:
            errors.append(Issue("unsupported-family", f"latent {lat.name!r} cannot have a {fam.name} prior", (lat.name,)))
        if len(lat.prior_params) != fam.n_params:
            errors.append(Issue("syntax", f"{fam.name} takes {fam.n_params} parameters, {lat.name!r} gives "
                                          f"{len(lat.prior_params)}", (lat.name,)))
        if lat.proposal not in ("independent", "prior"):
            errors.append(Issue("unsupported-family", f"unknown proposal kind {lat.proposal!r}", (lat.name,)))
        if lat.proposal == "independent":
            q = lat.proposal_family
            if not q.proposal or q.name not in _SUPPORT:
                errors.append(Issue("unsupported-family", f"{q.name} cannot be a proposal ({lat.name!r})", (lat.name,)))
            elif _SUPPORT.get(fam.name) != _SUPPORT[q.name]:
                errors.append(Issue("unsupported-family",
                                    f"proposal {q.name} for {lat.name!r} does not share the support of its "
                                    f"{fam.name} prior", (lat.name,)))
            elif lat.proposal_init is None or lat.proposal_init.family is not q:
                errors.append(Issue("unsupported-family", f"{lat.name!r} needs {q.name} initial mean parameters",
                                    (lat.name,)))
            elif not np.all(lat.proposal_init.feasible()):
                errors.append(Issue("unsupported-family", f"initial proposal of {lat.name!r} is infeasible",
                                    (lat.name,)))
        for e in lat.prior_params:
            check_expr(lat.name, e, lat.plates)

    for obs in model.observations:
        if len(obs.params) != obs.family.n_params:
            errors.append(Issue("syntax", f"{obs.family.name} takes {obs.family.n_params} parameters, {obs.name!r} "
                                          f"gives {len(obs.params)}", (obs.name,)))
        for e in obs.params:
            check_expr(obs.name, e, obs.plates)

    # data bindings (only those present are checked)
    for c in model.covariates:
        if c.name in model.data and all(p in plate_names for p in c.plates):
            _check_shape(errors, c.name, np.asarray(model.data[c.name]), model.shape_of(c.plates))
    for obs in model.observations:
        if obs.source in model.data and all(p in plate_names for p in obs.plates):
            arr = np.asarray(model.data[obs.source], dtype=float)
            if _check_shape(errors, obs.name, arr, model.shape_of(obs.plates)):
                try:
                    obs.family.check_value(arr)
                except ValueError as exc:
                    errors.append(Issue("plate-mismatch", f"data for {obs.name!r}: {exc}", (obs.name,)))

    # dependency structure
    parents = {lat.name: tuple(n for n in _ordered_latent_refs(lat.prior_params, model) if n != lat.name)
               for lat in model.latents}
    graph = {lat.name: [n for n in _ordered_latent_refs(lat.prior_params, model)] for lat in model.latents}
    cycle = _find_cycle(graph)
    if cycle:
        errors.append(Issue("cycle", "latents form a cycle: " + " -> ".join(cycle + [cycle[0]]), tuple(cycle)))
    obs_deps = {obs.name: _ordered_latent_refs(obs.params, model) for obs in model.observations}

    if errors:
        return ValidationReport(False, errors=errors, warnings=warnings)

    order = _topo_order(model, parents)
    children = {n: set() for n in parents}
    for n, pa in parents.items():
        for p in pa:
            children[p].add(n)
    observed = set()
    for deps in obs_deps.values():
        observed.update(deps)
    reach = set(observed)
    for name in reversed(order):
        if children[name] & reach:
            reach.add(name)
    for name in order:
        if name not in reach:
            warnings.append(f"latent {name!r} does not influence any observation")
    return ValidationReport(True, order, {n: parents[n] for n in order}, obs_deps, [], warnings)


def _walk(expr):
    yield expr
    for child in (getattr(expr, a) for a in ("left", "right", "operand", "arg") if hasattr(expr, a)):
        yield from _walk(child)


def _decls_in(expr, model):
    for name in expr_refs(expr):
        decl = model.latent.get(name) or model.covariate.get(name)
        if decl is not None:
            yield decl


def _ordered_latent_refs(exprs, model) -> tuple:
    refs = set()
    for e in exprs:
        refs |= expr_refs(e)
    return tuple(lat.name for lat in model.latents if lat.name in refs)


def _check_shape(errors, name, arr, expected) -> bool:
    if arr.shape != tuple(expected):
        errors.append(Issue("plate-mismatch", f"data for {name!r} has shape {arr.shape}, expected {tuple(expected)}",
                            (name,)))
        return False
    return True


def _topo_order(model, parents) -> tuple:
    # Kahn's algorithm, ties broken by declaration order
    remaining = [lat.name for lat in model.latents]
    done = []
    placed = set()
    while remaining:
        for name in remaining:
            if all(p in placed for p in parents[name]):
                done.append(name)
                placed.add(name)
                remaining.remove(name)
                break
    return tuple(done)


def parent_sets(model: ModelIR) -> tuple:
    """(latent -> prior parents, observation -> latent dependencies)."""
    rep = validate(model)
    if not rep.ok:
        raise ValueError("model is invalid: " + "; ".join(e.message for e in rep.errors))
    return rep.parents, rep.obs_deps
