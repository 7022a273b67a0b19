"""Symbolic candidate libraries of vector basis functions.

Two variants exist. An SDE function is a monomial placed in one output
component, b(x) = prod_k x_k^e_k * e_beta. A field function acts on the
two-field Gray-Scott state: a reaction prefactor u^i v^j, optionally
multiplied by a periodic finite-difference operator applied to u or v, and
placed in the u- or v-equation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, NotRepresentable
from .spde_sim import STENCILS, GrayScottParams, GridSpec

FIELDS = ("u", "v")
OPERATORS = ("identity", "dx", "dy", "dxx", "dyy", "dxy", "laplacian")


@dataclass(frozen=True)
class SDEBasis:
    component: int
    exponents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "exponents", tuple(int(e) for e in self.exponents))
        if any(e < 0 for e in self.exponents) or sum(self.exponents) > 4:
            raise ValueError(f"exponents must be non-negative with total degree <= 4: {self.exponents}")
        if not 0 <= self.component < len(self.exponents):
            raise ValueError("component index out of range")

    @property
    def d(self) -> int:
        return len(self.exponents)

    def label(self, names: Sequence[str] | None = None) -> str:
        names = names or [f"x{k + 1}" for k in range(self.d)]
        mono = "*".join(n if e == 1 else f"{n}^{e}" for n, e in zip(names, self.exponents) if e) or "1"
        return f"{mono} e{self.component + 1}"

    def to_json(self) -> dict:
        return {"variant": "sde", "component": self.component, "exponents": list(self.exponents)}


@dataclass(frozen=True)
class FieldBasis:
    target: str
    exponents: tuple[int, int]
    operator: str = "identity"
    operand: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "exponents", tuple(int(e) for e in self.exponents))
        if self.target not in FIELDS or self.operator not in OPERATORS:
            raise ValueError(f"bad field basis {self}")
        if (self.operator == "identity") != (self.operand is None):
            raise ValueError("an operand is required exactly when the operator is not the identity")
        if self.operand is not None and self.operand not in FIELDS:
            raise ValueError(f"unknown operand {self.operand!r}")
        if min(self.exponents) < 0 or sum(self.exponents) > 4:
            raise ValueError("reaction exponents must be non-negative with total degree <= 4")

    def label(self) -> str:
        i, j = self.exponents
        pre = "*".join(p for p in (("u" if i == 1 else f"u^{i}") if i else "", ("v" if j == 1 else f"v^{j}") if j else "") if p)
        if self.operator == "identity":
            body = pre or "1"
        else:
            body = f"{pre + '*' if pre else ''}{self.operator}({self.operand})"
        return f"{body} -> d{self.target}/dt"

    def to_json(self) -> dict:
        return {"variant": "field", "field": self.target, "exponents": list(self.exponents),
                "operator": self.operator, "operand": self.operand}


BasisFunction = Union[SDEBasis, FieldBasis]


def _from_json(desc: dict) -> BasisFunction:
    if desc["variant"] == "sde":
        return SDEBasis(int(desc["component"]), tuple(desc["exponents"]))
    return FieldBasis(desc["field"], tuple(desc["exponents"]), desc.get("operator", "identity"), desc.get("operand"))


class BasisLibrary:
    """Ordered, duplicate-free, immutable list of basis functions."""

    def __init__(self, functions: Iterable[BasisFunction]):
        fns = tuple(functions)
        if not fns:
            raise ValueError("a library needs at least one function")
        if len(set(fns)) != len(fns):
            raise ValueError("library contains duplicate functions")
        kinds = {type(f) for f in fns}
        if len(kinds) != 1:
            raise ValueError("cannot mix SDE and field functions")
        self.functions = fns
        self.kind = "sde" if isinstance(fns[0], SDEBasis) else "field"
        self._index = {f: i for i, f in enumerate(fns)}
        if self.kind == "sde":
            dims = {f.d for f in fns}
            if len(dims) != 1:
                raise DimensionMismatch("library functions disagree on the state dimension")
            self.d = dims.pop()
            monos: dict[tuple[int, ...], int] = {}
            self.mono_of = np.array([monos.setdefault(f.exponents, len(monos)) for f in fns])
            self.comp_of = np.array([f.component for f in fns])
            self.monomials = np.array(list(monos), dtype=np.int64).reshape(len(monos), self.d)
        else:
            self.d = None
            self.target_of = np.array([FIELDS.index(f.target) for f in fns])

    # -- container protocol -------------------------------------------------
    @property
    def n0(self) -> int:
        return len(self.functions)

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, i):
        return self.functions[i]

    def __eq__(self, other):
        return isinstance(other, BasisLibrary) and self.functions == other.functions

    def __hash__(self):
        return hash(self.functions)

    def index(self, f: BasisFunction) -> int:
        return self._index[f]

    def subset(self, indices: Iterable[int]) -> "BasisLibrary":
        return BasisLibrary(self.functions[i] for i in indices)

    def labels(self) -> list[str]:
        return [f.label() for f in self.functions]

    def to_json(self) -> list[dict]:
        return [f.to_json() for f in self.functions]

    @classmethod
    def from_json(cls, items: list[dict]) -> "BasisLibrary":
        return cls(_from_json(x) for x in items)

    # -- SDE evaluation -----------------------------------------------------
    def monomial_values(self, X: np.ndarray) -> np.ndarray:
        """(T, m) values of the distinct monomials at states X (T, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _monomials(X, self.monomials)

    def monomial_gradients(self, X: np.ndarray) -> np.ndarray:
        """(T, m, d) partial derivatives of each monomial."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        T, d = X.shape
        out = np.empty((T, len(self.monomials), d))
        for c in range(d):
            E = self.monomials.copy()
            coef = E[:, c].astype(float)
            E[:, c] = np.maximum(E[:, c] - 1, 0)
            out[:, :, c] = _monomials(X, E) * coef
        return out

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Dense (T, n0, d) values; fine for small problems and tests."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        phi = self.monomial_values(X)
        out = np.zeros((X.shape[0], self.n0, self.d))
        out[:, np.arange(self.n0), self.comp_of] = phi[:, self.mono_of]
        return out

    # -- field evaluation ---------------------------------------------------
    def field_values(self, states: np.ndarray, grid: GridSpec) -> np.ndarray:
        """(T, n0, cells) values of each function on its target field."""
        states = np.atleast_2d(states)
        T = states.shape[0]
        uv = states.reshape(T, 2, grid.nx, grid.ny)
        u, v = uv[:, 0], uv[:, 1]
        powers_u: dict[int, np.ndarray] = {}
        powers_v: dict[int, np.ndarray] = {}
        ops: dict[tuple[str, str], np.ndarray] = {}

        def pw(cache, base, e):
            if e not in cache:
                cache[e] = np.ones_like(base) if e == 0 else base ** e
            return cache[e]

        out = np.empty((T, self.n0, grid.cells))
        for k, f in enumerate(self.functions):
            i, j = f.exponents
            val = pw(powers_u, u, i) * pw(powers_v, v, j)
            if f.operator != "identity":
                key = (f.operator, f.operand)
                if key not in ops:
                    ops[key] = STENCILS[f.operator](u if f.operand == "u" else v, grid.dx)
                val = val * ops[key]
            out[:, k] = val.reshape(T, -1)
        return out


def _monomials(X: np.ndarray, E: np.ndarray) -> np.ndarray:
    out = np.ones((X.shape[0], E.shape[0]))
    for k, row in enumerate(E):
        for c, e in enumerate(row):
            if e:
                out[:, k] *= X[:, c] ** e
    return out


@dataclass(frozen=True)
class ModelBasis:
    """Sorted index set into a library."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])) or any(i < 0 for i in idx):
            raise ValueError(f"model indices must be strictly increasing and non-negative: {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, indices: Iterable[int]) -> "ModelBasis":
        return cls(tuple(sorted(set(int(i) for i in indices))))

    @property
    def n(self) -> int:
        return len(self.indices)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def as_set(self) -> frozenset:
        return frozenset(self.indices)

    def check(self, library: BasisLibrary) -> "ModelBasis":
        if self.indices and self.indices[-1] >= library.n0:
            raise DimensionMismatch(f"model index {self.indices[-1]} outside library of size {library.n0}")
        return self


# -- library builders ---------------------------------------------------------

def _graded_lex(d: int, max_degree: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(max_degree + 1):
        exps = [e for e in itertools.product(range(deg + 1), repeat=d) if sum(e) == deg]
        out.extend(sorted(exps, reverse=True))
    return out


def polynomial_library(d: int, max_degree: int) -> BasisLibrary:
    """All monomials of total degree <= max_degree in every component."""
    if d < 1 or max_degree < 0:
        raise ValueError("need d >= 1 and max_degree >= 0")
    return BasisLibrary(SDEBasis(b, e) for e in _graded_lex(d, max_degree) for b in range(d))


def lv_library(d: int) -> BasisLibrary:
    """{x_i e_i} followed by {x_i x_j e_i} for all i, j."""
    if d < 1:
        raise ValueError("need d >= 1")
    unit = lambda *idx: tuple(sum(1 for i in idx if i == k) for k in range(d))  # noqa: E731
    lin = [SDEBasis(i, unit(i)) for i in range(d)]
    quad = [SDEBasis(i, unit(i, j)) for i in range(d) for j in range(d)]
    return BasisLibrary(lin + quad)


_GS_PREFACTORS = ((0, 0), (1, 0), (0, 1))
_GS_OPERATORS = ("dx", "dy", "dxy", "laplacian")


def gray_scott_library() -> BasisLibrary:
    """78 field terms, 39 per equation.

    Each equation gets the 15 reaction monomials u^i v^j with i + j <= 4 and
    24 transport terms p * op(w) for p in {1, u, v}, op in {dx, dy, dxy,
    laplacian} and w in {u, v}. Dxx and Dyy are left out because together
    with the Laplacian they would make the Gram matrix singular.
    """
    fns = []
    for target in FIELDS:
        for deg in range(5):
            for i in range(deg, -1, -1):
                fns.append(FieldBasis(target, (i, deg - i)))
        for pre in _GS_PREFACTORS:
            for op in _GS_OPERATORS:
                for w in FIELDS:
                    fns.append(FieldBasis(target, pre, op, w))
    return BasisLibrary(fns)


def evaluate(b: BasisFunction, x) -> np.ndarray:
    """Value of an SDE basis function at one state."""
    if not isinstance(b, SDEBasis):
        raise TypeError("use evaluate_field for field basis functions")
    x = np.asarray(x, dtype=float)
    out = np.zeros(b.d)
    out[b.component] = np.prod(x ** np.array(b.exponents))
    return out


def gradient(b: SDEBasis, x) -> np.ndarray:
    """Jacobian J[a, c] = d b_a / d x_c (only row ``component`` is non-zero)."""
    x = np.asarray(x, dtype=float)
    e = np.array(b.exponents)
    J = np.zeros((b.d, b.d))
    for c in range(b.d):
        if e[c]:
            ec = e.copy()
            ec[c] -= 1
            J[b.component, c] = e[c] * np.prod(x ** ec)
    return J


def evaluate_field(b: FieldBasis, state, grid: GridSpec) -> np.ndarray:
    """Value of a field function on a flattened (2 * cells,) state."""
    lib = BasisLibrary([b])
    vals = lib.field_values(np.asarray(state, dtype=float)[None, :], grid)[0, 0]
    out = np.zeros(2 * grid.cells)
    t = FIELDS.index(b.target)
    out[t * grid.cells:(t + 1) * grid.cells] = vals
    return out


def _gray_scott_terms(p: GrayScottParams):
    return [
        (FieldBasis("u", (0, 0), "laplacian", "u"), p.Du),
        (FieldBasis("u", (1, 2)), -1.0),
        (FieldBasis("u", (0, 0)), p.F),
        (FieldBasis("u", (1, 0)), -p.F),
        (FieldBasis("v", (0, 0), "laplacian", "v"), p.Dv),
        (FieldBasis("v", (1, 2)), 1.0),
        (FieldBasis("v", (0, 1)), -(p.F + p.k)),
    ]


def true_model(drift, library: BasisLibrary) -> tuple[ModelBasis, np.ndarray]:
    """Minimal index set and coefficients reproducing ``drift`` exactly."""
    if isinstance(drift, GrayScottParams):
        pairs = []
        for f, c in _gray_scott_terms(drift):
            if f not in library._index:
                raise NotRepresentable(f"library lacks {f.label()}")
            if c != 0:
                pairs.append((library.index(f), c))
    else:
        if library.kind != "sde" or library.d != drift.d:
            raise DimensionMismatch("library dimension does not match the drift")
        acc: dict[int, float] = {}
        for comp, exps, coef in drift.terms():
            f = SDEBasis(comp, exps)
            if f not in library._index:
                raise NotRepresentable(f"library lacks {f.label()}")
            i = library.index(f)
            acc[i] = acc.get(i, 0.0) + coef
        pairs = [(i, c) for i, c in acc.items() if c != 0]
    pairs.sort()
    return ModelBasis(tuple(i for i, _ in pairs)), np.array([c for _, c in pairs])
