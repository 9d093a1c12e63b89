"""Recursive constraint chains and the constants the bounds consume.

A chain evaluates

    f^1 = varphi_1(f_1),   f^k = rho_k(g_k(f^{k-1}, varphi_k(f_k))),   f = f^C

with pseudo-linear components f_k(x, theta) = psi_k(theta) . phi_k(x) + eta_k(theta).
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K

EXACT = "exact"
UPPER_BOUND = "upper-bound"
SAMPLED = "sampled-estimate"

_MAX_VERTEX_ENUM = 16


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Domain:
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        integ = (np.zeros(lo.size, dtype=bool) if self.integer is None
                 else np.asarray(self.integer, dtype=bool).ravel())
        if lo.size == 0 or lo.size != hi.size or integ.size != lo.size:
            raise ValueError("domain bounds and integrality flags must share one positive dimension")
        if np.any(lo > hi):
            raise ValueError("domain lower bound exceeds upper bound")
        if np.any(np.ceil(lo[integ]) > np.floor(hi[integ])):
            raise ValueError("integer coordinate has no admissible integer value")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "integer", integ)

    @classmethod
    def box(cls, lower, upper, integer=None):
        return cls(np.asarray(lower, float), np.asarray(upper, float), integer)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def center(self) -> np.ndarray:
        lo = np.where(np.isfinite(self.lower), self.lower, np.minimum(0.0, self.upper))
        hi = np.where(np.isfinite(self.upper), self.upper, np.maximum(0.0, self.lower))
        return self.project(0.5 * (lo + hi))

    def project(self, x) -> np.ndarray:
        """Clip to the box and round integer coordinates into the admissible lattice."""
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        if self.integer.any():
            lo = np.ceil(self.lower[self.integer])
            hi = np.floor(self.upper[self.integer])
            x[self.integer] = np.clip(np.round(x[self.integer]), lo, hi)
        return x

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            return False
        in_box = np.all(x >= self.lower) and np.all(x <= self.upper)
        return bool(in_box and np.all(x[self.integer] == np.round(x[self.integer])))

    def to_dict(self) -> dict:
        return {"lower": _floats(self.lower), "upper": _floats(self.upper),
                "integer": [bool(b) for b in self.integer]}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        lower = [float(v) for v in d["lower"]]
        return cls(np.array(lower), np.array([float(v) for v in d["upper"]]),
                   d.get("integer"))


def _floats(a):
    return [float(v) for v in np.asarray(a).ravel()]


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------

def _interval_pow(lo, hi, e):
    if e == 0:
        return 1.0, 1.0
    if e % 2 == 1:
        return lo ** e, hi ** e
    if lo >= 0:
        return lo ** e, hi ** e
    if hi <= 0:
        return hi ** e, lo ** e
    return 0.0, max(-lo, hi) ** e


def _interval_mul(a, b):
    prods = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return min(prods), max(prods)


def _far_endpoint(lo, hi, c):
    return lo if abs(lo - c) >= abs(hi - c) else hi


class FeatureMap:
    """A map R^in_dim -> R^out_dim from the closed catalog."""

    kind: str = ""
    in_dim: int
    out_dim: int

    def __call__(self, z):
        """Evaluate on one point (in_dim,) or on rows (M, in_dim)."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return self._eval(z[None, :])[0]
        return self._eval(z)

    def _check(self, Z):
        if Z.shape[-1] < self.in_dim:
            raise ValueError(f"{self.kind} map expects inputs of dimension >= {self.in_dim}, got {Z.shape[-1]}")

    def jacobian(self, z) -> np.ndarray:
        raise NotImplementedError

    def box_sup(self, lower, upper, center=None):
        """sup over the box of ||map(z) - center||, with a flag and a maximizer (or None)."""
        raise NotImplementedError

    def sphere_sup(self, dim, center=None):
        """sup over the unit sphere of R^dim of ||map(z) - center||."""
        value, _, _ = self.box_sup(-np.ones(dim), np.ones(dim), center)
        return value, UPPER_BOUND

    def _relevant(self, dim):
        """Coordinates the map actually reads."""
        return np.arange(dim)

    def to_dict(self) -> dict:
        raise NotImplementedError


class Select(FeatureMap):
    kind = "select"

    def __init__(self, indices: Sequence[int]):
        self.indices = np.asarray(indices, dtype=np.int64).ravel()
        if self.indices.size == 0 or np.any(self.indices < 0):
            raise ValueError("select map needs nonnegative indices")
        self.in_dim = int(self.indices.max()) + 1
        self.out_dim = self.indices.size

    def _eval(self, Z):
        self._check(Z)
        return Z[:, self.indices]

    def jacobian(self, z):
        J = np.zeros((self.out_dim, np.asarray(z).size))
        J[np.arange(self.out_dim), self.indices] = 1.0
        return J

    def _relevant(self, dim):
        return np.unique(self.indices)

    def box_sup(self, lower, upper, center=None):
        c = np.zeros(self.out_dim) if center is None else np.asarray(center, float)
        lo, hi = np.asarray(lower, float), np.asarray(upper, float)
        xm = np.clip(np.zeros(lo.size), lo, hi)
        far = np.empty(self.out_dim)
        for j, i in enumerate(self.indices):
            far[j] = _far_endpoint(lo[i], hi[i], c[j])
            xm[i] = far[j]
        value = float(np.linalg.norm(far - c))
        if np.unique(self.indices).size != self.indices.size:
            return value, UPPER_BOUND, None
        return value, EXACT, xm

    def sphere_sup(self, dim, center=None):
        cn = 0.0 if center is None else float(np.linalg.norm(center))
        flag = EXACT if np.unique(self.indices).size == self.indices.size else UPPER_BOUND
        return 1.0 + cn, flag

    def to_dict(self):
        return {"kind": self.kind, "indices": [int(i) for i in self.indices]}


class Affine(FeatureMap):
    kind = "affine"

    def __init__(self, matrix, offset=None):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.matrix = A
        self.offset = np.zeros(A.shape[0]) if offset is None else np.asarray(offset, float).ravel()
        if self.offset.size != A.shape[0]:
            raise ValueError("affine offset length must match matrix rows")
        self.in_dim = A.shape[1]
        self.out_dim = A.shape[0]

    @classmethod
    def constant(cls, value, in_dim):
        value = np.atleast_1d(np.asarray(value, float))
        return cls(np.zeros((value.size, in_dim)), value)

    def _eval(self, Z):
        self._check(Z)
        return Z[:, :self.in_dim] @ self.matrix.T + self.offset

    def jacobian(self, z):
        J = np.zeros((self.out_dim, np.asarray(z).size))
        J[:, :self.in_dim] = self.matrix
        return J

    def _relevant(self, dim):
        return np.flatnonzero(np.any(self.matrix != 0, axis=0))

    def box_sup(self, lower, upper, center=None):
        c = np.zeros(self.out_dim) if center is None else np.asarray(center, float)
        lo = np.asarray(lower, float)[:self.in_dim]
        hi = np.asarray(upper, float)[:self.in_dim]
        rel = self._relevant(self.in_dim)
        base = np.clip(np.zeros(np.asarray(lower).size), lower, upper)
        if rel.size <= _MAX_VERTEX_ENUM:
            best, best_x = -1.0, None
            for corner in itertools.product((0, 1), repeat=rel.size):
                x = base.copy()
                x[rel] = np.where(np.array(corner, bool), hi[rel], lo[rel])
                v = float(np.linalg.norm(self(x) - c))
                if v > best:
                    best, best_x = v, x
            return best, EXACT, best_x
        # interval arithmetic per output row
        A = self.matrix
        rlo = self.offset - c + np.minimum(A * lo, A * hi).sum(axis=1)
        rhi = self.offset - c + np.maximum(A * lo, A * hi).sum(axis=1)
        return float(np.linalg.norm(np.maximum(np.abs(rlo), np.abs(rhi)))), UPPER_BOUND, None

    def sphere_sup(self, dim, center=None):
        c = np.zeros(self.out_dim) if center is None else np.asarray(center, float)
        smax = float(np.linalg.norm(self.matrix, 2))
        v = self.offset - c
        if not np.any(v):
            return smax, EXACT
        return smax + float(np.linalg.norm(v)), UPPER_BOUND

    def to_dict(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist(), "offset": _floats(self.offset)}


class Monomials(FeatureMap):
    """Rows coef_j * prod_i z_i^E[j, i] with fixed nonnegative integer exponents."""

    kind = "monomial"

    def __init__(self, exponents, coefficients=None):
        E = np.atleast_2d(np.asarray(exponents))
        if not np.issubdtype(E.dtype, np.integer):
            if np.any(E != np.round(E)):
                raise ValueError("monomial exponents must be integers")
            E = E.astype(np.int64)
        if np.any(E < 0):
            raise ValueError("monomial exponents must be nonnegative")
        self.exponents = E
        self.coefficients = (np.ones(E.shape[0]) if coefficients is None
                             else np.asarray(coefficients, float).ravel())
        if self.coefficients.size != E.shape[0]:
            raise ValueError("one coefficient per monomial")
        self.in_dim = E.shape[1]
        self.out_dim = E.shape[0]

    def _eval(self, Z):
        self._check(Z)
        Z = Z[:, :self.in_dim]
        out = np.ones((Z.shape[0], self.out_dim))
        for j in range(self.out_dim):
            for i in np.flatnonzero(self.exponents[j]):
                out[:, j] *= Z[:, i] ** self.exponents[j, i]
        return out * self.coefficients

    def jacobian(self, z):
        z = np.asarray(z, float)
        J = np.zeros((self.out_dim, z.size))
        for j in range(self.out_dim):
            for i in np.flatnonzero(self.exponents[j]):
                e = self.exponents[j].copy()
                e[i] -= 1
                J[j, i] = self.coefficients[j] * self.exponents[j, i] * np.prod(z[:self.in_dim] ** e)
        return J

    def _relevant(self, dim):
        return np.flatnonzero(np.any(self.exponents > 0, axis=0))

    def box_sup(self, lower, upper, center=None):
        lo = np.asarray(lower, float)
        hi = np.asarray(upper, float)
        if center is None or not np.any(center):
            # each squared monomial is nondecreasing in |z_i|: the farthest-from-zero corner wins
            x = np.clip(np.zeros(lo.size), lo, hi)
            for i in self._relevant(self.in_dim):
                x[i] = _far_endpoint(lo[i], hi[i], 0.0)
            return float(np.linalg.norm(self(x))), EXACT, x
        c = np.asarray(center, float)
        worst = np.empty(self.out_dim)
        for j in range(self.out_dim):
            iv = (1.0, 1.0)
            for i in np.flatnonzero(self.exponents[j]):
                iv = _interval_mul(iv, _interval_pow(lo[i], hi[i], int(self.exponents[j, i])))
            iv = _interval_mul(iv, (self.coefficients[j], self.coefficients[j]))
            worst[j] = max(abs(iv[0] - c[j]), abs(iv[1] - c[j]))
        return float(np.linalg.norm(worst)), UPPER_BOUND, None

    def to_dict(self):
        return {"kind": self.kind, "exponents": self.exponents.tolist(),
                "coefficients": _floats(self.coefficients)}


class Lookup(FeatureMap):
    """Finite table indexed by one coordinate; off-key inputs use the nearest key."""

    kind = "lookup"

    def __init__(self, coordinate: int, keys, table):
        self.coordinate = int(coordinate)
        self.keys = np.asarray(keys, float).ravel()
        self.table = np.atleast_2d(np.asarray(table, float))
        if self.table.shape[0] != self.keys.size or self.keys.size == 0:
            raise ValueError("lookup table needs one row per key")
        self.in_dim = self.coordinate + 1
        self.out_dim = self.table.shape[1]

    def _rows(self, v):
        return np.argmin(np.abs(np.asarray(v)[..., None] - self.keys), axis=-1)

    def _eval(self, Z):
        self._check(Z)
        return self.table[self._rows(Z[:, self.coordinate])]

    def jacobian(self, z):
        return np.zeros((self.out_dim, np.asarray(z).size))

    def _relevant(self, dim):
        return np.array([self.coordinate])

    def _admissible(self, lo, hi):
        rows = set(np.flatnonzero((self.keys >= lo) & (self.keys <= hi)).tolist())
        for b in (lo, hi):
            if np.isfinite(b):
                rows.add(int(self._rows(b)))
        if not np.isfinite(lo) or not np.isfinite(hi):
            rows.update(range(self.keys.size))
        return sorted(rows)

    def box_sup(self, lower, upper, center=None):
        c = np.zeros(self.out_dim) if center is None else np.asarray(center, float)
        lo, hi = float(lower[self.coordinate]), float(upper[self.coordinate])
        rows = self._admissible(lo, hi)
        norms = [float(np.linalg.norm(self.table[r] - c)) for r in rows]
        r = rows[int(np.argmax(norms))]
        x = np.clip(np.zeros(np.asarray(lower).size), lower, upper)
        x[self.coordinate] = np.clip(self.keys[r], lo, hi)
        return max(norms), EXACT, x

    def to_dict(self):
        return {"kind": self.kind, "coordinate": self.coordinate,
                "keys": _floats(self.keys), "table": self.table.tolist()}


_FEATURE_KINDS = {"select": Select, "affine": Affine, "monomial": Monomials, "lookup": Lookup}


def feature_map_from_dict(d: dict) -> FeatureMap:
    kind = d.get("kind")
    if kind == "select":
        return Select(d["indices"])
    if kind == "affine":
        return Affine(d["matrix"], d.get("offset"))
    if kind == "monomial":
        return Monomials(d["exponents"], d.get("coefficients"))
    if kind == "lookup":
        return Lookup(d["coordinate"], d["keys"], d["table"])
    raise ValueError(f"unknown feature map kind {kind!r}; expected one of {sorted(_FEATURE_KINDS)}")


# ---------------------------------------------------------------------------
# Scalar wrappers
# ---------------------------------------------------------------------------

_WRAPPER_CODES = {
    "identity": K.W_IDENTITY, "scale": K.W_SCALE, "abs": K.W_ABS, "clip": K.W_CLIP,
    "sin": K.W_SIN, "cos": K.W_COS, "shifted_sqrt": K.W_SQRT, "neg_cos": K.W_NEGCOS,
}


@dataclass(frozen=True)
class ScalarWrapper:
    """A univariate wrapper from the closed catalog with its certified Lipschitz constant.

    ``shifted_sqrt`` is u -> sqrt(c + max(u, lower)); clamping at ``lower`` keeps it
    defined everywhere with Lipschitz constant 1 / (2 sqrt(c + lower)).
    """

    kind: str = "identity"
    c: float = 0.0
    a: float = 0.0
    b: float = 0.0
    lower: float = 0.0

    def __post_init__(self):
        if self.kind not in _WRAPPER_CODES:
            raise ValueError(f"unknown wrapper kind {self.kind!r}; catalog is {sorted(_WRAPPER_CODES)}")
        if self.kind == "clip" and not self.a <= self.b:
            raise ValueError("clip wrapper needs a <= b")
        if self.kind == "shifted_sqrt" and not self.c + self.lower > 0:
            raise ValueError("shifted_sqrt domain violation: c + lower must be positive")

    @property
    def lipschitz(self) -> float:
        if self.kind == "scale":
            return abs(self.c)
        if self.kind == "shifted_sqrt":
            return 0.5 / math.sqrt(self.c + self.lower)
        return 1.0

    @property
    def code(self) -> int:
        return _WRAPPER_CODES[self.kind]

    @property
    def params(self) -> np.ndarray:
        if self.kind == "clip":
            return np.array([self.a, self.b, 0.0])
        if self.kind == "shifted_sqrt":
            return np.array([self.c, self.lower, 0.0])
        return np.array([self.c, 0.0, 0.0])

    def __call__(self, u):
        v, _ = K.wrap_numpy(self.code, self.params, u)
        return v if np.ndim(u) else float(v)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "scale":
            d["c"] = self.c
        elif self.kind == "clip":
            d.update(a=self.a, b=self.b)
        elif self.kind == "shifted_sqrt":
            d.update(c=self.c, lower=self.lower)
        return d

    @classmethod
    def from_dict(cls, d) -> "ScalarWrapper":
        if d is None:
            return cls()
        if isinstance(d, str):
            return cls(d)
        extra = set(d) - {"kind", "c", "a", "b", "lower"}
        if extra:
            raise ValueError(f"unexpected wrapper fields {sorted(extra)}")
        return cls(d.get("kind", "identity"), float(d.get("c", 0.0)), float(d.get("a", 0.0)),
                   float(d.get("b", 0.0)), float(d.get("lower", 0.0)))


IDENTITY = ScalarWrapper()

_OPERATORS = {"max": K.OP_MAX, "min": K.OP_MIN, "plus": K.OP_PLUS, "minus": K.OP_MINUS}


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Component:
    psi: FeatureMap
    phi: FeatureMap
    eta: FeatureMap | None = None
    wrapper: ScalarWrapper = IDENTITY

    def __post_init__(self):
        if self.psi.out_dim != self.phi.out_dim:
            raise ValueError(f"psi and phi dimensions differ ({self.psi.out_dim} vs {self.phi.out_dim})")
        if self.eta is not None and self.eta.out_dim != 1:
            raise ValueError("eta must be scalar valued")

    @property
    def n(self) -> int:
        return self.phi.out_dim


@dataclass(frozen=True)
class Prepared:
    """Theta-side features of a scenario set, cached for repeated x evaluations."""

    psi: tuple
    eta: np.ndarray  # N x C


@dataclass(frozen=True, eq=False)
class ConstraintChain:
    components: tuple
    operators: tuple = ()
    stage_wrappers: tuple = ()
    x_dim: int | None = None
    theta_dim: int | None = None

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a chain needs at least one component")
        C = len(comps)
        ops = tuple(self.operators)
        stages = tuple(self.stage_wrappers) or (IDENTITY,) * (C - 1)
        if len(ops) != C - 1 or len(stages) != C - 1:
            raise ValueError(f"a chain with {C} components needs {C - 1} operators and stage wrappers")
        for op in ops:
            if op not in _OPERATORS:
                raise ValueError(f"unknown operator {op!r}; expected one of {sorted(_OPERATORS)}")
        xd = max(c.phi.in_dim for c in comps)
        td = max([c.psi.in_dim for c in comps] + [c.eta.in_dim for c in comps if c.eta is not None])
        if self.x_dim is not None:
            if self.x_dim < xd:
                raise ValueError(f"phi maps read coordinate {xd - 1} beyond x dimension {self.x_dim}")
            xd = self.x_dim
        if self.theta_dim is not None:
            if self.theta_dim < td:
                raise ValueError(f"psi/eta maps read coordinate {td - 1} beyond theta dimension {self.theta_dim}")
            td = self.theta_dim
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "stage_wrappers", stages)
        object.__setattr__(self, "x_dim", int(xd))
        object.__setattr__(self, "theta_dim", int(td))
        # kernel encoding; index 0 of the operator/stage arrays is unused
        object.__setattr__(self, "_wk", np.array([c.wrapper.code for c in comps], dtype=np.int64))
        object.__setattr__(self, "_wp", np.array([c.wrapper.params for c in comps]))
        object.__setattr__(self, "_ok", np.array([0] + [_OPERATORS[o] for o in ops], dtype=np.int64))
        object.__setattr__(self, "_sk", np.array([0] + [s.code for s in stages], dtype=np.int64))
        object.__setattr__(self, "_sp", np.array([np.zeros(3)] + [s.params for s in stages]))

    @property
    def C(self) -> int:
        return len(self.components)

    # -- evaluation ---------------------------------------------------------

    def _check_x(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.x_dim:
            raise ValueError(f"x has dimension {x.size}, chain expects {self.x_dim}")
        return x

    def _check_thetas(self, thetas):
        T = np.atleast_2d(np.asarray(thetas, dtype=float))
        if T.shape[1] != self.theta_dim:
            raise ValueError(f"theta has dimension {T.shape[1]}, chain expects {self.theta_dim}")
        return T

    def prepare(self, thetas) -> Prepared:
        T = self._check_thetas(thetas)
        psi = tuple(c.psi(T) for c in self.components)
        eta = np.zeros((T.shape[0], self.C))
        for k, c in enumerate(self.components):
            if c.eta is not None:
                eta[:, k] = c.eta(T)[:, 0]
        return Prepared(psi, eta)

    def component_values(self, x, prep: Prepared) -> np.ndarray:
        x = self._check_x(x)
        F = prep.eta.copy()
        for k, c in enumerate(self.components):
            F[:, k] += prep.psi[k] @ c.phi(x)
        return F

    def combine(self, F):
        return K.combine_chain(F, self._wk, self._wp, self._ok, self._sk, self._sp)

    def values(self, x, prep: Prepared) -> np.ndarray:
        return self.combine(self.component_values(x, prep))[0]

    def values_and_grads(self, x, prep: Prepared):
        """Chain values (N,) and x-(sub)gradients (N, d) over a prepared scenario set."""
        x = self._check_x(x)
        f, sens = self.combine(self.component_values(x, prep))
        G = np.zeros((f.size, self.x_dim))
        for k, c in enumerate(self.components):
            if np.any(sens[:, k]):
                G += (sens[:, k:k + 1] * prep.psi[k]) @ c.phi.jacobian(x)
        return f, G

    def evaluate_many(self, x, thetas) -> np.ndarray:
        return self.values(x, self.prepare(thetas))

    def evaluate(self, x, theta) -> float:
        theta = np.asarray(theta, dtype=float).ravel()
        return float(self.evaluate_many(x, theta[None, :])[0])

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dimension": self.x_dim,
            "theta_dimension": self.theta_dim,
            "components": [
                {"psi": c.psi.to_dict(), "phi": c.phi.to_dict(),
                 "eta": None if c.eta is None else c.eta.to_dict(),
                 "wrapper": c.wrapper.to_dict()}
                for c in self.components
            ],
            "operators": list(self.operators),
            "stage_wrappers": [s.to_dict() for s in self.stage_wrappers],
        }


def build_chain(spec: dict) -> ConstraintChain:
    """Build and validate a chain from its JSON-style description."""
    comps = spec.get("components") or []
    if not comps:
        raise ValueError("chain description has an empty component list")
    components = []
    for k, c in enumerate(comps):
        try:
            eta = c.get("eta")
            components.append(Component(
                psi=feature_map_from_dict(c["psi"]),
                phi=feature_map_from_dict(c["phi"]),
                eta=None if eta is None else feature_map_from_dict(eta),
                wrapper=ScalarWrapper.from_dict(c.get("wrapper")),
            ))
        except KeyError as e:
            raise ValueError(f"component {k}: missing field {e.args[0]!r}") from None
        except ValueError as e:
            raise ValueError(f"component {k}: {e}") from None
    stages = [ScalarWrapper.from_dict(s) for s in spec.get("stage_wrappers", [])]
    return ConstraintChain(tuple(components), tuple(spec.get("operators", [])), tuple(stages),
                           spec.get("dimension"), spec.get("theta_dimension"))


def evaluate(chain: ConstraintChain, x, theta) -> float:
    return chain.evaluate(x, theta)


def load_problem(path) -> tuple[ConstraintChain, Domain | None]:
    """Read a chain specification file; returns the chain and its domain (if present)."""
    spec = json.loads(Path(path).read_text())
    chain = build_chain(spec)
    domain = Domain.from_dict(spec["domain"]) if spec.get("domain") else None
    if domain is not None and domain.dim != chain.x_dim:
        raise ValueError(f"domain dimension {domain.dim} differs from chain dimension {chain.x_dim}")
    return chain, domain


def problem_to_dict(chain: ConstraintChain, domain: Domain | None = None) -> dict:
    d = chain.to_dict()
    if domain is not None:
        d["domain"] = domain.to_dict()
    return d


def save_problem(path, chain: ConstraintChain, domain: Domain | None = None) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(chain, domain), indent=2))


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChainConstants:
    """Per-component constants; all tuples are indexed by component k = 0..C-1."""

    tau: tuple
    lam: tuple
    rho_bar: tuple
    phi_bar: tuple
    p: tuple
    centers: tuple = ()
    tau_flags: tuple = ()
    lam_flags: tuple = ()
    lam_maximizers: tuple = field(default=(), repr=False)

    def __post_init__(self):
        C = len(self.tau)
        for name in ("lam", "rho_bar", "phi_bar", "p"):
            if len(getattr(self, name)) != C:
                raise ValueError(f"constants field {name} must have length {C}")
        for name in ("tau", "lam", "rho_bar", "phi_bar", "p"):
            if any(not v >= 0 for v in getattr(self, name)):
                raise ValueError(f"constants field {name} must be nonnegative")
        if not self.tau_flags:
            object.__setattr__(self, "tau_flags", (EXACT,) * C)
        if not self.lam_flags:
            object.__setattr__(self, "lam_flags", (EXACT,) * C)

    @classmethod
    def from_values(cls, tau, lam, rho_bar=None, phi_bar=None, p=None, **kw) -> "ChainConstants":
        tau = tuple(float(t) for t in np.atleast_1d(tau))
        C = len(tau)
        rho_bar = (1.0,) * C if rho_bar is None else tuple(float(r) for r in rho_bar)
        return cls(tau, tuple(float(v) for v in np.atleast_1d(lam)), rho_bar,
                   (1.0,) * C if phi_bar is None else tuple(float(v) for v in phi_bar),
                   (0,) * C if p is None else tuple(int(v) for v in p), **kw)

    @property
    def C(self) -> int:
        return len(self.tau)

    @property
    def rho_prod(self) -> tuple:
        """prod_{j=k}^{C} rho_bar_j for each k (rho_bar_1 = 1)."""
        out, acc = [], 1.0
        for k in reversed(range(self.C)):
            acc *= self.rho_bar[k] if k > 0 else 1.0
            out.append(acc)
        return tuple(reversed(out))

    @property
    def lipschitz_weights(self) -> tuple:
        return tuple(r * f for r, f in zip(self.rho_prod, self.phi_bar))

    @property
    def coefficients(self) -> tuple:
        return tuple(w * t * l for w, t, l in zip(self.lipschitz_weights, self.tau, self.lam))

    @property
    def complexity_sum(self) -> float:
        return math.fsum(self.coefficients)

    @property
    def tau_certified(self) -> bool:
        return SAMPLED not in self.tau_flags

    @property
    def lam_certified(self) -> bool:
        return SAMPLED not in self.lam_flags

    @property
    def certified(self) -> bool:
        return self.tau_certified and self.lam_certified

    def to_dict(self) -> dict:
        return {
            "tau": list(self.tau), "lam": list(self.lam), "rho_bar": list(self.rho_bar),
            "phi_bar": list(self.phi_bar), "p": list(self.p),
            "centers": [_floats(c) for c in self.centers],
            "tau_flags": list(self.tau_flags), "lam_flags": list(self.lam_flags),
        }

    def snapshot_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _support_sup(fm: FeatureMap, theta_spec, rng_samples):
    """sup_theta ||fm(theta)|| for a DistributionSpec; returns (value, flag)."""
    kind = theta_spec.kind
    if rng_samples is not None:
        return float(np.linalg.norm(fm(rng_samples), axis=1).max()), SAMPLED
    if kind == "sphere":
        return fm.sphere_sup(theta_spec.dim)
    if kind == "box":
        value, flag, _ = fm.box_sup(theta_spec.lower, theta_spec.upper)
        return value, flag
    if kind == "gaussian":
        from scipy.stats import chi2

        r = theta_spec.sigma * math.sqrt(chi2.ppf(1.0 - 1e-6, theta_spec.dim))
        value, _, _ = fm.box_sup(theta_spec.mean - r, theta_spec.mean + r)
        return value, SAMPLED
    if kind == "empirical":
        return float(np.linalg.norm(fm(theta_spec.rows), axis=1).max()), EXACT
    raise ValueError(f"cannot bound feature norms over support of kind {kind!r}")


def compute_constants(chain: ConstraintChain, domain: Domain, theta_spec, centers=None,
                      sample_budget: int | None = None, seed: int = 0) -> ChainConstants:
    """Certified constants tau_k, Lambda~_k, Lipschitz factors and p_k.

    ``theta_spec`` is a DistributionSpec (analytic support bounds), or an array /
    ScenarioSet of draws (sample maxima, flagged non-certified). With
    ``sample_budget`` the tau_k are estimated from that many fresh draws instead.
    """
    if theta_spec is None:
        raise ValueError("unknown support for theta: supply a distribution or a sample")
    if domain.dim != chain.x_dim:
        raise ValueError(f"domain dimension {domain.dim} differs from chain dimension {chain.x_dim}")
    C = chain.C
    if centers is None:
        centers = [np.zeros(c.n) for c in chain.components]
    centers = tuple(np.asarray(c, float).ravel() for c in centers)
    if len(centers) != C or any(cv.size != comp.n for cv, comp in zip(centers, chain.components)):
        raise ValueError("one center of matching dimension per component is required")

    samples = None
    if not hasattr(theta_spec, "kind"):
        samples = np.atleast_2d(np.asarray(getattr(theta_spec, "thetas", theta_spec), float))
    elif sample_budget is not None:
        from .scenario_engine import sample_scenarios

        samples = sample_scenarios(theta_spec, sample_budget, seed).thetas

    taus, tflags, lams, lflags, maxers = [], [], [], [], []
    for comp, c0 in zip(chain.components, centers):
        rel = comp.phi._relevant(domain.dim)
        if rel.size and not (np.all(np.isfinite(domain.lower[rel])) and np.all(np.isfinite(domain.upper[rel]))):
            raise ValueError(f"unbounded domain: sup of ||{comp.phi.kind}(x)|| is infinite")
        lam, lflag, xm = comp.phi.box_sup(domain.lower, domain.upper, c0)
        tau, tflag = _support_sup(comp.psi, theta_spec, samples)
        if not (math.isfinite(tau) and math.isfinite(lam)):
            raise ValueError("feature-norm supremum is infinite")
        taus.append(tau)
        tflags.append(tflag)
        lams.append(lam)
        lflags.append(lflag)
        maxers.append(xm)

    is_sum = [0] + [int(op in ("plus", "minus")) for op in chain.operators]
    p = tuple(sum(is_sum[max(k, 1):]) for k in range(C))
    rho_bar = (1.0,) + tuple(s.lipschitz for s in chain.stage_wrappers)
    phi_bar = tuple(c.wrapper.lipschitz for c in chain.components)
    return ChainConstants(tuple(taus), tuple(lams), rho_bar, phi_bar, p, centers,
                          tuple(tflags), tuple(lflags), tuple(maxers))


def lambda_bar(chain: ConstraintChain, x, centers=None) -> float:
    """max{1, ||phi_k(x) - center_k||}."""
    x = chain._check_x(x)
    if centers is None:
        centers = [np.zeros(c.n) for c in chain.components]
    if len(centers) != chain.C:
        raise ValueError("one center per component is required")
    norms = [1.0]
    for comp, c0 in zip(chain.components, centers):
        c0 = np.asarray(c0, float).ravel()
        if c0.size != comp.n:
            raise ValueError("center dimension mismatch")
        norms.append(float(np.linalg.norm(comp.phi(x) - c0)))
    return max(norms)


def lambda_bar_and_grad(chain: ConstraintChain, x, centers):
    """All centered feature norms at x (with the floor 1 first) and their x-gradients."""
    vals, grads = [1.0], [np.zeros(chain.x_dim)]
    for comp, c0 in zip(chain.components, centers):
        v = comp.phi(x) - c0
        n = float(np.linalg.norm(v))
        vals.append(n)
        grads.append(v @ comp.phi.jacobian(x) / n if n > 0 else np.zeros(chain.x_dim))
    return np.array(vals), np.array(grads)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

def circle_chain(center=None, dim: int = 2) -> ConstraintChain:
    """f(x, theta) = theta . (x - center) - 1 for theta on the unit sphere."""
    center = np.zeros(dim) if center is None else np.asarray(center, float)
    phi = Affine(np.eye(dim), -center) if np.any(center) else Select(range(dim))
    return ConstraintChain((Component(Select(range(dim)), phi, Affine.constant(-1.0, dim)),))
