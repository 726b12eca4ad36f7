"""Maps from a finite group into d x d matrices.

:class:`MatrixMap` stores arbitrary matrix values (averaged maps are
contractions, not unitaries); :class:`UMap` additionally enforces
``f(identity) = I`` exactly and unitarity of every value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import linalg
from .groups import FiniteGroup, GroupError, ProductStructure, SplitExtension, find_generator, parse_group
from .linalg import adjoint, op_norm
from .tolerances import DEFAULT

__all__ = [
    "CalibrationError",
    "DefectBreakdown",
    "MatrixMap",
    "PartitionError",
    "UMap",
    "calibrate_perturbation",
    "defect",
    "defect_breakdown",
    "direct_sum",
    "dump_umap",
    "exact_cyclic_representation",
    "is_representation",
    "load_umap",
    "perturb_representation",
    "random_representation",
    "sup_distance",
]

_CHUNK = 1 << 16  # matrices per batched SVD


class CalibrationError(RuntimeError):
    def __init__(self, target: float, achieved: float, steps: int):
        self.target = target
        self.achieved = achieved
        super().__init__(f"perturbation calibration failed after {steps} steps: "
                         f"target defect {target:.6g}, achieved {achieved:.6g}")


class PartitionError(ArithmeticError):
    """The defect partition inequality failed, which indicates a bug."""


@dataclass(frozen=True, eq=False)
class MatrixMap:
    group: FiniteGroup
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex, copy=True)
        if v.ndim != 3 or v.shape[0] != self.group.order or v.shape[1] != v.shape[2]:
            raise ValueError(f"values must have shape ({self.group.order}, d, d), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("map values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, x) -> np.ndarray:
        return self.values[x]

    def restrict(self, embedding: np.ndarray, subgroup: FiniteGroup) -> "MatrixMap":
        return type(self)(subgroup, self.values[np.asarray(embedding)])

    def adjoint_inverse(self) -> "MatrixMap":
        """The map x -> f(x^-1)*."""
        return type(self)(self.group, adjoint(self.values[self.group.inverse]))


class UMap(MatrixMap):
    """Unitary-valued map with value exactly I at the identity."""

    def __init__(self, group: FiniteGroup, values: np.ndarray, unitary_tol: float = DEFAULT.unitary_tol):
        super().__init__(group, values)
        eye = np.eye(self.dim)
        if not np.array_equal(self.values[0], eye):
            raise ValueError("f(identity) must equal I exactly")
        worst = float(np.max(linalg.unitarity_defect(self.values)))
        if worst > unitary_tol:
            raise ValueError(f"map values are not unitary (defect {worst:.3e} > {unitary_tol:.1e})")
        object.__setattr__(self, "unitary_tol", unitary_tol)

    @classmethod
    def snapped(cls, group: FiniteGroup, values: np.ndarray, tol: float = DEFAULT.unitary_tol) -> "UMap":
        """Build a UMap, replacing a value at the identity that is I up to ``tol``."""
        v = np.array(values, dtype=complex, copy=True)
        eye = np.eye(v.shape[1])
        err = op_norm(v[0] - eye)
        if err > tol:
            raise ValueError(f"value at identity is {err:.3e} away from I")
        v[0] = eye
        return cls(group, v)


def _pair_norms(values: np.ndarray, table: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """||f(xy) - f(x) f(y)|| over x in ``rows`` (default all) and all y."""
    n = table.shape[0]
    rows = np.arange(n) if rows is None else np.asarray(rows)
    step = max(1, _CHUNK // max(1, table.shape[1]))
    out = []
    for i in range(0, len(rows), step):
        xs = rows[i:i + step]
        D = values[table[xs]] - values[xs][:, None] @ values[None, :]
        out.append(op_norm(D))
    return np.concatenate(out, axis=0)


def defect(f: MatrixMap) -> float:
    """sup over all pairs of ||f(xy) - f(x) f(y)||, by exhaustive scan."""
    return float(_pair_norms(f.values, f.group.table).max())


def sup_distance(f: MatrixMap, g: MatrixMap) -> float:
    if f.group is not g.group and f.group.order != g.group.order:
        raise ValueError("maps live on different groups")
    if f.dim != g.dim:
        raise ValueError("maps have different dimensions")
    return float(np.max(op_norm(f.values - g.values)))


def is_representation(f: MatrixMap, tol: float = DEFAULT.rep_tol) -> bool:
    return defect(f) <= tol and float(np.max(linalg.unitarity_defect(f.values))) <= tol


def _restricted_defect(values: np.ndarray, embed: np.ndarray, subtable: np.ndarray) -> float:
    return float(_pair_norms(values[embed], subtable).max())


@dataclass(frozen=True)
class DefectBreakdown:
    delta: float
    delta_G: float
    delta_H: float
    delta_s: float
    delta_c: float
    structure_kind: str

    @property
    def partition_bound(self) -> float:
        return self.delta_G + self.delta_H + self.delta_c + 3 * self.delta_s


def defect_breakdown(f: MatrixMap, structure: ProductStructure | SplitExtension,
                     slack: float = DEFAULT.ledger_slack) -> DefectBreakdown:
    """Total defect and its localized pieces for a product or split extension.

    Product: delta_s = sup ||f(a,b) - f(a,1) f(1,b)|| and delta_c is the
    commutator sup ||f(x,1) f(1,y) - f(1,y) f(x,1)||.  Split extension:
    delta_s = sup ||f(x) - f(g(x)) f(xbar)|| and
    delta_c = sup ||f(xbar) f(g(x)^xbar) - f(g(x)) f(xbar)||.
    """
    V = f.values
    if f.group is not structure.base and f.group.order != structure.base.order:
        raise GroupError("map group does not match the structure's base group")
    if isinstance(structure, ProductStructure):
        eL, eR = structure.embed_left, structure.embed_right
        pL, pR = structure.project_left, structure.project_right
        dG = _restricted_defect(V, eL, structure.left.table)
        dH = _restricted_defect(V, eR, structure.right.table)
        Xa, Yb = V[eL[pL]], V[eR[pR]]
        ds = float(np.max(op_norm(V - Xa @ Yb)))
        Xg, Yh = V[eL], V[eR]
        comm = Xg[:, None] @ Yh[None, :] - Yh[None, :] @ Xg[:, None]
        dc = float(np.max(op_norm(comm)))
        kind = "product"
    elif isinstance(structure, SplitExtension):
        s = structure
        dG = _restricted_defect(V, s.iota, s.G.table)
        dH = _restricted_defect(V, s.section, s.H.table)
        Fg = V[s.iota[s.gpart_index]]
        Fbar = V[s.section[s.quotient]]
        ds = float(np.max(op_norm(V - Fg @ Fbar)))
        Fconj = V[s.iota[s.right_conj[s.quotient, s.gpart_index]]]
        dc = float(np.max(op_norm(Fbar @ Fconj - Fg @ Fbar)))
        kind = "split_extension"
    else:
        raise TypeError(f"unsupported structure {type(structure).__name__}")
    out = DefectBreakdown(defect(f), dG, dH, ds, dc, kind)
    if out.delta > out.partition_bound + slack:
        raise PartitionError(f"delta={out.delta!r} exceeds partition bound {out.partition_bound!r}")
    return out


def _roots(n: int, k: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.exp(2j * np.pi * ((np.outer(x, k)) % n) / n)


def exact_cyclic_representation(n: int, d: int, character_choices) -> UMap:
    ks = np.asarray(character_choices, dtype=np.int64)
    if ks.shape != (d,):
        raise ValueError("need one character choice per dimension")
    G = parse_group(f"cyclic:{n}")
    diag = _roots(n, ks, np.arange(n))
    values = np.zeros((n, d, d), dtype=complex)
    idx = np.arange(d)
    values[:, idx, idx] = diag
    values[0] = np.eye(d)
    return UMap(G, values)


@lru_cache(maxsize=64)
def _irreducibles(group: FiniteGroup) -> tuple[np.ndarray, ...]:
    """Irreducible constituents of the left regular representation.

    Cyclic groups use exact characters.  Otherwise a fixed pseudo-random
    element of the commutant of the regular representation is diagonalized;
    its eigenspaces are irreducible invariant subspaces.
    """
    n = group.order
    gen = find_generator(group)
    if gen is not None:
        exps = np.zeros(n, dtype=np.int64)
        x = 0
        for m in range(n):
            exps[x] = m
            x = int(group.table[x, gen])
        return tuple(_roots(n, np.array([k]), exps).reshape(n, 1, 1) for k in range(n))
    R = np.zeros((n, n, n))
    for g in range(n):
        R[g, group.table[g], np.arange(n)] = 1.0
    rng = np.random.default_rng(20250126)
    A = rng.standard_normal((n, n))
    A = A + A.T
    M = np.einsum("gij,jk,glk->il", R, A, R) / n
    w, V = np.linalg.eigh(M)
    scale = max(1.0, float(np.abs(w).max()))
    cuts = np.flatnonzero(np.diff(w) > 1e-8 * scale) + 1
    reps = []
    for block in np.split(np.arange(n), cuts):
        B = V[:, block]
        rho = np.einsum("ia,gij,jb->gab", B.conj(), R, B)
        rho = linalg.polar_unitary_factor(rho)
        rho[0] = np.eye(len(block))
        reps.append(rho)
    return tuple(reps)


def random_representation(group: FiniteGroup, d: int, rng: np.random.Generator, *,
                          conjugate: bool = True) -> UMap:
    """Random exact d-dimensional representation.

    A direct sum of irreducibles drawn uniformly among those that still fit,
    optionally conjugated by a Haar-random unitary.
    """
    irreps = _irreducibles(group)
    blocks = []
    remaining = d
    while remaining:
        fits = [r for r in irreps if r.shape[1] <= remaining]
        r = fits[int(rng.integers(len(fits)))]
        blocks.append(r)
        remaining -= r.shape[1]
    values = np.zeros((group.order, d, d), dtype=complex)
    at = 0
    for r in blocks:
        k = r.shape[1]
        values[:, at:at + k, at:at + k] = r
        at += k
    if conjugate and d > 1:
        U = linalg.random_unitary(d, rng)
        values = adjoint(U)[None] @ values @ U[None]
    values[0] = np.eye(d)
    return UMap(group, values)


def direct_sum(f1: MatrixMap, f2: MatrixMap) -> MatrixMap:
    if f1.group is not f2.group and f1.group.order != f2.group.order:
        raise ValueError("direct sum needs maps on one group")
    d1, d2 = f1.dim, f2.dim
    v = np.zeros((f1.group.order, d1 + d2, d1 + d2), dtype=complex)
    v[:, :d1, :d1] = f1.values
    v[:, d1:, d1:] = f2.values
    cls = UMap if isinstance(f1, UMap) and isinstance(f2, UMap) else MatrixMap
    return cls(f1.group, v)


class _Perturber:
    """f_t(x) = exp(i t H_x) rho(x) with fixed random unit-norm Hermitian H_x."""

    def __init__(self, rho: UMap, rng: np.random.Generator):
        n, d = rho.group.order, rho.dim
        self.rho = rho
        self.evals = np.zeros((n, d))
        self.evecs = np.tile(np.eye(d, dtype=complex), (n, 1, 1))
        for x in range(1, n):
            self.evals[x], self.evecs[x] = np.linalg.eigh(linalg.random_hermitian(d, rng))

    def values(self, t: float) -> np.ndarray:
        W = self.evecs
        E = (W * np.exp(1j * t * self.evals)[:, None, :]) @ adjoint(W)
        out = E @ self.rho.values
        out[0] = np.eye(self.rho.dim)
        return out

    def umap(self, t: float) -> UMap:
        return UMap(self.rho.group, self.values(t))


def calibrate_perturbation(rho: UMap, target_defect: float, seed, *, max_steps: int = 60,
                           rel_tol: float = 0.01) -> tuple[UMap, float]:
    """Perturb ``rho`` so its defect is within ``rel_tol`` of the target.

    Returns the perturbed map and the calibrated scale t.  The scale is found
    by bracketing (doubling) followed by bisection.
    """
    if not 0 < target_defect <= 2:
        raise ValueError("target defect must lie in (0, 2]")
    p = _Perturber(rho, np.random.default_rng(seed))
    tol = rel_tol * target_defect

    def measure(t):
        return defect(MatrixMap(rho.group, p.values(t)))

    lo, hi = 0.0, target_defect
    d_hi = measure(hi)
    steps = 1
    while d_hi < target_defect - tol:
        lo, hi = hi, 2 * hi
        d_hi = measure(hi)
        steps += 1
        if steps >= max_steps or hi > 4 * math.pi:
            raise CalibrationError(target_defect, d_hi, steps)
    t, achieved = hi, d_hi
    while abs(achieved - target_defect) > tol:
        if steps >= max_steps:
            raise CalibrationError(target_defect, achieved, steps)
        t = 0.5 * (lo + hi)
        achieved = measure(t)
        steps += 1
        if achieved < target_defect:
            lo = t
        else:
            hi = t
    return p.umap(t), t


def perturb_representation(rho: UMap, target_defect: float, seed) -> UMap:
    return calibrate_perturbation(rho, target_defect, seed)[0]


def dump_umap(f: MatrixMap) -> str:
    """Serialize as text: header, then one row-major block per element."""
    lines = [
        "ulamstab-umap 1",
        f"group {f.group.name}",
        f"order {f.group.order}",
        f"dim {f.dim}",
    ]
    for x in range(f.group.order):
        lines.append(f"element {x}")
        for row in f.values[x]:
            lines.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
    return "\n".join(lines) + "\n"


def load_umap(text: str, group: FiniteGroup | None = None) -> UMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split() != ["ulamstab-umap", "1"]:
        raise ValueError("not a ulamstab-umap v1 document")
    name = lines[1].partition(" ")[2]
    order = int(lines[2].split()[1])
    d = int(lines[3].split()[1])
    if group is None:
        g = parse_group(name)
        group = g if isinstance(g, FiniteGroup) else g.base
    if group.order != order:
        raise ValueError(f"document has {order} elements, group has {group.order}")
    values = np.empty((order, d, d), dtype=complex)
    pos = 4
    for x in range(order):
        if lines[pos] != f"element {x}":
            raise ValueError(f"expected 'element {x}', got {lines[pos]!r}")
        for i in range(d):
            cells = lines[pos + 1 + i].split()
            for j, cell in enumerate(cells):
                re, im = cell.split(",")
                values[x, i, j] = complex(float(re), float(im))
        pos += d + 1
    return UMap(group, values)
