"""Diagnostics for representations near a block-diagonal direct sum.

Layout of a value of rho at dimension d1 + d2::

    [ rho1(x)  C21(x) ]      rho1: d1 x d1,  C21: d1 x d2
    [ C12(x)   rho2(x) ]     C12:  d2 x d1,  rho2: d2 x d2
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .linalg import op_norm
from .repmap import MatrixMap, UMap, defect, direct_sum, is_representation, sup_distance
from .stabilizer import stabilize_single
from .tolerances import DEFAULT

__all__ = [
    "BlockDecomposition",
    "DiagonalSumReport",
    "OffdiagReport",
    "block_decompose",
    "block_threshold",
    "corner_product_residuals",
    "diagonal_sum_experiment",
    "offdiag_inequality_check",
    "pinch",
]


def pinch(A: np.ndarray, d1: int) -> np.ndarray:
    """p1 A p1 + p2 A p2."""
    out = np.zeros_like(A)
    out[..., :d1, :d1] = A[..., :d1, :d1]
    out[..., d1:, d1:] = A[..., d1:, d1:]
    return out


def _sup(stack: np.ndarray) -> float:
    if stack.shape[-1] == 0 or stack.shape[-2] == 0:
        return 0.0
    return float(np.max(op_norm(stack)))


def _norms(stack: np.ndarray) -> np.ndarray:
    return np.asarray(op_norm(stack), dtype=float).reshape(stack.shape[0])


@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    rho: MatrixMap
    d1: int
    rho1: np.ndarray
    rho2: np.ndarray
    C12: np.ndarray
    C21: np.ndarray
    norms: dict = field(repr=False)
    pinching: tuple[float, float] | None = None  # (||p(rho) - g||, ||rho - g||) for a reference g

    @property
    def d2(self) -> int:
        return self.rho.dim - self.d1

    def reassemble(self) -> np.ndarray:
        top = np.concatenate([self.rho1, self.C21], axis=2)
        bottom = np.concatenate([self.C12, self.rho2], axis=2)
        return np.concatenate([top, bottom], axis=1)

    def diagonal_part(self) -> np.ndarray:
        return pinch(self.rho.values, self.d1)


def block_decompose(rho: MatrixMap, d1: int, reference: MatrixMap | None = None) -> BlockDecomposition:
    d = rho.dim
    if not 1 <= d1 < d:
        raise ValueError(f"d1 must satisfy 1 <= d1 < {d}")
    V = rho.values
    r1, c21 = V[:, :d1, :d1].copy(), V[:, :d1, d1:].copy()
    c12, r2 = V[:, d1:, :d1].copy(), V[:, d1:, d1:].copy()
    norms = {"rho1": _norms(r1), "rho2": _norms(r2), "C12": _norms(c12), "C21": _norms(c21)}
    pin = None
    if reference is not None:
        if reference.dim != d or reference.group.order != rho.group.order:
            raise ValueError("reference must match rho's group and dimension")
        g = reference.values
        pin = (_sup(pinch(V, d1) - g), _sup(V - g))
    return BlockDecomposition(rho, d1, r1, r2, c12, c21, norms, pin)


def corner_product_residuals(bd: BlockDecomposition) -> dict[str, float]:
    """Corners of rho(xy) against the block expansion of rho(x) rho(y), max over all pairs."""
    T = bd.rho.group.table
    r1, r2, c12, c21 = bd.rho1, bd.rho2, bd.C12, bd.C21
    out = {}
    blocks = {
        "TL": (r1, lambda: r1[:, None] @ r1[None] + c21[:, None] @ c12[None]),
        "TR": (c21, lambda: r1[:, None] @ c21[None] + c21[:, None] @ r2[None]),
        "BL": (c12, lambda: c12[:, None] @ r1[None] + r2[:, None] @ c12[None]),
        "BR": (r2, lambda: c12[:, None] @ c21[None] + r2[:, None] @ r2[None]),
    }
    for name, (corner, expand) in blocks.items():
        out[name] = _sup(corner[T] - expand())
    return out


@dataclass(frozen=True)
class OffdiagReport:
    precondition_ok: bool
    distance_to_sum: float  # ||rho - f1 (+) f2||
    distance_to_pinch: float  # ||rho - rho1 (+) rho2||
    norm_C12: float
    norm_C21: float
    upper_ok: bool  # 2 c eps >= 2 ||rho - rho1 (+) rho2||
    lower_ok: bool  # 2 ||rho - rho1 (+) rho2|| >= ||C12|| + ||C21||
    corner_residuals: dict
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.precondition_ok and self.upper_ok and self.lower_ok


def offdiag_inequality_check(rho: UMap, f1: MatrixMap, f2: MatrixMap, c: float, eps: float,
                             slack: float = DEFAULT.ledger_slack) -> OffdiagReport:
    ref = direct_sum(f1, f2)
    if ref.dim != rho.dim:
        raise ValueError("f1 (+) f2 and rho differ in dimension")
    bd = block_decompose(rho, f1.dim, ref)
    dist = sup_distance(rho, ref)
    to_pinch = _sup(rho.values - bd.diagonal_part())
    n12, n21 = _sup(bd.C12), _sup(bd.C21)
    msgs = []
    if dist > c * eps + slack:
        msgs.append(f"||rho - f1+f2|| = {dist:.3e} exceeds c*eps = {c * eps:.3e}")
    if not is_representation(rho, 1e-10):
        msgs.append("rho is not a representation at 1e-10")
    return OffdiagReport(
        precondition_ok=not msgs,
        distance_to_sum=dist,
        distance_to_pinch=to_pinch,
        norm_C12=n12,
        norm_C21=n21,
        upper_ok=2 * to_pinch <= 2 * c * eps + slack,
        lower_ok=n12 + n21 <= 2 * to_pinch + slack,
        corner_residuals=corner_product_residuals(bd),
        message="; ".join(msgs),
    )


def block_threshold(L: float, Lprime: float, c: float, s: float) -> float:
    """((L - c) / ((2c)^(2s) L'))^(1 / (2s(1 - 2s))), evaluated as written."""
    return ((L - c) / ((2 * c) ** (2 * s) * Lprime)) ** (1.0 / (2 * s * (1 - 2 * s)))


@dataclass
class DiagonalSumReport:
    achieved_distance: float
    factor_distances: tuple[float, float]
    input_defects: tuple[float, float]
    offdiag: OffdiagReport
    rho1_defect: float
    rho1_lower_bound: float | None  # assumed ((L - c) eps / L')^(1/s), only when distance <= c eps
    threshold: float
    assumptions: tuple[str, ...]
    decomposition: BlockDecomposition
    residuals: np.ndarray  # per-element ||rho_hat(x) - (f1 (+) f2)(x)||

    def to_csv(self) -> str:
        bd = self.decomposition
        buf = io.StringIO()
        buf.write("element,norm_rho1,norm_rho2,norm_C12,norm_C21,residual\n")
        for x in range(len(self.residuals)):
            cells = [bd.norms[k][x] for k in ("rho1", "rho2", "C12", "C21")] + [self.residuals[x]]
            buf.write(str(x) + "," + ",".join(f"{v:.17g}" for v in cells) + "\n")
        summ = [max(bd.norms[k]) for k in ("rho1", "rho2", "C12", "C21")] + [self.achieved_distance]
        buf.write("max," + ",".join(f"{v:.17g}" for v in summ) + "\n")
        return buf.getvalue()


def diagonal_sum_experiment(f1: UMap, f2: UMap, c: float, L: float, Lprime: float,
                            s_exponent: float, eps: float) -> DiagonalSumReport:
    """Stabilize f1 (+) f2 and report the block quantities of the representation found."""
    if not 0 < c < L:
        raise ValueError("need 0 < c < L")
    fsum = direct_sum(f1, f2)
    rho_hat = stabilize_single(fsum, fatal=False).final_map
    t1 = stabilize_single(f1, fatal=False).final_map
    t2 = stabilize_single(f2, fatal=False).final_map
    achieved = sup_distance(rho_hat, fsum)
    bd = block_decompose(rho_hat, f1.dim, fsum)
    rep = offdiag_inequality_check(rho_hat, f1, f2, c, eps)
    lower = ((L - c) * eps / Lprime) ** (1 / s_exponent) if achieved <= c * eps else None
    assumptions = (
        f"d(f_i, Hom) > L*eps with L = {L:g} is assumed, not certified",
        f"defects pinned by calibration: {defect(f1):.6g}, {defect(f2):.6g} against eps = {eps:g}",
    )
    return DiagonalSumReport(
        achieved_distance=achieved,
        factor_distances=(sup_distance(t1, f1), sup_distance(t2, f2)),
        input_defects=(defect(f1), defect(f2)),
        offdiag=rep,
        rho1_defect=defect(MatrixMap(rho_hat.group, bd.rho1)),
        rho1_lower_bound=lower,
        threshold=block_threshold(L, Lprime, c, s_exponent),
        assumptions=assumptions,
        decomposition=bd,
        residuals=_norms(rho_hat.values - fsum.values),
    )
