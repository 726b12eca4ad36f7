"""Averaging transforms, polar renormalization and the stabilization loops.

Each loop step builds a composite from factor representations, averages it
over the amenable factor, renormalizes to unitaries and records every
inequality the convergence argument relies on in a ledger.  A failed ledger
entry is fatal unless ``fatal=False``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import linalg
from .groups import FiniteGroup, ProductStructure, SplitExtension, find_generator
from .linalg import FiniteMean, InvertibilityError, adjoint, op_norm
from .repmap import MatrixMap, UMap, defect, defect_breakdown, is_representation, sup_distance
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "GuardViolation",
    "HolderOracle",
    "IterationRecord",
    "KazhdanOracle",
    "LedgerEntry",
    "LedgerViolation",
    "StabilizerTrace",
    "composite_from_factors",
    "convolved_mean",
    "gram_deviation",
    "nearest_character_projection",
    "product_average",
    "product_stabilize",
    "renormalize",
    "semidirect_average",
    "semidirect_gram_deviation",
    "semidirect_stabilize",
    "single_group_average",
    "stabilize_single",
]

ORACLE_TOL = 1e-12


class LedgerViolation(AssertionError):
    def __init__(self, entry: "LedgerEntry", n: int):
        self.entry = entry
        self.n = n
        super().__init__(f"ledger inequality {entry.id!r} failed at iteration {n}: "
                         f"{entry.lhs!r} > {entry.rhs!r}")


class GuardViolation(InvertibilityError):
    """Renormalization met an averaged value too close to singular."""

    def __init__(self, element: int, sigma_min: float, margin: float):
        self.element = element
        InvertibilityError.__init__(self, element, sigma_min, margin)
        self.args = (f"element {element}: smallest singular value {sigma_min:.3e} below guard "
                     f"{margin:.3e}; input defect is too large for renormalization",)


@dataclass(frozen=True)
class LedgerEntry:
    id: str
    lhs: float
    rhs: float
    verdict: str  # "pass" | "fail" | "na"


@dataclass
class IterationRecord:
    n: int
    defect: float
    step_distance: float
    cumulative_distance: float
    ledger: list[LedgerEntry]
    oracle_distance_G: float = float("nan")
    oracle_distance_H: float = float("nan")


@dataclass
class StabilizerTrace:
    iterations: list[IterationRecord]
    converged: bool
    final_map: UMap
    final_defect: float
    initial_defect: float
    final_distance: float
    c: float
    s_exponent: float
    in_basin: bool
    ledger_ids: tuple[str, ...] = field(default=())

    @property
    def cumulative_distance(self) -> float:
        return self.iterations[-1].cumulative_distance if self.iterations else 0.0

    @property
    def defects(self) -> list[float]:
        return [r.defect for r in self.iterations] + [self.final_defect]

    @property
    def step_distances(self) -> list[float]:
        return [r.step_distance for r in self.iterations]

    def failures(self) -> list[tuple[int, LedgerEntry]]:
        return [(r.n, e) for r in self.iterations for e in r.ledger if e.verdict == "fail"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        ids = list(self.ledger_ids)
        buf.write(",".join(["n", "d_n", "i_n", "cumulative", *ids]) + "\n")
        for r in self.iterations:
            verdicts = {e.id: e.verdict for e in r.ledger}
            cells = [str(r.n), _fmt(r.defect), _fmt(r.step_distance), _fmt(r.cumulative_distance)]
            cells += [verdicts.get(i, "na") for i in ids]
            buf.write(",".join(cells) + "\n")
        n = len(self.iterations)
        cells = [str(n), _fmt(self.final_defect), "", _fmt(self.cumulative_distance)]
        buf.write(",".join(cells + ["na"] * len(ids)) + "\n")
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class _Ledger:
    def __init__(self, n: int, slack: float, fatal: bool):
        self.n, self.slack, self.fatal = n, slack, fatal
        self.entries: list[LedgerEntry] = []

    def check(self, id: str, lhs: float, rhs: float, applicable: bool = True) -> None:
        if not applicable:
            verdict = "na"
        else:
            verdict = "pass" if lhs <= rhs + self.slack else "fail"
        entry = LedgerEntry(id, float(lhs), float(rhs), verdict)
        self.entries.append(entry)
        if verdict == "fail" and self.fatal:
            raise LedgerViolation(entry, self.n)


# ---------------------------------------------------------------------------
# averaging transforms

def _left_average(V: np.ndarray, table: np.ndarray, embed: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_g w_g f(g)* f(g a) over embedded g, for every element a."""
    L = V[embed]
    M = V[table[embed]]
    return np.einsum("g,gji,gajk->aik", weights, L.conj(), M)


def _gram_max(Z: np.ndarray, weights: np.ndarray, mean: np.ndarray) -> float:
    """max over (a, b) of ||sum_t w_t Z[a,t]* Z[b,t] - mean[a]* mean[b]||."""
    n = Z.shape[0]
    Zc = np.conj(Z)
    mc = adjoint(mean)
    step = max(1, 4096 // max(1, n))
    worst = 0.0
    for i in range(0, n, step):
        E = np.einsum("t,atji,btjk->abik", weights, Zc[i:i + step], Z)
        P = mc[i:i + step, None] @ mean[None, :]
        worst = max(worst, float(np.max(op_norm(E - P))))
    return worst


def single_group_average(f: MatrixMap, mean: FiniteMean | None = None) -> MatrixMap:
    """f'(x) = mean_g f(g)* f(g x)."""
    mean = mean or FiniteMean.uniform(f.group.order)
    vals = _left_average(f.values, f.group.table, mean.points, mean.weights)
    return MatrixMap(f.group, vals)


def gram_deviation(f: MatrixMap, fprime: MatrixMap, embed: np.ndarray | None = None,
                   mean: FiniteMean | None = None) -> float:
    """max_(a,b) || mean_g f(g a)* f(g b) - f'(a)* f'(b) || over embedded g."""
    n = f.group.order
    embed = np.arange(n) if embed is None else np.asarray(embed)
    weights = mean.weights if mean is not None else np.full(len(embed), 1.0 / len(embed))
    Z = np.swapaxes(f.values[f.group.table[embed]], 0, 1)  # (a, g, d, d)
    return _gram_max(Z, weights, fprime.values)


def product_average(f: MatrixMap, structure: ProductStructure, mean: FiniteMean | None = None) -> MatrixMap:
    """f'(x, y) = mean_g f(g, 1)* f(g x, y)."""
    nG = structure.left_order
    weights = mean.weights if mean is not None else np.full(nG, 1.0 / nG)
    vals = _left_average(f.values, structure.base.table, structure.embed_left, weights)
    return MatrixMap(structure.base, vals)


def convolved_mean(mu_G: FiniteMean, nu: FiniteMean, automorphisms: np.ndarray) -> FiniteMean:
    """Mean on G with weight sum_alpha nu(alpha) mu(alpha(t)) at t."""
    automorphisms = np.asarray(automorphisms)
    nG = automorphisms.shape[1]
    full = np.zeros(nG)
    full[mu_G.points] += mu_G.weights
    w = np.zeros(nG)
    for alpha, weight in zip(nu.points, nu.weights):
        w += weight * full[automorphisms[alpha]]
    return FiniteMean(np.arange(nG), w / w.sum())


def action_image(spec: SplitExtension) -> np.ndarray:
    return np.unique(spec.action, axis=0)


def default_split_mean(spec: SplitExtension) -> FiniteMean:
    image = action_image(spec)
    return convolved_mean(FiniteMean.uniform(spec.G.order), FiniteMean.uniform(len(image)), image)


def _split_terms(f: MatrixMap, spec: SplitExtension) -> np.ndarray:
    """Z[x, t] = f(g(x) t) f(xbar) f(t^xbar)*, shape (|Q|, |G|, d, d)."""
    V = f.values
    gp, h = spec.gpart_index, spec.quotient
    A = V[spec.iota[spec.G.table[gp]]]
    B = V[spec.section[h]]
    C = V[spec.iota[spec.right_conj[h]]]
    return A @ B[:, None] @ adjoint(C)


def semidirect_average(f: MatrixMap, spec: SplitExtension, mean: FiniteMean | None = None) -> MatrixMap:
    """fhat(x) = mean_t f(g(x) t) f(xbar) f(t^xbar)* under the convolved mean."""
    mean = mean or default_split_mean(spec)
    Z = _split_terms(f, spec)
    w = np.zeros(spec.G.order)
    w[mean.points] = mean.weights
    return MatrixMap(spec.Q, np.einsum("t,xtij->xij", w, Z))


def semidirect_gram_deviation(f: MatrixMap, fhat: MatrixMap, spec: SplitExtension,
                              mean: FiniteMean | None = None) -> float:
    mean = mean or default_split_mean(spec)
    w = np.zeros(spec.G.order)
    w[mean.points] = mean.weights
    return _gram_max(_split_terms(f, spec), w, fhat.values)


def renormalize(fprime: MatrixMap, guard: float = DEFAULT.invertibility_margin,
                tolerances: Tolerances = DEFAULT) -> UMap:
    """Replace every value by its unitary polar factor A |A|^-1."""
    V = fprime.values
    s = np.linalg.svd(V, compute_uv=False)[:, -1]
    bad = np.flatnonzero(s < guard)
    if bad.size:
        x = int(bad[0])
        raise GuardViolation(x, float(s[x]), guard)
    W = linalg.polar_unitary_factor(V, guard)
    return UMap.snapped(fprime.group, W, tol=max(tolerances.unitary_tol, 1e-8))


def _guard_for(bound: float, tolerances: Tolerances) -> float:
    # sigma_min^2 >= 1 - bound, and sigma_min >= sigma_min^2 for contractions
    g = 1.0 - bound - tolerances.renorm_guard
    return g if g > tolerances.invertibility_margin else tolerances.invertibility_margin


# ---------------------------------------------------------------------------
# factor oracles

class FactorOracle(Protocol):
    def __call__(self, f: UMap, n: int) -> UMap: ...


def nearest_character_projection(f: UMap, offdiag_tol: float = 1e-12) -> UMap | None:
    """Exact nearest diagonal representation of a diagonal map on a cyclic group.

    Each diagonal coordinate is matched to the character minimizing the sup
    distance (exhaustive over all characters).  Returns None when the group
    is not cyclic or the values are not diagonal.
    """
    G = f.group
    gen = find_generator(G)
    if gen is None:
        return None
    d = f.dim
    off = f.values - f.values * np.eye(d)
    if d > 1 and float(np.max(np.abs(off))) > offdiag_tol:
        return None
    n = G.order
    exps = np.zeros(n, dtype=np.int64)
    x = 0
    for m in range(n):
        exps[x] = m
        x = int(G.table[x, gen])
    chars = np.exp(2j * np.pi * (np.outer(np.arange(n), exps) % n) / n)  # (k, x)
    diag = np.diagonal(f.values, axis1=1, axis2=2)  # (x, j)
    err = np.max(np.abs(chars[:, :, None] - diag[None]), axis=1)  # (k, j)
    ks = np.argmin(err, axis=0)
    vals = np.zeros_like(f.values)
    idx = np.arange(d)
    vals[:, idx, idx] = chars[ks].T
    vals[0] = np.eye(d)
    return UMap(G, vals)


class KazhdanOracle:
    """Exact representation from iterated averaging and renormalization,
    or from the exact character solve when the map is diagonal on a cyclic group."""

    def __init__(self, tol: float = ORACLE_TOL, max_iter: int = 60, use_characters: bool = True):
        self.tol, self.max_iter, self.use_characters = tol, max_iter, use_characters

    def __call__(self, f: UMap, n: int = 0) -> UMap:
        if self.use_characters:
            exact = nearest_character_projection(f)
            if exact is not None:
                return exact
        trace = stabilize_single(f, tol=self.tol, max_iter=self.max_iter, fatal=False)
        return trace.final_map


class HolderOracle:
    """Synthetic oracle at distance ``c * defect(f)**s`` from its input.

    Takes the exact Kazhdan representation and conjugates it by a random
    unitary path exp(i tau K) until the distance reaches the target (found
    by bisection; never exceeding the target).
    """

    def __init__(self, c: float, s_exponent: float, seed: int, base: FactorOracle | None = None):
        self.c, self.s, self.seed = c, s_exponent, seed
        self.base = base or KazhdanOracle(use_characters=False)

    def __call__(self, f: UMap, n: int = 0) -> UMap:
        exact = self.base(f, n)
        d = defect(f)
        target = self.c * d ** self.s
        if sup_distance(exact, f) >= target or f.dim == 1:
            return exact
        rng = np.random.default_rng([self.seed, n, f.group.order, f.dim])
        w, P = np.linalg.eigh(linalg.random_hermitian(f.dim, rng))

        def moved(tau):
            U = (P * np.exp(1j * tau * w)) @ adjoint(P)
            vals = adjoint(U)[None] @ exact.values @ U[None]
            vals[0] = np.eye(f.dim)
            return vals

        def dist(tau):
            return float(np.max(op_norm(moved(tau) - f.values)))

        lo, hi = 0.0, target
        while dist(hi) < target:
            lo, hi = hi, 2 * hi
            if hi > np.pi:
                return UMap.snapped(f.group, moved(lo))
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if dist(mid) < target:
                lo = mid
            else:
                hi = mid
            if dist(lo) >= 0.99 * target:
                break
        return UMap.snapped(f.group, linalg.polar_unitary_factor(moved(lo)))


# ---------------------------------------------------------------------------
# loops

SINGLE_LEDGER = ("kazhdan_distance", "gram", "one_step_defect", "renorm_distance", "renorm_defect")

_COMMON = ("composite_distance", "composite_defect", "sandwich", "contraction", "one_step_defect", "renorm_distance", "renorm_defect",
           "localized_zero", "defect_recurrence", "step_distance_holder", "step_distance",
           "initial_defect", "initial_distance", "geometric_total")
PRODUCT_LEDGER = ("gram", "h_transfer") + _COMMON
SPLIT_LEDGER = ("theint", "inversion") + _COMMON


def stabilize_single(f: UMap, *, tol: float = 1e-10, max_iter: int = 50, fatal: bool = True,
                     tolerances: Tolerances = DEFAULT, check_gram: bool = True,
                     hook: Callable[[int, UMap], UMap] | None = None) -> StabilizerTrace:
    """Iterate averaging over the whole group plus renormalization."""
    slack = tolerances.ledger_slack
    cur, d = f, defect(f)
    records: list[IterationRecord] = []
    total = 0.0
    n = 0
    while d > tol and n < max_iter:
        led = _Ledger(n, slack, fatal)
        fp = single_group_average(cur)
        led.check("kazhdan_distance", sup_distance(fp, cur), d)
        if check_gram:
            led.check("gram", gram_deviation(cur, fp), 2 * d * d)
        else:
            led.check("gram", 0.0, 0.0, applicable=False)
        led.check("one_step_defect", defect(fp), 2 * d * d)
        nxt = renormalize(fp, _guard_for(2 * d * d, tolerances), tolerances)
        if hook is not None:
            nxt = hook(n, nxt)
        led.check("renorm_distance", sup_distance(nxt, fp), 2 * d * d)
        d_next = defect(nxt)
        led.check("renorm_defect", d_next, 8 * d * d)
        step = sup_distance(cur, nxt)
        total += step
        records.append(IterationRecord(n, d, step, total, led.entries))
        n += 1
        if d_next >= d:
            cur, d = nxt, d_next
            break
        cur, d = nxt, d_next
    return StabilizerTrace(
        iterations=records,
        converged=d <= tol,
        final_map=cur,
        final_defect=d,
        initial_defect=records[0].defect if records else d,
        final_distance=sup_distance(cur, f),
        c=2.0,
        s_exponent=1.0,
        in_basin=(records[0].defect if records else d) < 1 / 8,
        ledger_ids=SINGLE_LEDGER,
    )


def composite_from_factors(X: UMap, Y0: UMap, structure: ProductStructure | SplitExtension) -> UMap:
    """Product: (x, y) -> Y0(y) X(x).  Split extension: x -> X(g(x)) Y0(q(x))."""
    if isinstance(structure, ProductStructure):
        vals = Y0.values[structure.project_right] @ X.values[structure.project_left]
        group = structure.base
    else:
        vals = X.values[structure.gpart_index] @ Y0.values[structure.quotient]
        group = structure.Q
    vals = np.array(vals)
    vals[0] = np.eye(X.dim)
    return UMap(group, vals)


def _restrictions(f: UMap, structure):
    if isinstance(structure, ProductStructure):
        return (f.restrict(structure.embed_left, structure.left),
                f.restrict(structure.embed_right, structure.right))
    return f.restrict(structure.iota, structure.G), f.restrict(structure.section, structure.H)


def _stabilize_structured(f: UMap, structure, c: float, s_exponent: float, max_iter: int,
                          tol: float, oracle_G, oracle_H, reuse_factor_rep: bool, fatal: bool,
                          hook, tolerances: Tolerances) -> StabilizerTrace:
    if c < 1:
        raise ValueError("c must be at least 1")
    if not 0.5 < s_exponent <= 1:
        raise ValueError("s_exponent must lie in (1/2, 1]")
    split = isinstance(structure, SplitExtension)
    if split:
        mean = default_split_mean(structure)
    oracle_G = oracle_G or KazhdanOracle()
    oracle_H = oracle_H or KazhdanOracle()
    slack = tolerances.ledger_slack
    s = s_exponent
    linear = s == 1.0

    d0 = defect(f)
    in_basin = 1024 * c * d0 < 1
    geom = 768 * c * d0 / (1 - 1024 * c * d0) if in_basin else float("inf")
    cur, d = f, d0
    total = 0.0
    records: list[IterationRecord] = []
    n = 0
    while d > tol and n < max_iter:
        led = _Ledger(n, slack, fatal)
        fG, fH = _restrictions(cur, structure)
        X = fG if reuse_factor_rep and is_representation(fG, tolerances.rep_tol) else oracle_G(fG, n)
        Y = fH if reuse_factor_rep and is_representation(fH, tolerances.rep_tol) else oracle_H(fH, n)
        comp = composite_from_factors(X, Y, structure)
        dc = defect(comp)
        oG, oH = sup_distance(X, fG), sup_distance(Y, fH)
        comp_dist = sup_distance(comp, cur)
        led.check("composite_distance", comp_dist, d + oG + oH)
        led.check("composite_defect", dc, d + 3 * comp_dist)
        parts = defect_breakdown(comp, structure, slack)
        if split:
            fp = semidirect_average(comp, structure, mean)
            led.check("theint", semidirect_gram_deviation(comp, fp, structure, mean), 2 * dc * dc)
            inv = np.max(op_norm(adjoint(fp.values) - fp.values[structure.Q.inverse]))
            led.check("inversion", inv, 0.0)
        else:
            fp = product_average(comp, structure)
            led.check("gram", gram_deviation(comp, fp, structure.embed_left), 2 * dc * dc)
            parts_p = defect_breakdown(fp, structure, slack)
            led.check("h_transfer", parts_p.delta_H, 3 * parts.delta_s + parts.delta_H)
        sv = np.linalg.svd(fp.values, compute_uv=False)
        led.check("sandwich", 1 - 2 * dc * dc - parts.delta_s, float(np.min(sv[:, -1])) ** 2)
        led.check("contraction", float(np.max(sv[:, 0])), 1.0)
        led.check("one_step_defect", defect(fp), 2 * dc * dc)
        loc = defect_breakdown(fp, structure, slack)
        led.check("localized_zero", loc.delta_G + loc.delta_s + loc.delta_c, 0.0)

        nxt = renormalize(fp, _guard_for(2 * dc * dc + parts.delta_s, tolerances), tolerances)
        if hook is not None:
            nxt = hook(n, nxt)
        led.check("renorm_distance", sup_distance(nxt, fp), 2 * dc * dc + parts.delta_s)
        d_next = defect(nxt)
        led.check("renorm_defect", d_next, 8 * dc * dc)
        step = sup_distance(cur, nxt)
        total += step
        ds = d ** s
        led.check("defect_recurrence", d_next, 8 * (4 * c * ds) ** 2)
        led.check("step_distance_holder", step, 5 * c * ds + (4 * c * ds) ** 2)
        led.check("step_distance", step, 5 * c * d + d_next / 8, applicable=linear)
        first = n == 0 and linear
        led.check("initial_defect", d_next, 8 * (10 + 3 * c) ** 2 * d * d, applicable=first)
        led.check("initial_distance", step, (13 + 4 * c) * d + 2 * (10 + 3 * c) ** 2 * d * d,
                  applicable=first)
        led.check("geometric_total", total, geom, applicable=in_basin and linear)
        records.append(IterationRecord(n, d, step, total, led.entries,
                                       oracle_distance_G=oG, oracle_distance_H=oH))
        cur, d = nxt, d_next
        n += 1
    return StabilizerTrace(
        iterations=records,
        converged=d <= tol,
        final_map=cur,
        final_defect=d,
        initial_defect=d0,
        final_distance=sup_distance(cur, f),
        c=c,
        s_exponent=s,
        in_basin=in_basin,
        ledger_ids=SPLIT_LEDGER if split else PRODUCT_LEDGER,
    )


def product_stabilize(f: UMap, structure: ProductStructure, c: float = 2.0, s_exponent: float = 1.0,
                      max_iter: int = 30, tol: float = 1e-10, *, oracle_G: FactorOracle | None = None,
                      oracle_H: FactorOracle | None = None, reuse_factor_rep: bool = True,
                      fatal: bool = True, hook: Callable[[int, UMap], UMap] | None = None,
                      tolerances: Tolerances = DEFAULT) -> StabilizerTrace:
    """Stabilize a near-representation of G x H."""
    if not isinstance(structure, ProductStructure):
        raise TypeError("product_stabilize needs a ProductStructure")
    return _stabilize_structured(f, structure, c, s_exponent, max_iter, tol, oracle_G, oracle_H,
                                 reuse_factor_rep, fatal, hook, tolerances)


def semidirect_stabilize(f: UMap, spec: SplitExtension, c: float = 2.0, s_exponent: float = 1.0,
                         max_iter: int = 30, tol: float = 1e-10, *, oracle_G: FactorOracle | None = None,
                         oracle_H: FactorOracle | None = None, reuse_factor_rep: bool = True,
                         fatal: bool = True, hook: Callable[[int, UMap], UMap] | None = None,
                         tolerances: Tolerances = DEFAULT) -> StabilizerTrace:
    """Stabilize a near-representation of a split extension G x|_a H."""
    if not isinstance(spec, SplitExtension):
        raise TypeError("semidirect_stabilize needs a SplitExtension")
    return _stabilize_structured(f, spec, c, s_exponent, max_iter, tol, oracle_G, oracle_H,
                                 reuse_factor_rep, fatal, hook, tolerances)
