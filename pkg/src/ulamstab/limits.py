"""Finite-scale limit constructions: mixtures of representations and
cluster-point extraction along an increasing chain of subgroups."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .groups import GroupError, Subgroup
from .linalg import FiniteMean, op_norm
from .repmap import MatrixMap, UMap, defect, is_representation, sup_distance
from .tolerances import DEFAULT

__all__ = [
    "ChainFamily",
    "ChainLimit",
    "ClusterError",
    "MixtureReport",
    "chain_limit_extract",
    "chain_limit_report",
    "extend_by_identity",
    "mixture_defect_bound_check",
    "mixture_map",
]


class ClusterError(RuntimeError):
    pass


def extend_by_identity(rep: UMap, sub: Subgroup) -> UMap:
    """Map on the ambient group equal to ``rep`` on the subgroup and I elsewhere."""
    if rep.group.order != sub.order:
        raise GroupError("representation is not defined on this subgroup")
    vals = np.tile(np.eye(rep.dim, dtype=complex), (sub.ambient.order, 1, 1))
    vals[sub.embedding] = rep.values
    return UMap(sub.ambient, vals)


# ---------------------------------------------------------------------------
# mixtures

def _check_family(reps: Sequence[MatrixMap], tol: float) -> None:
    if not reps:
        raise ValueError("need at least one representation")
    G, d = reps[0].group, reps[0].dim
    for i, r in enumerate(reps):
        if r.dim != d:
            raise ValueError(f"rep {i} has dimension {r.dim}, expected {d}")
        if r.group is not G and not np.array_equal(r.group.table, G.table):
            raise ValueError(f"rep {i} lives on a different group")
        if not is_representation(r, tol):
            raise ValueError(f"rep {i} is not a representation at {tol:.0e}")


def mixture_map(reps: Sequence[MatrixMap], weights: FiniteMean, tol: float = DEFAULT.rep_tol) -> MatrixMap:
    """Elementwise weighted mean of exact representations on a common group."""
    _check_family(reps, tol)
    if weights.points.size and weights.points.max() >= len(reps):
        raise ValueError("weights reference a missing representation")
    stack = np.stack([r.values for r in reps])
    vals = np.tensordot(weights.weights, stack[weights.points], axes=(0, 0))
    return MatrixMap(reps[0].group, vals)


@dataclass(frozen=True)
class MixtureReport:
    lhs: float
    rhs: float
    passed: bool
    worst_pair: tuple[int, int] | None


def mixture_defect_bound_check(reps: Sequence[MatrixMap], weights: FiniteMean,
                               slack: float = DEFAULT.ledger_slack) -> MixtureReport:
    """Compare the mixture defect with the largest pairwise sup distance on the support."""
    lhs = defect(mixture_map(reps, weights))
    support = [int(p) for p, w in zip(weights.points, weights.weights) if w > 0]
    rhs, worst = 0.0, None
    for a in range(len(support)):
        for b in range(a + 1, len(support)):
            i, j = support[a], support[b]
            dist = sup_distance(reps[i], reps[j])
            if dist > rhs or worst is None:
                rhs, worst = max(rhs, dist), (i, j)
    return MixtureReport(lhs, rhs, lhs <= rhs + slack, worst)


# ---------------------------------------------------------------------------
# chains

@dataclass(frozen=True, eq=False)
class ChainFamily:
    """Representations of an increasing chain of subgroups, extended by I outside.

    ``modulus_bound`` tabulates (eps, F(eps)) pairs; ``oracle_distances``
    records how far each rep sits from the map it was produced from, if known.
    """

    chain: tuple[Subgroup, ...]
    reps: tuple[UMap, ...]
    modulus_bound: tuple[tuple[float, float], ...] = ()
    oracle_distances: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        object.__setattr__(self, "reps", tuple(self.reps))
        object.__setattr__(self, "modulus_bound", tuple(sorted(tuple(p) for p in self.modulus_bound)))
        object.__setattr__(self, "oracle_distances", tuple(self.oracle_distances))
        if len(self.chain) != len(self.reps):
            raise ValueError("chain and reps must have equal length")
        ambient = self.chain[0].ambient if self.chain else None
        for i, (sub, rep) in enumerate(zip(self.chain, self.reps)):
            if sub.ambient is not ambient:
                raise GroupError("all subgroups must share one ambient group")
            if rep.group.order != ambient.order:
                raise ValueError(f"rep {i} must be extended to the ambient group")
            if not is_representation(rep.restrict(sub.embedding, sub.group), 1e-10):
                raise ValueError(f"rep {i} is not a representation of its subgroup")
            if i and not (set(self.chain[i - 1].embedding) < set(sub.embedding)):
                raise GroupError(f"subgroup {i - 1} is not strictly contained in subgroup {i}")

    @property
    def ambient(self):
        return self.chain[0].ambient

    def F(self, eps: float) -> float:
        """Tabulated modulus at the smallest tabulated point at or above ``eps``."""
        for e, val in self.modulus_bound:
            if e >= eps:
                return val
        raise ValueError(f"modulus not tabulated at {eps!r}")

    @classmethod
    def from_oracle(cls, f: UMap, chain: Sequence[Subgroup], oracle: Callable[[UMap], UMap],
                    modulus_bound=()) -> "ChainFamily":
        reps, dists = [], []
        for sub in chain:
            local = f.restrict(sub.embedding, sub.group)
            rho = oracle(local)
            dists.append(sup_distance(rho, local))
            reps.append(extend_by_identity(rho, sub))
        return cls(tuple(chain), tuple(reps), modulus_bound, tuple(dists))


def _common_distance(fam: ChainFamily, i: int, j: int) -> float:
    sub = fam.chain[min(i, j)]
    e = sub.embedding
    return float(np.max(op_norm(fam.reps[i].values[e] - fam.reps[j].values[e])))


@dataclass(frozen=True, eq=False)
class ChainLimit:
    rho: UMap
    cluster: tuple[int, ...]
    cluster_ids: tuple[int, ...]  # -1 outside the tail
    residuals: tuple[float, ...]  # sup over G_i of ||reps[i] - rho||
    defect: float
    eps_net: float

    def to_csv(self, family: ChainFamily) -> str:
        buf = io.StringIO()
        buf.write("index,subgroup_order,oracle_distance,cluster_id,residual\n")
        od = family.oracle_distances
        for i, sub in enumerate(family.chain):
            dist = f"{od[i]:.17g}" if i < len(od) else ""
            buf.write(f"{i},{sub.order},{dist},{self.cluster_ids[i]},{self.residuals[i]:.17g}\n")
        return buf.getvalue()


def chain_limit_report(family: ChainFamily, eps_net: float, tail_fraction: float = 0.5) -> ChainLimit:
    """Densest sup-distance cluster in the tail of the chain and its assembled limit map."""
    N = len(family.reps)
    if N < 2:
        raise ValueError("need a chain of length at least 2")
    if not eps_net > 0:
        raise ValueError("eps_net must be positive")
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    tail = list(range(N - math.ceil(tail_fraction * N), N))
    need = math.ceil(len(tail) / 2)
    dist = {(i, j): _common_distance(family, i, j) for i in tail for j in tail}

    # greedy net: repeatedly take the densest ball among unassigned indices, late index wins ties
    ids = [-1] * N
    free = list(tail)
    balls: list[list[int]] = []
    while free:
        best = None
        for c in free:
            ball = [j for j in free if dist[c, j] <= eps_net]
            if best is None or len(ball) >= len(best[1]):
                best = (c, ball)
        for j in best[1]:
            ids[j] = len(balls)
            free.remove(j)
        balls.append(best[1])
    cluster = balls[0]
    if len(cluster) < need:
        raise ClusterError(f"densest cluster at radius {eps_net:g} has {len(cluster)} of the "
                           f"required {need} tail members; use a longer chain or a larger radius")

    amb = family.ambient
    d = family.reps[0].dim
    vals = np.zeros((amb.order, d, d), dtype=complex)
    covered = np.zeros(amb.order, dtype=bool)
    for i in sorted(cluster, reverse=True):
        e = family.chain[i].embedding
        new = e[~covered[e]]
        vals[new] = family.reps[i].values[new]
        covered[new] = True
    if not covered.all():
        missing = int(np.flatnonzero(~covered)[0])
        raise ClusterError(f"element {missing} lies in no subgroup of the selected cluster")
    rho = UMap(amb, vals)
    residuals = tuple(
        float(np.max(op_norm(family.reps[i].values[s.embedding] - vals[s.embedding])))
        for i, s in enumerate(family.chain)
    )
    return ChainLimit(rho, tuple(sorted(cluster)), tuple(ids), residuals, defect(rho), eps_net)


def chain_limit_extract(family: ChainFamily, eps_net: float, tail_fraction: float = 0.5) -> UMap:
    return chain_limit_report(family, eps_net, tail_fraction).rho
