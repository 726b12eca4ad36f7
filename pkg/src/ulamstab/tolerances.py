"""Numerical tolerances shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    unitary_tol: float = 1e-10
    rep_tol: float = 1e-10
    clamp_tol: float = 1e-14
    invertibility_margin: float = 1e-6
    renorm_guard: float = 1e-6
    ledger_slack: float = 1e-9
    mean_weight_tol: float = 1e-12
    max_group_order: int = 256

    def with_(self, **changes) -> "Tolerances":
        return replace(self, **changes)


DEFAULT = Tolerances()
