"""Finite groups as explicit Cayley tables.

Elements are dense indices ``0..order-1`` with the identity at index 0.
Products, semidirect products and subgroup chains are built eagerly and
validated at construction, so every :class:`FiniteGroup` in circulation is
known to satisfy the group axioms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tolerances import DEFAULT

__all__ = [
    "AxiomReport",
    "FiniteGroup",
    "GroupError",
    "ProductStructure",
    "SplitExtension",
    "Subgroup",
    "cayley_csv",
    "closure",
    "element_order",
    "find_generator",
    "make_cyclic",
    "make_dihedral",
    "make_direct_product",
    "make_semidirect",
    "make_subgroup_chain",
    "parse_group",
    "verify_group_axioms",
]


class GroupError(ValueError):
    """Raised when a table, action or chain violates a group axiom."""


@dataclass(frozen=True)
class AxiomReport:
    ok: bool
    axiom: str | None = None
    indices: tuple[int, ...] = ()
    message: str = "group axioms hold"

    def __bool__(self) -> bool:
        return self.ok


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.int64, copy=True)
    a.setflags(write=False)
    return a


def verify_group_axioms(group: "FiniteGroup | np.ndarray") -> AxiomReport:
    """Check closure, identity (at index 0), inverses and associativity.

    Accepts either a :class:`FiniteGroup` or a raw square table.  The report
    names the first violated axiom together with the offending indices.
    """
    table = np.asarray(group.table if isinstance(group, FiniteGroup) else group)
    if table.ndim != 2 or table.shape[0] != table.shape[1] or table.shape[0] == 0:
        return AxiomReport(False, "shape", (), "table must be a non-empty square array")
    n = table.shape[0]
    bad = np.argwhere((table < 0) | (table >= n))
    if bad.size:
        x, y = map(int, bad[0])
        return AxiomReport(False, "closure", (x, y), f"table[{x}][{y}]={table[x, y]} out of range")

    ar = np.arange(n)
    bad = np.flatnonzero(table[0] != ar)
    if bad.size:
        x = int(bad[0])
        return AxiomReport(False, "identity", (0, x), f"0*{x} = {table[0, x]} != {x}")
    bad = np.flatnonzero(table[:, 0] != ar)
    if bad.size:
        x = int(bad[0])
        return AxiomReport(False, "identity", (x, 0), f"{x}*0 = {table[x, 0]} != {x}")

    for x in range(n):
        right = np.flatnonzero(table[x] == 0)
        if right.size == 0 or table[right[0], x] != 0:
            return AxiomReport(False, "inverse", (x,), f"element {x} has no two-sided inverse")

    # chunked so that |G|^3 index arrays stay small
    for x in range(n):
        lhs = table[table[x]]            # (x*y)*z over (y, z)
        rhs = table[x][table]            # x*(y*z) over (y, z)
        bad = np.argwhere(lhs != rhs)
        if bad.size:
            y, z = map(int, bad[0])
            return AxiomReport(
                False,
                "associativity",
                (x, y, z),
                f"({x}*{y})*{z} = {lhs[y, z]} but {x}*({y}*{z}) = {rhs[y, z]}",
            )
    return AxiomReport(True)


@dataclass(frozen=True, eq=False)
class FiniteGroup:
    """A finite group given by its multiplication table ``table[x, y] = x*y``."""

    table: np.ndarray
    name: str = ""
    labels: tuple[str, ...] | None = None
    max_order: int = DEFAULT.max_group_order
    inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        table = _readonly(self.table)
        object.__setattr__(self, "table", table)
        if table.ndim == 2 and table.shape[0] > self.max_order:
            raise GroupError(f"group order {table.shape[0]} exceeds cap {self.max_order}")
        report = verify_group_axioms(table)
        if not report:
            raise GroupError(f"{report.axiom}: {report.message}")
        inv = np.argmax(table == 0, axis=1)
        object.__setattr__(self, "inverse", _readonly(inv))
        if self.labels is not None and len(self.labels) != self.order:
            raise GroupError("labels must have one entry per element")

    @property
    def order(self) -> int:
        return self.table.shape[0]

    @property
    def identity(self) -> int:
        return 0

    def mul(self, x: int, y: int) -> int:
        return int(self.table[x, y])

    def label(self, x: int) -> str:
        return self.labels[x] if self.labels is not None else str(x)

    def __len__(self) -> int:
        return self.order

    def __repr__(self) -> str:
        return f"FiniteGroup({self.name or '?'}, order={self.order})"


def element_order(group: FiniteGroup, x: int) -> int:
    k, y = 1, int(x)
    while y != 0:
        y = int(group.table[y, x])
        k += 1
    return k


def find_generator(group: FiniteGroup) -> int | None:
    """Return an element of full order, or None if the group is not cyclic."""
    for x in range(group.order):
        if element_order(group, x) == group.order:
            return x
    return None


def closure(group: FiniteGroup, generators: Sequence[int]) -> np.ndarray:
    """Sorted element indices of the subgroup generated by ``generators``."""
    members = {0}
    frontier = [0]
    gens = [int(g) for g in generators]
    for g in gens:
        if not 0 <= g < group.order:
            raise GroupError(f"generator {g} is not an element")
    while frontier:
        nxt = []
        for x in frontier:
            for g in gens:
                y = int(group.table[x, g])
                if y not in members:
                    members.add(y)
                    nxt.append(y)
        frontier = nxt
    return np.array(sorted(members), dtype=np.int64)


def cayley_csv(group: FiniteGroup) -> str:
    """Cayley table as CSV lines ``x,y,x*y`` with a header row."""
    n = group.order
    lines = ["x,y,xy"]
    for x in range(n):
        for y in range(n):
            lines.append(f"{x},{y},{group.table[x, y]}")
    return "\n".join(lines) + "\n"


def make_cyclic(n: int) -> FiniteGroup:
    if int(n) != n or n < 1:
        raise GroupError(f"cyclic group order must be a positive integer, got {n}")
    n = int(n)
    ar = np.arange(n)
    return FiniteGroup((ar[:, None] + ar[None, :]) % n, name=f"cyclic:{n}",
                       max_order=max(n, DEFAULT.max_group_order))


@dataclass(frozen=True, eq=False)
class ProductStructure:
    """G x H with pair (g, h) stored at index ``g*|H| + h``."""

    base: FiniteGroup
    left: FiniteGroup
    right: FiniteGroup
    embed_left: np.ndarray
    embed_right: np.ndarray
    project_left: np.ndarray
    project_right: np.ndarray

    @property
    def left_order(self) -> int:
        return self.left.order

    @property
    def right_order(self) -> int:
        return self.right.order

    def pair(self, g: int, h: int) -> int:
        return int(g) * self.right.order + int(h)

    @property
    def name(self) -> str:
        return self.base.name


def make_direct_product(G: FiniteGroup, H: FiniteGroup, name: str | None = None) -> ProductStructure:
    nG, nH = G.order, H.order
    idx = np.arange(nG * nH)
    pg, ph = idx // nH, idx % nH
    table = G.table[pg[:, None], pg[None, :]] * nH + H.table[ph[:, None], ph[None, :]]
    labels = tuple(f"({G.label(g)},{H.label(h)})" for g, h in zip(pg, ph))
    base = FiniteGroup(table, name=name or f"product:{G.name},{H.name}", labels=labels,
                       max_order=max(G.max_order, H.max_order))
    return ProductStructure(
        base=base,
        left=G,
        right=H,
        embed_left=_readonly(np.arange(nG) * nH),
        embed_right=_readonly(np.arange(nH)),
        project_left=_readonly(pg),
        project_right=_readonly(ph),
    )


@dataclass(frozen=True, eq=False)
class SplitExtension:
    """Q = G x|_a H on pairs (g, h) stored at ``g*|H| + h``.

    ``action[h]`` is the automorphism a(h) of G as a permutation array, and
    the law is ``(g, h)(g', h') = (g * a(h)(g'), h h')``.  For x in Q the
    decomposition is ``x = gpart(x) * barpart(x)`` with
    ``barpart(x) = section(quotient(x))``.
    """

    G: FiniteGroup
    H: FiniteGroup
    action: np.ndarray
    Q: FiniteGroup
    section: np.ndarray
    quotient: np.ndarray
    iota: np.ndarray
    gpart_index: np.ndarray = field(repr=False)
    right_conj: np.ndarray = field(repr=False)

    @property
    def base(self) -> FiniteGroup:
        return self.Q

    @property
    def name(self) -> str:
        return self.Q.name

    def barpart(self, x: int) -> int:
        return int(self.section[self.quotient[x]])

    def gpart(self, x: int) -> int:
        """g(x) = x * barpart(x)^-1, as an element of Q."""
        return int(self.Q.table[x, self.Q.inverse[self.barpart(x)]])

    def conj_bar(self, t: int, x: int) -> int:
        """t^xbar = xbar^-1 t xbar for t in G (as a G index), returned as a G index."""
        return int(self.right_conj[self.quotient[x], t])


def _check_action(G: FiniteGroup, H: FiniteGroup, action: np.ndarray) -> None:
    nG = G.order
    if action.shape != (H.order, nG):
        raise GroupError(f"action must have shape ({H.order}, {nG}), got {action.shape}")
    ar = np.arange(nG)
    for h in range(H.order):
        a = action[h]
        if not np.array_equal(np.sort(a), ar):
            raise GroupError(f"action[{h}] is not a bijection of G")
        if a[0] != 0:
            raise GroupError(f"action[{h}] does not fix the identity")
        bad = np.argwhere(a[G.table] != G.table[a[:, None], a[None, :]])
        if bad.size:
            x, y = map(int, bad[0])
            raise GroupError(f"action[{h}] is not a homomorphism at ({x}, {y})")
    if not np.array_equal(action[0], ar):
        raise GroupError("action[identity] is not the identity map")
    for h in range(H.order):
        for k in range(H.order):
            if not np.array_equal(action[H.table[h, k]], action[h][action[k]]):
                raise GroupError(f"action[{h}*{k}] != action[{h}] o action[{k}]")


def make_semidirect(G: FiniteGroup, H: FiniteGroup, action, name: str | None = None) -> SplitExtension:
    action = np.asarray(action, dtype=np.int64)
    _check_action(G, H, action)
    nG, nH = G.order, H.order
    idx = np.arange(nG * nH)
    pg, ph = idx // nH, idx % nH
    # (g,h)(g',h') = (g * a_h(g'), h h')
    twisted = action[ph[:, None], pg[None, :]]
    table = G.table[pg[:, None], twisted] * nH + H.table[ph[:, None], ph[None, :]]
    labels = tuple(f"({G.label(g)},{H.label(h)})" for g, h in zip(pg, ph))
    Q = FiniteGroup(table, name=name or f"semidirect({G.name},{H.name})", labels=labels,
                    max_order=max(G.max_order, H.max_order))
    return SplitExtension(
        G=G,
        H=H,
        action=_readonly(action),
        Q=Q,
        section=_readonly(np.arange(nH)),
        quotient=_readonly(ph),
        iota=_readonly(np.arange(nG) * nH),
        gpart_index=_readonly(pg),
        # s(h)^-1 iota(t) s(h) = iota(a_{h^-1}(t))
        right_conj=_readonly(action[H.inverse]),
    )


def make_dihedral(n: int) -> SplitExtension:
    """Dihedral group of order 2n as Z_n x| Z_2 with the inversion action."""
    Zn, Z2 = make_cyclic(n), make_cyclic(2)
    ar = np.arange(n)
    return make_semidirect(Zn, Z2, [ar, (-ar) % n], name=f"dihedral:{n}")


@dataclass(frozen=True, eq=False)
class Subgroup:
    """A subgroup re-indexed as its own group, with its embedding into the ambient group."""

    group: FiniteGroup
    embedding: np.ndarray
    ambient: FiniteGroup

    @property
    def order(self) -> int:
        return self.group.order


def subgroup_from_elements(ambient: FiniteGroup, elements: np.ndarray) -> Subgroup:
    elements = np.asarray(elements, dtype=np.int64)
    pos = -np.ones(ambient.order, dtype=np.int64)
    pos[elements] = np.arange(len(elements))
    table = pos[ambient.table[elements[:, None], elements[None, :]]]
    if (table < 0).any():
        raise GroupError("element set is not closed under multiplication")
    g = FiniteGroup(table, name=f"{ambient.name}<{len(elements)}>",
                    labels=tuple(ambient.label(int(e)) for e in elements),
                    max_order=ambient.max_order)
    return Subgroup(group=g, embedding=_readonly(elements), ambient=ambient)


def make_subgroup_chain(G: FiniteGroup, generators_per_level: Sequence[Sequence[int]]) -> list[Subgroup]:
    """Strictly increasing chain of subgroups generated level by level."""
    chain: list[Subgroup] = []
    prev: set[int] = set()
    for level, gens in enumerate(generators_per_level):
        elems = closure(G, gens)
        cur = set(map(int, elems))
        if not prev <= cur:
            raise GroupError(f"level {level} does not contain level {level - 1}")
        if chain and len(cur) == len(prev):
            raise GroupError(f"level {level} repeats level {level - 1}; chain must be proper")
        chain.append(subgroup_from_elements(G, elems))
        prev = cur
    return chain


def _parse_int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise GroupError(f"expected an integer, got {s!r}") from None


def parse_group(spec: str):
    """Build a group from a preset string.

    ``cyclic:n``, ``trivial``, ``dihedral:n``, ``semidirect:n,m,k``
    (Z_n x| Z_m with generator acting by multiplication by k) and
    ``product:A,B`` where A and B are presets (bare integers mean cyclic).
    Returns a FiniteGroup, ProductStructure or SplitExtension.
    """
    spec = spec.strip()
    if spec == "trivial":
        return make_cyclic(1)
    if spec.isdigit():
        return make_cyclic(int(spec))
    kind, _, arg = spec.partition(":")
    if kind == "cyclic":
        return make_cyclic(_parse_int(arg))
    if kind == "dihedral":
        return make_dihedral(_parse_int(arg))
    if kind == "semidirect":
        parts = arg.split(",")
        if len(parts) != 3:
            raise GroupError("semidirect preset is semidirect:n,m,k")
        n, m, k = map(_parse_int, parts)
        if n < 1 or m < 1 or math.gcd(k, n) != 1 or pow(k, m, n) != 1 % n:
            raise GroupError(f"multiplication by {k} does not define an action of Z_{m} on Z_{n}")
        ar = np.arange(n)
        action = [(pow(k, h, n) * ar) % n for h in range(m)]
        return make_semidirect(make_cyclic(n), make_cyclic(m), action, name=spec)
    if kind == "product":
        commas = [i for i, ch in enumerate(arg) if ch == ","]
        for i in commas:
            try:
                a, b = parse_group(arg[:i]), parse_group(arg[i + 1:])
            except GroupError:
                continue
            return make_direct_product(_base(a), _base(b), name=spec)
        raise GroupError(f"cannot split product preset {spec!r} into two groups")
    raise GroupError(f"unknown group preset {spec!r}")


def _base(g) -> FiniteGroup:
    return g if isinstance(g, FiniteGroup) else g.base
