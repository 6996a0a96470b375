"""Measurement planning: vertex ordering, the nine covering bases, and the
fidelities (single or pair) each basis gives access to."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pauli import GateLayer, PauliString, SignedPauli, conjugate_by_layer, conjugate_pauli

LETTERS = "XYZ"


class NoValidOrdering(ValueError):
    """No vertex order with at most two earlier neighbours per vertex exists."""


class UncoveredGenerator(AssertionError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph on qubits ``0..n-1``."""

    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        norm = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise ValueError(f"self-loop on qubit {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    def neighbors(self, v: int) -> list[int]:
        return sorted({j for i, j in self.edges if i == v} | {i for i, j in self.edges if j == v})

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in set(self.edges)

    def subgraph(self, qubits: Sequence[int]) -> Topology:
        """Induced subgraph relabelled to ``0..len(qubits)-1`` in the given order."""
        idx = {q: k for k, q in enumerate(qubits)}
        return Topology(len(qubits), tuple((idx[i], idx[j]) for i, j in self.edges if i in idx and j in idx))

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> Topology:
        return cls(int(d["n"]), tuple(tuple(e) for e in d["edges"]))

    @classmethod
    def load(cls, path: str | Path) -> Topology:
        return cls.from_dict(json.loads(Path(path).read_text()))


def path_topology(n: int) -> Topology:
    return Topology(n, tuple((i, i + 1) for i in range(n - 1)))


def star_topology(n: int) -> Topology:
    """Centre qubit 0 joined to every other qubit."""
    return Topology(n, tuple((0, i) for i in range(1, n)))


def grid_topology(rows: int, cols: int) -> Topology:
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return Topology(rows * cols, tuple(edges))


def complete_topology(n: int) -> Topology:
    return Topology(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))


# coupling map of the 27-qubit heavy-hexagon devices
HEAVY_HEX_27_EDGES = (
    (0, 1), (1, 2), (1, 4), (2, 3), (3, 5), (4, 7), (5, 8), (6, 7), (7, 10), (8, 9),
    (8, 11), (10, 12), (11, 14), (12, 13), (12, 15), (13, 14), (14, 16), (15, 18),
    (16, 19), (17, 18), (18, 21), (19, 20), (19, 22), (21, 23), (22, 25), (23, 24),
    (24, 25), (25, 26),
)  # fmt: skip


def heavy_hex_27() -> Topology:
    return Topology(27, HEAVY_HEX_27_EDGES)


def order_vertices(t: Topology) -> list[int]:
    """Vertex order in which every vertex has at most two earlier neighbours.

    Built by peeling: repeatedly remove a vertex with at most two remaining
    neighbours (the highest-numbered one among ties) and reverse the removal
    sequence. A vertex that is peeled sees only its remaining neighbours
    before it in the final order, so the order is valid whenever peeling
    finishes; peeling fails exactly when some subgraph has minimum degree
    three, in which case no valid order exists.
    """
    remaining = set(range(t.n))
    adj = {v: set(t.neighbors(v)) for v in range(t.n)}
    removed: list[int] = []
    while remaining:
        cands = [v for v in remaining if len(adj[v] & remaining) <= 2]
        if not cands:
            raise NoValidOrdering(f"every remaining vertex among {sorted(remaining)} has three or more neighbours")
        v = max(cands)
        removed.append(v)
        remaining.discard(v)
    return removed[::-1]


def _solve_column(groups: list[list[int]], rng: np.random.Generator) -> list[str] | None:
    """Assign letters to 9 positions so each group of positions gets distinct letters.

    ``groups`` holds, for every position, the indices of the constraint groups
    it belongs to. With no groups the column is a balanced random permutation.
    """
    if not any(groups):
        return list(rng.permutation(list(LETTERS * 3)))
    col: list[str | None] = [None] * 9
    used: dict[int, set[str]] = {}
    order = [LETTERS[i] for i in rng.permutation(3)]

    def place(pos: int) -> bool:
        if pos == 9:
            return True
        for a in order:
            if any(a in used.get(g, ()) for g in groups[pos]):
                continue
            col[pos] = a
            for g in groups[pos]:
                used.setdefault(g, set()).add(a)
            if place(pos + 1):
                return True
            for g in groups[pos]:
                used[g].discard(a)
        col[pos] = None
        return False

    return col if place(0) else None  # type: ignore[return-value]


def nine_bases(t: Topology, rng: np.random.Generator) -> list[str]:
    """Nine basis strings whose restriction to every edge covers {X,Y,Z}^2 once.

    Vertices are visited in :func:`order_vertices` order. A vertex without
    placed neighbours receives a random arrangement of three X, three Y and
    three Z. Otherwise, for each placed neighbour the three strings sharing a
    letter on that neighbour must see three distinct letters on the new vertex;
    with one or two placed neighbours such a column always exists (edge
    colouring of a 3-regular bipartite multigraph).
    """
    order = order_vertices(t)
    cols: dict[int, list[str]] = {}
    for v in order:
        placed = [u for u in t.neighbors(v) if u in cols]
        groups: list[list[int]] = [[] for _ in range(9)]
        for gi, u in enumerate(placed):
            for pos in range(9):
                groups[pos].append(3 * gi + LETTERS.index(cols[u][pos]))
        col = _solve_column(groups, rng)
        if col is None:
            raise NoValidOrdering(f"no column for vertex {v} with placed neighbours {placed}")
        cols[v] = col
    return ["".join(cols[q][i] for q in range(t.n)) for i in range(9)]


def check_edge_coverage(bases: Sequence[str], t: Topology) -> bool:
    full = {a + b for a in LETTERS for b in LETTERS}
    for i, j in t.edges:
        seen = [s[i] + s[j] for s in bases]
        if len(seen) != 9 or set(seen) != full:
            return False
    return True


@dataclass(frozen=True)
class FidelitySpec:
    """A Pauli measured in a basis; ``b2`` is its layer conjugate when different."""

    basis: int
    b: PauliString
    b2: PauliString | None = None

    @property
    def kind(self) -> str:
        return "single" if self.b2 is None else "pair"

    @property
    def key(self) -> tuple[PauliString, ...]:
        """Identifies the fidelity (product) independent of the measured member."""
        if self.b2 is None:
            return (self.b,)
        return tuple(sorted((self.b, self.b2), key=PauliString.sort_key))

    def to_dict(self) -> dict:
        d = {"basis": self.basis, "kind": self.kind, "b": self.b.label}
        if self.b2 is not None:
            d["b2"] = self.b2.label
        return d


@dataclass(frozen=True)
class MeasurementPlan:
    bases: tuple[str, ...]
    specs: tuple[FidelitySpec, ...]

    def specs_for(self, basis: int) -> list[FidelitySpec]:
        return [s for s in self.specs if s.basis == basis]

    def circuits_per_depth(self, instances: int) -> int:
        """Instance count for one depth; independent of the qubit count."""
        return len(self.bases) * instances

    def to_dict(self) -> dict:
        return {"bases": list(self.bases), "specs": [s.to_dict() for s in self.specs]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> MeasurementPlan:
        specs = tuple(
            FidelitySpec(int(s["basis"]), PauliString.from_label(s["b"]), PauliString.from_label(s["b2"]) if "b2" in s else None)
            for s in d["specs"]
        )
        return cls(tuple(d["bases"]), specs)


def basis_paulis(basis: str, t: Topology) -> list[PauliString]:
    """Sub-Paulis of a basis string on single qubits and on edges."""
    n = len(basis)
    full = PauliString.from_label(basis)
    out = [full.restrict([q]) for q in range(n)]
    out += [full.restrict([i, j]) for i, j in t.edges]
    return out


def plan_learning(
    layer: GateLayer,
    t: Topology,
    K: Iterable[PauliString],
    rng: np.random.Generator | None = None,
    bases: Sequence[str] | None = None,
) -> MeasurementPlan:
    """Enumerate the fidelities and fidelity pairs measured in each basis.

    With an even number of layer repetitions the measured Pauli returns to
    ``b`` itself, so every sub-Pauli of the basis is measurable; it yields the
    product ``f_b f_b2`` when the layer maps ``b`` to a different Pauli ``b2``.
    """
    if layer.n != t.n:
        raise ValueError("layer and topology differ in qubit count")
    if bases is None:
        if rng is None:
            raise ValueError("rng is required to draw bases")
        bases = nine_bases(t, rng)
    specs: list[FidelitySpec] = []
    for bi, basis in enumerate(bases):
        for b in basis_paulis(basis, t):
            b2 = conjugate_pauli(layer, b)
            specs.append(FidelitySpec(bi, b, None if b2 == b else b2))
    covered = {p for s in specs for p in s.key}
    missing = [k for k in K if k not in covered]
    if missing:
        raise UncoveredGenerator(f"generators not covered by any spec: {[m.label for m in missing]}")
    return MeasurementPlan(tuple(bases), tuple(specs))


def pair_rows(layer: GateLayer, t: Topology) -> tuple[list[PauliString], list[PauliString]]:
    """Row lists ``B1``, ``B2`` of the pair-fitting rank statement.

    ``B1`` holds every weight-one Pauli and every weight-two Pauli on an edge.
    ``B2`` repeats the weight-one Paulis and, for each edge Pauli ``P1``, uses
    the layer conjugate ``P2`` in which the letters on the support of ``P1``
    are reset to those of ``P1`` (or to the identity where the conjugate
    vanishes); this is the form obtained after inserting suitable single-qubit
    gates during benchmarking.
    """
    n = t.n
    V = [PauliString.single(n, q, a) for q in range(n) for a in LETTERS]
    P1 = [PauliString.single(n, i, a) * PauliString.single(n, j, b) for i, j in t.edges for a in LETTERS for b in LETTERS]
    P2 = []
    for p in P1:
        c = conjugate_by_layer(layer, SignedPauli(0, p)).pauli
        x, z = c.x, c.z
        for q in p.support:
            bit = 1 << q
            if (c.x | c.z) & bit:
                x = (x & ~bit) | (p.x & bit)
                z = (z & ~bit) | (p.z & bit)
        P2.append(PauliString(n, x, z))
    return V + P1, V + P2
