"""Sparse Pauli-Lindblad noise models.

A model is a list of generator Paulis ``P_k`` with rates ``lambda_k >= 0``. The
channel is the product of ``w_k rho + (1 - w_k) P_k rho P_k`` with
``w_k = (1 + exp(-2 lambda_k)) / 2``, and the Pauli fidelity of ``P_b`` is
``exp(-2 sum of lambda_k over generators anticommuting with P_b)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .pauli import PauliString, sp_inner_matrix, to_bits

_LETTERS = "XYZ"
# Walsh kernel (-1)^<a,b> for single-qubit labels ordered I, X, Y, Z
_H4 = np.array(
    [[1, 1, 1, 1], [1, 1, -1, -1], [1, -1, 1, -1], [1, -1, -1, 1]],
    dtype=float,
)

PRODUCT_EXPANSION_MAX_TERMS = 20
WALSH_MAX_QUBITS = 6


def two_local_generators(
    qubits: Sequence[int], edges: Iterable[Sequence[int]], n: int | None = None
) -> list[PauliString]:
    """All weight-one Paulis on ``qubits`` and weight-two Paulis on ``edges``.

    Parameters
    ----------
    qubits : sequence of int
        Model qubits.
    edges : iterable of pairs
        Connected qubit pairs; both endpoints must be listed in ``qubits``.
    n : int, optional
        Register size; defaults to ``max(qubits) + 1``.
    """
    qubits = sorted(set(int(q) for q in qubits))
    if n is None:
        n = (max(qubits) + 1) if qubits else 0
    qset = set(qubits)
    out: set[PauliString] = set()
    for q in qubits:
        for a in _LETTERS:
            out.add(PauliString.single(n, q, a))
    for e in edges:
        i, j = (int(v) for v in e)
        if i not in qset or j not in qset:
            raise ValueError(f"edge ({i}, {j}) references a qubit outside the model")
        if i == j:
            raise ValueError("self-loop edge")
        for a, b in itertools.product(_LETTERS, repeat=2):
            out.add(PauliString.single(n, i, a) * PauliString.single(n, j, b))
    return sorted(out, key=PauliString.sort_key)


class SparseModel:
    """Generators and nonnegative rates of a sparse Pauli-Lindblad channel.

    Generators are sorted on construction (weight, support, letters) so that
    sampling streams depend only on the model content.
    """

    __slots__ = ("generators", "lambdas", "n", "_x", "_z", "_index")

    def __init__(self, generators: Sequence[PauliString], lambdas: Sequence[float] | np.ndarray, n: int | None = None):
        gens = list(generators)
        lam = np.asarray(lambdas, dtype=float).reshape(-1)
        if len(gens) != lam.size:
            raise ValueError("one rate per generator is required")
        if n is None:
            if not gens:
                raise ValueError("n is required for an empty model")
            n = gens[0].n
        if any(g.n != n for g in gens):
            raise ValueError("generators must share the qubit count")
        if any(g.is_identity() for g in gens):
            raise ValueError("the identity cannot be a generator")
        if len(set(gens)) != len(gens):
            raise ValueError("generators must be distinct")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("rates must be finite and nonnegative")
        order = sorted(range(len(gens)), key=lambda i: gens[i].sort_key())
        self.generators: tuple[PauliString, ...] = tuple(gens[i] for i in order)
        lam = lam[order].copy()
        lam.setflags(write=False)
        self.lambdas: np.ndarray = lam
        self.n: int = int(n)
        self._x, self._z = to_bits(self.generators, self.n)
        self._index = {g: i for i, g in enumerate(self.generators)}

    @classmethod
    def zero(cls, n: int, generators: Sequence[PauliString] = ()) -> SparseModel:
        return cls(generators, np.zeros(len(generators)), n=n)

    @classmethod
    def from_terms(cls, terms: Mapping[str, float] | Iterable[tuple[str, float]], n: int | None = None) -> SparseModel:
        items = list(terms.items()) if isinstance(terms, Mapping) else list(terms)
        gens = [PauliString.from_label(p) for p, _ in items]
        return cls(gens, [lam for _, lam in items], n=n)

    def __len__(self) -> int:
        return len(self.generators)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseModel):
            return NotImplemented
        return self.n == other.n and self.generators == other.generators and np.array_equal(self.lambdas, other.lambdas)

    def __repr__(self) -> str:
        return f"SparseModel(n={self.n}, terms={len(self)}, gamma={gamma(self):.6g})"

    @property
    def w(self) -> np.ndarray:
        return (1.0 + np.exp(-2.0 * self.lambdas)) / 2.0

    @property
    def flip_probabilities(self) -> np.ndarray:
        """Inclusion probability ``1 - w_k`` of each generator."""
        return -np.expm1(-2.0 * self.lambdas) / 2.0

    @property
    def bits(self) -> tuple[np.ndarray, np.ndarray]:
        return self._x, self._z

    def index(self, g: PauliString) -> int:
        return self._index[g]

    def rate(self, g: PauliString) -> float:
        i = self._index.get(g)
        return 0.0 if i is None else float(self.lambdas[i])

    def terms(self) -> dict[str, float]:
        return {g.label: float(lam) for g, lam in zip(self.generators, self.lambdas)}

    def to_dict(self, meta: Mapping | None = None) -> dict:
        # repr() of a float is the shortest string that round-trips exactly
        return {
            "n": self.n,
            "terms": [{"pauli": g.label, "lambda": repr(float(lam))} for g, lam in zip(self.generators, self.lambdas)],
            "meta": dict(meta or {}),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SparseModel:
        n = int(d["n"])
        gens = [PauliString.from_label(t["pauli"]) for t in d["terms"]]
        lams = [float(t["lambda"]) for t in d["terms"]]
        if any(g.n != n for g in gens):
            raise ValueError("term length does not match n")
        return cls(gens, lams, n=n)

    def to_json(self, meta: Mapping | None = None) -> str:
        return json.dumps(self.to_dict(meta), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> SparseModel:
        return cls.from_dict(json.loads(s))

    def save(self, path: str | Path, meta: Mapping | None = None) -> None:
        Path(path).write_text(self.to_json(meta) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> SparseModel:
        return cls.from_json(Path(path).read_text())


def anticommutation_matrix(B: Sequence[PauliString], generators: Sequence[PauliString], n: int) -> np.ndarray:
    """Binary ``|B| x |K|`` matrix of symplectic products."""
    if not B or not generators:
        return np.zeros((len(B), len(generators)), dtype=np.uint8)
    bx, bz = to_bits(B, n)
    kx, kz = to_bits(generators, n)
    return sp_inner_matrix(bx, bz, kx, kz)


def _exponent(m: SparseModel, B: Sequence[PauliString]) -> np.ndarray:
    M = anticommutation_matrix(B, m.generators, m.n)
    # row-wise reduction so a single row gives the same bits as a batch
    return (M * m.lambdas[None, :]).sum(axis=1)


def fidelities(m: SparseModel, B: Sequence[PauliString]) -> np.ndarray:
    """Pauli fidelities ``exp(-2 M(B, K) lambda)`` for every row of ``B``."""
    if any(b.n != m.n for b in B):
        raise ValueError("qubit count mismatch")
    return np.exp(-2.0 * _exponent(m, B))


def fidelity(m: SparseModel, b: PauliString) -> float:
    return float(fidelities(m, [b])[0])


def gamma(m: SparseModel) -> float:
    """Sampling overhead ``exp(2 sum lambda)``."""
    return math.exp(2.0 * math.fsum(m.lambdas.tolist()))


def gamma_bar(gamma_total: float, n: int, l: int) -> float:
    """Per-qubit, per-layer overhead ``gamma_total ** (1 / (n l))``."""
    if gamma_total < 1 or n * l < 1:
        raise ValueError("need gamma_total >= 1 and n*l >= 1")
    return gamma_total ** (1.0 / (n * l))


def compose(m1: SparseModel, m2: SparseModel) -> SparseModel:
    """Channel product; rates of shared generators add."""
    if m1.n != m2.n:
        raise ValueError("qubit count mismatch")
    rates: dict[PauliString, float] = {}
    for g, lam in itertools.chain(zip(m1.generators, m1.lambdas), zip(m2.generators, m2.lambdas)):
        rates[g] = rates.get(g, 0.0) + float(lam)
    return SparseModel(list(rates), list(rates.values()), n=m1.n)


def scale(m: SparseModel, t: float) -> SparseModel:
    if t < 0:
        raise ValueError("scale factor must be nonnegative")
    return SparseModel(m.generators, m.lambdas * t, n=m.n)


def depolarizing_model(n: int, pairs: Iterable[Sequence[int]], f: float) -> SparseModel:
    """Two-qubit depolarizing noise of fidelity ``f`` on each pair.

    Every one of the 15 non-identity Paulis on a pair receives rate
    ``-log(f) / 16``, which gives fidelity ``f`` for every Pauli supported on
    that pair.
    """
    if not 0 < f <= 1:
        raise ValueError("fidelity must lie in (0, 1]")
    lam = -math.log(f) / 16.0
    gens: list[PauliString] = []
    for i, j in pairs:
        for a, b in itertools.product("IXYZ", repeat=2):
            if a == b == "I":
                continue
            p = PauliString.single(n, i, a) if a != "I" else PauliString.identity(n)
            if b != "I":
                p = p * PauliString.single(n, j, b)
            gens.append(p)
    return SparseModel(gens, [lam] * len(gens), n=n)


@dataclass(frozen=True)
class InverseModel:
    """The inverse channel, represented by its base model and overhead."""

    base: SparseModel
    gamma: float

    def inverse_fidelity(self, b: PauliString) -> float:
        return float(np.exp(2.0 * _exponent(self.base, [b])[0]))


def invert(m: SparseModel) -> InverseModel:
    return InverseModel(m, gamma(m))


def inverse_fidelity(inv: InverseModel, b: PauliString) -> float:
    return inv.inverse_fidelity(b)


def sample_inclusions(m: SparseModel, size: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(size, |K|)`` matrix; entry k is set with probability ``1 - w_k``."""
    return rng.random((size, len(m))) < m.flip_probabilities[None, :]


def sample_physical_bits(m: SparseModel, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    inc = sample_inclusions(m, size, rng).astype(np.uint8)
    x = (inc @ m._x.astype(np.uint8)) & 1
    z = (inc @ m._z.astype(np.uint8)) & 1
    return x.astype(bool), z.astype(bool)


def sample_physical(m: SparseModel, rng: np.random.Generator) -> PauliString:
    """One Pauli error drawn from the channel (sign discarded)."""
    inc = sample_inclusions(m, 1, rng)[0]
    x = z = 0
    for g, on in zip(m.generators, inc):
        if on:
            x ^= g.x
            z ^= g.z
    return PauliString(m.n, x, z)


def all_paulis(n: int) -> list[PauliString]:
    """All ``4**n`` Paulis, lexicographic over ``IXYZ`` with qubit 0 most significant."""
    return [PauliString.from_label("".join(t)) for t in itertools.product("IXYZ", repeat=n)]


def walsh_hadamard(f: Sequence[float] | np.ndarray) -> np.ndarray:
    """Symplectic Walsh-Hadamard transform ``c_b = 4^-n sum_a (-1)^<a,b> f_a``.

    Both vectors are indexed as in :func:`all_paulis`.
    """
    f = np.asarray(f, dtype=float)
    size = f.size
    n = 0
    while 4**n < size:
        n += 1
    if f.ndim != 1 or 4**n != size or size == 0:
        raise ValueError("length must be a power of 4")
    t = f.reshape((4,) * n) if n else f.reshape(())
    for ax in range(n):
        t = np.moveaxis(np.tensordot(_H4, t, axes=([1], [ax])), 0, ax)
    return np.asarray(t).reshape(-1) / 4.0**n


def fidelity_vector(m: SparseModel) -> np.ndarray:
    return fidelities(m, all_paulis(m.n))


def canonical_probabilities(m: SparseModel, method: str = "auto") -> dict[PauliString, float]:
    """Pauli-channel probabilities ``c_i`` of the model (small instances only).

    ``method='product'`` multiplies out the factors ``w_k I + (1 - w_k) P_k``,
    merging equal Paulis as it goes; ``method='walsh'`` transforms the full
    fidelity vector. ``'auto'`` picks the product path when it is allowed.
    """
    if method == "auto":
        method = "product" if len(m) <= PRODUCT_EXPANSION_MAX_TERMS else "walsh"
    if method == "product":
        if len(m) > PRODUCT_EXPANSION_MAX_TERMS:
            raise ValueError(f"product expansion limited to {PRODUCT_EXPANSION_MAX_TERMS} generators")
        probs: dict[PauliString, float] = {PauliString.identity(m.n): 1.0}
        for g, w in zip(m.generators, m.w):
            nxt: dict[PauliString, float] = {}
            for p, c in probs.items():
                nxt[p] = nxt.get(p, 0.0) + c * w
                q = p * g
                nxt[q] = nxt.get(q, 0.0) + c * (1.0 - w)
            probs = nxt
        return probs
    if method == "walsh":
        if m.n > WALSH_MAX_QUBITS:
            raise ValueError(f"Walsh path limited to {WALSH_MAX_QUBITS} qubits")
        c = walsh_hadamard(fidelity_vector(m))
        return {p: float(v) for p, v in zip(all_paulis(m.n), c)}
    raise ValueError(f"unknown method {method!r}")
