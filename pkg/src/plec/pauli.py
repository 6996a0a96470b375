"""Pauli algebra in the symplectic (x, z) bit representation.

A Pauli string on ``n`` qubits is stored as two Python integers used as bit
masks, bit ``q`` holding the X (resp. Z) component of qubit ``q``. The text
format is big-endian: qubit 0 is the leftmost character.

The single-qubit operator with bits ``(x, z)`` is ``i^(x z) X^x Z^z``, so
``(1, 1)`` is the Hermitian ``Y = i X Z``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# letter -> (x, z)
_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_CODE_LETTER = {v: k for k, v in _BITS.items()}


def _mask(bits: Iterable[int | bool]) -> int:
    out = 0
    for q, b in enumerate(bits):
        if b:
            out |= 1 << q
    return out


@dataclass(frozen=True, order=True)
class PauliString:
    """Unsigned n-qubit Pauli operator.

    Parameters
    ----------
    n : int
        Number of qubits.
    x, z : int
        Bit masks of the X and Z components; bit ``q`` refers to qubit ``q``.
    """

    n: int
    x: int = 0
    z: int = 0

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError("qubit count must be nonnegative")
        full = (1 << self.n) - 1
        if self.x & ~full or self.z & ~full:
            raise ValueError("bit mask exceeds qubit count")

    @classmethod
    def from_label(cls, label: str) -> PauliString:
        x = z = 0
        for q, ch in enumerate(label.upper()):
            try:
                bx, bz = _BITS[ch]
            except KeyError:
                raise ValueError(f"invalid Pauli letter {ch!r} in {label!r}") from None
            x |= bx << q
            z |= bz << q
        return cls(len(label), x, z)

    @classmethod
    def identity(cls, n: int) -> PauliString:
        return cls(n, 0, 0)

    @classmethod
    def from_bits(cls, x_bits: Sequence[int | bool], z_bits: Sequence[int | bool]) -> PauliString:
        if len(x_bits) != len(z_bits):
            raise ValueError("x and z bit vectors differ in length")
        return cls(len(x_bits), _mask(x_bits), _mask(z_bits))

    @classmethod
    def single(cls, n: int, qubit: int, letter: str) -> PauliString:
        bx, bz = _BITS[letter]
        return cls(n, bx << qubit, bz << qubit)

    @property
    def label(self) -> str:
        return "".join(self.letter(q) for q in range(self.n))

    def letter(self, q: int) -> str:
        return _CODE_LETTER[((self.x >> q) & 1, (self.z >> q) & 1)]

    @property
    def x_bits(self) -> np.ndarray:
        return np.array([(self.x >> q) & 1 for q in range(self.n)], dtype=bool)

    @property
    def z_bits(self) -> np.ndarray:
        return np.array([(self.z >> q) & 1 for q in range(self.n)], dtype=bool)

    @property
    def support_mask(self) -> int:
        return self.x | self.z

    @property
    def support(self) -> tuple[int, ...]:
        m = self.support_mask
        return tuple(q for q in range(self.n) if (m >> q) & 1)

    @property
    def weight(self) -> int:
        return self.support_mask.bit_count()

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def restrict(self, qubits: Sequence[int]) -> PauliString:
        """Sub-Pauli keeping only the letters on ``qubits`` (identity elsewhere)."""
        m = _mask_of(qubits)
        return PauliString(self.n, self.x & m, self.z & m)

    def __mul__(self, other: PauliString) -> PauliString:
        """Product up to phase."""
        _check_n(self, other)
        return PauliString(self.n, self.x ^ other.x, self.z ^ other.z)

    def __str__(self) -> str:
        return self.label

    def __repr__(self) -> str:
        return f"PauliString({self.label!r})"

    def sort_key(self) -> tuple:
        """Order by weight, then support, then letters."""
        return (self.weight, self.support, self.label)


def _mask_of(qubits: Iterable[int]) -> int:
    m = 0
    for q in qubits:
        m |= 1 << int(q)
    return m


def _check_n(a: PauliString, b: PauliString) -> None:
    if a.n != b.n:
        raise ValueError(f"qubit count mismatch: {a.n} vs {b.n}")


def sp_inner(a: PauliString, b: PauliString) -> int:
    """Symplectic inner product: 0 if ``a`` and ``b`` commute, 1 otherwise."""
    _check_n(a, b)
    return ((a.x & b.z) ^ (a.z & b.x)).bit_count() & 1


@dataclass(frozen=True)
class SignedPauli:
    """Pauli string with a global phase ``i**phase_exp``."""

    phase_exp: int
    pauli: PauliString

    def __post_init__(self) -> None:
        object.__setattr__(self, "phase_exp", self.phase_exp % 4)

    @classmethod
    def from_label(cls, label: str) -> SignedPauli:
        s = label.strip()
        phase = 0
        for prefix, p in (("+i", 1), ("-i", 3), ("+", 0), ("-", 2), ("i", 1)):
            if s.startswith(prefix):
                phase, s = p, s[len(prefix):]
                break
        return cls(phase, PauliString.from_label(s))

    @property
    def n(self) -> int:
        return self.pauli.n

    @property
    def sign(self) -> int:
        """The real sign of a Hermitian Pauli; imaginary phases are rejected."""
        if self.phase_exp % 2:
            raise ValueError("Pauli has an imaginary phase and is not Hermitian")
        return 1 if self.phase_exp == 0 else -1

    def __mul__(self, other: SignedPauli) -> SignedPauli:
        return multiply(self, other)

    def __str__(self) -> str:
        return ("+", "+i", "-", "-i")[self.phase_exp] + self.pauli.label


def _y_count(x: int, z: int) -> int:
    return (x & z).bit_count()


def multiply(a: SignedPauli, b: SignedPauli) -> SignedPauli:
    """Matrix product ``a @ b`` with the phase tracked mod 4."""
    _check_n(a.pauli, b.pauli)
    x1, z1, x2, z2 = a.pauli.x, a.pauli.z, b.pauli.x, b.pauli.z
    x3, z3 = x1 ^ x2, z1 ^ z2
    # P(x,z) = i^(xz) X^x Z^z; moving Z^z1 past X^x2 costs (-1)^(z1.x2)
    phase = _y_count(x1, z1) + _y_count(x2, z2) + 2 * (z1 & x2).bit_count() - _y_count(x3, z3)
    return SignedPauli(a.phase_exp + b.phase_exp + phase, PauliString(a.n, x3, z3))


@dataclass(frozen=True)
class Gate:
    kind: str
    control: int
    target: int

    def __post_init__(self) -> None:
        if self.kind not in ("CX", "CZ"):
            raise ValueError(f"unsupported two-qubit gate kind {self.kind!r}")
        if self.control == self.target:
            raise ValueError("gate acts twice on the same qubit")

    @property
    def qubits(self) -> tuple[int, int]:
        return (self.control, self.target)


@dataclass(frozen=True)
class GateLayer:
    """A set of non-overlapping CX/CZ gates on ``n`` qubits."""

    n: int
    gates: tuple[Gate, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        gates = tuple(g if isinstance(g, Gate) else Gate(*g) for g in self.gates)
        object.__setattr__(self, "gates", gates)
        seen: set[int] = set()
        for g in gates:
            for q in g.qubits:
                if not 0 <= q < self.n:
                    raise ValueError(f"gate qubit {q} outside 0..{self.n - 1}")
                if q in seen:
                    raise ValueError(f"gates overlap on qubit {q}")
                seen.add(q)

    @property
    def active_qubits(self) -> tuple[int, ...]:
        return tuple(sorted(q for g in self.gates for q in g.qubits))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "gates": [{"kind": g.kind, "control": g.control, "target": g.target} for g in self.gates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> GateLayer:
        return cls(int(d["n"]), tuple(Gate(g["kind"], int(g["control"]), int(g["target"])) for g in d["gates"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> GateLayer:
        return cls.from_dict(json.loads(s))


def _cx_bits(xc, zc, xt, zt):
    """CX conjugation on one gate; returns new bits and the sign flip."""
    flip = xc & zt & (xt ^ zc ^ 1)
    return xc, zc ^ zt, xt ^ xc, zt, flip


def _h_bits(x, z):
    return z, x, x & z


def _gate_bits(kind, xc, zc, xt, zt):
    if kind == "CX":
        return _cx_bits(xc, zc, xt, zt)
    # CZ = H_t CX H_t
    xt, zt, f1 = _h_bits(xt, zt)
    xc, zc, xt, zt, f2 = _cx_bits(xc, zc, xt, zt)
    xt, zt, f3 = _h_bits(xt, zt)
    return xc, zc, xt, zt, f1 ^ f2 ^ f3


def _gate_table(kind: str) -> tuple[tuple[int, int, int, int, int], ...]:
    """16-entry conjugation table indexed by (xc, zc, xt, zt) packed in 4 bits."""
    rows = []
    for code in range(16):
        xc, zc, xt, zt = (code >> 3) & 1, (code >> 2) & 1, (code >> 1) & 1, code & 1
        rows.append(_gate_bits(kind, xc, zc, xt, zt))
    return tuple(rows)


GATE_TABLES = {k: _gate_table(k) for k in ("CX", "CZ")}


def conjugate_by_layer(layer: GateLayer, p: SignedPauli) -> SignedPauli:
    """Return ``U p U^dagger`` for the Clifford layer ``U``."""
    if layer.n != p.n:
        raise ValueError(f"qubit count mismatch: layer {layer.n} vs Pauli {p.n}")
    x, z = p.pauli.x, p.pauli.z
    flips = 0
    for g in layer.gates:
        c, t = g.control, g.target
        code = (((x >> c) & 1) << 3) | (((z >> c) & 1) << 2) | (((x >> t) & 1) << 1) | ((z >> t) & 1)
        xc, zc, xt, zt, f = GATE_TABLES[g.kind][code]
        x = (x & ~((1 << c) | (1 << t))) | (xc << c) | (xt << t)
        z = (z & ~((1 << c) | (1 << t))) | (zc << c) | (zt << t)
        flips ^= f
    return SignedPauli(p.phase_exp + 2 * flips, PauliString(p.n, x, z))


def conjugate_pauli(layer: GateLayer, p: PauliString) -> PauliString:
    """Unsigned conjugate, used for twirl frames where signs cancel."""
    return conjugate_by_layer(layer, SignedPauli(0, p)).pauli


def random_pauli(n: int, support_mask: Iterable[int] | np.ndarray | None, rng: np.random.Generator) -> PauliString:
    """Uniformly random Pauli on the masked qubits, identity elsewhere.

    ``support_mask`` is either a boolean vector of length ``n`` or an iterable of
    qubit indices; ``None`` selects all qubits.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if support_mask is None:
        m = (1 << n) - 1
    else:
        arr = np.asarray(list(support_mask) if not isinstance(support_mask, np.ndarray) else support_mask)
        if arr.dtype == bool:
            if arr.shape != (n,):
                raise ValueError("boolean support mask must have length n")
            m = _mask(arr)
        else:
            m = _mask_of(arr.tolist())
    bits = rng.integers(0, 2, size=(2, n), dtype=np.uint8)
    return PauliString(n, _mask(bits[0]) & m, _mask(bits[1]) & m)


# ---------------------------------------------------------------------------
# vectorized helpers on boolean arrays of shape (m, n)


def to_bits(paulis: Sequence[PauliString], n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack Pauli strings into boolean ``(len, n)`` X and Z arrays."""
    if n is None:
        if not paulis:
            raise ValueError("cannot infer n from an empty list")
        n = paulis[0].n
    x = np.zeros((len(paulis), n), dtype=bool)
    z = np.zeros((len(paulis), n), dtype=bool)
    for i, p in enumerate(paulis):
        if p.n != n:
            raise ValueError("mixed qubit counts")
        x[i] = p.x_bits
        z[i] = p.z_bits
    return x, z


def from_bit_rows(x: np.ndarray, z: np.ndarray) -> list[PauliString]:
    n = x.shape[1]
    return [PauliString(n, _mask(xr), _mask(zr)) for xr, zr in zip(x, z)]


def sp_inner_matrix(ax: np.ndarray, az: np.ndarray, bx: np.ndarray, bz: np.ndarray) -> np.ndarray:
    """Pairwise symplectic products between row sets; returns a uint8 matrix."""
    acc = ax.astype(np.int32) @ bz.T.astype(np.int32) + az.astype(np.int32) @ bx.T.astype(np.int32)
    return (acc & 1).astype(np.uint8)


def conjugate_bits(layer: GateLayer, x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized layer conjugation of the rows of ``(x, z)``.

    Returns copies of the conjugated bit arrays and a boolean sign-flip vector.
    """
    x = np.array(x, dtype=bool, copy=True)
    z = np.array(z, dtype=bool, copy=True)
    flips = np.zeros(x.shape[0], dtype=bool)
    for g in layer.gates:
        c, t = g.control, g.target
        xc, zc, xt, zt, f = _gate_bits(g.kind, x[:, c], z[:, c], x[:, t], z[:, t])
        x[:, c], z[:, c], x[:, t], z[:, t] = xc, zc, xt, zt
        flips ^= np.asarray(f, dtype=bool)
    return x, z, flips
