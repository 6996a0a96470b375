"""Circuit representation, noise specification and shot tables.

A circuit is a list of moments. A :class:`OneQubitMoment` holds, per qubit, a
short sequence of primitive single-qubit operations applied left to right (so
each qubit carries a single composite unitary per moment). A
:class:`LayerMoment` applies a :class:`GateLayer`, preceded by the noise
channel registered for its tag.

A :class:`CircuitBatch` pairs a template circuit with per-instance Pauli
frames. Simulators consume batches directly; :meth:`CircuitBatch.instance`
materializes one instance with its frames folded into the neighbouring
single-qubit moments, which leaves the moment structure untouched.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence, TextIO, Union

import numpy as np

from .lindblad import SparseModel, compose
from .pauli import GateLayer, PauliString

Op = tuple  # ("H",) or ("RZ", theta)

_S2 = 1 / math.sqrt(2)
_FIXED = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
    "SX": 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=complex),
    "SXDG": 0.5 * np.array([[1 - 1j, 1 + 1j], [1 + 1j, 1 - 1j]], dtype=complex),
}
# basis changes: B_a maps |0> to the +1 eigenstate of a
_FIXED["BX"] = _FIXED["H"]
_FIXED["BY"] = _FIXED["S"] @ _FIXED["H"]
_FIXED["BZ"] = _FIXED["I"]
_FIXED["BXDG"] = _FIXED["H"]
_FIXED["BYDG"] = _FIXED["H"] @ _FIXED["SDG"]
_FIXED["BZDG"] = _FIXED["I"]
_ROTATIONS = ("RZ", "RX")
OP_NAMES = tuple(_FIXED) + _ROTATIONS


def op_matrix(op: Op) -> np.ndarray:
    name = op[0]
    if name in _FIXED:
        return _FIXED[name]
    theta = float(op[1])
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    if name == "RZ":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]], dtype=complex)
    if name == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    raise ValueError(f"unknown single-qubit op {name!r}")


def _check_op(op: Op) -> Op:
    op = tuple(op)
    if not op or op[0] not in OP_NAMES:
        raise ValueError(f"unknown single-qubit op {op!r}")
    if op[0] in _ROTATIONS:
        if len(op) != 2:
            raise ValueError(f"{op[0]} takes one angle")
        return (op[0], float(op[1]))
    if len(op) != 1:
        raise ValueError(f"{op[0]} takes no parameters")
    return op


@lru_cache(maxsize=4096)
def sequence_matrix(ops: tuple[Op, ...]) -> np.ndarray:
    """Unitary of ops applied left to right."""
    U = np.eye(2, dtype=complex)
    for op in ops:
        U = op_matrix(op) @ U
    return U


def pauli_op(x: bool, z: bool) -> tuple[Op, ...]:
    if x and z:
        return (("Y",),)
    if x:
        return (("X",),)
    if z:
        return (("Z",),)
    return ()


@dataclass(frozen=True, eq=False)
class OneQubitMoment:
    ops: Mapping[int, tuple[Op, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for q, seq in self.ops.items():
            seq = tuple(_check_op(o) for o in seq)
            if seq:
                clean[int(q)] = seq
        object.__setattr__(self, "ops", dict(sorted(clean.items())))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OneQubitMoment) and self.ops == other.ops

    def with_prefix(self, q: int, seq: tuple[Op, ...]) -> OneQubitMoment:
        d = dict(self.ops)
        d[q] = tuple(seq) + d.get(q, ())
        return OneQubitMoment(d)

    def with_suffix(self, q: int, seq: tuple[Op, ...]) -> OneQubitMoment:
        d = dict(self.ops)
        d[q] = d.get(q, ()) + tuple(seq)
        return OneQubitMoment(d)


@dataclass(frozen=True)
class LayerMoment:
    layer: GateLayer
    tag: str | None = None


Moment = Union[OneQubitMoment, LayerMoment]


@dataclass
class Circuit:
    """Moments on ``n`` qubits, all starting in ``|0>`` and ending in a Z readout.

    ``readout_twirl`` lists qubits whose measured bit is flipped back in post
    processing (the matching X gates sit in the last single-qubit moment).
    """

    n: int
    moments: list[Moment] = field(default_factory=list)
    readout_twirl: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        for m in self.moments:
            if isinstance(m, OneQubitMoment):
                bad = [q for q in m.ops if not 0 <= q < self.n]
                if bad:
                    raise ValueError(f"op on qubit {bad[0]} outside 0..{self.n - 1}")
            elif isinstance(m, LayerMoment):
                if m.layer.n != self.n:
                    raise ValueError("layer size differs from circuit size")
            else:
                raise TypeError(f"not a moment: {m!r}")
        self.readout_twirl = tuple(sorted(set(int(q) for q in self.readout_twirl)))

    @property
    def layer_moments(self) -> list[int]:
        return [i for i, m in enumerate(self.moments) if isinstance(m, LayerMoment)]

    def tags(self) -> list[str]:
        out: list[str] = []
        for m in self.moments:
            if isinstance(m, LayerMoment) and m.tag is not None and m.tag not in out:
                out.append(m.tag)
        return out

    def structure(self) -> list[tuple]:
        """Moment kinds and layers, ignoring single-qubit contents."""
        return [("1q",) if isinstance(m, OneQubitMoment) else ("layer", m.layer, m.tag) for m in self.moments]

    def is_clifford(self) -> bool:
        return all(
            clifford_table(seq) is not None
            for m in self.moments
            if isinstance(m, OneQubitMoment)
            for seq in m.ops.values()
        )

    def append_measurement_basis(self, basis: str) -> Circuit:
        """Copy with B_a^dagger gates appended so that ``basis`` is read out in Z."""
        if len(basis) != self.n:
            raise ValueError("basis length differs from circuit size")
        moments = list(self.moments)
        if not moments or not isinstance(moments[-1], OneQubitMoment):
            moments.append(OneQubitMoment())
        last = moments[-1]
        for q, a in enumerate(basis):
            if a in "XY":
                last = last.with_suffix(q, ((f"B{a}DG",),))
        moments[-1] = last
        return Circuit(self.n, moments, self.readout_twirl)

    def to_dict(self) -> dict:
        ms = []
        for m in self.moments:
            if isinstance(m, OneQubitMoment):
                ms.append({"kind": "1q", "ops": {str(q): [list(o) for o in seq] for q, seq in m.ops.items()}})
            else:
                ms.append({"kind": "layer", "tag": m.tag, "gates": m.layer.to_dict()["gates"]})
        return {"n": self.n, "moments": ms, "readout_twirl": list(self.readout_twirl)}

    @classmethod
    def from_dict(cls, d: Mapping) -> Circuit:
        n = int(d["n"])
        moments: list[Moment] = []
        for m in d["moments"]:
            if m["kind"] == "1q":
                moments.append(OneQubitMoment({int(q): tuple(tuple(o) for o in seq) for q, seq in m["ops"].items()}))
            elif m["kind"] == "layer":
                moments.append(LayerMoment(GateLayer.from_dict({"n": n, "gates": m["gates"]}), m.get("tag")))
            else:
                raise ValueError(f"unknown moment kind {m['kind']!r}")
        return cls(n, moments, tuple(d.get("readout_twirl", ())))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> Circuit:
        return cls.from_dict(json.loads(s))


FrameKey = tuple[int, str]  # (moment index, "pre" | "post")


@dataclass
class CircuitBatch:
    """A template circuit plus per-instance Pauli frames.

    ``frames[(i, "pre")]`` is applied just before moment ``i`` (before its noise
    for a layer) and ``frames[(i, "post")]`` just after it. ``readout`` holds
    X gates applied right before measurement whose bit flips are undone
    classically.
    """

    template: Circuit
    size: int
    frames: dict[FrameKey, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    readout: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.template.n
        for (i, slot), (x, z) in self.frames.items():
            if slot not in ("pre", "post") or not 0 <= i < len(self.template.moments):
                raise ValueError(f"bad frame key {(i, slot)}")
            if x.shape != (self.size, n) or z.shape != (self.size, n):
                raise ValueError("frame arrays must have shape (size, n)")
        if self.readout is not None and self.readout.shape != (self.size, n):
            raise ValueError("readout array must have shape (size, n)")

    def instance(self, i: int) -> Circuit:
        c = self.template
        moments = list(c.moments)

        def fold(idx: int, q: int, seq: tuple[Op, ...], prefix: bool) -> None:
            m = moments[idx]
            if not isinstance(m, OneQubitMoment):
                raise ValueError(f"moment {idx} is not a single-qubit moment; cannot fold a frame")
            moments[idx] = m.with_prefix(q, seq) if prefix else m.with_suffix(q, seq)

        for (mi, slot), (x, z) in sorted(self.frames.items()):
            for q in range(c.n):
                seq = pauli_op(bool(x[i, q]), bool(z[i, q]))
                if not seq:
                    continue
                if isinstance(c.moments[mi], OneQubitMoment):
                    fold(mi, q, seq, prefix=(slot == "pre"))
                elif slot == "pre":
                    if mi == 0:
                        raise ValueError("a layer frame needs a preceding single-qubit moment")
                    fold(mi - 1, q, seq, prefix=False)
                else:
                    if mi + 1 >= len(moments):
                        raise ValueError("a layer frame needs a following single-qubit moment")
                    fold(mi + 1, q, seq, prefix=True)
        twirl: tuple[int, ...] = c.readout_twirl
        if self.readout is not None:
            flips = tuple(int(q) for q in np.flatnonzero(self.readout[i]))
            if flips:
                if not moments or not isinstance(moments[-1], OneQubitMoment):
                    raise ValueError("readout twirl needs a final single-qubit moment")
                for q in flips:
                    fold(len(moments) - 1, q, (("X",),), prefix=False)
            twirl = tuple(sorted(set(twirl) ^ set(flips)))
        return Circuit(c.n, moments, twirl)


def as_batch(c: Circuit | CircuitBatch) -> CircuitBatch:
    if isinstance(c, CircuitBatch):
        return c
    return CircuitBatch(c, 1)


@dataclass
class NoiseSpec:
    """Ground-truth noise injected by the simulators.

    ``prep_flip`` and ``readout_flip`` are per-qubit bit-flip probabilities
    (scalars broadcast). ``idle_dephasing`` is the Z-flip probability applied
    to every qubit left idle by a noisy layer.
    """

    layer_models: dict[str, SparseModel] = field(default_factory=dict)
    prep_flip: float | Sequence[float] = 0.0
    readout_flip: float | Sequence[float] = 0.0
    idle_dephasing: float = 0.0

    def __post_init__(self) -> None:
        for name in ("prep_flip", "readout_flip"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(arr < 0) or np.any(arr >= 0.5):
                raise ValueError(f"{name} probabilities must lie in [0, 1/2)")
        if not 0 <= self.idle_dephasing < 0.5:
            raise ValueError("idle_dephasing must lie in [0, 1/2)")

    def _per_qubit(self, v, n: int) -> np.ndarray:
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 0:
            return np.full(n, float(arr))
        if arr.shape != (n,):
            raise ValueError(f"expected {n} per-qubit probabilities")
        return arr

    def prep(self, n: int) -> np.ndarray:
        return self._per_qubit(self.prep_flip, n)

    def readout(self, n: int) -> np.ndarray:
        return self._per_qubit(self.readout_flip, n)

    def channel(self, m: LayerMoment) -> SparseModel | None:
        """Pauli channel acting before the gates of ``m``, if any."""
        model = self.layer_models.get(m.tag) if m.tag is not None else None
        if model is not None and model.n != m.layer.n:
            raise ValueError(f"model for tag {m.tag!r} has {model.n} qubits, layer has {m.layer.n}")
        if self.idle_dephasing > 0 and m.tag is not None:
            busy = set(m.layer.active_qubits)
            idle = [q for q in range(m.layer.n) if q not in busy]
            if idle:
                lam = -math.log(1 - 2 * self.idle_dephasing) / 2
                deph = SparseModel([PauliString.single(m.layer.n, q, "Z") for q in idle], [lam] * len(idle))
                model = deph if model is None else compose(model, deph)
        return model

    @classmethod
    def noiseless(cls) -> NoiseSpec:
        return cls()


@dataclass
class ShotTable:
    """±1 outcomes with shape ``(instances, shots, observables)``."""

    observables: list[PauliString]
    outcomes: np.ndarray

    def __post_init__(self) -> None:
        if self.outcomes.ndim != 3 or self.outcomes.shape[2] != len(self.observables):
            raise ValueError("outcomes must have shape (instances, shots, observables)")

    @property
    def instances(self) -> int:
        return self.outcomes.shape[0]

    @property
    def shots(self) -> int:
        return self.outcomes.shape[1]

    def instance_means(self) -> np.ndarray:
        return self.outcomes.mean(axis=1)

    def mean(self) -> np.ndarray:
        return self.outcomes.reshape(-1, len(self.observables)).mean(axis=0)

    def to_csv(self, fh: TextIO | None = None) -> str | None:
        """Write ``instance,observable,shot,outcome`` rows."""
        own = fh is None
        buf = io.StringIO() if own else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instance", "observable", "shot", "outcome"])
        labels = [o.label for o in self.observables]
        for i in range(self.instances):
            for k, lab in enumerate(labels):
                for s in range(self.shots):
                    w.writerow([i, lab, s, int(self.outcomes[i, s, k])])
        return buf.getvalue() if own else None


# ---------------------------------------------------------------------------
# single-qubit Clifford conjugation tables

_PAULI_CODES = {1: "X", 2: "Z", 3: "Y"}  # code = x + 2 z


@lru_cache(maxsize=4096)
def clifford_table(ops: tuple[Op, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Heisenberg table of ``U^dagger P U`` for the unitary of ``ops``.

    Returns arrays ``(x, z, flip)`` indexed by ``code = x + 2 z`` of the input
    Pauli, or ``None`` when the unitary is not Clifford.
    """
    U = sequence_matrix(ops)
    nx = np.zeros(4, dtype=bool)
    nz = np.zeros(4, dtype=bool)
    fl = np.zeros(4, dtype=bool)
    for code, name in _PAULI_CODES.items():
        M = U.conj().T @ _FIXED[name] @ U
        for code2, name2 in _PAULI_CODES.items():
            ov = np.trace(_FIXED[name2] @ M) / 2
            if abs(abs(ov) - 1) < 1e-9:
                if abs(ov.imag) > 1e-9:
                    return None
                nx[code] = bool(code2 & 1)
                nz[code] = bool(code2 & 2)
                fl[code] = ov.real < 0
                break
        else:
            return None
    return nx, nz, fl
