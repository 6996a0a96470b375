"""Probabilistic error cancellation with sparse Pauli-Lindblad models.

The inverse of a sparse model is a product of single-generator inverses
``w_k I - (1 - w_k) P_k`` scaled by ``gamma_k``. Sampling it draws each ``P_k``
independently with probability ``1 - w_k`` and records a minus sign per
inclusion. The sampled Pauli is inserted just before the noisy layer (inside
the twirl frame), so mitigated instances keep the moment structure of the
original circuit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .circuits import Circuit, CircuitBatch, NoiseSpec
from .fitting import bound_constants
from .lindblad import InverseModel, SparseModel, sample_inclusions
from .pauli import PauliString, conjugate_bits, from_bit_rows
from .simulators import simulate_instance_means


@dataclass(frozen=True)
class QuasiSample:
    sign: int
    pauli: PauliString
    m: int

    def __post_init__(self) -> None:
        if self.sign != (-1) ** self.m:
            raise ValueError("sign must equal (-1)^m")


def _inverse_bits(model: SparseModel, size: int, rng: np.random.Generator):
    inc = sample_inclusions(model, size, rng)
    gx, gz = model.bits
    u = inc.astype(np.uint8)
    x = ((u @ gx.astype(np.uint8)) & 1).astype(bool)
    z = ((u @ gz.astype(np.uint8)) & 1).astype(bool)
    return x, z, inc.sum(axis=1)


def sample_inverse(inv: InverseModel | SparseModel, rng: np.random.Generator) -> QuasiSample:
    """One draw from the quasi-probability decomposition of the inverse channel."""
    model = inv.base if isinstance(inv, InverseModel) else inv
    x, z, m = _inverse_bits(model, 1, rng)
    return QuasiSample(-1 if m[0] % 2 else 1, from_bit_rows(x, z)[0], int(m[0]))


class InverseSampler:
    """Batch sampler for the inverse of one layer's model.

    With ``expand=True`` the generators are partitioned into blocks of at most
    ``max_block`` generators acting on a common support of at most four
    qubits; each block's inverse is expanded exactly into its optimal
    quasi-probability over the support Paulis, which never increases (and
    usually lowers) the overhead.
    """

    def __init__(self, model: SparseModel, expand: bool = False, max_block: int = 10):
        self.model = model
        self.expand = expand
        self.blocks: list[tuple] = []
        self._rest = model
        self._block_gammas: list[float] = []
        if expand:
            self._build_blocks(max_block)
        self.gamma = math.exp(2.0 * math.fsum(self._rest.lambdas)) * math.prod(self._block_gammas)

    def _build_blocks(self, max_block: int) -> None:
        m = self.model
        groups: dict[tuple[int, ...], list[int]] = {}
        for i, g in enumerate(m.generators):
            if m.lambdas[i] == 0:
                continue
            groups.setdefault(g.support, []).append(i)
        # merge single-qubit groups into a pair group covering that qubit when space allows
        pairs = sorted(s for s in groups if len(s) == 2)
        for s in sorted(s for s in groups if len(s) == 1):
            for p in pairs:
                if s[0] in p and len(groups[p]) + len(groups[s]) <= max_block:
                    groups[p].extend(groups.pop(s))
                    break
        used: set[int] = set()
        for support, idx in sorted(groups.items()):
            if len(support) > 4:
                continue
            for start in range(0, len(idx), max_block):
                chunk = idx[start : start + max_block]
                paulis, quasi = self._expand(support, chunk)
                g = float(np.abs(quasi).sum())
                cdf = np.cumsum(np.abs(quasi)) / g
                self.blocks.append((tuple(chunk), paulis[0], paulis[1], quasi < 0, cdf))
                self._block_gammas.append(g)
                used.update(chunk)
        keep = [i for i in range(len(m)) if i not in used and m.lambdas[i] > 0]
        self._rest = SparseModel([m.generators[i] for i in keep], m.lambdas[keep], n=m.n)

    def _expand(self, support: tuple[int, ...], chunk: Sequence[int]):
        m = self.model
        n, w = m.n, len(support)
        letters = ["".join(t) for t in itertools.product("IXYZ", repeat=w)]
        sub = []
        for lab in letters:
            x = z = 0
            for q, a in zip(support, lab):
                if a in "XY":
                    x |= 1 << q
                if a in "ZY":
                    z |= 1 << q
            sub.append(PauliString(n, x, z))
        # inverse fidelities of the block channel on every support Pauli
        lam = np.array([m.lambdas[i] for i in chunk])
        gens = [m.generators[i] for i in chunk]
        inv_f = np.array([math.exp(2.0 * sum(l for g, l in zip(gens, lam) if _anti(g, b))) for b in sub])
        # Walsh-Hadamard: quasi(P) = 4^-w sum_b (-1)^<P,b> inv_f(b)
        signs = np.array([[(-1) ** _anti(p, b) for b in sub] for p in sub])
        quasi = signs @ inv_f / 4**w
        x = np.array([p.x_bits for p in sub])
        z = np.array([p.z_bits for p in sub])
        return (x, z), quasi

    def sample(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pauli bits ``(size, n)`` and a boolean negative-sign vector."""
        x, z, m = _inverse_bits(self._rest, size, rng)
        neg = (m % 2).astype(bool)
        for _, bx, bz, bneg, cdf in self.blocks:
            k = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(cdf) - 1)
            x ^= bx[k]
            z ^= bz[k]
            neg ^= bneg[k]
        return x, z, neg


def _anti(a: PauliString, b: PauliString) -> int:
    return (bin(a.x & b.z).count("1") + bin(a.z & b.x).count("1")) & 1


@dataclass
class MitigatedBatch:
    batch: CircuitBatch
    signs: np.ndarray  # int8 (size,)
    gamma_total: float


def _as_sampler(m) -> InverseSampler:
    if isinstance(m, InverseSampler):
        return m
    if isinstance(m, InverseModel):
        return InverseSampler(m.base)
    if isinstance(m, SparseModel):
        return InverseSampler(m)
    raise TypeError(f"not a model: {m!r}")


def build_mitigated_batch(
    c: Circuit,
    models: Mapping[str, SparseModel | InverseModel | InverseSampler] | None,
    size: int,
    rng: np.random.Generator,
    twirl: bool = True,
    readout_twirl: bool = True,
) -> MitigatedBatch:
    """Twirled instances of ``c`` with inverse-channel samples before each noisy layer.

    ``models=None`` gives plain twirled (unmitigated) instances.
    """
    n = c.n
    samplers: dict[str, InverseSampler] = {}
    if models is not None:
        for tag in c.tags():
            if tag not in models:
                raise KeyError(f"no model for layer tag {tag!r}")
            samplers[tag] = _as_sampler(models[tag])
    frames = {}
    neg = np.zeros(size, dtype=bool)
    log_gamma = 0.0
    for idx in c.layer_moments:
        m = c.moments[idx]
        x = np.zeros((size, n), dtype=bool)
        z = np.zeros((size, n), dtype=bool)
        if twirl:
            x = rng.random((size, n)) < 0.5
            z = rng.random((size, n)) < 0.5
        px, pz, _ = conjugate_bits(m.layer, x, z)
        if m.tag is not None and m.tag in samplers:
            s = samplers[m.tag]
            qx, qz, qneg = s.sample(size, rng)
            x, z = x ^ qx, z ^ qz
            neg ^= qneg
            log_gamma += math.log(s.gamma)
        frames[(idx, "pre")] = (x, z)
        frames[(idx, "post")] = (px, pz)
    readout = (rng.random((size, n)) < 0.5) if readout_twirl else None
    batch = CircuitBatch(c, size, frames, readout)
    return MitigatedBatch(batch, np.where(neg, -1, 1).astype(np.int8), math.exp(log_gamma))


def build_mitigated_instance(
    c: Circuit, models: Mapping[str, SparseModel | InverseModel] | None, rng: np.random.Generator
) -> tuple[Circuit, int, float]:
    mb = build_mitigated_batch(c, models, 1, rng)
    return mb.batch.instance(0), int(mb.signs[0]), mb.gamma_total


def gamma_total(c: Circuit, models: Mapping[str, SparseModel]) -> float:
    """``exp(2 sum lambda)`` over every noisy layer application of ``c``."""
    total = math.fsum(math.fsum(models[c.moments[i].tag].lambdas) for i in c.layer_moments if c.moments[i].tag is not None)
    return math.exp(2.0 * total)


@dataclass(frozen=True)
class MitigatedEstimate:
    observable: str
    value: float
    stderr: float
    gamma_total: float
    N: int
    shots: int

    def __post_init__(self) -> None:
        if self.stderr < 0 or self.gamma_total < 1 - 1e-12:
            raise ValueError("stderr must be nonnegative and gamma_total at least 1")

    def to_dict(self, seed: int | None = None) -> dict:
        d = {
            "observable": self.observable,
            "value": self.value,
            "stderr": self.stderr,
            "gamma_total": self.gamma_total,
            "N": self.N,
            "shots": self.shots,
        }
        if seed is not None:
            d["seed"] = seed
        return d


def signed_instance_means(mb: MitigatedBatch, table_means: np.ndarray) -> np.ndarray:
    """``gamma * sign * mean`` per instance and observable."""
    return mb.gamma_total * mb.signs[:, None].astype(float) * table_means


def mitigated_instance_values(
    c: Circuit,
    models: Mapping[str, SparseModel | InverseModel | InverseSampler] | None,
    observables: Sequence[PauliString],
    N: int,
    shots: int,
    noise: NoiseSpec | None,
    rng: np.random.Generator,
    backend: str = "auto",
) -> tuple[np.ndarray, float]:
    """Signed, gamma-scaled instance means ``(N, len(observables))`` and ``gamma_total``."""
    mb = build_mitigated_batch(c, models, N, rng)
    means = simulate_instance_means(mb.batch, noise, observables, shots, rng, backend)
    return signed_instance_means(mb, means), mb.gamma_total


def mitigate_expectations(
    c: Circuit,
    models: Mapping[str, SparseModel | InverseModel | InverseSampler] | None,
    observables: Sequence[PauliString],
    N: int,
    shots: int,
    noise: NoiseSpec | None,
    rng: np.random.Generator,
    backend: str = "auto",
) -> list[MitigatedEstimate]:
    """PEC estimates of Z-type observables measured at the end of ``c``.

    ``noise`` is the ground truth injected by the simulator. The standard
    error treats instance means as the independent samples, since all shots
    of an instance share one sign and one frame.
    """
    if N < 2:
        raise ValueError("N must be at least 2 to estimate a standard error")
    X, g = mitigated_instance_values(c, models, observables, N, shots, noise, rng, backend)
    vals = X.mean(axis=0)
    errs = X.std(axis=0, ddof=1) / math.sqrt(N)
    return [
        MitigatedEstimate(o.label, float(v), float(e), g, N, shots)
        for o, v, e in zip(observables, vals, errs)
    ]


def mitigate_expectation(
    c: Circuit,
    models,
    observable: PauliString,
    N: int,
    shots: int,
    noise: NoiseSpec | None,
    rng: np.random.Generator,
    backend: str = "auto",
) -> MitigatedEstimate:
    return mitigate_expectations(c, models, [observable], N, shots, noise, rng, backend)[0]


def pec_error_bound(
    eps: float,
    delta: float,
    K_size: int,
    B_size: int,
    sigma_min: float,
    k: int,
    layers: int,
    gamma_l: float,
    N: int,
) -> float:
    """``(C_eps^(l tau) - 1) + gamma(l) sqrt(2 log(2/delta) / N)``."""
    if not 0 < delta < 1 or N < 1 or layers < 0:
        raise ValueError("need 0 < delta < 1, N >= 1 and layers >= 0")
    C, tau, _ = bound_constants(eps, B_size, K_size, sigma_min, k)
    return combined_error_bound([(C, tau)], layers, delta, gamma_l, N)


def combined_error_bound(constants: Sequence[tuple[float, float]], layers: int, delta: float, gamma_l: float, N: int) -> float:
    """Bound with per-layer ``(C_eps, tau)`` pairs; the largest of each is used."""
    C = max(c for c, _ in constants)
    tau = max(t for _, t in constants)
    return (C ** (layers * tau) - 1.0) + gamma_l * math.sqrt(2.0 * math.log(2.0 / delta) / N)
