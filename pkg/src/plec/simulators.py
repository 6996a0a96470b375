"""Trajectory simulators producing :class:`ShotTable` outputs.

Three engines share the same inputs. The Clifford engine propagates the
observables backwards through the circuit and tracks, per shot, which sampled
Pauli errors anticommute with the propagated observable; it scales to many
qubits but needs Clifford single-qubit gates and observables that are
diagonal on the initial state. The state-vector engine evolves dense states
row by row and handles arbitrary single-qubit rotations on up to 14 qubits.
The density engine propagates each instance's noisy density matrix exactly in
the Pauli basis (Pauli channels and frames become per-coefficient factors) and
samples shots from its diagonal; per shot this is the same distribution as
independent trajectories, at a cost independent of the shot count.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .circuits import (
    Circuit,
    CircuitBatch,
    LayerMoment,
    NoiseSpec,
    OneQubitMoment,
    ShotTable,
    as_batch,
    clifford_table,
    sequence_matrix,
)
from .lindblad import SparseModel, sample_physical_bits
from .pauli import PauliString, conjugate_bits, sp_inner_matrix, to_bits

MAX_STATE_QUBITS = 14
MAX_DENSITY_QUBITS = 10
DENSITY_AUTO_QUBITS = 8
_CHUNK_AMPLITUDES = 1 << 21


def _check_observables(observables: Sequence[PauliString], n: int) -> np.ndarray:
    obs = list(observables)
    if not obs:
        raise ValueError("at least one observable is required")
    x, z = to_bits(obs, n)
    if x.any():
        raise ValueError("observables must be Z-type (diagonal in the final frame)")
    return z


def _parity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Parity of the bitwise products of the rows of ``a`` and ``b``."""
    return ((a.astype(np.int32) @ b.T.astype(np.int32)) & 1).astype(bool)


def _twirl_mask(c: Circuit) -> np.ndarray:
    m = np.zeros(c.n, dtype=bool)
    m[list(c.readout_twirl)] = True
    return m


def _merged_flips(A: np.ndarray, p: np.ndarray, rows: int, rng: np.random.Generator) -> np.ndarray:
    """Sample observable flips caused by independent generators.

    ``A[k, j]`` says whether generator ``k`` flips observable ``j``. Generators
    with the same flip pattern are merged: their combined flip probability is
    ``(1 - prod(1 - 2 p_k)) / 2``.
    """
    active = A.any(axis=1) & (p > 0)
    if not active.any():
        return np.zeros((rows, A.shape[1]), dtype=bool)
    patterns, inv = np.unique(A[active], axis=0, return_inverse=True)
    prod = np.ones(len(patterns))
    np.multiply.at(prod, inv.reshape(-1), 1.0 - 2.0 * p[active])
    pg = (1.0 - prod) / 2.0
    inc = rng.random((rows, len(patterns))) < pg[None, :]
    return _parity(inc, patterns.T.astype(bool))


def run_clifford_trajectories(
    c: Circuit | CircuitBatch,
    noise: NoiseSpec | None,
    observables: Sequence[PauliString],
    shots: int,
    rng: np.random.Generator,
) -> ShotTable:
    """Sample ±1 outcomes of Z-type observables for every instance of ``c``."""
    batch = as_batch(c)
    tmpl = batch.template
    n = tmpl.n
    noise = noise or NoiseSpec()
    oz = _check_observables(observables, n).copy()
    ox = np.zeros_like(oz)
    k, B = oz.shape[0], batch.size
    rows = B * shots
    sign = np.zeros(k, dtype=bool)
    inst = np.zeros((B, k), dtype=bool)
    shot = np.zeros((rows, k), dtype=bool)

    # a batch readout twirl is an X before measurement undone classically, which cancels
    inst ^= _parity(_twirl_mask(tmpl)[None, :], oz)[0][None, :]
    r = noise.readout(n)
    if np.any(r > 0):
        shot ^= _parity(rng.random((rows, n)) < r[None, :], oz)

    def frame(key: tuple[int, str]) -> None:
        f = batch.frames.get(key)
        if f is not None:
            inst[:] ^= sp_inner_matrix(f[0], f[1], ox, oz).astype(bool)

    for idx in range(len(tmpl.moments) - 1, -1, -1):
        m = tmpl.moments[idx]
        frame((idx, "post"))
        if isinstance(m, OneQubitMoment):
            for q, seq in m.ops.items():
                table = clifford_table(seq)
                if table is None:
                    raise ValueError(f"non-Clifford operation {seq} on qubit {q}")
                tx, tz, tf = table
                code = ox[:, q].astype(np.int8) + 2 * oz[:, q].astype(np.int8)
                sign ^= tf[code]
                ox[:, q], oz[:, q] = tx[code], tz[code]
        else:
            ox, oz, fl = conjugate_bits(m.layer, ox, oz)
            sign ^= fl
            ch = noise.channel(m)
            if ch is not None and len(ch):
                gx, gz = ch.bits
                A = sp_inner_matrix(gx, gz, ox, oz)
                shot ^= _merged_flips(A, ch.flip_probabilities, rows, rng)
        frame((idx, "pre"))

    if ox.any():
        bad = [o.label for o, row in zip(observables, ox) if row.any()]
        raise ValueError(f"observables {bad} do not have a definite value on the initial state")
    p = noise.prep(n)
    if np.any(p > 0):
        shot ^= _parity(rng.random((rows, n)) < p[None, :], oz)

    flips = sign[None, :] ^ np.repeat(inst, shots, axis=0) ^ shot
    out = np.where(flips, -1, 1).astype(np.int8).reshape(B, shots, k)
    return ShotTable(list(observables), out)


# ---------------------------------------------------------------------------
# dense state vectors; qubit 0 is the most significant index bit


def _bit_weights(n: int) -> np.ndarray:
    return (1 << (n - 1 - np.arange(n))).astype(np.int64)


def _popcount_parity(D: int) -> np.ndarray:
    par = np.zeros(D, dtype=np.int8)
    for b in range(max(1, D.bit_length() - 1)):
        par ^= ((np.arange(D) >> b) & 1).astype(np.int8)
    return par


def _apply_paulis(psi: np.ndarray, x: np.ndarray, z: np.ndarray, par: np.ndarray) -> None:
    """Apply ``X^x Z^z`` row-wise in place (row phases are irrelevant)."""
    n = x.shape[1]
    w = _bit_weights(n)
    xm = x.astype(np.int64) @ w
    zm = z.astype(np.int64) @ w
    sel = np.flatnonzero((xm | zm) != 0)
    if sel.size == 0:
        return
    D = psi.shape[1]
    idx = np.arange(D)[None, :] ^ xm[sel, None]
    vals = np.take_along_axis(psi[sel], idx, axis=1)
    phase = 1 - 2 * par[idx & zm[sel, None]]
    psi[sel] = vals * phase


def _apply_1q(psi: np.ndarray, n: int, q: int, U: np.ndarray) -> np.ndarray:
    R = psi.shape[0]
    v = psi.reshape(R, 1 << q, 2, 1 << (n - q - 1))
    return np.einsum("ab,rxby->rxay", U, v).reshape(R, -1)


def _layer_action(n: int, moment: LayerMoment) -> tuple[np.ndarray, np.ndarray]:
    """Index permutation and phase vector of a CX/CZ layer."""
    D = 1 << n
    i = np.arange(D)
    perm = i.copy()
    phase = np.ones(D)
    w = _bit_weights(n)
    for g in moment.layer.gates:
        cb, tb = int(w[g.control]), int(w[g.target])
        if g.kind == "CX":
            perm = np.where(perm & cb, perm ^ tb, perm)
        else:
            phase = phase * np.where(((i & cb) != 0) & ((i & tb) != 0), -1.0, 1.0)
    return perm, phase


def _evolve(
    psi: np.ndarray,
    tmpl: Circuit,
    frames: dict,
    sl: slice,
    shots: int,
    noise: NoiseSpec | None,
    rng: np.random.Generator | None,
    par: np.ndarray,
) -> np.ndarray:
    n = tmpl.n
    actions: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def frame(key) -> None:
        f = frames.get(key)
        if f is not None:
            _apply_paulis(psi, np.repeat(f[0][sl], shots, axis=0), np.repeat(f[1][sl], shots, axis=0), par)

    for idx, m in enumerate(tmpl.moments):
        frame((idx, "pre"))
        if isinstance(m, OneQubitMoment):
            for q, seq in m.ops.items():
                psi = _apply_1q(psi, n, q, sequence_matrix(seq))
        else:
            ch = noise.channel(m) if noise is not None else None
            if ch is not None and len(ch):
                ex, ez = sample_physical_bits(ch, psi.shape[0], rng)
                _apply_paulis(psi, ex, ez, par)
            if idx not in actions:
                actions[idx] = _layer_action(n, m)
            perm, phase = actions[idx]
            psi = psi[:, perm] * phase[None, :]
        frame((idx, "post"))
    return psi


def run_state_trajectories(
    c: Circuit | CircuitBatch,
    noise: NoiseSpec | None,
    observables: Sequence[PauliString],
    shots: int,
    rng: np.random.Generator,
) -> ShotTable:
    """State-vector counterpart of :func:`run_clifford_trajectories`."""
    batch = as_batch(c)
    tmpl = batch.template
    n = tmpl.n
    if n > MAX_STATE_QUBITS:
        raise ValueError(f"state-vector engine limited to {MAX_STATE_QUBITS} qubits, got {n}")
    noise = noise or NoiseSpec()
    oz = _check_observables(observables, n)
    D = 1 << n
    par = _popcount_parity(D)
    w = _bit_weights(n)
    p, r = noise.prep(n), noise.readout(n)
    undo_t = _twirl_mask(tmpl)
    per_chunk = max(1, _CHUNK_AMPLITUDES // (D * shots))
    outs = []
    for i0 in range(0, batch.size, per_chunk):
        sl = slice(i0, min(batch.size, i0 + per_chunk))
        R = (sl.stop - sl.start) * shots
        psi = np.zeros((R, D), dtype=complex)
        start = (rng.random((R, n)) < p[None, :]).astype(np.int64) @ w
        psi[np.arange(R), start] = 1.0
        psi = _evolve(psi, tmpl, batch.frames, sl, shots, noise, rng, par)
        undo = np.broadcast_to(undo_t, (R, n)).copy()
        if batch.readout is not None:
            ro = np.repeat(batch.readout[sl], shots, axis=0)
            _apply_paulis(psi, ro, np.zeros_like(ro), par)
            undo ^= ro
        cdf = np.cumsum(np.abs(psi) ** 2, axis=1)
        u = rng.random(R) * cdf[:, -1]
        outcome = np.minimum((cdf < u[:, None]).sum(axis=1), D - 1)
        bits = ((outcome[:, None] & w[None, :]) != 0)
        bits ^= rng.random((R, n)) < r[None, :]
        bits ^= undo
        vals = np.where(_parity(bits, oz), -1, 1).astype(np.int8)
        outs.append(vals.reshape(-1, shots, len(oz)))
    return ShotTable(list(observables), np.concatenate(outs, axis=0))


# ---------------------------------------------------------------------------
# density matrices in the Pauli basis: rho = 2^-n sum_P c_P P
# index digits are per-qubit codes x + 2z, qubit 0 most significant


@lru_cache(maxsize=None)
def _pauli_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    """x and z bitmasks (bit q = qubit q) of every Pauli index."""
    idx = np.arange(4**n)
    xm = np.zeros(4**n, dtype=np.int64)
    zm = np.zeros(4**n, dtype=np.int64)
    for q in range(n):
        code = (idx >> (2 * (n - 1 - q))) & 3
        xm |= (code & 1) << q
        zm |= (code >> 1) << q
    return xm, zm


def _bool_masks(b: np.ndarray) -> np.ndarray:
    return b.astype(np.int64) @ (1 << np.arange(b.shape[1], dtype=np.int64))


def _kron_signs(n: int, qx: np.ndarray, qz: np.ndarray) -> np.ndarray:
    codes = np.arange(4)
    cx, cz = codes & 1, codes >> 1
    out = np.ones((len(qx), 1))
    for q in range(n):
        bx = ((qx >> q) & 1)[:, None]
        bz = ((qz >> q) & 1)[:, None]
        s = 1.0 - 2.0 * ((bx & cz[None, :]) ^ (bz & cx[None, :]))
        out = (out[:, :, None] * s[:, None, :]).reshape(len(qx), -1)
    return out


@lru_cache(maxsize=None)
def _sign_table(n: int) -> np.ndarray:
    r = np.arange(4**n, dtype=np.int64)
    return _kron_signs(n, r & ((1 << n) - 1), r >> n)


def _frame_signs(n: int, qx: np.ndarray, qz: np.ndarray) -> np.ndarray:
    """``(-1)^<Q_r, P>`` for row Paulis ``Q_r`` against every Pauli index."""
    if n <= 5:
        return _sign_table(n)[qx | (qz << n)]
    return _kron_signs(n, qx, qz)


_PAULI_MATS = (
    np.eye(2),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.diag([1.0, -1.0]).astype(complex),
    np.array([[0, -1j], [1j, 0]]),
)


@lru_cache(maxsize=4096)
def _ptm(ops: tuple) -> np.ndarray:
    """Transfer matrix ``R[a, b] = Tr(s_a U s_b U^dagger) / 2`` in code order I, X, Z, Y."""
    U = sequence_matrix(ops)
    return np.array([[0.5 * np.trace(a @ U @ b @ U.conj().T).real for b in _PAULI_MATS] for a in _PAULI_MATS])


@lru_cache(maxsize=256)
def _layer_pauli_action(layer, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gather index and sign so that ``c' = (c * sign)[:, gather]``."""
    xm, zm = _pauli_masks(n)
    bits = 1 << np.arange(n)
    x = (xm[:, None] & bits) != 0
    z = (zm[:, None] & bits) != 0
    px, pz, flips = conjugate_bits(layer, x, z)
    target = _pauli_index(_bool_masks(px), _bool_masks(pz), n)
    gather = np.empty_like(target)
    gather[target] = np.arange(target.size)
    return gather, np.where(flips, -1.0, 1.0)


def _pauli_index(xm: np.ndarray, zm: np.ndarray, n: int) -> np.ndarray:
    idx = np.zeros(np.shape(xm), dtype=np.int64)
    for q in range(n):
        code = ((xm >> q) & 1) + 2 * ((zm >> q) & 1)
        idx += code << (2 * (n - 1 - q))
    return idx


def _fidelity_vector(model: SparseModel, n: int) -> np.ndarray:
    if not len(model):
        return np.ones(4**n)
    gx, gz = model.bits
    signs = _frame_signs(n, _bool_masks(gx), _bool_masks(gz))  # (K, 4^n)
    return np.exp(-model.lambdas @ (1.0 - signs))


def _density_distributions(batch: CircuitBatch, noise: NoiseSpec | None):
    """Yield ``(slice, probabilities (B, 2^n), undo masks (B,))`` per instance chunk.

    Outcome index bit ``q`` is the raw readout of qubit ``q``; ``undo`` is the
    classical flip mask from readout twirls.
    """
    tmpl = batch.template
    n = tmpl.n
    if n > MAX_DENSITY_QUBITS:
        raise ValueError(f"density engine limited to {MAX_DENSITY_QUBITS} qubits, got {n}")
    noise = noise or NoiseSpec()
    P = 4**n
    D = 1 << n
    par = _popcount_parity(D).astype(bool)
    z_idx = _pauli_index(np.zeros(D, dtype=np.int64), np.arange(D), n)  # Z_S for S = 0..2^n-1
    s_of = np.arange(D)
    walsh = 1.0 - 2.0 * par[s_of[:, None] & s_of[None, :]]
    prep = 1 - 2 * noise.prep(n)
    ro = 1 - 2 * noise.readout(n)
    damp_prep = np.array([np.prod(prep[(S >> np.arange(n)) & 1 == 1]) for S in range(D)])
    damp_ro = np.array([np.prod(ro[(S >> np.arange(n)) & 1 == 1]) for S in range(D)])
    undo_t = int(_bool_masks(_twirl_mask(tmpl)[None, :])[0])
    fid: dict[int, np.ndarray | None] = {}
    per_chunk = max(1, (1 << 22) // P)
    for i0 in range(0, batch.size, per_chunk):
        sl = slice(i0, min(batch.size, i0 + per_chunk))
        B = sl.stop - sl.start
        coef = np.zeros((B, P))
        coef[:, z_idx] = damp_prep[None, :]

        def frame(fx, fz) -> None:
            coef[...] *= _frame_signs(n, _bool_masks(fx), _bool_masks(fz))

        for idx, m in enumerate(tmpl.moments):
            pre, post = batch.frames.get((idx, "pre")), batch.frames.get((idx, "post"))
            if isinstance(m, OneQubitMoment):
                if pre is not None:
                    frame(pre[0][sl], pre[1][sl])
                for q, seq in m.ops.items():
                    v = coef.reshape(B, 4**q, 4, 4 ** (n - q - 1))
                    coef = np.matmul(_ptm(seq), v).reshape(B, P)
                if post is not None:
                    frame(post[0][sl], post[1][sl])
            else:
                # Pauli frames commute with the noise; pull the post frame
                # back through the layer and apply both at once
                if post is not None:
                    bx, bz, _ = conjugate_bits(m.layer, post[0][sl], post[1][sl])
                    if pre is not None:
                        bx, bz = bx ^ pre[0][sl], bz ^ pre[1][sl]
                    frame(bx, bz)
                elif pre is not None:
                    frame(pre[0][sl], pre[1][sl])
                if idx not in fid:
                    ch = noise.channel(m)
                    fid[idx] = _fidelity_vector(ch, n) if ch is not None else None
                if fid[idx] is not None:
                    coef *= fid[idx][None, :]
                gather, sign = _layer_pauli_action(m.layer, n)
                coef = (coef * sign[None, :])[:, gather]
        cz = coef[:, z_idx]
        undo = np.full(B, undo_t, dtype=np.int64)
        if batch.readout is not None:
            rmask = _bool_masks(batch.readout[sl])
            cz = cz * (1.0 - 2.0 * par[rmask[:, None] & s_of[None, :]])
            undo ^= rmask
        prob = np.clip((cz * damp_ro[None, :]) @ walsh / D, 0.0, None)
        prob /= prob.sum(axis=1, keepdims=True)
        yield sl, prob, undo


def run_density(
    c: Circuit | CircuitBatch,
    noise: NoiseSpec | None,
    observables: Sequence[PauliString],
    shots: int,
    rng: np.random.Generator,
) -> ShotTable:
    """Exact per-instance noisy distribution, sampled ``shots`` times."""
    batch = as_batch(c)
    n = batch.template.n
    oz_mask = _bool_masks(_check_observables(observables, n))
    par = _popcount_parity(1 << n).astype(bool)
    D = 1 << n
    outs = []
    for _, prob, undo in _density_distributions(batch, noise):
        B = prob.shape[0]
        cdf = np.cumsum(prob, axis=1)
        # rows offset by their index keep one flat sorted array
        rows = np.arange(B)[:, None]
        u = rng.random((B, shots)) + rows
        outcome = np.searchsorted((cdf + rows).ravel(), u.ravel()).reshape(B, shots) - rows * D
        outcome = np.minimum(outcome, D - 1) ^ undo[:, None]
        vals = 1 - 2 * par[outcome[:, :, None] & oz_mask[None, None, :]].astype(np.int8)
        outs.append(vals.astype(np.int8))
    return ShotTable(list(observables), np.concatenate(outs, axis=0))


def density_instance_means(
    c: Circuit | CircuitBatch,
    noise: NoiseSpec | None,
    observables: Sequence[PauliString],
    shots: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-instance shot means ``(B, k)`` from multinomial outcome counts.

    Distributed exactly as ``run_density(...).instance_means()`` but the cost
    does not grow with ``shots``.
    """
    batch = as_batch(c)
    n = batch.template.n
    oz_mask = _bool_masks(_check_observables(observables, n))
    par = _popcount_parity(1 << n).astype(bool)
    s_of = np.arange(1 << n)
    sign = 1.0 - 2.0 * par[s_of[:, None] & oz_mask[None, :]]  # (D, k)
    outs = []
    for _, prob, undo in _density_distributions(batch, noise):
        counts = rng.multinomial(shots, prob)
        undo_sign = 1.0 - 2.0 * par[undo[:, None] & oz_mask[None, :]]
        outs.append((counts @ sign) / shots * undo_sign)
    return np.concatenate(outs, axis=0)


def run_trajectories(
    c: Circuit | CircuitBatch,
    noise: NoiseSpec | None,
    observables: Sequence[PauliString],
    shots: int,
    rng: np.random.Generator,
    backend: str = "auto",
) -> ShotTable:
    """Dispatch to an engine.

    ``"state"`` is the general-purpose choice: the density engine up to
    ``DENSITY_AUTO_QUBITS`` qubits, state-vector trajectories beyond.
    ``"auto"`` is ``"state"`` on small registers (exact, and it accepts any
    observable) and the Clifford engine on larger Clifford circuits.
    """
    backend = _resolve_backend(as_batch(c).template, backend)
    if backend == "clifford":
        return run_clifford_trajectories(c, noise, observables, shots, rng)
    if backend == "statevector":
        return run_state_trajectories(c, noise, observables, shots, rng)
    if backend == "density":
        return run_density(c, noise, observables, shots, rng)
    raise ValueError(f"unknown backend {backend!r}")


def _resolve_backend(tmpl: Circuit, backend: str) -> str:
    if backend == "auto":
        small = tmpl.n <= DENSITY_AUTO_QUBITS
        backend = "clifford" if tmpl.is_clifford() and not small else "state"
    if backend == "state":
        backend = "density" if tmpl.n <= DENSITY_AUTO_QUBITS else "statevector"
    if backend not in ("clifford", "statevector", "density"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def simulate_instance_means(
    c: Circuit | CircuitBatch,
    noise: NoiseSpec | None,
    observables: Sequence[PauliString],
    shots: int,
    rng: np.random.Generator,
    backend: str = "auto",
) -> np.ndarray:
    """Per-instance shot means, skipping the shot table where the engine allows."""
    if _resolve_backend(as_batch(c).template, backend) == "density":
        return density_instance_means(c, noise, observables, shots, rng)
    return run_trajectories(c, noise, observables, shots, rng, backend).instance_means()


def final_state(c: Circuit) -> np.ndarray:
    """Noiseless output state of a single circuit."""
    if c.n > MAX_STATE_QUBITS:
        raise ValueError(f"state-vector engine limited to {MAX_STATE_QUBITS} qubits, got {c.n}")
    D = 1 << c.n
    psi = np.zeros((1, D), dtype=complex)
    psi[0, 0] = 1.0
    return _evolve(psi, c, {}, slice(0, 1), 1, None, None, _popcount_parity(D))[0]


def noiseless_expectations(c: Circuit, observables: Sequence[PauliString]) -> np.ndarray:
    """Exact ``<psi|P|psi>`` of each observable on the noiseless output state.

    Readout-twirl qubits flip the sign of Z-type observables acting on them;
    other observables are rejected when a readout twirl is present.
    """
    psi = final_state(c)
    par = _popcount_parity(1 << c.n)
    twirl = _twirl_mask(c)
    out = []
    for o in observables:
        if o.n != c.n:
            raise ValueError("observable size differs from circuit size")
        x, z = o.x_bits[None, :], o.z_bits[None, :]
        phi = psi[None, :].copy()
        _apply_paulis(phi, x, z, par)
        val = np.vdot(psi, phi[0]) * (1j ** int((o.x & o.z).bit_count()))
        if twirl.any():
            if o.x:
                raise ValueError("non-diagonal observable on a readout-twirled circuit")
            if (twirl & o.z_bits).sum() % 2:
                val = -val
        out.append(float(val.real))
    return np.array(out)


def noiseless_expectation(c: Circuit, observable: PauliString) -> float:
    return float(noiseless_expectations(c, [observable])[0])

