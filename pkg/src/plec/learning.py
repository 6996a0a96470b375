"""Noise learning: twirled benchmark circuits, decay fits and model fitting.

For every measurement basis and even depth ``k`` the layer is repeated ``k``
times between random Pauli twirl frames. Each measured Pauli ``b`` then decays
as ``alpha_b (f_b f_b')^(k/2)``, where ``b'`` is the layer conjugate and
``alpha_b`` absorbs state preparation and readout errors. Decays of all
observables that share a fidelity (or fidelity pair) are fitted jointly with
one shared rate and one offset per observable.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuits import Circuit, CircuitBatch, LayerMoment, NoiseSpec, OneQubitMoment
from .fitting import FidelityObservation, FitReport, fit_from_fidelities, fit_replicates
from .lindblad import SparseModel
from .pauli import GateLayer, PauliString, SignedPauli, conjugate_bits, conjugate_by_layer
from .planner import MeasurementPlan, Topology, plan_learning
from .parallel import parallel_map
from .rng import derive_rng
from .simulators import simulate_instance_means

SOURCES = ("decay", "symmetry", "unit_depth")


@dataclass(frozen=True)
class LearningConfig:
    depths: tuple[int, ...] = (0, 2, 4, 8, 16)
    instances: int = 100
    shots: int = 256
    bootstrap: int = 100

    def __post_init__(self) -> None:
        depths = tuple(int(k) for k in self.depths)
        if len(depths) < 2:
            raise ValueError("at least two depths are required")
        if len(set(depths)) != len(depths):
            raise ValueError("depths must be distinct")
        if any(k < 0 or k % 2 for k in depths):
            raise ValueError("depths must be even and nonnegative")
        if self.instances < 2 or self.shots < 1 or self.bootstrap < 0:
            raise ValueError("need instances >= 2, shots >= 1, bootstrap >= 0")
        object.__setattr__(self, "depths", tuple(sorted(depths)))

    def to_dict(self) -> dict:
        return {"depths": list(self.depths), "instances": self.instances, "shots": self.shots, "bootstrap": self.bootstrap}

    @classmethod
    def from_dict(cls, d: dict) -> LearningConfig:
        base = cls()
        return cls(
            tuple(d.get("depths", base.depths)),
            int(d.get("instances", base.instances)),
            int(d.get("shots", base.shots)),
            int(d.get("bootstrap", base.bootstrap)),
        )


@dataclass(frozen=True)
class DecayRecord:
    basis: int
    observable: PauliString
    depth: int
    mean: float
    stderr: float
    n_instances: int

    def __post_init__(self) -> None:
        if abs(self.mean) > 1 + 1e-12:
            raise ValueError("decay means lie in [-1, 1]")


DECAY_COLUMNS = ("basis", "observable", "depth", "mean", "stderr", "n_instances")


def decays_to_csv(records: Sequence[DecayRecord], extra: dict | None = None) -> str:
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(DECAY_COLUMNS) + list(extra))
    for r in records:
        w.writerow([r.basis, r.observable.label, r.depth, repr(r.mean), repr(r.stderr), r.n_instances] + list(extra.values()))
    return buf.getvalue()


# ---------------------------------------------------------------------------
# circuits


def _basis_moment(basis: str, dagger: bool) -> OneQubitMoment:
    suffix = "DG" if dagger else ""
    return OneQubitMoment({q: ((f"B{a}{suffix}",),) for q, a in enumerate(basis) if a in "XY"})


def _twirl_frames(c: Circuit, size: int, rng: np.random.Generator) -> dict:
    frames = {}
    for idx in c.layer_moments:
        x = rng.random((size, c.n)) < 0.5
        z = rng.random((size, c.n)) < 0.5
        px, pz, _ = conjugate_bits(c.moments[idx].layer, x, z)
        frames[(idx, "pre")] = (x, z)
        frames[(idx, "post")] = (px, pz)
    return frames


def learning_template(layer: GateLayer, basis: str, k: int, tag: str = "layer") -> Circuit:
    if k < 0 or k % 2:
        raise ValueError(f"depth must be even and nonnegative, got {k}")
    if len(basis) != layer.n or set(basis) - set("XYZ"):
        raise ValueError(f"basis {basis!r} must be an {layer.n}-letter string over XYZ")
    moments = [_basis_moment(basis, False)]
    for _ in range(k):
        moments += [LayerMoment(layer, tag), OneQubitMoment()]
    moments.append(_basis_moment(basis, True))
    return Circuit(layer.n, moments)


def generate_learning_batch(
    layer: GateLayer, basis: str, k: int, instances: int, rng: np.random.Generator, tag: str = "layer"
) -> CircuitBatch:
    """Twirled instances of the depth-``k`` benchmark in ``basis`` with readout twirls."""
    c = learning_template(layer, basis, k, tag)
    frames = _twirl_frames(c, instances, rng)
    readout = rng.random((instances, layer.n)) < 0.5
    return CircuitBatch(c, instances, frames, readout)


def generate_learning_circuit(layer: GateLayer, basis: str, k: int, rng: np.random.Generator, tag: str = "layer") -> Circuit:
    return generate_learning_batch(layer, basis, k, 1, rng, tag).instance(0)


def measured_observable(b: PauliString) -> PauliString:
    """Z string read out for ``b`` after the inverse basis change."""
    return PauliString(b.n, 0, b.support_mask)


def _run_point(args) -> np.ndarray:
    layer, basis, k, instances, shots, noise, observables, seed, keys, tag, backend = args
    rng = derive_rng(seed, *keys)
    batch = generate_learning_batch(layer, basis, k, instances, rng, tag)
    return simulate_instance_means(batch, noise, observables, shots, rng, backend)


# ---------------------------------------------------------------------------
# decay estimation


@dataclass
class DecaySeries:
    """Instance means of one observable in one basis, one row per depth."""

    basis: int
    observable: PauliString
    depths: tuple[int, ...]
    instance_means: np.ndarray  # (depths, instances)

    def records(self, shots: int) -> list[DecayRecord]:
        out = []
        for k, row in zip(self.depths, self.instance_means):
            se = float(row.std(ddof=1) / math.sqrt(len(row))) if len(row) > 1 else 0.0
            out.append(DecayRecord(self.basis, self.observable, k, float(row.mean()), se, len(row)))
        return out


def _wls_hat(depths: Sequence[int], n_series: int, weights: np.ndarray) -> np.ndarray:
    """Row vector mapping stacked log-means to the shared slope coefficient.

    Design: one offset column per series and a column ``k / 2``; ``weights``
    has shape ``(n_series, depths)``.
    """
    D = len(depths)
    A = np.zeros((n_series * D, n_series + 1))
    for j in range(n_series):
        A[j * D : (j + 1) * D, j] = 1.0
        A[j * D : (j + 1) * D, -1] = np.asarray(depths, dtype=float) / 2.0
    sw = np.sqrt(weights.reshape(-1))
    pinv = np.linalg.pinv(A * sw[:, None])
    return pinv[-1] * sw


def estimate_decays(
    plan: MeasurementPlan,
    series: dict[tuple[int, PauliString], DecaySeries],
    shots: int,
    bootstrap: int,
    rng: np.random.Generator,
) -> list[FidelityObservation]:
    """Joint log-linear fits, one per fidelity (pair).

    Returns one observation per spec key: the pair product ``f f'`` or the
    single fidelity ``f``. The standard error comes from resampling circuit
    instances; replicate values are attached for propagation into the fit.
    """
    by_key: dict[tuple, list[DecaySeries]] = {}
    for s in plan.specs:
        ser = series[(s.basis, s.b)]
        group = by_key.setdefault(s.key, [])
        if all(g is not ser for g in group):
            group.append(ser)
    depths = next(iter(series.values())).depths
    if len(depths) < 2:
        raise ValueError("at least two depths are required")
    n_inst = next(iter(series.values())).instance_means.shape[1]
    # one resampling pattern per (basis, depth) shared by all its observables
    resample = {}
    for bi in sorted({b for b, _ in series}):
        resample[bi] = rng.integers(0, n_inst, size=(bootstrap, len(depths), n_inst))
    floor = 1.0 / math.sqrt(n_inst * shots)
    out = []
    for key in sorted(by_key, key=lambda t: [p.sort_key() for p in t]):
        group = by_key[key]
        means = np.array([g.instance_means.mean(axis=1) for g in group])
        if np.any(means <= 0):
            warnings.warn(f"dropping {'/'.join(p.label for p in key)}: nonpositive mean decay value", stacklevel=2)
            continue
        se = np.array([g.instance_means.std(axis=1, ddof=1) / math.sqrt(n_inst) for g in group])
        se = np.maximum(se, floor)
        h = _wls_hat(depths, len(group), means**2 / se**2)
        slope = float(h @ np.log(means).reshape(-1))
        reps = np.empty(bootstrap)
        for r in range(bootstrap):
            bm = np.array(
                [
                    [g.instance_means[d, resample[g.basis][r, d]].mean() for d in range(len(depths))]
                    for g in group
                ]
            )
            reps[r] = h @ np.log(np.maximum(bm, 1e-300)).reshape(-1)
        power = 1.0 if len(key) == 2 else 0.5
        value = math.exp(power * slope)
        rep_vals = np.exp(power * reps)
        stderr = float(rep_vals.std(ddof=1)) if bootstrap > 1 else 0.0
        out.append(FidelityObservation(key, value, stderr, "decay", rep_vals if bootstrap else None))
    return out


def symmetry_complete(observations: Sequence[FidelityObservation]) -> list[FidelityObservation]:
    """Split each pair product evenly: ``f = f' = sqrt(f f')``."""
    out = []
    for o in observations:
        if o.kind != "pair":
            continue
        v = math.sqrt(o.value)
        reps = None if o.replicates is None else np.sqrt(np.maximum(o.replicates, 0.0))
        se = o.stderr / (2 * v)
        for p in o.paulis:
            out.append(FidelityObservation((p,), v, se, "symmetry", reps))
    return out


def two_point_ratio(series: DecaySeries, k: int, pair: bool = True) -> float:
    """``(mean_k / mean_0)^(2/k)``: the ratio estimator for ``f f'`` (or ``f``)."""
    if k <= 0 or 0 not in series.depths or k not in series.depths:
        raise ValueError("series must contain depth 0 and the positive depth k")
    m = series.instance_means.mean(axis=1)
    r = m[series.depths.index(k)] / m[series.depths.index(0)]
    if r <= 0:
        raise ValueError("nonpositive ratio")
    return r ** ((2.0 if pair else 1.0) / k)


def max_informative_depth(min_mean: Callable[[int], float], threshold: float, k_max: int) -> int:
    """Binary search for the largest even depth whose smallest decay mean stays above ``threshold``.

    ``min_mean(k)`` must be nonincreasing in ``k``; returns 0 if even depth 2 fails.
    """
    lo, hi = 0, k_max // 2
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if min_mean(2 * mid) >= threshold:
            lo = mid
        else:
            hi = mid - 1
    return 2 * lo


# ---------------------------------------------------------------------------
# unit-depth completion


def unit_depth_complete(
    layer: GateLayer,
    pairs: Sequence[tuple[PauliString, PauliString]],
    noise: NoiseSpec | None,
    config: LearningConfig,
    seed: int,
    tag: str = "layer",
    backend: str = "clifford",
) -> list[FidelityObservation]:
    """Individual fidelities from a single application of the layer.

    Prepares the eigenstate of ``b``, applies the twirled layer once and reads
    out the conjugate ``b'``; a depth-0 run reading ``b'`` divides out the
    readout factor. Preparation errors are not cancelled, so the estimates are
    only unbiased when the initial state is exact.
    """
    out = []
    n = layer.n
    for idx, (b, b2) in enumerate(pairs):
        for src, dst in ((b, b2), (b2, b)):
            conj = conjugate_by_layer(layer, SignedPauli(0, src))
            if conj.pauli != dst:
                raise ValueError(f"{dst.label} is not the layer conjugate of {src.label}")
            prep = "".join(src.letter(q) if src.letter(q) != "I" else "Z" for q in range(n))
            meas = "".join(dst.letter(q) if dst.letter(q) != "I" else "Z" for q in range(n))
            obs = [measured_observable(dst)]
            c1 = Circuit(n, [_basis_moment(prep, False), LayerMoment(layer, tag), _basis_moment(meas, True)])
            c0 = Circuit(n, [_basis_moment(meas, False), _basis_moment(meas, True)])
            vals = []
            for depth, c in ((1, c1), (0, c0)):
                rng = derive_rng(seed, "unit", idx, src.label, depth)
                batch = CircuitBatch(c, config.instances, _twirl_frames(c, config.instances, rng), rng.random((config.instances, n)) < 0.5)
                vals.append(simulate_instance_means(batch, noise, obs, config.shots, rng, backend)[:, 0])
            m1, m0 = vals[0].mean() * conj.sign, vals[1].mean()
            if m1 <= 0 or m0 <= 0:
                warnings.warn(f"unit-depth estimate for {src.label} is nonpositive; skipped", stacklevel=2)
                continue
            f = m1 / m0
            se = f * math.sqrt((vals[0].var(ddof=1) / len(vals[0])) / m1**2 + (vals[1].var(ddof=1) / len(vals[1])) / m0**2)
            out.append(FidelityObservation((src,), f, se, "unit_depth"))
    return out


# ---------------------------------------------------------------------------
# end to end


@dataclass
class LearningReport:
    model: SparseModel
    fit: FitReport
    plan: MeasurementPlan
    observations: list[FidelityObservation]
    decays: list[DecayRecord]
    lambda_stderr: dict[str, float] = field(default_factory=dict)
    config: LearningConfig = field(default_factory=LearningConfig)

    @property
    def gamma(self) -> float:
        return self.fit.gamma

    def to_dict(self) -> dict:
        d = self.fit.to_dict()
        d["lambda_stderr"] = self.lambda_stderr
        d["bases"] = list(self.plan.bases)
        d["config"] = self.config.to_dict()
        return d


def collect_decays(
    layer: GateLayer,
    plan: MeasurementPlan,
    config: LearningConfig,
    noise: NoiseSpec | None,
    seed: int,
    tag: str = "layer",
    backend: str = "clifford",
    jobs: int = 1,
) -> dict[tuple[int, PauliString], DecaySeries]:
    """Simulate every (basis, depth) point; returns one series per (basis, Pauli)."""
    tasks, index = [], []
    for bi, basis in enumerate(plan.bases):
        paulis = []
        for s in plan.specs_for(bi):
            if s.b not in paulis:
                paulis.append(s.b)
        obs = [measured_observable(b) for b in paulis]
        for k in config.depths:
            tasks.append((layer, basis, k, config.instances, config.shots, noise, obs, seed, ("learn", tag, bi, k), tag, backend))
        index.append((bi, paulis))
    results = parallel_map(_run_point, tasks, jobs)
    series = {}
    D = len(config.depths)
    for j, (bi, paulis) in enumerate(index):
        block = results[j * D : (j + 1) * D]
        for oi, b in enumerate(paulis):
            series[(bi, b)] = DecaySeries(bi, b, config.depths, np.array([m[:, oi] for m in block]))
    return series


def learn_layer_noise(
    layer: GateLayer,
    topology: Topology,
    K: Sequence[PauliString],
    config: LearningConfig | None = None,
    noise: NoiseSpec | None = None,
    seed: int = 0,
    *,
    tag: str = "layer",
    completion: str = "symmetry",
    weighted: bool = False,
    backend: str = "clifford",
    jobs: int = 1,
) -> tuple[SparseModel, LearningReport]:
    """Learn the sparse model of one layer from simulated benchmark data.

    ``noise`` is the ground truth injected into the simulator; its model for
    ``tag`` acts on every application of the layer. ``completion`` selects how
    pair products are resolved: ``"symmetry"`` (square roots), ``"unit_depth"``
    (single applications of the layer) or ``"none"``.
    """
    config = config or LearningConfig()
    if completion not in ("symmetry", "unit_depth", "none"):
        raise ValueError(f"unknown completion {completion!r}")
    plan = plan_learning(layer, topology, K, derive_rng(seed, "plan", tag))
    series = collect_decays(layer, plan, config, noise, seed, tag, backend, jobs)
    obs = estimate_decays(plan, series, config.shots, config.bootstrap, derive_rng(seed, "bootstrap", tag))
    if completion == "symmetry":
        obs = obs + symmetry_complete(obs)
    elif completion == "unit_depth":
        pairs = [tuple(o.paulis) for o in obs if o.kind == "pair"]
        obs = obs + unit_depth_complete(layer, pairs, noise, config, seed, tag, backend)
    model, fit = fit_from_fidelities(obs, K, weighted=weighted)
    se: dict[str, float] = {}
    if config.bootstrap > 1:
        reps = fit_replicates(obs, K, weighted=weighted)
        std = np.nanstd(reps, axis=0, ddof=1)
        se = {g.label: float(s) for g, s in zip(model.generators, std)}
    fit.lambda_stderr = se
    records = [r for s in series.values() for r in s.records(config.shots)]
    return model, LearningReport(model, fit, plan, obs, records, se, config)
