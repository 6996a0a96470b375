"""Config-driven experiments: learning runs, mitigation runs, the Trotterized
Ising chain and overhead-scaling tables.

Configs are JSON. Any object holding a ``"file"`` key is replaced by the JSON
content of that file (resolved relative to the config), with the remaining
keys layered on top, before the config is hashed. Each command writes into
``<output_dir>/<command>-<hash12>/`` so runs with different configs never
share files.

Top-level keys
--------------
seed : int
    Master seed; required (``--seed`` overrides it).
output_dir : str
    Root for run directories; defaults to ``runs`` next to the config.
topology : object
    ``{"n": 4, "edges": [[0, 1], ...]}`` or ``{"kind": "path", "n": 4}``
    (kinds: path, star, grid with rows/cols, complete, heavy_hex_27).
layers : list
    ``[{"tag": "layer", "gates": [["CX", 0, 1], ...]}, ...]``.
noise : object
    ``models`` maps a layer tag (or ``"default"``) to a model spec:
    ``{"terms": {"XI": 0.01}}``, a saved model, ``{"random": {"gamma": g}}``
    (``g`` a number or a ``[lo, hi]`` range) or ``{"depolarizing": {"f": f}}``.
    Also ``prep_flip``, ``readout_flip`` and ``idle_dephasing``.
learning : object
    ``depths``, ``instances``, ``shots``, ``bootstrap``, ``completion``,
    ``weighted`` and ``generators`` (``"two_local"`` or a list of labels).
pec : object
    ``models`` (``"injected"``, ``"learned"`` or per-tag specs),
    ``instances_cap``, ``instances_scale``, ``instances`` (fixed override),
    ``shots``, ``expand`` and ``bootstrap``.
ising : object
    ``n``, ``J``, ``h``, ``dt``, ``steps`` and ``observables`` (any of
    ``magnetization``, ``weight_n_minus_1``, ``weight_n``).
gamma : object
    ``n`` and ``f`` lists for the overhead table.
mitigate : object
    ``circuit`` (a serialized circuit), ``observables``, ``instances``, ``shots``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .circuits import Circuit, LayerMoment, NoiseSpec, OneQubitMoment
from .learning import LearningConfig, decays_to_csv, learn_layer_noise
from .lindblad import SparseModel, depolarizing_model, gamma, gamma_bar, two_local_generators
from .parallel import parallel_map
from .pauli import Gate, GateLayer, PauliString
from .pec import InverseSampler, gamma_total, mitigated_instance_values
from .planner import (
    Topology,
    check_edge_coverage,
    complete_topology,
    grid_topology,
    heavy_hex_27,
    nine_bases,
    order_vertices,
    path_topology,
    star_topology,
)
from .rng import derive_rng
from .simulators import noiseless_expectations

COMMANDS = ("learn", "mitigate", "ising", "gamma", "bases")
PROVENANCE_COLUMNS = ("config_hash", "seed", "plec_version")
ISING_OBSERVABLES = ("magnetization", "weight_n_minus_1", "weight_n")


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


# ---------------------------------------------------------------------------
# Trotter circuits


def _merge_1q(a: OneQubitMoment, b: OneQubitMoment) -> OneQubitMoment:
    ops = {q: a.ops.get(q, ()) + b.ops.get(q, ()) for q in sorted(set(a.ops) | set(b.ops))}
    return OneQubitMoment(ops)


def trotter_circuit(n: int, J: float, h: float, dt: float, steps: int) -> Circuit:
    """First-order Trotter circuit of the transverse-field Ising chain.

    Each step applies ``RX(2 h dt)`` to every qubit, then the ZZ couplings on
    even bonds and then on odd bonds. A ZZ block on bond ``(j, j+1)`` is
    ``CX . RZ(-2 J dt) on j+1 . CX``, so each step holds two applications of
    each of the two CX layers (tags ``"even"`` and ``"odd"``).
    """
    if n < 2:
        raise ValueError("the chain needs at least two qubits")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    layers = []
    for tag, start in (("even", 0), ("odd", 1)):
        gates = tuple(Gate("CX", j, j + 1) for j in range(start, n - 1, 2))
        if gates:
            layers.append((tag, GateLayer(n, gates)))
    moments: list = [OneQubitMoment()]
    for _ in range(steps):
        rx = OneQubitMoment({q: (("RX", 2.0 * h * dt),) for q in range(n)})
        moments[-1] = _merge_1q(moments[-1], rx)
        for tag, layer in layers:
            rz = OneQubitMoment({g.target: (("RZ", -2.0 * J * dt),) for g in layer.gates})
            moments += [LayerMoment(layer, tag), rz, LayerMoment(layer, tag), OneQubitMoment()]
    return Circuit(n, moments)


def trotter_layers(n: int) -> dict[str, GateLayer]:
    c = trotter_circuit(n, 0.0, 0.0, 0.0, 1)
    return {c.moments[i].tag: c.moments[i].layer for i in c.layer_moments}


def instance_schedule(gamma_total: float, cap: int = 200, scale: float = 40.0) -> int:
    """``min(cap, scale * gamma_total)`` rounded up, at least 2.

    For ``s`` Trotter steps ``gamma_total = (gamma_1 gamma_2)**(2 s)``.
    """
    return max(2, min(int(cap), math.ceil(scale * gamma_total - 1e-9)))


# ---------------------------------------------------------------------------
# config loading


def _inline_files(obj: Any, base: Path) -> Any:
    if isinstance(obj, list):
        return [_inline_files(v, base) for v in obj]
    if not isinstance(obj, dict):
        return obj
    if "file" in obj:
        path = base / str(obj["file"])
        if not path.is_file():
            raise ConfigError(f"referenced file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        rest = {k: v for k, v in obj.items() if k != "file"}
        return _inline_files({**loaded, **rest}, path.parent)
    return {k: _inline_files(v, base) for k, v in obj.items()}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class ExperimentConfig:
    """A resolved config: referenced files inlined, seed fixed."""

    data: dict
    base_dir: Path
    output_root: Path

    @classmethod
    def from_dict(
        cls,
        data: Mapping,
        base_dir: str | Path = ".",
        *,
        seed: int | None = None,
        out: str | Path | None = None,
        backend: str | None = None,
    ) -> ExperimentConfig:
        base = Path(base_dir)
        d = _inline_files(copy.deepcopy(dict(data)), base)
        if seed is not None:
            d["seed"] = seed
        if "seed" not in d:
            raise ConfigError("a master seed is required (config key 'seed' or --seed)")
        if isinstance(d["seed"], bool) or not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if backend is not None:
            d["backend"] = backend
        root = Path(out) if out is not None else base / str(d.get("output_dir", "runs"))
        d.pop("output_dir", None)
        return cls(d, base, root)

    @classmethod
    def load(cls, path: str | Path, **kw) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data, path.parent, **kw)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.data).encode()).hexdigest()

    def section(self, name: str) -> dict:
        v = self.data.get(name, {})
        if not isinstance(v, dict):
            raise ConfigError(f"'{name}' must be an object")
        return v

    def backend(self, default: str) -> str:
        b = self.data.get("backend", default)
        if b not in ("auto", "clifford", "state"):
            raise ConfigError(f"unknown backend {b!r}")
        return b

    def provenance(self) -> dict:
        return {
            "config_hash": self.hash,
            "seed": self.seed,
            "plec_version": __version__,
            "numpy_version": np.__version__,
            "scipy_version": scipy.__version__,
        }

    def topology(self) -> Topology:
        if "topology" not in self.data:
            raise ConfigError("config has no 'topology'")
        return build_topology(self.section("topology"))

    def layers(self, n: int) -> dict[str, GateLayer]:
        specs = self.data.get("layers")
        if not isinstance(specs, list) or not specs:
            raise ConfigError("'layers' must be a nonempty list")
        out: dict[str, GateLayer] = {}
        for i, spec in enumerate(specs):
            tag = str(spec.get("tag", f"layer{i}"))
            if tag in out:
                raise ConfigError(f"duplicate layer tag {tag!r}")
            try:
                gates = tuple(
                    Gate(g["kind"], int(g["control"]), int(g["target"])) if isinstance(g, dict) else Gate(str(g[0]), int(g[1]), int(g[2]))
                    for g in spec["gates"]
                )
                out[tag] = GateLayer(n, gates)
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ConfigError(f"layer {tag!r}: {exc}") from exc
        return out

    def learning(self) -> tuple[LearningConfig, dict]:
        s = self.section("learning")
        try:
            cfg = LearningConfig.from_dict(s)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"learning: {exc}") from exc
        opts = {"completion": s.get("completion", "symmetry"), "weighted": bool(s.get("weighted", False))}
        if opts["completion"] not in ("symmetry", "unit_depth", "none"):
            raise ConfigError(f"learning.completion: unknown value {opts['completion']!r}")
        return cfg, opts

    def generators(self, t: Topology) -> list[PauliString]:
        g = self.section("learning").get("generators", "two_local")
        if g == "two_local":
            return two_local_generators(range(t.n), t.edges, t.n)
        try:
            return [PauliString.from_label(p) for p in g]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"learning.generators: {exc}") from exc

    def noise(self, layers: Mapping[str, GateLayer], t: Topology) -> NoiseSpec:
        s = self.section("noise")
        specs = s.get("models", {})
        models = {}
        for tag, layer in layers.items():
            spec = specs.get(tag, specs.get("default"))
            if spec is not None:
                models[tag] = build_model(spec, layer, t, derive_rng(self.seed, "noise", tag))
        try:
            return NoiseSpec(models, s.get("prep_flip", 0.0), s.get("readout_flip", 0.0), float(s.get("idle_dephasing", 0.0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"noise: {exc}") from exc


def build_topology(s: Mapping) -> Topology:
    try:
        kind = s.get("kind")
        if kind is None:
            return Topology.from_dict(s)
        if kind == "path":
            return path_topology(int(s["n"]))
        if kind == "star":
            return star_topology(int(s["n"]))
        if kind == "grid":
            return grid_topology(int(s["rows"]), int(s["cols"]))
        if kind == "complete":
            return complete_topology(int(s["n"]))
        if kind == "heavy_hex_27":
            return heavy_hex_27()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"topology: {exc}") from exc
    raise ConfigError(f"topology: unknown kind {kind!r}")


def random_model(K: Sequence[PauliString], target_gamma: float, rng: np.random.Generator, n: int) -> SparseModel:
    """Uniform random rates rescaled so that ``gamma == target_gamma``."""
    lam = rng.uniform(0.0, 1.0, len(K))
    lam *= math.log(target_gamma) / 2.0 / lam.sum()
    return SparseModel(K, lam, n=n)


def build_model(spec: Mapping, layer: GateLayer, t: Topology, rng: np.random.Generator) -> SparseModel:
    """Model for ``layer`` from a config spec (see the module docstring)."""
    n = layer.n
    try:
        if "random" in spec:
            r = spec["random"]
            g = r["gamma"]
            if "seed" in r:
                rng = derive_rng(int(r["seed"]), "noise")
            target = rng.uniform(float(g[0]), float(g[1])) if isinstance(g, list) else float(g)
            if target < 1:
                raise ValueError("gamma must be at least 1")
            return random_model(two_local_generators(range(t.n), t.edges, n), target, rng, n)
        if "depolarizing" in spec:
            return depolarizing_model(n, [g.qubits for g in layer.gates], float(spec["depolarizing"]["f"]))
        if isinstance(spec.get("terms"), dict):
            return SparseModel.from_terms(spec["terms"], n=n)
        model = SparseModel.from_dict({"n": n, **spec})
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"noise model: {exc}") from exc
    if model.n != n:
        raise ConfigError(f"noise model has {model.n} qubits, layer has {n}")
    return model


# ---------------------------------------------------------------------------
# output


def rows_to_csv(columns: Sequence[str], rows: Sequence[Mapping], provenance: Mapping) -> str:
    """Tidy CSV; floats use ``repr`` so that values round-trip exactly."""
    cols = list(columns) + list(PROVENANCE_COLUMNS)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        full = {**r, **{k: provenance[k] for k in PROVENANCE_COLUMNS}}
        w.writerow([repr(v) if isinstance(v, float) else v for v in (full[c] for c in cols)])
    return buf.getvalue()


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class RunDirectory:
    """Files staged in a scratch directory and published atomically.

    A run directory that already exists is left untouched: its name is the
    config hash, so its content is what this run would write.
    """

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.path = cfg.output_root / f"{command}-{cfg.hash[:12]}"
        self.files: dict[str, str] = {"config.json": dump_json(cfg.data)}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def publish(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            return self.path
        tmp = Path(tempfile.mkdtemp(prefix=f".{self.path.name}-", dir=self.path.parent))
        try:
            for name, text in self.files.items():
                (tmp / name).write_text(text)
            os.rename(tmp, self.path)
        except OSError:
            shutil.rmtree(tmp, ignore_errors=True)
            if not self.path.exists():
                raise
        return self.path


# ---------------------------------------------------------------------------
# commands


def cmd_bases(cfg: ExperimentConfig) -> Path:
    t = cfg.topology()
    bases = nine_bases(t, derive_rng(cfg.seed, "bases"))
    run = RunDirectory(cfg, "bases")
    run.add(
        "bases.json",
        dump_json(
            {
                "bases": bases,
                "order": order_vertices(t),
                "complete_coverage": check_edge_coverage(bases, t),
                "provenance": cfg.provenance(),
            }
        ),
    )
    return run.publish()


def _learn_all(
    cfg: ExperimentConfig, layers: Mapping[str, GateLayer], t: Topology, noise: NoiseSpec, backend: str, jobs: int
) -> dict:
    lcfg, opts = cfg.learning()
    K = cfg.generators(t)
    out = {}
    for tag, layer in layers.items():
        out[tag] = learn_layer_noise(
            layer, t, K, lcfg, noise, cfg.seed, tag=tag, completion=opts["completion"], weighted=opts["weighted"], backend=backend, jobs=jobs
        )
    return out


def cmd_learn(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    t = cfg.topology()
    layers = cfg.layers(t.n)
    noise = cfg.noise(layers, t)
    backend = cfg.backend("clifford")
    prov = cfg.provenance()
    run = RunDirectory(cfg, "learn")
    summary = {}
    for tag, (model, report) in _learn_all(cfg, layers, t, noise, backend, jobs).items():
        injected = noise.layer_models.get(tag)
        meta = {"tag": tag, **prov}
        run.add(f"model_{tag}.json", model.to_json(meta) + "\n")
        run.add(f"decays_{tag}.csv", decays_to_csv(report.decays, {"tag": tag, **{k: prov[k] for k in PROVENANCE_COLUMNS}}))
        fit = report.to_dict()
        fit["provenance"] = prov
        if injected is not None:
            fit["injected_gamma"] = gamma(injected)
        run.add(f"fit_{tag}.json", dump_json(fit))
        summary[tag] = {"gamma": report.gamma, "injected_gamma": gamma(injected) if injected is not None else None}
    run.add("summary.json", dump_json({"layers": summary, "provenance": prov}))
    return run.publish()


def _mitigation_models(cfg: ExperimentConfig, layers, t, noise, backend, jobs):
    s = cfg.section("pec")
    spec = s.get("models", "injected")
    if spec == "injected":
        missing = set(layers) - set(noise.layer_models)
        if missing:
            raise ConfigError(f"no injected model for layer(s) {sorted(missing)}")
        models = dict(noise.layer_models)
    elif spec == "learned":
        models = {tag: m for tag, (m, _) in _learn_all(cfg, layers, t, noise, "clifford" if backend == "auto" else backend, jobs).items()}
    elif isinstance(spec, dict):
        models = {tag: build_model(spec[tag], layer, t, derive_rng(cfg.seed, "pec-model", tag)) for tag, layer in layers.items() if tag in spec}
        if set(models) != set(layers):
            raise ConfigError(f"pec.models must cover layer(s) {sorted(layers)}")
    else:
        raise ConfigError("pec.models must be 'injected', 'learned' or a per-tag object")
    if s.get("expand", False):
        return {tag: InverseSampler(m, expand=True) for tag, m in models.items()}
    return models


def _mean_stderr(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    N = X.shape[0]
    return X.mean(axis=0), X.std(axis=0, ddof=1) / math.sqrt(N)


def cmd_mitigate(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    s = cfg.section("mitigate")
    try:
        c = Circuit.from_dict(s["circuit"])
        obs = [PauliString.from_label(p) for p in s["observables"]]
        N, shots = int(s.get("instances", 100)), int(s.get("shots", 100))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"mitigate: {exc}") from exc
    if N < 2 or shots < 1:
        raise ConfigError("mitigate: need instances >= 2 and shots >= 1")
    layers = {}
    for i in c.layer_moments:
        m = c.moments[i]
        layers.setdefault(m.tag, m.layer)
    t = build_topology(cfg.section("topology")) if "topology" in cfg.data else path_topology(c.n)
    noise = cfg.noise(layers, t)
    backend = cfg.backend("auto")
    models = _mitigation_models(cfg, layers, t, noise, backend, jobs)
    Xm, g = mitigated_instance_values(c, models, obs, N, shots, noise, derive_rng(cfg.seed, "mitigate", "pec"), backend)
    Xu, _ = mitigated_instance_values(c, None, obs, N, shots, noise, derive_rng(cfg.seed, "mitigate", "raw"), backend)
    ideal = noiseless_expectations(c, obs)
    (vm, em), (vu, eu) = _mean_stderr(Xm), _mean_stderr(Xu)
    rows = [
        {
            "observable": o.label,
            "mitigated": float(vm[j]),
            "mitigated_stderr": float(em[j]),
            "unmitigated": float(vu[j]),
            "unmitigated_stderr": float(eu[j]),
            "ideal": float(ideal[j]),
            "gamma": g,
            "instances": N,
            "shots": shots,
        }
        for j, o in enumerate(obs)
    ]
    prov = cfg.provenance()
    run = RunDirectory(cfg, "mitigate")
    run.add("mitigate.csv", rows_to_csv(list(rows[0]), rows, prov))
    run.add("mitigate.json", dump_json({"results": rows, "provenance": prov}))
    return run.publish()


@dataclass(frozen=True)
class IsingResultRow:
    step: int
    observable: str
    mitigated: float
    mitigated_stderr: float
    unmitigated: float
    unmitigated_stderr: float
    ideal: float
    gamma: float
    instances: int
    shots: int

    def __post_init__(self) -> None:
        vals = (self.mitigated, self.mitigated_stderr, self.unmitigated, self.unmitigated_stderr, self.ideal, self.gamma)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite value in row {self}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


ISING_COLUMNS = tuple(IsingResultRow.__dataclass_fields__)


def ising_observables(n: int, kinds: Sequence[str]) -> dict[str, list[PauliString]]:
    """Measured Paulis per basis letter; magnetization reads every qubit."""
    out: dict[str, list[PauliString]] = {}
    if "magnetization" in kinds:
        for a in "XYZ":
            out[a] = [PauliString.single(n, q, "Z") for q in range(n)]
    extra = []
    if "weight_n_minus_1" in kinds:
        extra += [PauliString.from_label("".join("I" if q == skip else "Z" for q in range(n))) for skip in range(n)]
    if "weight_n" in kinds:
        extra.append(PauliString.from_label("Z" * n))
    if extra:
        out["Z"] = out.get("Z", []) + extra
    return out


def _ising_task(args) -> dict:
    n, J, h, dt, s, letter, obs, models, noise, N, shots, seed, backend = args
    c = trotter_circuit(n, J, h, dt, s).append_measurement_basis(letter * n)
    Xm, g = mitigated_instance_values(c, models, obs, N, shots, noise, derive_rng(seed, "ising", s, letter, "pec"), backend)
    Xu, _ = mitigated_instance_values(c, None, obs, N, shots, noise, derive_rng(seed, "ising", s, letter, "raw"), backend)
    return {"pec": Xm, "raw": Xu, "ideal": noiseless_expectations(c, obs), "gamma": g}


def _relative_distance(M: np.ndarray, ideal: np.ndarray) -> float:
    return float(np.linalg.norm(M - ideal) / np.linalg.norm(ideal))


def _bootstrap_distance(per_basis: Sequence[np.ndarray], ideal: np.ndarray, B: int, rng: np.random.Generator) -> float:
    """Standard deviation of the relative distance under instance resampling."""
    if B < 2:
        return 0.0
    vals = np.empty(B)
    for r in range(B):
        M = np.array([x[rng.integers(0, len(x), len(x))].mean() for x in per_basis])
        vals[r] = _relative_distance(M, ideal)
    return float(vals.std(ddof=1))


def run_ising(cfg: ExperimentConfig, jobs: int = 1) -> list[IsingResultRow]:
    s = cfg.section("ising")
    try:
        n, J, h, dt = int(s["n"]), float(s["J"]), float(s["h"]), float(s["dt"])
        steps = s["steps"]
        steps = list(range(1, int(steps) + 1)) if isinstance(steps, int) else [int(v) for v in steps]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"ising: {exc}") from exc
    kinds = tuple(s.get("observables", ISING_OBSERVABLES))
    if set(kinds) - set(ISING_OBSERVABLES) or not kinds:
        raise ConfigError(f"ising.observables must be drawn from {ISING_OBSERVABLES}")
    if n < 2 or any(v < 1 for v in steps):
        raise ConfigError("ising: need n >= 2 and steps >= 1")
    backend = cfg.backend("auto")
    if backend == "clifford":
        raise ConfigError("the Ising circuits contain rotations; use the state backend")
    layers = trotter_layers(n)
    t = path_topology(n)
    noise = cfg.noise(layers, t)
    models = _mitigation_models(cfg, layers, t, noise, backend, jobs)
    p = cfg.section("pec")
    shots = int(p.get("shots", 64))
    obs = ising_observables(n, kinds)
    tasks = []
    for step in steps:
        g = gamma_total(trotter_circuit(n, J, h, dt, step), models)
        N = int(p["instances"]) if "instances" in p else instance_schedule(g, p.get("instances_cap", 200), p.get("instances_scale", 40.0))
        for letter, o in obs.items():
            tasks.append((n, J, h, dt, step, letter, o, models, noise, N, shots, cfg.seed, backend))
    results = parallel_map(_ising_task, tasks, jobs)
    B = int(p.get("bootstrap", 200))
    rows: list[IsingResultRow] = []
    by_step: dict[int, dict[str, tuple]] = {}
    for task, res in zip(tasks, results):
        step, letter, o, N = task[4], task[5], task[6], task[9]
        by_step.setdefault(step, {})[letter] = (task, res)
    for step in steps:
        cells = by_step[step]
        g = next(iter(cells.values()))[1]["gamma"]
        N = next(iter(cells.values()))[0][9]

        def row(label, xm, xu, ideal):
            (vm, em), (vu, eu) = _mean_stderr(xm[:, None]), _mean_stderr(xu[:, None])
            return IsingResultRow(step, label, float(vm[0]), float(em[0]), float(vu[0]), float(eu[0]), float(ideal), g, N, shots)

        if "magnetization" in kinds:
            per = {"pec": [], "raw": []}
            ideal_m = []
            for a in "XYZ":
                task, res = cells[a]
                xm, xu = res["pec"][:, :n].mean(axis=1), res["raw"][:, :n].mean(axis=1)
                im = float(res["ideal"][:n].mean())
                rows.append(row(f"M{a}", xm, xu, im))
                per["pec"].append(xm)
                per["raw"].append(xu)
                ideal_m.append(im)
            ideal_m = np.array(ideal_m)
            if np.linalg.norm(ideal_m) > 0:
                dist = {}
                for key in ("pec", "raw"):
                    M = np.array([x.mean() for x in per[key]])
                    se = _bootstrap_distance(per[key], ideal_m, B, derive_rng(cfg.seed, "ising-bootstrap", step, key))
                    dist[key] = (_relative_distance(M, ideal_m), se)
                rows.append(IsingResultRow(step, "distance", *dist["pec"], *dist["raw"], 0.0, g, N, shots))
        if "Z" in cells:
            task, res = cells["Z"]
            offset = n if "magnetization" in kinds else 0
            for j, o in enumerate(task[6][offset:], start=offset):
                rows.append(row(o.label, res["pec"][:, j], res["raw"][:, j], res["ideal"][j]))
    return rows


def cmd_ising(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    rows = [r.to_dict() for r in run_ising(cfg, jobs)]
    prov = cfg.provenance()
    run = RunDirectory(cfg, "ising")
    run.add("ising.csv", rows_to_csv(ISING_COLUMNS, rows, prov))
    run.add("ising.json", dump_json({"rows": rows, "provenance": prov}))
    return run.publish()


GAMMA_COLUMNS = (
    "n",
    "f",
    "gates_layer1",
    "gates_layer2",
    "gamma_layer1",
    "gamma_layer2",
    "gamma_step",
    "gamma_closed_form",
    "gamma_bar",
    "variance_factor",
)


def gamma_table(ns: Sequence[int], fs: Sequence[float]) -> list[dict]:
    """Overhead of one Trotter step under two-qubit depolarizing noise.

    The step has one layer of ``n // 2`` and one of ``(n - 1) // 2`` gates;
    every gate carries depolarizing noise of Pauli fidelity ``f``. The model
    value is checked against ``exp(-(15 k / 8) log f)`` with ``k`` the gate
    count. ``variance_factor`` is ``gamma_step**2``; ratios of it give the
    relative instance counts needed for equal precision.
    """
    rows = []
    for n in ns:
        if n < 2:
            raise ConfigError("gamma: n must be at least 2")
        k1, k2 = n // 2, (n - 1) // 2
        pairs1 = [(2 * j, 2 * j + 1) for j in range(k1)]
        pairs2 = [(2 * j + 1, 2 * j + 2) for j in range(k2)]
        for f in fs:
            g1 = gamma(depolarizing_model(n, pairs1, f)) if k1 else 1.0
            g2 = gamma(depolarizing_model(n, pairs2, f)) if k2 else 1.0
            closed = math.exp(-(15.0 * (k1 + k2) / 8.0) * math.log(f))
            rows.append(
                {
                    "n": n,
                    "f": float(f),
                    "gates_layer1": k1,
                    "gates_layer2": k2,
                    "gamma_layer1": g1,
                    "gamma_layer2": g2,
                    "gamma_step": g1 * g2,
                    "gamma_closed_form": closed,
                    "gamma_bar": gamma_bar(g1 * g2, n, 2),
                    "variance_factor": (g1 * g2) ** 2,
                }
            )
    return rows


def cmd_gamma_scaling(cfg: ExperimentConfig) -> Path:
    s = cfg.section("gamma")
    try:
        ns = [int(v) for v in s.get("n", [4, 10, 50])]
        fs = [float(v) for v in s.get("f", [0.99, 0.995, 0.999])]
        rows = gamma_table(ns, fs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"gamma: {exc}") from exc
    prov = cfg.provenance()
    run = RunDirectory(cfg, "gamma")
    run.add("gamma.csv", rows_to_csv(GAMMA_COLUMNS, rows, prov))
    run.add("gamma.json", dump_json({"rows": rows, "provenance": prov}))
    return run.publish()


def run_command(command: str, cfg: ExperimentConfig, jobs: int = 1) -> Path:
    if command == "learn":
        return cmd_learn(cfg, jobs)
    if command == "mitigate":
        return cmd_mitigate(cfg, jobs)
    if command == "ising":
        return cmd_ising(cfg, jobs)
    if command == "gamma":
        return cmd_gamma_scaling(cfg)
    if command == "bases":
        return cmd_bases(cfg)
    raise ConfigError(f"unknown command {command!r}")
