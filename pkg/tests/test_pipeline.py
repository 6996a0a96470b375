from __future__ import annotations

import csv
import io
import json
import math
from functools import reduce

import numpy as np
import pytest
from scipy.linalg import expm

from plec import cli, pipeline
from plec.circuits import LayerMoment
from plec.lindblad import SparseModel
from plec.pauli import PauliString
from plec.pipeline import (
    ConfigError,
    ExperimentConfig,
    gamma_table,
    instance_schedule,
    trotter_circuit,
    trotter_layers,
)
from plec.simulators import noiseless_expectation, noiseless_expectations

P = PauliString.from_label
X2 = np.array([[0, 1], [1, 0]], dtype=complex)
Z2 = np.diag([1.0, -1.0]).astype(complex)


def kron_at(ops: dict, n: int) -> np.ndarray:
    return reduce(np.kron, [ops.get(q, np.eye(2)) for q in range(n)])


def trotter_unitary(n, J, h, dt, steps):
    """Product formula built directly from Hamiltonian terms."""
    step = np.eye(2**n, dtype=complex)
    step = expm(-1j * h * dt * sum(kron_at({q: X2}, n) for q in range(n))) @ step
    for start in (0, 1):
        zz = sum((kron_at({j: Z2, j + 1: Z2}, n) for j in range(start, n - 1, 2)), np.zeros((2**n, 2**n)))
        step = expm(1j * J * dt * zz) @ step
    return np.linalg.matrix_power(step, steps)


# ---------------------------------------------------------------------------
# Trotter circuits


def test_trotter_layer_count_and_tags():
    c = trotter_circuit(4, 0.15, 1.0, 0.25, 1)
    assert len(c.layer_moments) == 4
    assert sorted(set(c.tags())) == ["even", "odd"]
    assert [m.tag for m in c.moments if isinstance(m, LayerMoment)] == ["even", "even", "odd", "odd"]
    assert len(trotter_circuit(4, 0.15, 1.0, 0.25, 5).layer_moments) == 20


def test_trotter_small_chain_has_one_layer():
    assert trotter_circuit(2, 0.3, 1.0, 0.25, 2).tags() == ["even"]
    assert set(trotter_layers(5)) == {"even", "odd"}
    with pytest.raises(ValueError):
        trotter_circuit(1, 0.1, 1.0, 0.25, 1)


@pytest.mark.parametrize("n,steps", [(3, 2), (4, 1), (5, 3), (6, 2)])
def test_trotter_matches_product_formula(n, steps):
    J, h, dt = 0.5236, 1.0, 0.25
    c = trotter_circuit(n, J, h, dt, steps)
    psi = trotter_unitary(n, J, h, dt, steps)[:, 0]
    for label in ["Z" * n, "Z" + "I" * (n - 1), "I" * (n - 1) + "Z"]:
        M = reduce(np.kron, [Z2 if a == "Z" else np.eye(2) for a in label])
        assert noiseless_expectation(c, P(label)) == pytest.approx(float(np.vdot(psi, M @ psi).real), abs=1e-12)


def test_trotter_without_coupling_is_bare_rotation():
    n, h, dt, s = 4, 1.0, 0.25, 3
    c = trotter_circuit(n, 0.0, h, dt, s)
    for q in range(n):
        assert noiseless_expectation(c, PauliString.single(n, q, "Z")) == pytest.approx(math.cos(2 * h * dt * s), abs=1e-12)


def test_trotter_zero_timestep_is_identity():
    c = trotter_circuit(5, 0.4, 1.0, 0.0, 4)
    obs = [P("ZZZZZ"), P("ZIIII"), P("IIIZZ")]
    assert np.allclose(noiseless_expectations(c, obs), 1.0)
    assert np.allclose(noiseless_expectations(c.append_measurement_basis("XXXXX"), [P("ZIIII")]), 0.0)


def test_high_weight_ideal_value_at_one_step():
    c = trotter_circuit(8, 0.5236, 1.0, 0.25, 1)
    assert noiseless_expectation(c, P("Z" * 8)) == pytest.approx(math.cos(0.5) ** 8, abs=1e-12)


@pytest.mark.parametrize("g,expected", [(1.0, 40), (1.5, 60), (1.1**4, 59), (5.0, 200), (100.0, 200)])
def test_instance_schedule(g, expected):
    assert instance_schedule(g) == expected


def test_instance_schedule_follows_step_overhead():
    # 40 (gamma_1 gamma_2)^(2 s), capped at 200
    g_pair = 1.1
    for s in range(1, 9):
        c = trotter_circuit(4, 0.15, 1.0, 0.25, s)
        model = SparseModel.from_terms({"XIII": math.log(math.sqrt(g_pair)) / 2}, n=4)
        g = pipeline.gamma_total(c, {"even": model, "odd": model})
        assert g == pytest.approx(g_pair ** (2 * s))
        assert instance_schedule(g) == min(200, math.ceil(40 * g_pair ** (2 * s) - 1e-9))


# ---------------------------------------------------------------------------
# overhead table


def test_gamma_table_examples():
    rows = {(r["n"], r["f"]): r for r in gamma_table([4, 10, 50], [0.99, 0.999, 1.0])}
    r = rows[(4, 0.99)]
    assert (r["gates_layer1"], r["gates_layer2"]) == (2, 1)
    assert r["gamma_step"] == pytest.approx(math.exp(-(15 / 8) * 3 * math.log(0.99)), rel=1e-12)
    for n in (4, 10, 50):
        assert rows[(n, 1.0)]["gamma_step"] == 1.0
        assert rows[(n, 0.999)]["gamma_step"] == pytest.approx(rows[(n, 0.999)]["gamma_closed_form"], rel=1e-12)
    ratio = rows[(50, 0.99)]["variance_factor"] / rows[(50, 0.999)]["variance_factor"]
    assert ratio == pytest.approx((rows[(50, 0.99)]["gamma_step"] / rows[(50, 0.999)]["gamma_step"]) ** 2)
    assert rows[(10, 0.99)]["gamma_bar"] ** 20 == pytest.approx(rows[(10, 0.99)]["gamma_step"])


# ---------------------------------------------------------------------------
# configs


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


LEARN_CONFIG = {
    "seed": 5,
    "topology": {"kind": "path", "n": 4},
    "layers": [{"tag": "layer", "gates": [["CX", 0, 1], ["CX", 2, 3]]}],
    "noise": {"models": {"layer": {"random": {"gamma": 1.04}}}},
    "learning": {"depths": [0, 2, 4, 8], "instances": 12, "shots": 32, "bootstrap": 10},
}

ISING_CONFIG = {
    "seed": 2,
    "noise": {"models": {"default": {"random": {"gamma": 1.05}}}},
    "pec": {"shots": 16, "instances_cap": 30},
    "ising": {"n": 3, "J": 0.15, "h": 1.0, "dt": 0.25, "steps": 2},
}


def test_config_requires_seed(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig.from_dict({"topology": {"kind": "path", "n": 2}}, tmp_path)
    cfg = ExperimentConfig.from_dict({}, tmp_path, seed=4)
    assert cfg.seed == 4
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seed": -1}, tmp_path)


def test_config_inlines_files_and_hashes_content(tmp_path):
    write(tmp_path / "topo.json", {"n": 3, "edges": [[0, 1], [1, 2]]})
    a = ExperimentConfig.from_dict({"seed": 1, "topology": {"file": "topo.json"}}, tmp_path)
    b = ExperimentConfig.from_dict({"seed": 1, "topology": {"n": 3, "edges": [[0, 1], [1, 2]]}}, tmp_path)
    assert a.topology().edges == ((0, 1), (1, 2))
    assert a.hash == b.hash
    assert ExperimentConfig.from_dict({"seed": 1, "topology": {"file": "topo.json"}}, tmp_path, seed=2).hash != a.hash
    # the output location is not part of the content
    assert ExperimentConfig.from_dict({"seed": 1, "topology": {"file": "topo.json"}}, tmp_path, out=tmp_path / "x").hash == a.hash


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.from_dict({"seed": 1, "topology": {"file": "nope.json"}}, tmp_path)


@pytest.mark.parametrize(
    "bad",
    [
        {"layers": [{"tag": "a", "gates": [["CX", 0, 9]]}]},
        {"layers": [{"tag": "a", "gates": [["CX", 0, 1]]}, {"tag": "a", "gates": [["CX", 1, 2]]}]},
        {"layers": []},
        {"topology": {"kind": "torus", "n": 3}},
        {"noise": {"models": {"default": {"random": {"gamma": 0.5}}}}},
        {"learning": {"depths": [0, 3]}},
    ],
)
def test_learn_config_errors(tmp_path, bad):
    cfg = ExperimentConfig.from_dict({**LEARN_CONFIG, **bad}, tmp_path)
    with pytest.raises(ConfigError):
        pipeline.cmd_learn(cfg)


def test_model_specs(tmp_path):
    model = SparseModel.from_terms({"XI": 0.01, "ZZ": 0.02})
    model.save(tmp_path / "m.json")
    layer = trotter_layers(2)["even"]
    t = pipeline.path_topology(2)
    rng = np.random.default_rng(0)
    loaded = pipeline.build_model(pipeline._inline_files({"file": "m.json"}, tmp_path), layer, t, rng)
    assert loaded == model
    assert pipeline.build_model({"terms": {"XI": 0.01, "ZZ": 0.02}}, layer, t, rng) == model
    dep = pipeline.build_model({"depolarizing": {"f": 0.99}}, layer, t, rng)
    assert len(dep) == 15
    g = pipeline.gamma(pipeline.build_model({"random": {"gamma": [1.02, 1.06]}}, layer, t, rng))
    assert 1.02 <= g <= 1.06


# ---------------------------------------------------------------------------
# commands


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def run_cli(*args):
    return cli.main([str(a) for a in args])


def test_cli_learn_outputs_and_provenance(tmp_path, capsys):
    cfg = write(tmp_path / "learn.json", LEARN_CONFIG)
    assert run_cli("learn", "--config", cfg, "--out", tmp_path / "out") == 0
    run = next((tmp_path / "out").iterdir())
    assert run.name.startswith("learn-")
    names = sorted(p.name for p in run.iterdir())
    assert names == ["config.json", "decays_layer.csv", "fit_layer.json", "model_layer.json", "summary.json"]
    model = SparseModel.load(run / "model_layer.json")
    assert len(model) == 4 * 3 + 3 * 9
    summary = json.loads((run / "summary.json").read_text())
    assert summary["layers"]["layer"]["gamma"] == pytest.approx(1.04, abs=0.05)
    h = summary["provenance"]["config_hash"]
    assert run.name == f"learn-{h[:12]}"
    rows = read_csv(run / "decays_layer.csv")
    assert rows and all(r["config_hash"] == h and r["seed"] == "5" and r["plec_version"] for r in rows)
    assert str(run) in capsys.readouterr().out


def test_cli_is_deterministic_and_content_addressed(tmp_path):
    cfg = write(tmp_path / "learn.json", LEARN_CONFIG)
    outs = []
    for k in range(2):
        assert run_cli("learn", "--config", cfg, "--out", tmp_path / f"o{k}") == 0
        outs.append(next((tmp_path / f"o{k}").iterdir()))
    assert outs[0].name == outs[1].name
    for f in outs[0].iterdir():
        assert f.read_bytes() == (outs[1] / f.name).read_bytes()
    # a different seed lands in a different run directory
    assert run_cli("learn", "--config", cfg, "--out", tmp_path / "o0", "--seed", 6) == 0
    assert len(list((tmp_path / "o0").iterdir())) == 2
    # rerunning an existing config leaves the directory as it was
    assert run_cli("learn", "--config", cfg, "--out", tmp_path / "o0") == 0
    assert len(list((tmp_path / "o0").iterdir())) == 2


@pytest.mark.parametrize(
    "setup,args",
    [
        (None, ["learn", "--config", "missing.json"]),
        ("{not json", ["learn", "--config", "cfg.json"]),
        ({"layers": []}, ["learn", "--config", "cfg.json"]),
        ({**LEARN_CONFIG, "topology": {"file": "missing_topology.json"}}, ["learn", "--config", "cfg.json"]),
        ({k: v for k, v in LEARN_CONFIG.items() if k != "seed"}, ["learn", "--config", "cfg.json"]),
        (LEARN_CONFIG, ["learn", "--config", "cfg.json", "--jobs", "0"]),
        (LEARN_CONFIG, ["frobnicate", "--config", "cfg.json"]),
        (ISING_CONFIG, ["ising", "--config", "cfg.json", "--backend", "clifford"]),
    ],
)
def test_cli_user_errors_exit_one(tmp_path, monkeypatch, capsys, setup, args):
    monkeypatch.chdir(tmp_path)
    if isinstance(setup, str):
        (tmp_path / "cfg.json").write_text(setup)
    elif setup is not None:
        write(tmp_path / "cfg.json", setup)
    assert run_cli(*args) == 1
    assert capsys.readouterr().err


def test_cli_internal_error_exits_two(tmp_path, monkeypatch):
    cfg = write(tmp_path / "g.json", {"seed": 0})

    def boom(*a, **k):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "run_command", boom)
    assert run_cli("gamma", "--config", cfg, "--out", tmp_path) == 2


def test_cli_gamma_table(tmp_path):
    cfg = write(tmp_path / "g.json", {"seed": 0, "gamma": {"n": [4, 10, 50], "f": [0.99, 0.995]}})
    assert run_cli("gamma", "--config", cfg, "--out", tmp_path / "out") == 0
    rows = read_csv(next((tmp_path / "out").iterdir()) / "gamma.csv")
    assert len(rows) == 6
    for r in rows:
        assert float(r["gamma_step"]) == pytest.approx(float(r["gamma_closed_form"]), rel=1e-12)
        assert int(r["gates_layer1"]) + int(r["gates_layer2"]) == int(r["n"]) - 1


def test_cli_bases(tmp_path):
    cfg = write(tmp_path / "b.json", {"seed": 0, "topology": {"kind": "heavy_hex_27"}})
    assert run_cli("bases", "--config", cfg, "--out", tmp_path / "out") == 0
    d = json.loads((next((tmp_path / "out").iterdir()) / "bases.json").read_text())
    assert len(d["bases"]) == 9 and d["complete_coverage"]


def test_cli_mitigate_bell(tmp_path):
    circuit = {
        "n": 2,
        "moments": [
            {"kind": "1q", "ops": {"0": [["H"]]}},
            {"kind": "layer", "tag": "cx", "gates": [{"kind": "CX", "control": 0, "target": 1}]},
            {"kind": "1q", "ops": {}},
        ],
    }
    cfg = {
        "seed": 3,
        "noise": {"models": {"cx": {"terms": {"IX": 0.02, "ZI": 0.03, "XX": 0.01}}}},
        "mitigate": {"circuit": circuit, "observables": ["ZZ", "ZI"], "instances": 4000, "shots": 8},
    }
    assert run_cli("mitigate", "--config", write(tmp_path / "m.json", cfg), "--out", tmp_path / "out") == 0
    rows = {r["observable"]: r for r in json.loads((next((tmp_path / "out").iterdir()) / "mitigate.json").read_text())["results"]}
    zz = rows["ZZ"]
    assert zz["ideal"] == pytest.approx(1.0, abs=1e-12)
    assert abs(zz["mitigated"] - 1.0) < 4 * zz["mitigated_stderr"]
    assert 1.0 - zz["unmitigated"] > 5 * zz["unmitigated_stderr"]
    assert zz["gamma"] == pytest.approx(math.exp(2 * 0.06))


def test_ising_rows_and_parallel_equivalence(tmp_path):
    a = pipeline.run_ising(ExperimentConfig.from_dict(ISING_CONFIG, tmp_path))
    b = pipeline.run_ising(ExperimentConfig.from_dict(ISING_CONFIG, tmp_path), jobs=2)
    assert a == b
    labels = [r.observable for r in a if r.step == 1]
    assert labels == ["MX", "MY", "MZ", "distance", "IZZ", "ZIZ", "ZZI", "ZZZ"]
    for r in a:
        assert r.instances == instance_schedule(r.gamma, 30)
        if r.observable != "distance":
            assert abs(r.mitigated - r.ideal) < 5 * r.mitigated_stderr + 1e-12


def test_ising_zero_noise(tmp_path):
    zero = {"terms": {}}
    cfg = {**ISING_CONFIG, "noise": {}, "pec": {"models": {"even": zero, "odd": zero}, "shots": 32, "instances": 40}}
    rows = pipeline.run_ising(ExperimentConfig.from_dict(cfg, tmp_path))
    for r in rows:
        assert r.gamma == 1.0
        if r.observable != "distance":
            assert abs(r.mitigated - r.unmitigated) < 4 * math.hypot(r.mitigated_stderr, r.unmitigated_stderr) + 1e-12


def test_ising_needs_models_for_every_layer(tmp_path):
    cfg = {**ISING_CONFIG, "noise": {"models": {"even": {"random": {"gamma": 1.05}}}}}
    with pytest.raises(ConfigError, match="odd"):
        pipeline.run_ising(ExperimentConfig.from_dict(cfg, tmp_path))


def test_ising_ten_qubit_weight_ten(tmp_path):
    cfg = {
        "seed": 11,
        "noise": {"models": {"default": {"random": {"gamma": 1.1}}}},
        "pec": {"shots": 64, "instances": 60},
        "ising": {"n": 10, "J": 0.5236, "h": 1.0, "dt": 0.25, "steps": [1], "observables": ["weight_n"]},
    }
    (row,) = pipeline.run_ising(ExperimentConfig.from_dict(cfg, tmp_path))
    assert row.observable == "Z" * 10
    assert row.ideal == pytest.approx(math.cos(0.5) ** 10, abs=1e-12)
    assert abs(row.mitigated - row.ideal) < 3 * row.mitigated_stderr


def test_learned_models_feed_mitigation(tmp_path):
    cfg = {
        **ISING_CONFIG,
        "pec": {"models": "learned", "shots": 32, "instances": 200},
        "learning": {"depths": [0, 2, 4], "instances": 10, "shots": 64, "bootstrap": 0},
        "ising": {**ISING_CONFIG["ising"], "steps": [1], "observables": ["weight_n"]},
    }
    (row,) = pipeline.run_ising(ExperimentConfig.from_dict(cfg, tmp_path))
    # each layer runs twice per step
    assert row.gamma == pytest.approx(1.05**4, abs=0.05)
    assert abs(row.mitigated - row.ideal) < 5 * row.mitigated_stderr
