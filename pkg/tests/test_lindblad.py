from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from plec.lindblad import (
    SparseModel,
    all_paulis,
    canonical_probabilities,
    compose,
    depolarizing_model,
    fidelities,
    fidelity,
    fidelity_vector,
    gamma,
    gamma_bar,
    invert,
    sample_physical,
    scale,
    two_local_generators,
    walsh_hadamard,
)
from plec.pauli import PauliString

from oracles import dense

P = PauliString.from_label


def random_model(rng, qubits=2, edges=((0, 1),), lam_max=0.05):
    gens = two_local_generators(range(qubits), edges)
    return SparseModel(gens, rng.uniform(0, lam_max, len(gens)))


def dense_channel(m: SparseModel):
    mats = [(w, dense(g)) for g, w in zip(m.generators, m.w)]

    def apply(rho):
        for w, Pk in mats:
            rho = w * rho + (1 - w) * Pk @ rho @ Pk.conj().T
        return rho

    return apply


@pytest.mark.parametrize("n,edges,count", [(1, [], 3), (2, [(0, 1)], 15), (4, [(0, 1), (1, 2), (2, 3)], 39), (6, [(i, i + 1) for i in range(5)], 63)])
def test_two_local_counts(n, edges, count):
    gens = two_local_generators(range(n), edges)
    assert len(gens) == count == 3 * n + 9 * len(edges)
    assert len(set(gens)) == count
    assert gens == two_local_generators(list(reversed(range(n))), edges)


def test_two_local_single_qubit_and_bad_edge():
    assert [g.label for g in two_local_generators([0], [])] == ["X", "Y", "Z"]
    with pytest.raises(ValueError):
        two_local_generators([0, 1], [(1, 2)])


def test_fidelity_examples():
    m = SparseModel.from_terms({"Z": 0.01})
    assert fidelity(m, P("X")) == pytest.approx(math.exp(-0.02), abs=1e-15)
    assert fidelity(m, P("Z")) == 1.0
    assert fidelity(m, P("I")) == 1.0
    # single-factor channel evaluated directly: Tr[X L(X)]/2 = 2w - 1
    w = m.w[0]
    assert fidelity(m, P("X")) == pytest.approx(2 * w - 1, abs=1e-15)


def test_depolarizing_fidelity_is_uniform():
    f = 0.97
    m = depolarizing_model(2, [(0, 1)], f)
    assert len(m) == 15
    fs = fidelities(m, all_paulis(2)[1:])
    assert np.allclose(fs, f, atol=1e-14)


def test_vectorized_fidelities_bit_identical():
    rng = np.random.default_rng(1)
    m = random_model(rng, 4, [(0, 1), (1, 2), (2, 3)])
    B = all_paulis(4)[::7]
    vec = fidelities(m, B)
    for b, v in zip(B, vec):
        assert fidelity(m, b) == v


@pytest.mark.parametrize("seed", range(5))
def test_fidelities_match_dense_transfer_matrix(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    chan = dense_channel(m)
    for b in all_paulis(2):
        Pb = dense(b)
        f = np.trace(Pb @ chan(Pb)).real / 4
        assert fidelity(m, b) == pytest.approx(f, abs=1e-12)
        assert 0 < fidelity(m, b) <= 1


def test_gamma_examples():
    assert gamma(SparseModel.zero(2, two_local_generators([0, 1], [(0, 1)]))) == 1.0
    assert gamma_bar(1.0, 7, 3) == 1.0
    m = depolarizing_model(4, [(0, 1), (2, 3)], 0.99)
    assert gamma(m) == pytest.approx(math.exp(-(15 * 2 / 8) * math.log(0.99)), rel=1e-12)
    assert gamma_bar(gamma(m) ** 12, 4, 3) == pytest.approx(gamma(m), rel=1e-12)


@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=15))
def test_gamma_identity(lams):
    gens = two_local_generators([0, 1], [(0, 1)])[: len(lams)]
    m = SparseModel(gens, lams)
    prod = np.prod(1.0 / (2 * m.w - 1))
    assert gamma(m) == pytest.approx(prod, rel=1e-12)


def test_compose_and_scale():
    rng = np.random.default_rng(7)
    m1, m2 = random_model(rng), random_model(rng)
    m3 = SparseModel.from_terms({"XX": 0.02, "ZI": 0.01})
    zero = SparseModel.zero(2)
    assert compose(m1, zero) == m1
    c = compose(m1, m1)
    assert np.allclose(c.lambdas, scale(m1, 2).lambdas, rtol=0, atol=0)
    for a, b in ((m1, m2), (m2, m3)):
        cm = compose(a, b)
        for p in all_paulis(2):
            assert fidelity(cm, p) == pytest.approx(fidelity(a, p) * fidelity(b, p), abs=1e-12)
    with pytest.raises(ValueError):
        scale(m1, -0.1)


def test_compose_random_large_register():
    rng = np.random.default_rng(2)
    n = 27
    edges = [(i, i + 1) for i in range(n - 1)]
    m1 = random_model(rng, n, edges)
    m2 = SparseModel(two_local_generators(range(n), edges[:5]), rng.uniform(0, 0.03, 3 * n + 45))
    c = compose(m1, m2)
    from plec.pauli import random_pauli

    for _ in range(20):
        b = random_pauli(n, None, rng)
        assert fidelity(c, b) == pytest.approx(fidelity(m1, b) * fidelity(m2, b), rel=1e-12)


def test_invert():
    inv0 = invert(SparseModel.zero(1, [P("Z")]))
    assert inv0.gamma == 1.0
    assert inv0.inverse_fidelity(P("X")) == 1.0
    inv = invert(SparseModel.from_terms({"Z": 0.01}))
    assert inv.inverse_fidelity(P("X")) == pytest.approx(math.exp(0.02), abs=1e-15)
    assert inv.gamma == pytest.approx(math.exp(0.02), abs=1e-15)
    dep = invert(depolarizing_model(2, [(0, 1)], 0.99))
    assert dep.gamma == pytest.approx(1.01903, abs=1e-5)
    rng = np.random.default_rng(4)
    m = random_model(rng)
    inv = invert(m)
    for b in all_paulis(2):
        assert fidelity(m, b) * inv.inverse_fidelity(b) == pytest.approx(1.0, abs=1e-12)


def test_invalid_models():
    with pytest.raises(ValueError):
        SparseModel([P("X")], [-0.1])
    with pytest.raises(ValueError):
        SparseModel([P("X"), P("X")], [0.1, 0.1])
    with pytest.raises(ValueError):
        SparseModel([P("II")], [0.1])


def test_sample_physical_zero_and_single_term():
    rng = np.random.default_rng(5)
    zero = SparseModel.zero(2, two_local_generators([0, 1], [(0, 1)]))
    assert all(sample_physical(zero, rng).is_identity() for _ in range(100))
    lam = 0.05
    m = SparseModel.from_terms({"Z": lam})
    from plec.lindblad import sample_inclusions

    hits = sample_inclusions(m, 1_000_000, rng)[:, 0].mean()
    p = (1 - math.exp(-2 * lam)) / 2
    assert abs(hits - p) < 5 * math.sqrt(p * (1 - p) / 1e6)


def test_sample_physical_matches_canonical_probabilities():
    rng = np.random.default_rng(6)
    m = random_model(rng, lam_max=0.15)
    probs = canonical_probabilities(m)
    draws = 40_000
    counts = {p: 0 for p in all_paulis(2)}
    for _ in range(draws):
        counts[sample_physical(m, rng)] += 1
    exp = np.array([probs.get(p, 0.0) for p in counts]) * draws
    obs = np.array(list(counts.values()))
    keep = exp > 5
    _, pval = stats.chisquare(obs[keep], exp[keep] * obs[keep].sum() / exp[keep].sum())
    assert pval > 0.001


def test_canonical_probability_examples():
    assert canonical_probabilities(SparseModel.zero(1, [P("Z")])) == {P("I"): 1.0, P("Z"): 0.0}
    m = SparseModel.from_terms({"Z": 0.03})
    c = canonical_probabilities(m)
    assert c[P("I")] == pytest.approx(m.w[0])
    assert c[P("Z")] == pytest.approx(1 - m.w[0])


@pytest.mark.parametrize("seed", range(10))
def test_product_expansion_equals_walsh(seed):
    rng = np.random.default_rng(100 + seed)
    m = random_model(rng, lam_max=0.1)
    prod = canonical_probabilities(m, "product")
    walsh = canonical_probabilities(m, "walsh")
    for p in all_paulis(2):
        assert prod.get(p, 0.0) == pytest.approx(walsh[p], abs=1e-12)
    assert sum(prod.values()) == pytest.approx(1.0, abs=1e-12)
    assert min(prod.values()) >= 0


def test_canonical_size_guard():
    gens = two_local_generators(range(4), [(0, 1), (1, 2), (2, 3)])
    m = SparseModel(gens, np.full(len(gens), 0.01))
    with pytest.raises(ValueError):
        canonical_probabilities(m, "product")


def test_walsh_examples():
    assert np.allclose(walsh_hadamard(np.ones(16)), np.eye(16)[0])
    x = 0.8
    c = walsh_hadamard([1, x, x, x])
    assert np.allclose(c, [(1 + 3 * x) / 4, (1 - x) / 4, (1 - x) / 4, (1 - x) / 4])
    with pytest.raises(ValueError):
        walsh_hadamard(np.ones(8))
    m = SparseModel.from_terms({"XI": 0.05, "IZ": 0.04, "YY": 0.03})
    c_inv = walsh_hadamard(1.0 / fidelity_vector(m))
    assert c_inv.min() < 0
    assert c_inv.sum() == pytest.approx(1.0)
    assert np.abs(c_inv).sum() == pytest.approx(gamma(m), rel=1e-12)


@settings(max_examples=30)
@given(st.lists(st.floats(0, 0.1), min_size=15, max_size=15))
def test_model_json_round_trip(lams):
    m = SparseModel(two_local_generators([0, 1], [(0, 1)]), lams)
    back = SparseModel.from_json(m.to_json({"source": "test"}))
    assert back == m
    assert np.array_equal(back.lambdas, m.lambdas)
