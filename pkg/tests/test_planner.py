from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plec.fitting import build_design_matrix, build_pair_design_matrix, rank
from plec.lindblad import two_local_generators
from plec.pauli import Gate, GateLayer, PauliString, conjugate_pauli
from plec.planner import (
    MeasurementPlan,
    NoValidOrdering,
    Topology,
    check_edge_coverage,
    complete_topology,
    grid_topology,
    heavy_hex_27,
    nine_bases,
    order_vertices,
    pair_rows,
    path_topology,
    plan_learning,
    star_topology,
)

P = PauliString.from_label
CHAIN4 = path_topology(4)
FIG_LAYER = GateLayer(4, (Gate("CX", 0, 1), Gate("CX", 2, 3)))


def valid_order(t, order):
    seen = set()
    for v in order:
        if len(set(t.neighbors(v)) & seen) > 2:
            return False
        seen.add(v)
    return sorted(order) == list(range(t.n))


def test_order_examples():
    assert order_vertices(path_topology(6)) == list(range(6))
    hh = heavy_hex_27()
    assert len(hh.edges) == 28
    assert valid_order(hh, order_vertices(hh))
    with pytest.raises(NoValidOrdering):
        order_vertices(complete_topology(4))


def random_tree(n, rng):
    return Topology(n, tuple((i, int(rng.integers(0, i))) for i in range(1, n)))


@pytest.mark.parametrize(
    "t",
    [path_topology(2), path_topology(3), path_topology(10), star_topology(4), grid_topology(3, 4), grid_topology(5, 5), heavy_hex_27()],
    ids=["edge", "path3", "path10", "star4", "grid3x4", "grid5x5", "heavyhex27"],
)
def test_nine_bases_cover_every_edge(t):
    rng = np.random.default_rng(0)
    bases = nine_bases(t, rng)
    assert len(bases) == 9
    assert all(len(b) == t.n and set(b) <= set("XYZ") for b in bases)
    assert check_edge_coverage(bases, t)
    assert valid_order(t, order_vertices(t))


def test_single_edge_gives_all_pairs():
    bases = nine_bases(path_topology(2), np.random.default_rng(5))
    assert sorted(bases) == sorted(a + b for a in "XYZ" for b in "XYZ")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_random_trees(n, seed):
    rng = np.random.default_rng(seed)
    t = random_tree(n, rng)
    assert check_edge_coverage(nine_bases(t, rng), t)


def test_k4_rejected_by_nine_bases():
    with pytest.raises(NoValidOrdering):
        nine_bases(complete_topology(4), np.random.default_rng(0))


def test_determinism():
    t = heavy_hex_27()
    a = nine_bases(t, np.random.default_rng(42))
    b = nine_bases(t, np.random.default_rng(42))
    assert a == b
    K = two_local_generators(range(4), CHAIN4.edges)
    p1 = plan_learning(FIG_LAYER, CHAIN4, K, np.random.default_rng(1))
    p2 = plan_learning(FIG_LAYER, CHAIN4, K, np.random.default_rng(1))
    assert p1 == p2
    assert MeasurementPlan.from_dict(p1.to_dict()) == p1


def test_topology_validation():
    with pytest.raises(ValueError):
        Topology(2, ((0, 0),))
    with pytest.raises(ValueError):
        Topology(2, ((0, 2),))
    assert Topology(3, ((1, 0), (0, 1))).edges == ((0, 1),)


def test_identity_layer_all_single():
    K = two_local_generators(range(4), CHAIN4.edges)
    plan = plan_learning(GateLayer(4), CHAIN4, K, np.random.default_rng(2))
    assert all(s.kind == "single" for s in plan.specs)


def test_cz_layer_pair():
    t = path_topology(2)
    layer = GateLayer(2, (Gate("CZ", 0, 1),))
    bases = ["XX", "XY", "XZ", "YX", "YY", "YZ", "ZX", "ZY", "ZZ"]
    plan = plan_learning(layer, t, two_local_generators([0, 1], t.edges), bases=bases)
    specs = plan.specs_for(bases.index("ZX"))
    assert any(s.b == P("IX") and s.b2 == P("ZX") for s in specs)


def test_fig_layer_plan():
    K = two_local_generators(range(4), CHAIN4.edges)
    plan = plan_learning(FIG_LAYER, CHAIN4, K, np.random.default_rng(3))
    assert len(plan.bases) == 9
    assert check_edge_coverage(plan.bases, CHAIN4)
    for s in plan.specs:
        basis = P(plan.bases[s.basis])
        # measured Pauli is a sub-Pauli of the basis string
        assert basis.restrict(s.b.support) == s.b
        if s.b2 is not None:
            assert conjugate_pauli(FIG_LAYER, s.b) == s.b2
    # the basis holding Z,Y on qubits 0,1 sees the pair IY..-ZY.. twice
    bi = next(i for i, b in enumerate(plan.bases) if b[:2] == "ZY")
    counts = Counter(s.key for s in plan.specs_for(bi))
    assert counts[(P("IYII"), P("ZYII"))] == 2
    covered = {p for s in plan.specs for p in s.key}
    assert set(K) <= covered


def test_plan_instance_counts_do_not_grow_with_n():
    rng = np.random.default_rng(4)
    hh = heavy_hex_27()
    # ten disjoint edges inside the 27-qubit map
    chosen, used = [], set()
    for i, j in hh.edges:
        if i not in used and j not in used and len(chosen) < 10:
            chosen.append((i, j))
            used |= {i, j}
    qubits = sorted(used)
    sub = hh.subgraph(qubits)
    idx = {q: k for k, q in enumerate(qubits)}
    layer20 = GateLayer(20, tuple(Gate("CX", idx[i], idx[j]) for i, j in chosen))
    K20 = two_local_generators(range(20), sub.edges)
    plan20 = plan_learning(layer20, sub, K20, rng)
    K4 = two_local_generators(range(4), CHAIN4.edges)
    plan4 = plan_learning(FIG_LAYER, CHAIN4, K4, rng)
    assert plan20.circuits_per_depth(100) == plan4.circuits_per_depth(100) == 900


@pytest.mark.parametrize(
    "layer,t",
    [
        (GateLayer(2, (Gate("CX", 0, 1),)), path_topology(2)),
        (GateLayer(2, (Gate("CZ", 1, 0),)), path_topology(2)),
        (FIG_LAYER, CHAIN4),
        (GateLayer(4, (Gate("CZ", 0, 1), Gate("CX", 3, 2))), CHAIN4),
    ],
)
def test_pair_rank_theorem(layer, t):
    B1, B2 = pair_rows(layer, t)
    K = B1
    M = build_pair_design_matrix(B1, B2, K).entries
    assert rank(M) == len(K) == len(two_local_generators(range(t.n), t.edges))
    # each pair partner restricted to the gate pair keeps P1's letters or drops them
    for p1, p2 in zip(B1, B2):
        for q in p1.support:
            assert p2.letter(q) in (p1.letter(q), "I")


def test_single_rank_theorem_shapes():
    for t in [path_topology(n) for n in range(2, 7)] + [star_topology(4), heavy_hex_27().subgraph([0, 1, 2, 3, 4, 7, 10])]:
        K = two_local_generators(range(t.n), t.edges)
        assert rank(build_design_matrix(K, K).entries) == len(K)
