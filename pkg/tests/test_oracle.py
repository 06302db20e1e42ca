import itertools

import numpy as np
import pytest

from sbmbench.instances import generate_sidon_instance, king_graph, complete_graph
from sbmbench.ising import IsingModel, energy
from sbmbench.oracle import MAX_SPINS, OracleRefused, brute_force_ground_state


def enumerate_dense(model):
    """Independent oracle: energies of all 2**n states, lexicographic order (-1 < +1)."""
    n = model.n
    S = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    J, h = model.dense_couplings(), model.fields
    E = -0.5 * np.einsum("ki,ij,kj->k", S, J, S) - S @ h
    return E, S


def test_ferromagnetic_pair_lexicographic_tie():
    m = IsingModel.from_couplings(2, {(0, 1): 1.0})
    e0, s = brute_force_ground_state(m)
    assert e0 == -1.0
    assert s.tolist() == [-1, -1]


def test_single_field():
    e0, s = brute_force_ground_state(IsingModel(1, fields=[1.0]))
    assert e0 == -1.0 and s.tolist() == [1]


@pytest.mark.parametrize("seed", range(4))
def test_sidon_16_matches_independent_enumerator(seed):
    m = generate_sidon_instance(king_graph(4), seed=seed)
    e0, s = brute_force_ground_state(m)
    E, S = enumerate_dense(m)
    assert e0 == pytest.approx(E.min(), abs=1e-12)
    # first minimizer in lexicographic order
    tol = 1e-9
    first = int(np.flatnonzero(E <= E.min() + tol)[0])
    assert s.tolist() == S[first].astype(int).tolist()


@pytest.mark.parametrize("n,seed", [(3, 0), (7, 1), (12, 2), (17, 3), (20, 4)])
def test_argmin_energy_is_e0(n, seed):
    rs = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rs.random() < 0.4]
    m = IsingModel.from_couplings(n, {p: rs.normal() for p in pairs}, rs.normal(size=n))
    e0, s = brute_force_ground_state(m)
    assert energy(m, s) == e0
    if n <= 16:
        assert e0 == pytest.approx(enumerate_dense(m)[0].min(), abs=1e-10)


def test_worker_count_does_not_change_result():
    m = generate_sidon_instance(complete_graph(14), seed=5)
    a = brute_force_ground_state(m, n_workers=1)
    b = brute_force_ground_state(m, n_workers=3)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_degenerate_zero_model_picks_all_down():
    e0, s = brute_force_ground_state(IsingModel(5))
    assert e0 == 0.0 and s.tolist() == [-1] * 5


def test_refuses_above_cap():
    with pytest.raises(OracleRefused, match="cap"):
        brute_force_ground_state(IsingModel(MAX_SPINS + 1))
