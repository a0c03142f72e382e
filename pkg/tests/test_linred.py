import time

import numpy as np
import pytest

from ssmc.errors import InvariantError
from ssmc.linred import (
    actuated_dofs,
    build_reduced_linear,
    dcgains,
    hinf_bound_check,
    mhsvs,
    observation_matrix,
    rank_modes,
    ranking_frame,
    realify,
    reduced_initial_condition,
    select_basis,
)
from ssmc.mechmodel import to_first_order
from ssmc.spectral import EigenPair, solve_modes

from .conftest import random_stable_system


@pytest.fixture(scope="module")
def chain_rank(chain_sys, chain_fo, chain_pairs):
    C = observation_matrix(chain_sys.n, actuated_dofs(chain_sys.D))
    return rank_modes(chain_pairs, chain_fo.Bext, C, m_hat=10), C


def test_actuated_dofs(chain_sys):
    assert actuated_dofs(chain_sys.D) == [1, 5]


def test_observation_matrix_picks_displacements():
    C = observation_matrix(3, [1, 3])
    np.testing.assert_array_equal(C, [[1, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0]])
    with pytest.raises(ValueError):
        observation_matrix(3, [4])


def test_chain_metric_sums(chain_fo, chain_pairs, chain_sys):
    t0 = time.time()
    C = observation_matrix(chain_sys.n, [1, 5])
    ranks = rank_modes(chain_pairs, chain_fo.Bext, C, m_hat=10)
    assert time.time() - t0 < 1.0
    first5 = ranks[:5]
    assert sum(r.normalized_dcgain for r in first5) == pytest.approx(0.907, abs=5e-3)
    assert sum(r.normalized_mhsv for r in first5) == pytest.approx(0.978, abs=5e-3)


def test_normalized_metrics_sum_to_one(chain_rank):
    ranks, _ = chain_rank
    assert sum(r.normalized_dcgain for r in ranks) == pytest.approx(1.0)
    assert sum(r.normalized_mhsv for r in ranks) == pytest.approx(1.0)


def test_dcgain_matches_transfer_function_at_zero(chain_fo, chain_pairs, chain_rank):
    _, C = chain_rank
    p = chain_pairs[2]
    lam, V, U = p.columns()
    G0 = (C @ V) @ np.diag(-1.0 / lam) @ (U.conj().T @ chain_fo.Bext)
    ranks = dcgains([p], chain_fo.Bext, C)
    assert ranks[0].dcgain == pytest.approx(np.linalg.norm(G0.real, 2))


def test_mhsv_is_nonnegative(chain_rank):
    ranks, _ = chain_rank
    assert all(r.mhsv > 0 for r in ranks)


def test_select_basis_mhsv_threshold(chain_rank):
    ranks, _ = chain_rank
    chosen = select_basis(ranks, "mhsv", 0.95)
    share = sum(r.normalized_mhsv for r in ranks if r.pair_index in chosen)
    assert share >= 0.95
    # dropping the weakest selected pair falls below the threshold
    weakest = min((r for r in ranks if r.pair_index in chosen), key=lambda r: r.normalized_mhsv)
    assert share - weakest.normalized_mhsv < 0.95
    assert chosen == sorted(chosen)


def test_select_basis_is_monotone_in_threshold(chain_rank):
    ranks, _ = chain_rank
    sizes = [len(select_basis(ranks, "dcgain", th)) for th in np.linspace(0.1, 1.0, 10)]
    assert sizes == sorted(sizes)
    assert sizes[-1] == 10


def test_select_basis_forced_pairs(chain_rank):
    ranks, _ = chain_rank
    chosen = select_basis(ranks, "mhsv", 0.0, forced_indices=[9])
    assert chosen == [9]
    with pytest.raises(ValueError, match="forced"):
        select_basis(ranks, "mhsv", 0.5, forced_indices=[99])


def test_select_basis_threshold_range(chain_rank):
    ranks, _ = chain_rank
    with pytest.raises(ValueError):
        select_basis(ranks, "mhsv", 1.5)


def test_single_pair_model_trivial_selection(rng):
    sys_ = random_stable_system(rng, 1)
    fo = to_first_order(sys_)
    pairs = solve_modes(fo, 1)
    C = observation_matrix(1, [1])
    ranks = rank_modes(pairs, fo.Bext, C)
    assert select_basis(ranks, "mhsv", 0.95) == [1]


def test_unstable_pair_must_be_forced():
    lam = 0.1 + 1.0j
    v = np.array([1.0, 0.0], dtype=complex)
    bad = EigenPair(lam, v, v, 1)
    with pytest.raises(ValueError, match="unstable"):
        mhsvs([bad], np.ones((2, 1)), np.ones((1, 2)), force_include=[])
    ranks = mhsvs([bad], np.ones((2, 1)), np.ones((1, 2)), force_include=[1])
    assert ranks[0].normalized_mhsv == 0.0
    assert select_basis(ranks, "mhsv", 0.0) == [1]


def test_ranking_frame(chain_rank):
    ranks, _ = chain_rank
    df = ranking_frame(ranks, [1, 2])
    assert list(df.columns) == [
        "pair_index", "frequency", "dcgain", "mhsv", "normalized_dcgain", "normalized_mhsv", "selected",
    ]
    assert df["selected"].sum() == 2


# ── Reduced model ────────────────────────────────────────────────────────────

def test_reduced_model_shapes(chain_fo, chain_pairs, chain_rank):
    _, C = chain_rank
    model = build_reduced_linear(chain_pairs, [1, 3], chain_fo.Bext, chain_fo.Fext, C, chain_fo.B)
    assert model.dim == 4 and model.q == 2 and model.l == 2
    np.testing.assert_allclose(model.Lambda_hat, np.diag(model.lam))
    np.testing.assert_allclose(model.b(2.0), model.U_hat.conj().T @ chain_fo.Fext.evaluate(2.0))


def test_realify_preserves_spectrum_and_products(chain_fo, chain_pairs, chain_rank):
    _, C = chain_rank
    model = build_reduced_linear(chain_pairs, [1, 2, 4], chain_fo.Bext, chain_fo.Fext, C, chain_fo.B)
    real = realify(model)
    assert real.realified
    for arr in (real.Lambda_hat, real.B_hat, real.U_hat, real.V_hat):
        assert arr.dtype == float
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(real.Lambda_hat)),
                               np.sort_complex(model.lam), atol=1e-12)
    # V̂ Û* B is the same oblique projector in either coordinates
    P_c = model.V_hat @ model.U_hat.conj().T @ chain_fo.B
    P_r = real.V_hat @ real.U_hat.T @ chain_fo.B
    np.testing.assert_allclose(P_r, P_c.real, atol=1e-12)
    assert np.abs(P_c.imag).max() < 1e-12
    # forcing: b_r = Tᴴ b
    t = 7.5
    np.testing.assert_allclose(real.b(t), real.U_hat.T @ chain_fo.Fext.evaluate(t), atol=1e-12)
    assert realify(real) is real


def test_realified_block_form(chain_fo, chain_pairs, chain_rank):
    _, C = chain_rank
    real = realify(build_reduced_linear(chain_pairs, [1], chain_fo.Bext, chain_fo.Fext, C))
    lam = chain_pairs[0].lam
    np.testing.assert_allclose(real.Lambda_hat, [[lam.real, -lam.imag], [lam.imag, lam.real]], atol=1e-14)


def test_reduced_initial_condition(chain_fo, chain_pairs, chain_rank):
    _, C = chain_rank
    real = realify(build_reduced_linear(chain_pairs, [1, 2], chain_fo.Bext, chain_fo.Fext, C))
    q = np.array([0.2, -0.1, 0.05, 0.3])
    eps = 1e-3
    Wp = np.zeros(chain_fo.N)
    z0 = Wp + eps * real.V_hat @ q
    np.testing.assert_allclose(reduced_initial_condition(real, chain_fo.B, z0, Wp, eps), q, atol=1e-9)
    with pytest.raises(ValueError):
        reduced_initial_condition(real, chain_fo.B, z0, Wp, 0.0)


# ── H∞ bound ─────────────────────────────────────────────────────────────────

def test_hinf_bound_on_random_systems():
    rng = np.random.default_rng(11)
    for trial in range(50):
        n = int(rng.integers(2, 9))
        sys_ = random_stable_system(rng, n, q=int(rng.integers(1, 3)))
        fo = to_first_order(sys_)
        pairs = solve_modes(fo, n)
        C = observation_matrix(n, [1, n])
        keep = sorted(rng.choice(np.arange(1, n + 1), size=int(rng.integers(1, n)), replace=False).tolist())
        gap, bound = hinf_bound_check(pairs, keep, fo.Bext, C)
        assert gap <= bound * (1 + 1e-9) + 1e-14


def test_hinf_bound_violation_raises(chain_fo, chain_pairs, chain_rank, monkeypatch):
    import ssmc.linred as linred
    _, C = chain_rank
    monkeypatch.setattr(linred, "_pair_mhsv", lambda p, B, C: 0.0)
    with pytest.raises(InvariantError):
        hinf_bound_check(chain_pairs, [1], chain_fo.Bext, C)


def test_realified_and_complex_models_give_same_trajectory(chain_fo, chain_pairs, chain_rank):
    from scipy.integrate import solve_ivp

    _, C = chain_rank
    cplx = build_reduced_linear(chain_pairs, [1, 2], chain_fo.Bext, chain_fo.Fext, C)
    real = realify(cplx)
    u = np.array([0.3, -0.1])
    z0 = np.zeros(chain_fo.N)
    z0[4] = 0.01
    times = np.linspace(0.0, 20.0, 41)

    def run(model, dtype):
        q0 = model.U_hat.conj().T @ (chain_fo.B @ z0)
        rhs = lambda t, q: model.Lambda_hat @ q + model.B_hat @ u + model.b(t)
        sol = solve_ivp(rhs, (0.0, 20.0), q0.astype(dtype), t_eval=times, rtol=1e-10, atol=1e-13)
        return (model.V_hat @ sol.y).T

    np.testing.assert_allclose(run(real, float), run(cplx, complex).real, atol=1e-9)
