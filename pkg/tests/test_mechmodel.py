import json
import os

import numpy as np
import pytest
import scipy.sparse as sp

from ssmc.errors import ModelError
from ssmc.mechmodel import (
    ForcingChannel,
    ForcingSignal,
    PolynomialMap,
    SecondOrderSystem,
    eval_polynomial,
    eval_second_order_force,
    load_model,
    mechanical_energy,
    model_from_dict,
    model_to_dict,
    save_model,
    to_first_order,
)

from .conftest import DATA_DIR, make_chain


def _two_dof_raw():
    with open(os.path.join(DATA_DIR, "two_dof.json"), "r", encoding="utf-8") as f:
        return json.load(f)


# ── PolynomialMap ────────────────────────────────────────────────────────────

def test_polynomial_terms_are_merged_and_cancelled():
    pm = PolynomialMap(2, 1, (
        (0, 1.0, ((1, 1), (0, 2))),
        (0, 2.0, ((0, 2), (1, 1))),
        (0, 1.0, ((0, 3),)),
        (0, -1.0, ((0, 3),)),
    ))
    assert pm.terms == ((0, 3.0, ((0, 2), (1, 1))),)
    assert pm.degree == 3


def test_polynomial_rejects_linear_terms():
    with pytest.raises(ValueError, match="degree"):
        PolynomialMap(2, 1, ((0, 1.0, ((0, 1),)),))


def test_eval_polynomial_matches_direct_formula():
    pm = PolynomialMap(3, 2, (
        (0, 0.5, ((0, 2), (2, 1))),
        (1, -2.0, ((1, 3),)),
        (1, 1.5, ((0, 1), (1, 1))),
    ))
    z = np.array([0.3, -1.2, 2.0])
    expected = np.array([0.5 * 0.3 ** 2 * 2.0, -2.0 * (-1.2) ** 3 + 1.5 * 0.3 * -1.2])
    np.testing.assert_allclose(eval_polynomial(pm, z), expected, rtol=1e-14)


def test_eval_polynomial_complex_input():
    pm = PolynomialMap(1, 1, ((0, 1.0, ((0, 2),)),))
    np.testing.assert_allclose(eval_polynomial(pm, np.array([1j])), [-1.0 + 0j])


def test_chain_nonlinearity_is_cubic_spring_difference():
    sys_ = make_chain(n_masses=3, actuator_indices=[1])
    x = np.array([0.2, -0.1, 0.4])
    f = eval_second_order_force(sys_, x, np.zeros(3))
    k = 0.5
    d = np.diff(np.concatenate([[0.0], x, [0.0]]))  # spring elongations
    expected = k * (d[:-1] ** 3 - d[1:] ** 3)
    np.testing.assert_allclose(f, expected, rtol=1e-12, atol=1e-15)


# ── Systems ──────────────────────────────────────────────────────────────────

def test_second_order_rejects_indefinite_mass():
    n = 2
    with pytest.raises(ValueError, match="positive definite"):
        SecondOrderSystem(n, np.diag([1.0, -1.0]), np.zeros((n, n)), np.eye(n),
                          PolynomialMap(4, 2), ForcingSignal(2), np.eye(2)[:, :1])


def test_sparse_mass_definiteness_checked():
    # positive diagonal, eigenvalues -1, 1, 3, 4
    M = sp.csr_array(np.array([
        [1.0, 2.0, 0.0, 0.0],
        [2.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 4.0],
    ]))
    n = 4
    args = (sp.csr_array((n, n)), sp.csr_array(np.eye(n)),
            PolynomialMap(2 * n, n), ForcingSignal(n), np.eye(n)[:, :1])
    with pytest.raises(ValueError, match="positive definite"):
        SecondOrderSystem(n, M, *args)
    spd = sp.csr_array(np.diag([1.0, 2.0, 3.0, 4.0]) + 0.1 * (np.eye(n, k=1) + np.eye(n, k=-1)))
    assert SecondOrderSystem(n, spd, *args).n == n


def test_second_order_rejects_rank_deficient_actuators():
    n = 2
    with pytest.raises(ValueError, match="full column rank"):
        SecondOrderSystem(n, np.eye(n), np.zeros((n, n)), np.eye(n),
                          PolynomialMap(4, 2), ForcingSignal(2), np.ones((2, 2)))


def test_first_order_blocks(chain_sys, chain_fo):
    n = chain_sys.n
    A, B = chain_fo.A, chain_fo.B
    np.testing.assert_array_equal(A[:n, :n], -chain_sys.K)
    np.testing.assert_array_equal(A[n:, n:], chain_sys.M)
    np.testing.assert_array_equal(B[:n, :n], chain_sys.C_d)
    np.testing.assert_array_equal(B[n:, n:], np.zeros((n, n)))
    assert chain_fo.Bext.shape == (2 * n, 2)
    assert not np.any(chain_fo.Bext[n:])


def test_first_order_force_is_negated(chain_sys, chain_fo):
    rng = np.random.default_rng(3)
    z = rng.standard_normal(2 * chain_sys.n)
    F = eval_polynomial(chain_fo.F, z)
    f = eval_second_order_force(chain_sys, z[: chain_sys.n], z[chain_sys.n:])
    np.testing.assert_allclose(F[: chain_sys.n], -f)
    assert not np.any(F[chain_sys.n:])


def test_sparse_lift_above_threshold(monkeypatch):
    from ssmc import config
    monkeypatch.setattr(config, "DENSE_THRESHOLD", 4)
    fo = to_first_order(make_chain(n_masses=3, actuator_indices=[1]))
    assert sp.issparse(fo.A) and sp.issparse(fo.B)
    assert fo.is_sparse


# ── Forcing ──────────────────────────────────────────────────────────────────

def test_chain_forcing_channels(chain_sys):
    t = 3.7
    E = chain_sys.E.evaluate(t)
    assert E[0] == pytest.approx(np.sin(0.1 * np.sqrt(2) * t))
    assert E[4] == pytest.approx(np.cos(0.1 * np.sqrt(3) * t))
    assert np.count_nonzero(E) == 2


def test_forcing_sample_matches_evaluate():
    sig = ForcingSignal(2, (
        ForcingChannel(np.array([1.0, 0.0]), 2.0, 0.5, 0.1, "sine"),
        ForcingChannel(np.array([0.0, 1.0]), 1.0, 1.5, 0.0, "cosine"),
    ))
    times = np.linspace(0, 5, 7)
    tab = sig.sample(times)
    for i, t in enumerate(times):
        np.testing.assert_allclose(tab[i], sig.evaluate(t))


def test_forcing_lift_pads_with_zeros(chain_sys, chain_fo):
    t = 1.3
    Fext = chain_fo.Fext.evaluate(t)
    np.testing.assert_allclose(Fext[: chain_sys.n], chain_sys.E.evaluate(t))
    assert not np.any(Fext[chain_sys.n:])


# ── Energy ───────────────────────────────────────────────────────────────────

def test_mechanical_energy_potential_of_single_cubic_spring():
    sys_ = make_chain(n_masses=2, actuator_indices=[1], c=0.0)
    x = np.array([0.3, 0.0])
    z = np.concatenate([x, np.zeros(2)])
    # springs: wall–1 elongation 0.3, 1–2 elongation −0.3, 2–wall 0
    linear = 0.5 * x @ sys_.K @ x
    cubic = 0.5 * (0.3 ** 4 + 0.3 ** 4) / 4
    assert mechanical_energy(sys_, z) == pytest.approx(linear + cubic, rel=1e-12)


# ── Model file ───────────────────────────────────────────────────────────────

def test_load_two_dof_model():
    sys_ = model_from_dict(_two_dof_raw())
    assert sys_.n == 2 and sys_.q == 1
    np.testing.assert_array_equal(sys_.K, [[2.0, -1.0], [-1.0, 3.0]])
    assert sys_.epsilon == 0.01
    assert len(sys_.f.terms) == 2


def test_model_file_round_trip(tmp_path, chain_sys):
    path = str(tmp_path / "chain.json")
    save_model(chain_sys, path)
    back = load_model(path)
    np.testing.assert_array_equal(back.K, chain_sys.K)
    np.testing.assert_array_equal(back.D, chain_sys.D)
    assert back.f.terms == chain_sys.f.terms
    assert model_to_dict(back) == model_to_dict(chain_sys)


def test_model_error_names_field():
    raw = _two_dof_raw()
    raw["nonlinearity"]["terms"][1]["exps"] = [[7, 2]]
    with pytest.raises(ModelError) as e:
        model_from_dict(raw)
    assert e.value.field == "nonlinearity.terms.1.exps"


def test_model_error_on_wrong_shape():
    raw = _two_dof_raw()
    raw["K"]["rows"] = 3
    with pytest.raises(ModelError) as e:
        model_from_dict(raw)
    assert e.value.field == "K"


def test_model_error_on_schema_violation():
    raw = _two_dof_raw()
    del raw["M"]
    with pytest.raises(ModelError) as e:
        model_from_dict(raw)
    assert e.value.field == "M"


def test_missing_model_file(tmp_path):
    with pytest.raises(ModelError, match="not found"):
        load_model(str(tmp_path / "nope.json"))


def test_first_order_lift_reproduces_second_order_trajectories():
    from scipy.integrate import solve_ivp

    from .conftest import random_stable_system

    rng = np.random.default_rng(21)
    sys_ = random_stable_system(rng, 4)
    fo = to_first_order(sys_)
    n = sys_.n
    Minv = np.linalg.inv(sys_.M)

    def second(t, y):
        x, v = y[:n], y[n:]
        return np.concatenate([v, -Minv @ (sys_.C_d @ v + sys_.K @ x)])

    def first(t, z):
        return np.linalg.solve(fo.B, fo.A @ z)

    times = np.linspace(0.0, 10.0, 51)
    for _ in range(3):
        z0 = rng.standard_normal(2 * n)
        a = solve_ivp(second, (0.0, 10.0), z0, t_eval=times, rtol=1e-10, atol=1e-12)
        b = solve_ivp(first, (0.0, 10.0), z0, t_eval=times, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(b.y, a.y, atol=1e-7)
