import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reslat import states as S
from reslat.dynamics import HamiltonianSpec, hamiltonian
from reslat.fockspace import LocalizedOperator, TruncationConfig, identity, resolvent, site_operators
from reslat.lattice import LatticeRegion, chain
from reslat.potential import Potential


def _spec(n=3, N=5, g=0.2):
    return HamiltonianSpec(chain(n), TruncationConfig(levels=N), Potential.gaussian(g))


def test_single_site_gibbs_energy_oracle():
    spec = HamiltonianSpec(chain(1), TruncationConfig(levels=30))
    rho = S.gibbs_state(spec, 1.0)
    E = S.expectation(rho, hamiltonian(spec)).real
    assert E == pytest.approx(0.5 + 1 / (math.e - 1), abs=1e-5)


def test_gibbs_from_matrix_and_operator_agree():
    spec = _spec(2, 4)
    H = hamiltonian(spec)
    a = S.gibbs_state(spec, 0.7).matrix
    assert np.allclose(a, S.gibbs_state(H, 0.7).matrix)
    with pytest.raises(ValueError):
        S.gibbs_state(spec, 0.0)
    with pytest.raises(OverflowError):
        S.gibbs_state(spec, 1e4)


def test_density_state_validation():
    cfg = TruncationConfig(levels=2)
    with pytest.raises(ValueError):
        S.DensityState(chain(1), np.eye(2), cfg)
    with pytest.raises(ValueError):
        S.DensityState(chain(1), np.diag([1.5, -0.5]), cfg)


def test_trace_norm_paths():
    assert S.trace_norm(np.diag([1.0, -2.0])) == pytest.approx(3.0)
    X = np.array([[0.0, 2.0], [0.0, 0.0]])
    assert S.trace_norm(X) == pytest.approx(2.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.5), st.floats(-2, 2))
def test_kms_residual_vanishes(seed, beta, t):
    spec = _spec(2, 4)
    A, B = S.random_hermitian_pair(spec.dim, np.random.default_rng(seed))
    assert np.allclose(A, A.conj().T)
    assert S.kms_residual(spec, beta, t, A, B) < 1e-10


def test_kms_residual_scale_free():
    spec = _spec(2, 4)
    A, B = S.random_hermitian_pair(spec.dim, np.random.default_rng(1))
    assert S.kms_residual(spec, 0.2, 0.3, 5 * A, B) == pytest.approx(S.kms_residual(spec, 0.2, 0.3, A, B), abs=1e-12)
    assert S.kms_residual(spec, 0.2, 0.3, np.zeros_like(A), B) == 0.0


def test_araki_formula_values():
    assert S.araki_bound(0.2, 1.0) == pytest.approx(2 * math.exp(0.1) * (math.exp(0.1) - 1))
    assert S.araki_bound(0.2, 1.0) == pytest.approx(0.2324637, abs=1e-7)
    assert S.araki_bound(1.0, 0.0) == 0.0


def test_araki_report_passes():
    spec = _spec(3, 6)
    for beta in (0.05, 0.1, 0.2):
        cert = S.araki_bound_report(spec, (1,), beta)
        assert cert.pass_ and cert.computed > 0
        assert cert.extra["V_site_norm"] <= 2 * spec.potential.sup_norm + 1e-12


def test_decoupled_state_factorises():
    spec = _spec(3, 5)
    assert S.factorization_distance(spec, (1,), 0.3) < 1e-12
    assert S.factorization_distance(spec, (0,), 0.3) < 1e-12
    with pytest.raises(ValueError):
        S.decoupled_hamiltonian(spec, (7,))


def test_threshold_limits():
    V = Potential.gaussian(1.0)
    one = S.high_temperature_threshold(0.1, V, 1)
    assert one["limit"] == pytest.approx(abs(math.log(math.sqrt(3) - 1)), abs=1e-15)
    assert S.high_temperature_threshold(0.1, V, 2)["limit"] == one["limit"] / 2
    assert one["satisfied"] and not S.high_temperature_threshold(1.0, V, 1)["satisfied"]
    with pytest.raises(ValueError):
        S.high_temperature_threshold(0.0, V, 1)


def test_free_ground_state_is_vacuum():
    spec = _spec(2, 4).free()
    g = S.ground_state(spec)
    assert not g["degenerate"]
    assert abs(g["vector"][0]) == pytest.approx(1.0)
    assert g["energy_shift"] == pytest.approx(1.0)
    for mu in (0.5, 1.0, 2.0):
        assert S.ground_resolvent_bound(spec, (0,), mu).computed == pytest.approx(1 / mu, abs=1e-12)


def test_ground_resolvent_bound_interacting():
    spec = _spec(3, 6)
    for mu in (0.5, 1.0, 2.0):
        c = S.ground_resolvent_bound(spec, (1,), mu)
        assert c.lower and c.pass_
        assert c.computed <= 1 / mu
    with pytest.raises(ValueError):
        S.ground_resolvent_bound(spec, (1,), 0.0)


def test_canonical_vector_in_degenerate_space():
    U = np.eye(3)
    v, deg = S._canonical_ground_vector(U, np.array([0.0, 0.0, 1.0]))
    assert deg == 2 and np.allclose(v, [1, 0, 0])


def test_normality_profile_and_singular_state():
    spec = _spec(2, 5)
    rho = S.gibbs_state(spec, 1.0)
    prof = S.normality_profile(rho, (0,), 3)
    assert np.all(np.diff(prof) > 0) and prof[-1] <= 1
    out = S.DensityState(rho.region, rho.matrix, rho.cfg, singular_outside=True)
    assert np.all(S.normality_profile(out, (5,), 3) == 0)
    with pytest.raises(ValueError):
        S.normality_profile(rho, (5,), 3)
    with pytest.raises(ValueError):
        S.normality_profile(rho, (0,), 5)


def test_product_evaluate_inside_and_outside():
    spec = _spec(2, 4)
    cfg = spec.cfg
    rho = S.gibbs_state(spec, 0.5)
    Q, _ = site_operators(cfg)
    A = LocalizedOperator(LatticeRegion(1, [0]), Q.astype(complex), cfg)
    B = LocalizedOperator(LatticeRegion(1, [1]), (Q @ Q).astype(complex), cfg)
    want = S.expectation(rho, A @ B)
    assert S.product_evaluate(rho, [A, S.IDENTITY, B]) == pytest.approx(want)
    far = identity(LatticeRegion(1, [9]), cfg) * 3.0
    sing = S.DensityState(rho.region, rho.matrix, cfg, singular_outside=True)
    assert S.product_evaluate(sing, [A, far]) == pytest.approx(3 * S.expectation(rho, A))
    R = resolvent([1.0], [0.0], 1.0, LatticeRegion(1, [9]), cfg)
    with pytest.raises(ValueError):
        S.product_evaluate(sing, [A, R])
    with pytest.raises(ValueError):
        S.product_evaluate(rho, [A, far])
    with pytest.raises(ValueError):
        S.product_evaluate(rho, [A, A])
    with pytest.raises(ValueError):
        S.expectation(rho, far)
