import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from reslat.fockspace import (
    DimensionError,
    LocalizedOperator,
    TruncationConfig,
    annihilation,
    apply_on_legs,
    embed,
    embed_matrix,
    function_of_hermitian,
    ideal_product_diagnostic,
    identity,
    level_projector,
    mode_energies,
    norm_report,
    operator_norm,
    pair_potential,
    resolvent,
    single_mode_operator,
    site_operators,
    two_site_potential,
)
from reslat.lattice import LatticeRegion, NeighborBond, chain, make_box_region
from reslat.potential import Potential


def _gauss(x):
    return np.exp(-np.asarray(x, float) ** 2)


def test_config_validation_and_dim_cap():
    with pytest.raises(ValueError):
        TruncationConfig(omega=0.0)
    with pytest.raises(ValueError):
        TruncationConfig(levels=1)
    cfg = TruncationConfig(levels=10, dim_cap=500)
    assert cfg.dim(chain(2)) == 100
    with pytest.raises(DimensionError):
        cfg.dim(chain(3))
    assert cfg.dim(chain(3), check=False) == 1000
    assert TruncationConfig(levels=3, modes_per_site=2).dim(chain(2)) == 81


@pytest.mark.parametrize("omega", [0.5, 1.0, 2.3])
def test_truncated_ccr_and_energies(omega):
    N = 10
    cfg = TruncationConfig(omega=omega, levels=N)
    Q, P = site_operators(cfg)
    assert np.allclose(Q, Q.conj().T) and np.allclose(P, P.conj().T)
    C = Q @ P - P @ Q
    # canonical commutator holds away from the truncation edge
    assert np.allclose(C[: N - 1, : N - 1], 1j * np.eye(N - 1))
    H = (P @ P + omega**2 * Q @ Q).real / 2
    assert np.allclose(np.diag(H)[: N - 1], mode_energies(cfg)[: N - 1])
    assert np.allclose(H[: N - 1, : N - 1], np.diag(np.diag(H)[: N - 1]))


def test_annihilation_on_number_states():
    a = annihilation(5)
    e3 = np.eye(5)[3]
    assert np.allclose(a @ e3, np.sqrt(3) * np.eye(5)[2])


def test_embed_matches_kron():
    cfg = TruncationConfig(levels=3)
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 3))
    two = chain(2)
    left = embed(LocalizedOperator(LatticeRegion(1, [0]), M, cfg), two).matrix
    right = embed(LocalizedOperator(LatticeRegion(1, [1]), M, cfg), two).matrix
    assert np.allclose(left, np.kron(M, np.eye(3)))
    assert np.allclose(right, np.kron(np.eye(3), M))
    with pytest.raises(ValueError):
        embed(LocalizedOperator(LatticeRegion(1, [5]), M, cfg), two)


def test_embed_noncontiguous_legs():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    AB = np.kron(A, B)
    full = embed_matrix(AB, [0, 2], 3, 2)
    assert np.allclose(full, np.kron(np.kron(A, np.eye(2)), B))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**31 - 1), st.sampled_from(["left", "right"]), st.data())
def test_apply_on_legs_agrees_with_embedding(nlegs, seed, side, data):
    N = 2
    k = data.draw(st.integers(1, nlegs))
    legs = data.draw(st.permutations(range(nlegs)))[:k]
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(N**k, N**k)) + 1j * rng.normal(size=(N**k, N**k))
    X = rng.normal(size=(N**nlegs, N**nlegs)) + 1j * rng.normal(size=(N**nlegs, N**nlegs))
    E = embed_matrix(M, list(legs), nlegs, N)
    want = E @ X if side == "left" else X @ E
    assert np.allclose(apply_on_legs(M, X, list(legs), nlegs, N, side=side), want)


def test_localized_operator_algebra():
    cfg = TruncationConfig(levels=3)
    Q, _ = site_operators(cfg)
    A = single_mode_operator(Q, (0,), 0, LatticeRegion(1, [0]), cfg)
    B = single_mode_operator(Q, (1,), 0, LatticeRegion(1, [1]), cfg)
    S = A + B
    assert S.support == chain(2)
    assert np.allclose(S.matrix, np.kron(Q, np.eye(3)) + np.kron(np.eye(3), Q))
    assert np.allclose((A @ B).matrix, np.kron(Q, Q))
    assert np.allclose((2 * A - A).matrix, A.matrix)
    assert np.allclose((-A).dagger().matrix, -A.matrix)
    I = identity(chain(2), cfg)
    assert I.identity_coefficient == 1.0 and I.norm() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        LocalizedOperator(chain(2), np.eye(3), cfg)
    with pytest.raises(TypeError):
        A + 1


def test_operator_norm_large_and_small():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(700, 700))
    assert operator_norm(X) == pytest.approx(np.linalg.norm(X, 2), rel=1e-10)
    assert operator_norm(np.zeros((700, 700))) == 0.0
    assert operator_norm(np.diag([1.0, -4.0, 2.0])) == pytest.approx(4.0)
    Z = X + 1j * rng.normal(size=(700, 700))
    assert operator_norm(Z) == pytest.approx(np.linalg.norm(Z, 2), rel=1e-12)


def test_operator_norm_degenerate_tensor_structure():
    # few distinct singular values: the Krylov space closes after a few steps
    B = np.diag(np.linspace(-3.0, 2.0, 10)).astype(complex)
    X = np.kron(np.eye(10), np.kron(B, np.eye(10)))
    assert operator_norm(X) == pytest.approx(3.0, rel=1e-14)
    assert operator_norm(1e-20 * X) == pytest.approx(3e-20, rel=1e-14)
    assert operator_norm(2.5 * np.eye(800)) == pytest.approx(2.5, rel=1e-14)


def test_operator_norm_independent_of_call_history():
    import threading

    rng = np.random.default_rng(8)
    B = rng.normal(size=(10, 10)) + 1j * rng.normal(size=(10, 10))
    X = np.kron(np.eye(10), np.kron(B, np.eye(10)))
    first = operator_norm(X)
    for k in range(3):
        operator_norm(np.kron(np.eye(100), B + k))
    out = []
    t = threading.Thread(target=lambda: out.append(operator_norm(X)))
    t.start()
    t.join()
    assert operator_norm(X) == first and out == [first]
    assert first == pytest.approx(np.linalg.norm(B, 2), rel=1e-13)


def test_function_of_hermitian():
    rng = np.random.default_rng(4)
    G = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    H = G + G.conj().T
    assert np.allclose(function_of_hermitian(H, np.exp), sla.expm(H))
    with pytest.raises(ValueError):
        function_of_hermitian(G, np.exp)


def test_resolvent_inverts_generator():
    cfg = TruncationConfig(levels=6)
    region = chain(2)
    a, b, c = [0.5, -1.0], [0.2, 0.3], 0.7
    R = resolvent(a, b, c, region, cfg).matrix
    Q, P = site_operators(cfg)
    I = np.eye(6)
    G = 1j * c * np.eye(36)
    G += a[0] * np.kron(P, I) + a[1] * np.kron(I, P) + b[0] * np.kron(Q, I) + b[1] * np.kron(I, Q)
    assert np.allclose(G @ R, np.eye(36))
    # ||(ic + self-adjoint)^{-1}|| <= 1/|c|
    assert operator_norm(R) <= 1 / c + 1e-12
    with pytest.raises(ValueError):
        resolvent(a, b, 0.0, region, cfg)
    with pytest.raises(ValueError):
        resolvent([1, 2, 3], b, c, region, cfg)


def test_two_site_potential_d1_oracle():
    V = Potential.gaussian(0.3, 0.8)
    N = 7
    M = two_site_potential(V, 1.0, N, 1)
    Q, _ = site_operators(TruncationConfig(levels=N))
    X = np.kron(Q, np.eye(N)) - np.kron(np.eye(N), Q)
    want = function_of_hermitian(X.real, V)
    assert np.allclose(M, want)
    assert np.allclose(M, M.T)
    assert operator_norm(M) <= V.sup_norm + 1e-12


def test_two_site_potential_d2_smoke():
    V = Potential.gaussian(1.0)
    M = two_site_potential(V, 1.0, 3, 2)
    assert M.shape == (81, 81) and np.allclose(M, M.T)
    assert operator_norm(M) <= 1.0 + 1e-12
    # separable: the Gaussian factorises over the two coordinates
    M1 = two_site_potential(V, 1.0, 3, 1)
    T = np.kron(M1, M1).reshape((3,) * 8)
    # kron legs: (s1m1, s2m1, s1m2, s2m2) -> (s1m1, s1m2, s2m1, s2m2)
    T = T.transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(81, 81)
    assert np.allclose(M, T)


def test_pair_potential_locality():
    cfg = TruncationConfig(levels=4)
    region = chain(3)
    W = pair_potential(Potential.gaussian(0.5), NeighborBond((0,), (1,)), region, cfg).matrix
    Q, _ = site_operators(cfg)
    far = single_mode_operator(Q, (2,), 0, region, cfg).matrix
    assert np.allclose(W @ far, far @ W)
    with pytest.raises(ValueError):
        pair_potential(Potential.gaussian(0.5), NeighborBond((3,), (4,)), region, cfg)


def test_level_projector_trace():
    cfg = TruncationConfig(levels=5)
    P = level_projector((1,), 2, chain(3), cfg).matrix
    assert np.allclose(P @ P, P)
    assert np.trace(P).real == pytest.approx(3 * 25)
    with pytest.raises(ValueError):
        level_projector((1,), 5, chain(3), cfg)
    two_modes = TruncationConfig(levels=3, modes_per_site=2)
    assert np.trace(level_projector((0, 0), 0, make_box_region(2, [1, 1]), two_modes).matrix) == 1


def test_norm_report_diagonal():
    r = norm_report(np.diag([3.0, -4.0]))
    assert r.operator_norm == 4.0 and r.trace_norm == 7.0 and r.hs_norm == 5.0
    assert r.as_dict(top=1)["singular_values"] == [4.0]


def test_ideal_product_flags_and_convergence():
    cfg = TruncationConfig(levels=8)
    bond = NeighborBond((0,), (1,))
    out = ideal_product_diagnostic(bond, (0,), cfg, _gauss, _gauss, _gauss, _gauss, ladder=(8, 12, 16))
    assert out["in_ideal_hypothesis"]
    assert [r.notes["levels"] for r in out["reports"]] == [8, 12, 16]
    flagged = ideal_product_diagnostic(bond, (1,), cfg, lambda x: np.ones_like(x), _gauss, _gauss, _gauss,
                                       ladder=(6, 8))
    assert not flagged["in_ideal_hypothesis"] and not flagged["vanishing_flags"]["f"]
    with pytest.raises(ValueError):
        ideal_product_diagnostic(bond, (2,), cfg, _gauss, _gauss, _gauss, _gauss)
