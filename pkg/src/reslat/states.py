"""Gibbs, KMS and ground states on a finite region, and the bounds attached to them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    BoundCertificate,
    HamiltonianSpec,
    free_energies,
    interaction_matrix,
    spectral_decomposition,
)
from .fockspace import (
    LocalizedOperator,
    embed,
    embed_matrix,
    level_projector,
    operator_norm,
    site_legs,
    two_site_potential,
    bond_legs,
)
from .lattice import LatticeRegion, _as_point, bonds_touching

BETA_NORM_CAP = 700.0


@dataclass(eq=False)
class DensityState:
    region: LatticeRegion
    matrix: np.ndarray
    cfg: object
    singular_outside: bool = False

    def __post_init__(self):
        tr = np.trace(self.matrix).real
        if abs(tr - 1) > 1e-12 * max(1, self.matrix.shape[0] ** 0.5):
            raise ValueError(f"trace {tr} is not 1")
        if self.matrix.shape[0] <= 2000:
            lo = np.linalg.eigvalsh((self.matrix + self.matrix.conj().T) / 2)[0]
            if lo < -1e-12:
                raise ValueError(f"density matrix has negative eigenvalue {lo}")


def _hermitian_eig(H):
    """(w, U) of a Hermitian LocalizedOperator, a HamiltonianSpec (cached) or a matrix."""
    if isinstance(H, HamiltonianSpec):
        return spectral_decomposition(H)
    M = H.matrix if isinstance(H, LocalizedOperator) else np.asarray(H)
    if np.abs(M - M.conj().T).max() > 1e-10 * max(1.0, np.abs(M).max()):
        raise ValueError("H is not Hermitian")
    return np.linalg.eigh((M + M.conj().T) / 2)


def _region_cfg(H):
    if isinstance(H, HamiltonianSpec):
        return H.region, H.cfg
    return H.support, H.cfg


def _boltzmann(w, beta):
    if not beta > 0:
        raise ValueError("beta must be positive")
    if beta * np.abs(w).max() > BETA_NORM_CAP:
        raise OverflowError(f"beta*||H|| = {beta * np.abs(w).max():.1f} exceeds {BETA_NORM_CAP}")
    p = np.exp(-beta * (w - w.min()))
    return p / p.sum()


def gibbs_state(H, beta):
    w, U = _hermitian_eig(H)
    p = _boltzmann(w, beta)
    rho = (U * p) @ U.conj().T
    region, cfg = _region_cfg(H)
    return DensityState(region, (rho + rho.conj().T) / 2, cfg)


def expectation(state, A):
    if not A.support.issubset(state.region):
        if not state.singular_outside:
            raise ValueError("operator is supported outside the state's region")
        return product_evaluate(state, [A])
    X = embed(A, state.region).matrix
    return complex(np.sum(state.matrix.T * X))


def trace_norm(X):
    X = np.asarray(X)
    if np.allclose(X, X.conj().T, atol=1e-14 * max(1.0, np.abs(X).max())):
        return float(np.abs(np.linalg.eigvalsh((X + X.conj().T) / 2)).sum())
    return float(np.linalg.svd(X, compute_uv=False).sum())


def kms_residual(H, beta, t, A, B):
    """|omega(A alpha_{t+i beta}(B)) - omega(alpha_t(B) A)| / (||A|| ||B||) for
    the Gibbs state omega of H at inverse temperature beta."""
    w, U = _hermitian_eig(H)
    p = _boltzmann(w, beta)
    region, _ = _region_cfg(H)
    Am = embed(A, region).matrix if isinstance(A, LocalizedOperator) else np.asarray(A)
    Bm = embed(B, region).matrix if isinstance(B, LocalizedOperator) else np.asarray(B)
    Uh = U.conj().T
    At, Bt = Uh @ Am @ U, Uh @ Bm @ U
    z = t + 1j * beta
    # alpha_z(B) = e^{izH} B e^{-izH}, everything in the eigenbasis of H
    Bz = np.exp(1j * z * w)[:, None] * Bt * np.exp(-1j * z * w)[None, :]
    Btt = np.exp(1j * t * w)[:, None] * Bt * np.exp(-1j * t * w)[None, :]
    lhs = np.sum(p * np.einsum("ij,ji->i", At, Bz))
    rhs = np.sum(p * np.einsum("ij,ji->i", Btt, At))
    scale = operator_norm(Am) * operator_norm(Bm)
    return float(abs(lhs - rhs) / scale) if scale else 0.0


def random_hermitian_pair(dim, rng):
    def one():
        X = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        return (X + X.conj().T) / 2

    return one(), one()


def decoupled_hamiltonian(spec, site):
    """H with every bond touching ``site`` removed, as a dense real matrix."""
    site = _as_point(site)
    if site not in spec.region:
        raise ValueError(f"site {site} is outside the region")
    H = interaction_matrix(spec) - removed_interaction(spec, site)
    H[np.diag_indices_from(H)] += free_energies(spec.region, spec.cfg)
    return H


def removed_interaction(spec, site):
    """V_site: the sum of the bond potentials at ``site`` embedded in the region."""
    cfg, region = spec.cfg, spec.region
    D = spec.dim
    out = np.zeros((D, D))
    if not spec.interacting:
        return out
    M = two_site_potential(spec.potential, float(cfg.omega), int(cfg.levels), int(cfg.modes_per_site))
    for b in bonds_touching(region, [site]):
        l1, l2 = bond_legs(b, region, cfg)
        out += embed_matrix(M, l1 + l2, cfg.nlegs(region), cfg.levels)
    return out


def decoupled_gibbs(spec, site, beta):
    H = decoupled_hamiltonian(spec, site)
    w, U = np.linalg.eigh(H)
    p = _boltzmann(w, beta)
    rho = (U * p) @ U.T
    return DensityState(spec.region, (rho + rho.T).astype(complex) / 2, spec.cfg)


def factorization_distance(spec, site, beta):
    """Trace distance between decoupled_gibbs and the explicit product of the
    Gibbs states of the region without the site and of the site alone."""
    site = _as_point(site)
    rho = decoupled_gibbs(spec, site, beta).matrix
    rest = spec.region.difference(LatticeRegion(spec.region.dim, [site]))
    single = LatticeRegion(spec.region.dim, [site])
    f1 = gibbs_state(spec.on(single), beta)
    prod = embed(LocalizedOperator(single, f1.matrix, spec.cfg), spec.region).matrix
    if len(rest):
        f2 = gibbs_state(spec.on(rest), beta)
        prod = prod @ embed(LocalizedOperator(rest, f2.matrix, spec.cfg), spec.region).matrix
    return trace_norm(rho - prod)


def araki_bound(beta, v_norm):
    x = beta * v_norm / 2
    return 2 * math.exp(x) * (math.exp(x) - 1)


def araki_bound_report(spec, site, beta, bond_multiplicity=1, allowance=0.0):
    site = _as_point(site)
    rho = gibbs_state(spec, beta).matrix
    rho_d = decoupled_gibbs(spec, site, beta).matrix
    dist = trace_norm(rho - rho_d)
    Vl = removed_interaction(spec, site)
    v = bond_multiplicity * (float(np.abs(np.linalg.eigvalsh(Vl)).max()) if Vl.any() else 0.0)
    d = spec.cfg.modes_per_site
    sup = spec.potential.sup_norm
    return BoundCertificate(
        "araki",
        dist,
        araki_bound(beta, v),
        allowance,
        extra={
            "V_site_norm": v,
            "pow2_bound": 2**d * sup,
            "neighbor_bound": 2 * d * sup,
            "beta": beta,
        },
    )


def high_temperature_threshold(beta, V, d):
    if not beta > 0:
        raise ValueError("beta must be positive")
    limit = 2.0 ** (1 - d) * abs(math.log(math.sqrt(3) - 1))
    val = beta * V.sup_norm
    return {"limit": limit, "value": val, "satisfied": val < limit, "margin": limit - val}


def _canonical_ground_vector(U, w, tol=1e-10):
    """Lowest eigenvector; inside a degenerate lowest eigenspace, the
    projection of the first basis vector with nonzero weight there.
    Phase fixed so the leading nonzero coefficient is real positive."""
    deg = int(np.sum(w - w[0] < tol))
    Ublk = U[:, :deg]
    if deg == 1:
        v = Ublk[:, 0].astype(complex)
    else:
        weight = np.sum(np.abs(Ublk) ** 2, axis=1)
        k = int(np.argmax(weight > 1e-8))
        v = (Ublk @ Ublk[k].conj()).astype(complex)
        v /= np.linalg.norm(v)
    lead = int(np.argmax(np.abs(v) > 1e-12))
    v *= abs(v[lead]) / v[lead]
    return v, deg


def ground_state(spec):
    w, U = spectral_decomposition(HamiltonianSpec(spec.region, spec.cfg, spec.potential,
                                                  spec.include_interaction, False))
    v, deg = _canonical_ground_vector(U, w)
    rho = np.outer(v, v.conj())
    return {
        "state": DensityState(spec.region, rho, spec.cfg),
        "vector": v,
        "energy_shift": float(w[0]),
        "degenerate": deg > 1,
        "degeneracy": deg,
        "projector_average": (U[:, :deg] @ U[:, :deg].T) / deg if deg > 1 else None,
    }


def shifted_site_hamiltonian_diag(site, spec):
    """Diagonal of the ground-shifted single-site oscillator sum_k omega n_k on the region."""
    cfg, region = spec.cfg, spec.region
    n = np.arange(cfg.levels) * cfg.omega
    legs = site_legs(_as_point(site), region, cfg)
    L = cfg.nlegs(region)
    shape = [1] * L
    out = np.zeros((cfg.levels,) * L)
    for leg in legs:
        sh = list(shape)
        sh[leg] = cfg.levels
        out = out + n.reshape(sh)
    return out.reshape(-1)


def ground_resolvent_bound(spec, site, mu, allowance=0.0):
    if not mu > 0:
        raise ValueError("mu must be positive")
    g = ground_state(spec)
    h = shifted_site_hamiltonian_diag(site, spec)
    v = g["vector"]
    val = float(np.sum(np.abs(v) ** 2 / (mu + h)))
    d = spec.cfg.modes_per_site
    bound = 1.0 / (mu + 2 ** (d + 2) * spec.potential.sup_norm)
    extra = {"mu": mu, "degenerate": g["degenerate"]}
    if g["degenerate"]:
        P = g["projector_average"]
        extra["projector_value"] = float(np.sum(np.diag(P).real / (mu + h)))
    return BoundCertificate("ground_resolvent", val, bound, allowance, lower=True, extra=extra)


def normality_profile(state, site, m_max):
    site = _as_point(site)
    cfg = state.cfg
    if m_max >= cfg.levels:
        raise ValueError("m_max must be below the truncation level")
    if site not in state.region:
        if state.singular_outside:
            return np.zeros(m_max + 1)
        raise ValueError("site outside the state's region")
    return np.array([expectation(state, level_projector(site, m, state.region, cfg)).real
                     for m in range(m_max + 1)])


IDENTITY = "identity"


def product_evaluate(state, factors):
    """Evaluate a product of disjointly supported factors. Factors outside
    the region contribute their identity coefficient (the singular part
    annihilates compacts); a non-identity factor that is not of the form
    c*1 + compact cannot be evaluated outside and is rejected."""
    seen = set()
    inside = None
    scalar = 1.0 + 0j
    for f in factors:
        if isinstance(f, str) and f == IDENTITY:
            continue
        pts = set(f.support.points)
        if pts & seen:
            raise ValueError("factors must have disjoint supports")
        seen |= pts
        if f.support.issubset(state.region):
            X = embed(f, state.region).matrix
            inside = X if inside is None else inside @ X
        else:
            if not state.singular_outside:
                raise ValueError("factor outside region and the state is not singular there")
            if pts & set(state.region.points):
                raise ValueError("factor straddles the region boundary")
            if not f.compact:
                raise ValueError("outside factor is not of the form c*1 + compact")
            scalar *= f.identity_coefficient
    if inside is None:
        return scalar
    return scalar * complex(np.sum(state.matrix.T * inside))
