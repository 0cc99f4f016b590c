"""Free and interacting dynamics on a finite region.

Conventions: H0 = sum (P^2 + omega^2 Q^2)/2 over all modes, diagonal in the
number basis. alpha0_t(A) = e^{itH0} A e^{-itH0}. The interaction cocycle is
Gamma_t = e^{itH0} e^{-itH}; gamma_t(A) = Gamma_t A Gamma_t^* solves
d/dt gamma_t(A) = i [gamma_t(A), V(t)] with V(t) = alpha0_t(V), so
gamma_t = sum_n i^n D_n(t) with D_0 = id and
D_n(t)(A) = int_0^t [D_{n-1}(s)(A), V(s)] ds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

from .fockspace import (
    LocalizedOperator,
    TruncationConfig,
    _site_ops,
    apply_on_legs,
    bond_legs,
    embed,
    function_of_hermitian,
    mode_energies,
    norm_report,
    operator_norm,
    site_legs,
    two_site_potential,
)
from .lattice import LatticeRegion, NeighborBond, enumerate_bonds, inflate_region
from .potential import Potential


class QuadratureError(RuntimeError):
    pass


def free_flow_coefficients(t, omega, a, b):
    """Coefficients of alpha0_t(R(a, b, c)) = R(a', b', c)."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c, s = math.cos(t * omega), math.sin(t * omega)
    return a * c + b * s / omega, b * c - a * omega * s


@dataclass(frozen=True)
class HamiltonianSpec:
    region: LatticeRegion
    cfg: TruncationConfig
    potential: Potential = field(default_factory=Potential)
    include_interaction: bool = True
    ground_shift: bool = False

    @property
    def bonds(self):
        return enumerate_bonds(self.region)

    @property
    def dim(self):
        return self.cfg.dim(self.region)

    def free(self):
        return HamiltonianSpec(self.region, self.cfg, self.potential, False, self.ground_shift)

    def on(self, region):
        return HamiltonianSpec(region, self.cfg, self.potential, self.include_interaction, self.ground_shift)

    def with_levels(self, N):
        return HamiltonianSpec(self.region, self.cfg.with_levels(N), self.potential,
                               self.include_interaction, self.ground_shift)

    @property
    def interacting(self):
        return self.include_interaction and not self.potential.is_zero and len(self.bonds) > 0


def free_energies(region, cfg):
    """Diagonal of H0 on the region (number basis)."""
    e = mode_energies(cfg)
    E = np.zeros(1)
    for _ in range(cfg.nlegs(region)):
        E = np.add.outer(E, e).reshape(-1)
    return E


def interaction_matrix(spec):
    """sum over bonds of V(Q' - Q''), real symmetric."""
    cfg, region = spec.cfg, spec.region
    D = spec.dim
    Vt = np.zeros((D, D))
    if not spec.interacting:
        return Vt
    M = two_site_potential(spec.potential, float(cfg.omega), int(cfg.levels), int(cfg.modes_per_site))
    L = cfg.nlegs(region)
    for b in spec.bonds:
        l1, l2 = bond_legs(b, region, cfg)
        Vt += _embed_real(M, l1 + l2, L, cfg.levels)
    return Vt


def _embed_real(M, legs, nlegs, N):
    from .fockspace import embed_matrix

    return embed_matrix(M, legs, nlegs, N)


@lru_cache(maxsize=2)
def spectral_decomposition(spec):
    """Eigenvalues (ascending) and real orthogonal eigenvectors of H."""
    spec.cfg.dim(spec.region)
    E0 = free_energies(spec.region, spec.cfg)
    if not spec.interacting:
        order = np.argsort(E0, kind="stable")
        U = np.eye(len(E0))[:, order]
        w = E0[order]
    else:
        H = interaction_matrix(spec)
        H[np.diag_indices_from(H)] += E0
        w, U = np.linalg.eigh(H)
        del H
    if spec.ground_shift:
        w = w - w[0]
    w.setflags(write=False)
    U.setflags(write=False)
    return w, U


def hamiltonian(spec):
    H = interaction_matrix(spec)
    H[np.diag_indices_from(H)] += free_energies(spec.region, spec.cfg)
    if spec.ground_shift:
        H[np.diag_indices_from(H)] -= _lowest(spec)
    return LocalizedOperator(spec.region, H.astype(complex), spec.cfg)


def _unshifted(spec):
    if not spec.ground_shift:
        return spec
    return HamiltonianSpec(spec.region, spec.cfg, spec.potential, spec.include_interaction, False)


def _lowest(spec):
    return spectral_decomposition(_unshifted(spec))[0][0]


def heisenberg_exact(H, t, A):
    """e^{itH} A e^{-itH} for a Hermitian LocalizedOperator H."""
    if H.support != A.support:
        A = embed(A, H.support)
    M = np.asarray(H.matrix)
    if np.abs(M - M.conj().T).max() > 1e-10 * max(1.0, np.abs(M).max()):
        raise ValueError("H is not Hermitian")
    w, U = np.linalg.eigh((M + M.conj().T) / 2)
    W = (U * np.exp(1j * t * w)) @ U.conj().T
    return A._like(W @ A.matrix @ W.conj().T)


def evolve(spec, t, A):
    """heisenberg_exact with the cached decomposition of spec's Hamiltonian."""
    w, U = spectral_decomposition(spec)
    W = _unitary(U, np.exp(1j * t * w))
    X = embed(A, spec.region).matrix
    return A._like(W @ X @ W.conj().T) if A.support == spec.region else \
        LocalizedOperator(spec.region, W @ X @ W.conj().T, spec.cfg)


def _unitary(U, phases):
    """U diag(phases) U^T for real U, with two real products."""
    return (U * phases.real) @ U.T + 1j * ((U * phases.imag) @ U.T)


def free_evolution(A, t, omega_cfg=None):
    """alpha0_t(A) by phases; exact on the truncated space."""
    E0 = free_energies(A.support, A.cfg)
    ph = np.exp(1j * t * E0)
    return A._like(ph[:, None] * A.matrix * ph.conj()[None, :])


def interaction_cocycle_exact(spec, t):
    """Gamma_t = e^{itH0} e^{-itH} as a matrix on spec.region."""
    # a ground shift only changes a global phase of Gamma; use the unshifted H
    w, U = spectral_decomposition(_unshifted(spec))
    E0 = free_energies(spec.region, spec.cfg)
    G = _unitary(U, np.exp(-1j * t * w))
    G *= np.exp(1j * t * E0)[:, None]
    return LocalizedOperator(spec.region, G, spec.cfg)


def _gamma_matrix(G, X):
    return G @ X @ G.conj().T


def gamma_exact(spec, t, A):
    G = interaction_cocycle_exact(spec, t).matrix
    X = embed(A, spec.region).matrix
    return LocalizedOperator(spec.region, _gamma_matrix(G, X), spec.cfg)


def cocycle_residual(s, t, A, spec, norm=operator_norm):
    """|| alpha0_s gamma_t alpha0_{-s} gamma_s (A) - gamma_{s+t}(A) ||, relative to ||A||."""
    X = embed(A, spec.region).matrix
    E0 = free_energies(spec.region, spec.cfg)
    Gs = interaction_cocycle_exact(spec, s).matrix
    Gt = Gs if t == s else interaction_cocycle_exact(spec, t).matrix
    Y = _gamma_matrix(Gs, X)
    ph = np.exp(-1j * s * E0)
    Y = ph[:, None] * Y * ph.conj()[None, :]
    Y = _gamma_matrix(Gt, Y)
    Y = ph.conj()[:, None] * Y * ph[None, :]
    del Gt, Gs
    Gst = interaction_cocycle_exact(spec, s + t).matrix
    Z = _gamma_matrix(Gst, X)
    return norm(Y - Z) / norm(X)


# ------------------------------------------------------------ quadrature rules

def gauss_rule(t, m, panels=1):
    """Composite Gauss-Legendre nodes on [0, t], the weights, and the matrix W
    mapping integrand values at the nodes to antiderivative values at the
    nodes (integral from 0 of the piecewise interpolant)."""
    x, wq = npleg.leggauss(m)
    Vm = npleg.legvander(x, m - 1)
    Ij = np.empty((m, m))
    for n in range(m):
        e = np.zeros(m)
        e[n] = 1.0
        Ij[:, n] = npleg.legval(x, npleg.legint(e, lbnd=-1))
    Wloc = Ij @ np.linalg.inv(Vm)
    h = t / panels
    nodes = np.concatenate([h * p + h * (x + 1) / 2 for p in range(panels)])
    weights = np.tile(wq * h / 2, panels)
    W = np.zeros((m * panels, m * panels))
    for p in range(panels):
        rows = slice(p * m, (p + 1) * m)
        for q in range(p):
            W[rows, q * m:(q + 1) * m] = wq * h / 2
        W[rows, rows] = Wloc * h / 2
    return nodes, weights, W


def antiderivative_rows(t, m, panels, points):
    """Rows mapping integrand values at the gauss_rule(t, m, panels) nodes to
    the integral from 0 to each point of ``points`` (each inside [0, t])."""
    x, wq = npleg.leggauss(m)
    Vinv = np.linalg.inv(npleg.legvander(x, m - 1))
    h = t / panels
    rows = np.zeros((len(points), m * panels))
    for r, s in enumerate(points):
        u = s / h if h else 0.0
        if not -1e-12 <= u <= panels + 1e-12:
            raise ValueError(f"point {s} outside [0, {t}]")
        p = min(int(np.floor(u)), panels - 1)
        rows[r, :p * m] = np.tile(wq * h / 2, p)
        y = 2 * (u - p) - 1
        Ij = np.array([npleg.legval(y, npleg.legint(np.eye(m)[n], lbnd=-1)) for n in range(m)])
        rows[r, p * m:(p + 1) * m] = Ij @ Vinv * h / 2
    return rows


# ------------------------------------------------------------ bond products

class _BondProducts:
    """Products of dense region matrices with real two-site bond matrices."""

    def __init__(self, region, cfg, potential):
        self.region, self.cfg = region, cfg
        self.N = cfg.levels
        self.L = cfg.nlegs(region)
        self.D = cfg.dim(region)
        self.M = two_site_potential(potential, float(cfg.omega), int(cfg.levels), int(cfg.modes_per_site))
        self.MT = np.ascontiguousarray(self.M.T)

    def legs(self, bond):
        l1, l2 = bond_legs(bond, self.region, self.cfg)
        return l1 + l2

    def left(self, bond, X):
        legs = self.legs(bond)
        k = len(legs)
        if legs != list(range(legs[0], legs[0] + k)):
            return apply_on_legs(self.M.astype(complex), X, legs, self.L, self.N)
        lead = self.N ** legs[0]
        T = X.reshape(lead, self.N**k, -1).view(float)
        return np.matmul(self.M, T).view(complex).reshape(X.shape)

    def right(self, bond, X):
        legs = self.legs(bond)
        k = len(legs)
        if legs != list(range(legs[0], legs[0] + k)):
            return apply_on_legs(self.M.astype(complex), X, legs, self.L, self.N, side="right")
        trail = self.N ** (self.L - legs[0] - k)
        if trail == 1:
            return (X.reshape(-1, self.N**k) @ self.M).reshape(X.shape)
        T = X.reshape(-1, self.N**k, trail).view(float)
        return np.matmul(self.MT, T).view(complex).reshape(X.shape)


def _prune_levels(support, region, n, prune=True):
    """Bonds that can contribute at each level 1..n (support-growth filter)."""
    levels = []
    cur = set(support.points)
    all_bonds = enumerate_bonds(region)
    for _ in range(n):
        bl = [b for b in all_bonds if b.first in cur or b.second in cur] if prune else list(all_bonds)
        levels.append(bl)
        for b in bl:
            cur.update(b.sites)
    return levels


def default_nodes(spec, t):
    """Gauss nodes per panel: enough to resolve |t| * w / 2 radians of the
    fastest bond frequency w = 2 d omega (N - 1), plus a fixed margin."""
    cfg = spec.cfg
    w = 2 * cfg.modes_per_site * cfg.omega * (cfg.levels - 1)
    return int(max(8, 2 * math.ceil((abs(t) * w / 2 + 5) / 2)))


def _embedded_weights(m, drop):
    """Weights integrating the degree m-1-drop least-squares Legendre fit
    through the m Gauss nodes (a lower-order rule on the same samples)."""
    x, _ = npleg.leggauss(m)
    Vm = npleg.legvander(x, m - 1 - drop)
    return 2 * np.linalg.pinv(Vm)[0]


class _LevelOneSource:
    """C_j = [A, V(s_j)] at level one: A is constant, so each bond term is
    computed on that bond's (small) support and then embedded."""

    def __init__(self, A, bonds, spec):
        self.parts = []
        cfg, region = spec.cfg, spec.region
        for b in bonds:
            sub = A.support.union(LatticeRegion(region.dim, b.sites))
            Xs = np.ascontiguousarray(embed(A, sub).matrix, dtype=complex)
            self.parts.append((sub, Xs, _BondProducts(sub, cfg, spec.potential), b,
                               free_energies(sub, cfg)))
        self.region, self.cfg = region, cfg

    def __call__(self, s):
        out = None
        for sub, Xs, ops, b, E0 in self.parts:
            ph = np.exp(1j * s * E0)
            G = Xs * ph.conj()[:, None]
            G *= ph[None, :]
            C = ops.right(b, G) - ops.left(b, G)
            C *= ph[:, None]
            C *= ph.conj()[None, :]
            full = embed(LocalizedOperator(sub, C, self.cfg), self.region).matrix
            if out is None:
                out = full
            else:
                out += full
        return out


def _run_recursion(level_bonds, t, X0, ops, E0, m, panels, level_one=None, drop=2,
                   chunk=1 << 15, at=()):
    """Order contributions D_1..D_n at time t by the Gauss-Legendre
    integration-matrix recursion. Also returns, per order, the Frobenius
    distance to the same integral taken with a lower-order rule on the same
    nodes (error indicator), and D_n at the earlier times ``at`` (from the
    same interpolant)."""
    n = len(level_bonds)
    nodes, weights, W = gauss_rule(t, m, panels)
    wc = np.tile(_embedded_weights(m, drop) * (t / panels) / 2, panels) if m > drop + 1 else weights
    K = len(nodes)
    D = X0.shape[0]
    A_at = antiderivative_rows(t, m, panels, at) if len(at) else np.zeros((0, K))
    Wext = np.vstack([W, A_at, weights, wc])
    na = len(at)
    bufs = [None] * K
    terms, diffs, at_terms = [], [], []
    for lvl, bonds in enumerate(level_bonds):
        for j, s in enumerate(nodes):
            if not bonds:
                bufs[j] = np.zeros((D, D), complex)
                continue
            if lvl == 0 and level_one is not None:
                bufs[j] = level_one(s)
                continue
            ph = np.exp(1j * s * E0)
            G = X0 * ph.conj()[:, None] if lvl == 0 else bufs[j]
            if lvl > 0:
                G *= ph.conj()[:, None]
            G *= ph[None, :]
            C = None
            for b in bonds:
                R = ops.right(b, G)
                if C is None:
                    C = R
                else:
                    C += R
                del R
                C -= ops.left(b, G)
            del G
            C *= ph[:, None]
            C *= ph.conj()[None, :]
            bufs[j] = C
            del C
        flat = [x.reshape(-1) for x in bufs]
        Dk = np.empty(D * D, dtype=complex)
        Dc = np.empty(D * D, dtype=complex)
        last = lvl == n - 1
        rows = Wext[K:] if last else np.vstack([Wext[:K], Wext[K + na:]])
        if last:
            extra = [np.empty(D * D, dtype=complex) for _ in range(na)]
        for c0 in range(0, D * D, chunk):
            blk = np.stack([f[c0:c0 + chunk] for f in flat])
            out = rows @ blk
            if not last:
                for j in range(K):
                    flat[j][c0:c0 + chunk] = out[j]
            else:
                for r in range(na):
                    extra[r][c0:c0 + chunk] = out[r]
            Dk[c0:c0 + chunk] = out[-2]
            Dc[c0:c0 + chunk] = out[-1]
        del flat  # views would keep this level's buffers alive into the next
        Dc -= Dk
        diffs.append(_fro(Dc))
        del Dc
        terms.append(Dk.reshape(D, D))
        if last:
            bufs = None
            at_terms = [x.reshape(D, D) for x in extra]
    return terms, diffs, at_terms


@dataclass
class BoundCertificate:
    label: str
    computed: float
    paper_bound: float
    truncation_allowance: float = 0.0
    lower: bool = False
    n: int = 0
    t: float = 0.0
    s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def pass_(self):
        if self.lower:
            return self.computed >= self.paper_bound - self.truncation_allowance
        return self.computed <= self.paper_bound + self.truncation_allowance

    @property
    def margin(self):
        if self.lower:
            return self.computed - self.paper_bound + self.truncation_allowance
        return self.paper_bound + self.truncation_allowance - self.computed

    def row(self):
        return {
            "label": self.label,
            "n": self.n,
            "t": self.t,
            "s": self.s,
            "computed": self.computed,
            "bound": self.paper_bound,
            "allowance": self.truncation_allowance,
            "pass": self.pass_,
        }


@dataclass
class DysonExpansion:
    """Order terms D_1..D_n; partial sums are formed on demand so that only
    one extra matrix is alive at a time when iterating."""
    base: np.ndarray
    order_terms: list
    tail_bound: float
    nodes: int = 0
    refinement: list = field(default_factory=list)
    level_bonds: list = field(default_factory=list)

    def iter_partial_sums(self):
        S = np.array(self.base, dtype=complex)
        yield S.copy()
        for k, Tk in enumerate(self.order_terms, start=1):
            S += (1j**k) * Tk
            yield S.copy()

    @property
    def partial_sums(self):
        return list(self.iter_partial_sums())


def _fro(X):
    # Frobenius norm: an upper bound for the operator norm, and much cheaper
    return float(np.linalg.norm(X))


def tail_bound(n, d, L, v_norm, t):
    """2^{n(d+2)} L^n ||V||^n |t|^n / n!"""
    return float(2.0 ** (n * (d + 2)) * (L * v_norm * abs(t)) ** n / math.factorial(n))


def _expand(level_bonds, t, A, spec, m=None, panels=1, rtol=1e-8, refine="runs",
            step=4, max_refinements=4, reference=None, drop=2, at=()):
    """Recursion with refinement of the node count.

    refine="runs": successive node counts m, m+step, ... until the results of
    two successive runs differ by less than rtol relative (Frobenius norm,
    which dominates the operator norm),
    order by order, relative to ``reference`` (default: the norm of the
    final order's own term).
    refine="embedded": one run per node count; the indicator is the
    difference between the Gauss rule and a rule of degree lower by ``drop``
    on the same samples (it estimates the error of the lower rule, so it is
    conservative for the Gauss rule); increases m by ``step`` until it is
    below rtol.
    """
    region, cfg = spec.region, spec.cfg
    X0 = np.ascontiguousarray(embed(A, region).matrix, dtype=complex)
    E0 = free_energies(region, cfg)
    ops = _BondProducts(region, cfg, spec.potential)
    lvl1 = _LevelOneSource(A, level_bonds[0], spec) if level_bonds and level_bonds[0] else None
    m = m or default_nodes(spec, t)
    if refine not in ("runs", "embedded"):
        raise ValueError("refine must be 'runs' or 'embedded'")
    history = []

    def ok(diffs, terms):
        ref = reference if reference is not None else operator_norm(terms[-1])
        return all(d <= rtol * ref for d in diffs), ref

    if refine == "embedded":
        for _ in range(max_refinements + 1):
            terms = None
            terms, diffs, extra = _run_recursion(level_bonds, t, X0, ops, E0, m, panels, lvl1, drop, at=at)
            good, ref = ok(diffs, terms)
            history.append({"m": m, "drop": drop, "diffs": diffs, "reference": ref})
            if good:
                return terms, m * panels, history, extra
            m += step
        raise QuadratureError(f"embedded estimate above tolerance: {history[-1]}")

    prev, _, _ = _run_recursion(level_bonds, t, X0, ops, E0, m, panels, lvl1, drop)
    for _ in range(max_refinements):
        m2 = m + step
        cur, _, extra = _run_recursion(level_bonds, t, X0, ops, E0, m2, panels, lvl1, drop, at=at)
        diffs = [_fro(a - b) for a, b in zip(cur, prev)]
        good, ref = ok(diffs, cur)
        history.append({"m": m2, "compare": m, "diffs": diffs, "reference": ref})
        m, prev = m2, cur
        if good:
            return prev, m * panels, history, extra
    raise QuadratureError(f"no agreement after {max_refinements} refinements: {history[-1]}")


def dyson_term(bonds, t, A, spec, **quad):
    """M_n(t)(A) for one bond sequence (first bond innermost, earliest time)."""
    if not bonds:
        raise ValueError("need at least one bond")
    for b in bonds:
        if b.first not in spec.region or b.second not in spec.region:
            raise ValueError(f"bond {b} outside the region")
    if t == 0 or not spec.interacting:
        return LocalizedOperator(spec.region, np.zeros((spec.dim, spec.dim), complex), spec.cfg)
    terms, _, _, _ = _expand([[b] for b in bonds], t, A, spec, **quad)
    return LocalizedOperator(spec.region, terms[-1], spec.cfg)


def dyson_expansion(n_max, t, A, spec, prune=True, L=None, **quad):
    """D_1..D_n(t)(A) summed over all contributing bond sequences (aggregated
    level by level, equal to the sequence sum by linearity) and the partial
    sums of sum_k i^k D_k. Refinement tolerance is relative to ||A||."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    X0 = embed(A, spec.region).matrix
    L = L if L is not None else len(A.support)
    d = spec.cfg.modes_per_site
    tb = tail_bound(n_max, d, L, spec.potential.sup_norm, t)
    D = spec.dim
    if not spec.interacting or t == 0:
        z = [np.zeros((D, D), complex) for _ in range(n_max)]
        return DysonExpansion(X0.astype(complex), z, tb)
    levels = _prune_levels(A.support, spec.region, n_max, prune)
    quad.setdefault("reference", operator_norm(X0))
    terms, nodes, hist, _ = _expand(levels, t, A, spec, **quad)
    return DysonExpansion(X0.astype(complex), terms, tb, nodes, hist, levels)


def sequence_term_bound(n, v_norm, t, s=0.0):
    """Bound on ||M_n(t)(A) - M_n(s)(A)|| / ||A|| for one bond sequence."""
    return float(2.0**n * v_norm**n * abs(t**n - s**n) / math.factorial(n))


def order_term_bound(n, d, L0, v_norm, t, s=0.0):
    """Bound on ||D_n(t)(A) - D_n(s)(A)|| / ||A||: the single-sequence bound
    times a bound on the number of contributing sequences, for A on a box of
    side L0."""
    return float(2.0 ** ((d + 2) * n) * math.prod(range(L0, L0 + n)) * v_norm**n
                 * abs(t**n - s**n) / math.factorial(n))


def contributing_sequences(support, region, n):
    """All bond n-sequences inside region passing the support-growth filter."""
    bonds = enumerate_bonds(region)
    out = []

    def rec(cur, seq):
        if len(seq) == n:
            out.append(tuple(seq))
            return
        for b in bonds:
            if b.first in cur or b.second in cur:
                rec(cur | set(b.sites), seq + [b])

    rec(set(support.points), [])
    return out


def _mn_difference(levels, s, t, A, spec, **quad):
    """|| X(t) - X(s) || for the last-order term. Both times come from one
    recursion over [0, t] (or [0, s] if |s| > |t|); the earlier time is read
    off the same interpolant."""
    if abs(s) > abs(t):
        s, t = t, s
    if s == 0:
        Xt, _, _, _ = _expand(levels, t, A, spec, **quad)
        return operator_norm(Xt[-1])
    Xt, _, _, (Xs,) = _expand(levels, t, A, spec, at=(s,), **quad)
    return operator_norm(Xt[-1] - Xs)


def bound_certificates(n, s, t, A, spec, ladder=None, **quad):
    """Certificates for ||M_n(t) - M_n(s)|| per contributing bond sequence and
    for ||(D_n(t) - D_n(s))(A)||, all normalised by ||A||. The truncation
    allowance is the change of each computed value between the two finest
    truncations in ``ladder`` (levels); the last entry is reported."""
    if s * t < 0:
        raise ValueError("s and t must have the same sign")
    ladder = list(ladder or [spec.cfg.levels])
    d = spec.cfg.modes_per_site
    v = spec.potential.sup_norm
    L0 = len(A.support)
    seqs = contributing_sequences(A.support, spec.region, n)
    results = {}
    for N in ladder[-2:] if len(ladder) > 1 else ladder:
        sp = spec.with_levels(N)
        An = _rebuild(A, sp.cfg)
        anorm = embed(An, sp.region).norm()
        vals = {}
        if sp.interacting:
            for seq in seqs:
                vals[_seq_label(seq)] = _mn_difference([[b] for b in seq], s, t, An, sp, **quad) / anorm
            levels = _prune_levels(An.support, sp.region, n)
            vals["D_n"] = _mn_difference(levels, s, t, An, sp, **quad) / anorm
        else:
            vals = {_seq_label(q): 0.0 for q in seqs}
            vals["D_n"] = 0.0
        results[N] = vals
    Ns = sorted(results)
    certs = []
    for key in results[Ns[-1]]:
        comp = results[Ns[-1]][key]
        allow = abs(comp - results[Ns[0]][key]) if len(Ns) > 1 else 0.0
        bound = order_term_bound(n, d, L0, v, t, s) if key == "D_n" else sequence_term_bound(n, v, t, s)
        lbl = f"order_sum:{key}" if key == "D_n" else f"sequence:{key}"
        certs.append(BoundCertificate(lbl, comp, bound, allow, n=n, t=t, s=s,
                                      extra={"levels": Ns[-1]}))
    return certs


def _seq_label(seq):
    return "|".join(f"{b.first}-{b.second}".replace(" ", "") for b in seq)


def _rebuild(A, cfg):
    """Rebuild an operator at another truncation from its recipe in A.meta."""
    if A.cfg == cfg:
        return A
    recipe = A.meta.get("recipe")
    if recipe is None:
        raise ValueError("operator has no recipe for rebuilding at another truncation")
    return recipe(cfg)


def locality_check(n, t, C0, spec, **quad):
    """Compare D_n(t)(C0) over spec.region with the computation over the
    inflated support, and commutators with single-site operators outside it."""
    inner = inflate_region(C0.support, n)
    inner = LatticeRegion(inner.dim, [p for p in inner.points if p in spec.region])
    if not inner.issubset(spec.region) or inflate_region(C0.support, n).points != inner.points:
        raise ValueError("region must contain the inflated support")
    # every bond of the big region enters, so agreement is a real test
    big = dyson_expansion(n, t, C0, spec, prune=False, **quad).order_terms[-1]
    small_spec = spec.on(inner)
    small = dyson_expansion(n, t, C0, small_spec, **quad).order_terms[-1]
    small_emb = embed(LocalizedOperator(inner, small, spec.cfg), spec.region).matrix
    ref = max(operator_norm(big), 1e-300)
    diff = operator_norm(big - small_emb) / ref
    del small_emb
    Q, P = _site_ops(float(spec.cfg.omega), int(spec.cfg.levels))
    nlegs, N = spec.cfg.nlegs(spec.region), int(spec.cfg.levels)
    comms = {}
    outside = [p for p in spec.region.points if p not in inner]
    for p in outside:
        leg = [site_legs(p, spec.region, spec.cfg)[0]]
        for name, op in (("Q", Q), ("P", P)):
            c = apply_on_legs(op, big, leg, nlegs, N, side="right")
            c -= apply_on_legs(op, big, leg, nlegs, N, side="left")
            comms[f"{name}{p}"] = operator_norm(c) / (ref * operator_norm(op))
    return {
        "relative_difference": diff,
        "max_outside_commutator": max(comms.values()) if comms else 0.0,
        "commutators": comms,
        "inner_region": inner,
        "norm": ref,
    }


def free_time_integral(bond, t1, t2, V, cfg, nodes=None):
    """int_{t1}^{t2} alpha0_s(V_bond) ds on the two-site space of ``bond``.

    In the number basis alpha0_s multiplies entry (i, j) by e^{is(E_i - E_j)},
    so the integral is exact entrywise: the factor is
    (e^{i t2 w} - e^{i t1 w}) / (i w), and t2 - t1 on the diagonal w = 0.
    """
    if t2 < t1:
        raise ValueError("t1 must not exceed t2")
    region = LatticeRegion(len(bond.first), bond.sites)
    M = two_site_potential(V, float(cfg.omega), int(cfg.levels), int(cfg.modes_per_site))
    E0 = free_energies(region, cfg)
    w = E0[:, None] - E0[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = (np.exp(1j * t2 * w) - np.exp(1j * t1 * w)) / (1j * w)
    fac[np.abs(w) < 1e-12] = t2 - t1
    X = M * fac
    op = LocalizedOperator(region, X, cfg)
    return {"operator": op, "report": norm_report(X)}
