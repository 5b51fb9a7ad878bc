"""beta=2 determinantal structure: planar orthogonal polynomials and kernels.

The quadrature inner product is the midpoint rule on a uniform grid with
weight exp(-m Q), in dvol2 units:  <f, g> = sum f conj(g) e^{-mQ} h^2.
Norms h_j are the squared norms of the monic Gram-Schmidt vectors, so the
beta=2 partition function is Z = n! prod h_j (validated against direct
quadrature at n=2 before tests rely on it).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log, pi

import numpy as np

from . import field as fld
from .defaults import DEFAULTS
from .errors import ConfigurationError, PreconditionError, ResolutionError
from .potential import PotentialSpec, sample_potential


@dataclass
class OrthoBasis:
    """Orthonormal polynomial basis of Pol_n in L^2(e^{-mQ} dvol2)."""

    n: int
    m: float
    coeffs: np.ndarray    # (n, n) complex; row j = p_j in the monomial basis
    norms: np.ndarray     # (n,) monic squared norms h_j
    grid: fld.Grid2D
    spec: PotentialSpec
    gram_residual: float

    def evaluate(self, points) -> np.ndarray:
        """p_j at the given complex points, shape (n, len(points))."""
        z = np.asarray(points, dtype=complex).ravel()
        out = np.zeros((self.n, z.size), dtype=complex)
        for j in range(self.n):
            out[j] = np.polynomial.polynomial.polyval(z, self.coeffs[j, : j + 1])
        return out

    def weight_at(self, points) -> np.ndarray:
        z = np.asarray(points, dtype=complex).ravel()
        return np.exp(-self.m * np.asarray(self.spec.evaluate(z.real, z.imag)))

    def to_dict(self):
        c = self.coeffs
        return {"n": self.n, "m": self.m, "norms": self.norms.tolist(),
                "coeffs": np.stack([c.real, c.imag], axis=-1).reshape(self.n, -1).tolist(),
                "grid": self.grid.to_dict(), "gram_residual": self.gram_residual}


def resolution_limit(spec: PotentialSpec, m: float, grid: fld.Grid2D) -> int:
    """Largest degree the grid resolves: 6 cells per oscillation of z^(n-1)
    at the outermost radius where the weight is above 1e-16 of its max."""
    Q, _ = sample_potential(spec, grid)
    X, Y = grid.meshgrid()
    w = np.exp(-m * (Q.values - Q.values.min()))
    r = np.hypot(X, Y)
    r_eff = float(r[w > 1e-16].max()) if (w > 1e-16).any() else 0.0
    if r_eff <= 0:
        return 1
    return max(1, int(2.0 * np.pi * r_eff / (6.0 * grid.h)) + 1)


def suggest_quadrature_grid(spec: PotentialSpec, n: int, m: float,
                            max_nodes: int = 512) -> fld.Grid2D:
    """Heuristic box and spacing for gram_schmidt; validated by the Gram residual."""
    # radial extent: where m*Q(r) - (n-1) log r^2 has climbed ~45 above its min
    rr = np.linspace(1e-3, 60.0, 4000)
    qr = np.asarray(spec.evaluate(rr, np.zeros_like(rr)), dtype=float)
    gr = m * qr - 2.0 * max(n - 1, 0) * np.log(rr)
    half = rr[gr <= gr.min() + 45.0].max() * 1.15 + 0.25
    r_peak = np.sqrt(max(n, 1) / max(m, 1e-9))
    h = min(2.0 * np.pi * max(r_peak, 0.3) / (6.0 * max(n - 1, 1)) * 0.8, half / 24.0)
    nx = int(np.ceil(2 * half / h)) + 1
    if nx > max_nodes:
        nx = max_nodes
        h = 2 * half / (nx - 1)
    nx = max(nx, 48)
    return fld.Grid2D.from_box(-half, -half + (nx - 1) * h, -half,
                               -half + (nx - 1) * h, h)


def gram_schmidt(spec: PotentialSpec, n: int, m: float,
                 grid: fld.Grid2D | None = None,
                 tol_gs: float | None = None) -> OrthoBasis:
    """Monic modified Gram-Schmidt with one reorthogonalization pass.

    Raises ResolutionError when the grid cannot resolve degree n-1 or the
    final Gram matrix misses the identity by more than tol_gs.
    """
    if n < 1:
        raise ConfigurationError("basis needs n >= 1")
    tol_gs = DEFAULTS["tol_gs"] if tol_gs is None else tol_gs
    if grid is None:
        grid = suggest_quadrature_grid(spec, n, m)
    n_max = resolution_limit(spec, m, grid)
    if n > n_max:
        raise ResolutionError(
            f"degree {n - 1} is beyond this grid's resolution limit (n_max={n_max}); "
            "use a finer grid or smaller n")

    Q, _ = sample_potential(spec, grid)
    Z = grid.node_complex().ravel()
    w = np.exp(-m * Q.values.ravel()) * (grid.h * grid.h)

    pows = np.empty((n, Z.size), dtype=complex)
    pows[0] = 1.0
    for j in range(1, n):
        pows[j] = pows[j - 1] * Z

    vecs = np.empty((n, Z.size), dtype=complex)   # orthonormal p_j on nodes
    coeffs = np.zeros((n, n), dtype=complex)
    norms = np.empty(n)
    for j in range(n):
        v = pows[j].copy()
        cf = np.zeros(n, dtype=complex)
        cf[j] = 1.0
        for _ in range(2):  # MGS + one reorthogonalization
            for i in range(j):
                proj = np.vdot(vecs[i] * w, v)  # <v, p_i>
                v -= proj * vecs[i]
                cf -= proj * coeffs[i]
        h_j = float(np.real(np.vdot(v * w, v)))
        if h_j <= 0:
            raise ResolutionError(f"nonpositive norm at degree {j}; grid too coarse")
        norms[j] = h_j
        vecs[j] = v / np.sqrt(h_j)
        coeffs[j] = cf / np.sqrt(h_j)

    gram = (vecs * w) @ vecs.conj().T
    residual = float(np.abs(gram - np.eye(n)).max())
    if residual > tol_gs:
        raise ResolutionError(
            f"Gram residual {residual:.2e} exceeds {tol_gs:.0e}; "
            "use a finer grid or smaller n")
    return OrthoBasis(n, m, coeffs, norms, grid, spec, residual)


def kernel_intensity(basis: OrthoBasis, points) -> np.ndarray:
    """1-point intensity K_n(z,z) e^{-mQ(z)} per dvol2."""
    P = basis.evaluate(points)
    return (np.abs(P) ** 2).sum(axis=0) * basis.weight_at(points)


def kernel_matrix(basis: OrthoBasis, points) -> np.ndarray:
    """K_n(z_i, z_j) for the given points."""
    P = basis.evaluate(points)
    return P.T @ P.conj()


def correlation_det(basis: OrthoBasis, points) -> float:
    """k-point intensity det[K_n(z_i,z_j)] e^{-sum mQ} per dvol2^k, k <= 4."""
    z = np.asarray(points, dtype=complex).ravel()
    if z.size > 4:
        raise PreconditionError("correlation determinants are exposed for k <= 4 only")
    K = kernel_matrix(basis, z)
    return float(np.real(np.linalg.det(K)) * np.prod(basis.weight_at(z)))


def partition_function_beta2(basis: OrthoBasis) -> float:
    """log Z_{m,n} = log n! + sum_j log h_j (orthogonal-norm identity)."""
    if np.any(basis.norms <= 0):
        raise ConfigurationError("basis carries nonpositive norms")
    return lgamma(basis.n + 1) + float(np.log(basis.norms).sum())


def log_z_direct_n2(spec: PotentialSpec, m: float, grid: fld.Grid2D) -> float:
    """Direct 4-dim quadrature of Z_{m,2} = iint |z1-z2|^2 e^{-m(Q1+Q2)}.

    Expands |z1-z2|^2 so the lattice double sum factors exactly into
    single sums; this is the same quadrature, evaluated without the
    orthogonal-norm identity, and serves as its validation oracle.
    """
    Q, _ = sample_potential(spec, grid)
    X, Y = grid.meshgrid()
    w = np.exp(-m * Q.values) * grid.h * grid.h
    s0 = float(w.sum())
    sx = float((w * X).sum())
    sy = float((w * Y).sum())
    s2 = float((w * (X * X + Y * Y)).sum())
    Z2 = 2.0 * s2 * s0 - 2.0 * (sx * sx + sy * sy)
    return float(np.log(Z2))


def gaussian_norms_analytic(n: int, m: float) -> np.ndarray:
    """h_j = pi j! / m^(j+1) for Q = |z|^2 (all Gaussian moments)."""
    return np.array([pi * np.exp(lgamma(j + 1)) / m ** (j + 1) for j in range(n)])


@dataclass
class FreeEnergyRow:
    n: int
    log_z: float
    f_n: float
    target: float


def free_energy_check(spec: PotentialSpec, n_list, analytic_norms: bool = False,
                      grid: fld.Grid2D | None = None) -> list[FreeEnergyRow]:
    """F_n = log Z_{n,n} / (n(n-1)) along m = n, with the -gamma(Q)/2 target.

    analytic_norms=True uses the closed-form Gaussian norms and is only
    available for the quadratic potential.
    """
    rows = []
    for n in n_list:
        n = int(n)
        if analytic_norms:
            if spec.family != "quadratic":
                raise ConfigurationError("analytic norms exist only for the quadratic family")
            log_z = lgamma(n + 1) + float(np.log(gaussian_norms_analytic(n, n)).sum())
        else:
            g = grid if grid is not None else suggest_quadrature_grid(spec, n, n)
            basis = gram_schmidt(spec, n, n, g)
            log_z = partition_function_beta2(basis)
        f_n = log_z / (n * (n - 1)) if n > 1 else np.nan
        target = -0.75 if spec.family == "quadratic" else np.nan
        rows.append(FreeEnergyRow(n, log_z, f_n, target))
    return rows


@dataclass
class MonotonicityReport:
    k: int
    min_difference: float
    passed: bool
    checked: int


def monotonicity_check(basis_n: OrthoBasis, basis_n1: OrthoBasis, points,
                       k: int = 1, tol: float = 0.0,
                       seed: int = 7, pairs: int = 200) -> MonotonicityReport:
    """Intensity monotonicity in n for k = 1 (diagonal) or k = 2 (dets).

    k=1 is exact up to quadrature since the difference is |p_n(z)|^2;
    k=2 compares 2x2 correlation determinants at random point pairs.
    """
    if basis_n1.n != basis_n.n + 1:
        raise PreconditionError("need bases at consecutive n")
    z = np.asarray(points, dtype=complex).ravel()
    if k == 1:
        d = kernel_intensity(basis_n1, z) - kernel_intensity(basis_n, z)
        worst = float(d.min())
        return MonotonicityReport(1, worst, worst >= -tol, z.size)
    if k != 2:
        raise PreconditionError("monotonicity_check supports k in {1, 2}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    idx = rng.integers(0, z.size, size=(pairs, 2))
    worst = np.inf
    for a, b in idx:
        if a == b:
            continue
        pts = z[[a, b]]
        d = correlation_det(basis_n1, pts) - correlation_det(basis_n, pts)
        worst = min(worst, d)
    return MonotonicityReport(2, float(worst), worst >= -tol, pairs)
