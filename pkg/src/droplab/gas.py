"""Finite-n Coulomb gas: energies, Metropolis sampling, Fekete configurations.

Configurations are complex arrays.  The sampler uses a counter-based
Philox generator keyed by the seed, so a run is reproducible from its
config alone regardless of threading elsewhere in the process.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field as fld
from .defaults import DEFAULTS
from .errors import ConfigurationError, PreconditionError
from .potential import PotentialSpec


@dataclass
class PointConfiguration:
    points: np.ndarray  # complex, shape (n,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex).ravel()
        if self.points.size < 1:
            raise ConfigurationError("configuration needs at least one point")

    @property
    def n(self):
        return self.points.size


def energy(z, spec: PotentialSpec, m: float) -> float:
    """Total energy: sum_{j<k} log 1/|zj-zk|^2 + m sum_j Q(zj).

    Coincident points give +inf, which samplers treat as a rejection.
    """
    pts = z.points if isinstance(z, PointConfiguration) else np.asarray(z, dtype=complex)
    n = pts.size
    Qs = float(np.sum(spec.evaluate(pts.real, pts.imag)))
    if n == 1:
        return m * Qs
    dz = pts[:, None] - pts[None, :]
    d2 = np.abs(dz) ** 2
    iu = np.triu_indices(n, k=1)
    pair = d2[iu]
    if np.any(pair == 0.0):
        return np.inf
    return float(-np.log(pair).sum() + m * Qs)


def rescaled_energy(z, spec: PotentialSpec, m: float) -> float:
    """I# = 2 E / (n (n-1)); the per-pair energy scale."""
    pts = z.points if isinstance(z, PointConfiguration) else np.asarray(z, dtype=complex)
    n = pts.size
    if n < 2:
        raise PreconditionError("rescaled energy needs n >= 2")
    return 2.0 * energy(z, spec, m) / (n * (n - 1))


@dataclass
class McmcConfig:
    n: int
    m: float
    beta: float
    step_sigma: float | None = None
    burn_in: int = 2000
    n_samples: int = 10000
    thinning: int = 2
    seed: int = 1
    box: tuple = (-3.0, 3.0, -3.0, 3.0)  # x_min, x_max, y_min, y_max

    def __post_init__(self):
        if self.n_samples < 1 or self.n < 1:
            raise ConfigurationError("need n >= 1 and n_samples >= 1")
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")
        if self.step_sigma is None:
            self.step_sigma = 1.0 / np.sqrt(max(self.m, 1e-12))
        if self.step_sigma <= 0:
            raise ConfigurationError("step_sigma must be positive")

    def to_dict(self):
        return {"n": self.n, "m": self.m, "beta": self.beta,
                "step_sigma": self.step_sigma, "burn_in": self.burn_in,
                "n_samples": self.n_samples, "thinning": self.thinning,
                "seed": self.seed, "box": list(self.box)}


@dataclass
class McmcRun:
    samples: np.ndarray       # complex, shape (n_samples, n)
    acceptance_rate: float
    config: McmcConfig
    step_sigma_final: float


def _sweep(pts, spec, m, beta, sigma, box, rng):
    """One Metropolis sweep: each particle proposed once, in index order."""
    n = pts.size
    x_min, x_max, y_min, y_max = box
    steps = rng.normal(0.0, sigma, size=(n, 2))
    us = rng.random(n)
    accepted = 0
    for j in range(n):
        zj = pts[j]
        cand = zj + steps[j, 0] + 1j * steps[j, 1]
        if not (x_min <= cand.real <= x_max and y_min <= cand.imag <= y_max):
            continue
        others = np.delete(pts, j)
        d_old = np.abs(others - zj)
        d_new = np.abs(others - cand)
        if np.any(d_new == 0.0):
            continue
        dE = (m * (spec.evaluate(cand.real, cand.imag)
                   - spec.evaluate(zj.real, zj.imag))
              - 2.0 * (np.log(d_new).sum() - np.log(d_old).sum()))
        if dE <= 0 or us[j] < np.exp(-0.5 * beta * dE):
            pts[j] = cand
            accepted += 1
    return accepted


def mcmc_sample(cfg: McmcConfig, spec: PotentialSpec) -> McmcRun:
    """Single-particle Metropolis for the Gibbs measure exp(-beta/2 E_{mQ}).

    The step scale adapts toward acceptance in [0.2, 0.5] during burn-in
    and is frozen afterwards, preserving stationarity of the sampled chain.
    """
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    x_min, x_max, y_min, y_max = cfg.box
    n = cfg.n
    # start spread over the droplet scale sqrt(n/m), clipped into the box
    r0 = np.sqrt(max(cfg.n / max(cfg.m, 1e-12), 1e-6))
    px = np.clip(rng.uniform(-r0, r0, n), x_min, x_max)
    py = np.clip(rng.uniform(-r0, r0, n), y_min, y_max)
    pts = (px + 1j * py).astype(complex)

    sigma = cfg.step_sigma
    window = 50
    acc_win = 0
    for sweep in range(1, cfg.burn_in + 1):
        acc_win += _sweep(pts, spec, cfg.m, cfg.beta, sigma, cfg.box, rng)
        if sweep % window == 0:
            rate = acc_win / (window * n)
            if rate < 0.2:
                sigma *= 0.8
            elif rate > 0.5:
                sigma *= 1.25
            acc_win = 0

    samples = np.empty((cfg.n_samples, n), dtype=complex)
    accepted = 0
    proposed = 0
    for s in range(cfg.n_samples):
        for _ in range(cfg.thinning):
            accepted += _sweep(pts, spec, cfg.m, cfg.beta, sigma, cfg.box, rng)
            proposed += n
        samples[s] = pts
    rate = accepted / max(proposed, 1)
    if rate < 0.01:
        raise ConfigurationError(
            f"acceptance collapsed to {rate:.3f} after adaptation; "
            "check step_sigma and the box")
    return McmcRun(samples, rate, cfg, sigma)


def intensity_histogram(run: McmcRun, grid: fld.Grid2D) -> fld.ScalarField:
    """Per-cell average particle count, scaled to a density per dA."""
    if run.samples.size == 0:
        raise PreconditionError("empty MCMC run")
    pts = run.samples.ravel()
    i = np.round((pts.real - grid.x0) / grid.h).astype(int)
    j = np.round((pts.imag - grid.y0) / grid.h).astype(int)
    ok = (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny)
    counts = np.zeros(grid.shape)
    np.add.at(counts, (j[ok], i[ok]), 1.0)
    counts /= run.samples.shape[0]
    return fld.ScalarField(grid, counts / grid.cell_area_dA)


def linear_statistic(run: McmcRun, f: fld.ScalarField):
    """Sample mean and variance of (1/n) tr_n f (bilinear interpolation)."""
    g = f.grid
    pts = run.samples
    fx = np.clip((pts.real - g.x0) / g.h, 0.0, g.nx - 1.000001)
    fy = np.clip((pts.imag - g.y0) / g.h, 0.0, g.ny - 1.000001)
    i0 = fx.astype(int)
    j0 = fy.astype(int)
    tx = fx - i0
    ty = fy - j0
    v = f.values
    fv = ((1 - tx) * (1 - ty) * v[j0, i0] + tx * (1 - ty) * v[j0, i0 + 1]
          + (1 - tx) * ty * v[j0 + 1, i0] + tx * ty * v[j0 + 1, i0 + 1])
    traces = fv.mean(axis=1)
    return float(traces.mean()), float(traces.var())


@dataclass
class FeketeResult:
    config: PointConfiguration
    energy: float
    i_sharp: float
    converged: bool
    starts: int


def _grad_energy(pts, spec, m):
    n = pts.size
    gx = np.zeros(n)
    gy = np.zeros(n)
    if n > 1:
        dx = pts.real[:, None] - pts.real[None, :]
        dy = pts.imag[:, None] - pts.imag[None, :]
        d2 = dx * dx + dy * dy
        np.fill_diagonal(d2, 1.0)
        inv = 1.0 / d2
        np.fill_diagonal(inv, 0.0)
        gx = -2.0 * (dx * inv).sum(axis=1)
        gy = -2.0 * (dy * inv).sum(axis=1)
    qx, qy = spec.gradient(pts.real, pts.imag)
    return gx + m * qx, gy + m * qy


def fekete_minimize(n: int, m: float, spec: PotentialSpec, seed: int = 0,
                    iterations: int | None = None,
                    multistart: int | None = None) -> FeketeResult:
    """Gradient descent with Armijo backtracking on E_{mQ}; best of several starts.

    Gradient descent cannot certify a global minimum, so the result is the
    best local minimizer found ("best found" semantics).
    """
    iterations = DEFAULTS["fekete_iterations"] if iterations is None else iterations
    multistart = DEFAULTS["fekete_multistart"] if multistart is None else multistart
    best_pts, best_E, any_conv = None, np.inf, False
    r0 = np.sqrt(max(n / max(m, 1e-12), 1e-9))
    for s in range(max(multistart, 1)):
        rng = np.random.Generator(np.random.Philox(key=seed + 1000003 * s))
        rad = r0 * np.sqrt(rng.uniform(0.05, 1.0, n))
        ang = rng.uniform(0, 2 * np.pi, n)
        pts = rad * np.exp(1j * ang)
        E = energy(pts, spec, m)
        step = 0.1 * r0 * r0 if n == 1 else 0.05 / max(m, 1.0)
        converged = False
        for _ in range(iterations):
            gx, gy = _grad_energy(pts, spec, m)
            gnorm2 = float((gx * gx + gy * gy).sum())
            if gnorm2 < 1e-18:
                converged = True
                break
            # Armijo backtracking
            ok = False
            for _ in range(40):
                cand = pts - step * (gx + 1j * gy)
                E_new = energy(cand, spec, m)
                if E_new <= E - 0.25 * step * gnorm2:
                    ok = True
                    break
                step *= 0.5
            if not ok:
                break
            pts, E = cand, E_new
            step *= 1.8
        if not converged and not ok:
            warnings.warn("fekete_minimize: line search stalled; best iterate kept")
        any_conv = any_conv or converged or ok
        if E < best_E:
            best_E, best_pts = E, pts
    i_sharp = 2.0 * best_E / (n * (n - 1)) if n > 1 else np.nan
    return FeketeResult(PointConfiguration(best_pts), best_E, i_sharp,
                        any_conv, max(multistart, 1))


def aggregation_check(atoms, beta: float) -> float:
    """Double sum of |xi|^b + |eta|^b - |xi-eta|^b over the product measure.

    Atoms are (point, weight >= 0) pairs; the diagonal is included, exactly
    as in the product-measure integral.  Nonnegative for 0 < beta <= 2;
    can go negative above (e.g. the symmetric two-atom measure at beta=3).
    """
    pts = np.asarray([complex(p) for p, _ in atoms])
    w = np.asarray([float(wt) for _, wt in atoms])
    if np.any(w < 0):
        raise PreconditionError("weights must be nonnegative")
    ab = np.abs(pts) ** beta
    pair = np.abs(pts[:, None] - pts[None, :]) ** beta
    integrand = ab[:, None] + ab[None, :] - pair
    return float((w[:, None] * w[None, :] * integrand).sum())


def aggregation_test_point(atoms, beta: float, zeta: complex):
    """Pointwise one-vs-two-particle intensity test at the point zeta.

    Returns (lhs, rhs) where the aggregation inequality at zeta reads
        lhs = int |zeta - xi|^b dmu  >=  rhs = iint |xi-eta|^b dmu dmu / (2 mu(C)).
    For mu = delta_0 + delta_1, beta = 3, zeta = 1/2 this reproduces the
    failing margin 2^(1-beta) = 1/4 < 1/2.
    """
    pts = np.asarray([complex(p) for p, _ in atoms])
    w = np.asarray([float(wt) for _, wt in atoms])
    lhs = float((np.abs(zeta - pts) ** beta * w).sum())
    pair = np.abs(pts[:, None] - pts[None, :]) ** beta
    rhs = float((w[:, None] * w[None, :] * pair).sum() / (2.0 * w.sum()))
    return lhs, rhs
