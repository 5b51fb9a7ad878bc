"""Droplet chains in t, Richardson moment checks, and weak Hele-Shaw flow.

Forward evolution is one obstacle solve per t (warm-starting the boundary
constant along the chain).  The backward Hele-Shaw construction replaces
the potential by the synthetic field Qtilde = -U^{Q,K*} and localizes to
K*, after which it is the same forward code path; uniqueness of the weak
solution shows up here as determinism of that code path.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field as fld
from . import obstacle as obs
from .defaults import DEFAULTS
from .droplet import DropletPair, check_domination
from .errors import DroplabError, InconsistencyError, PreconditionError
from .potential import Localization, PotentialSpec, sample_potential


@dataclass
class DropletChain:
    """Droplets at strictly increasing t, nondecreasing as sets."""

    droplets: list
    t_values: list
    potential_ref: object = None
    localization_ref: object = None
    solutions: list = dc_field(default_factory=list)
    complete: bool = True

    def __len__(self):
        return len(self.droplets)

    def pair(self, i: int, j: int) -> DropletPair:
        return DropletPair(self.droplets[i], self.droplets[j])

    def to_manifest(self):
        return [s.to_manifest() for s in self.solutions]


@dataclass
class MomentEntry:
    k: int
    kind: str            # "const", "Re", "Im"
    value: float
    expected: float
    tolerance: float

    @property
    def passed(self):
        return abs(self.value - self.expected) <= self.tolerance


@dataclass
class MomentReport:
    t: float
    t_prime: float
    center: complex
    entries: list

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def rows(self):
        return [(self.t, self.t_prime, e.k, e.kind, e.value, e.expected)
                for e in self.entries]


def _evolve_fields(Q, laplQ, loc, t_list, potential_ref=None,
                   localization_ref=None, z_ref=(0.0, 0.0), qhat_tol=None,
                   **solver_kw) -> DropletChain:
    t_list = [float(t) for t in t_list]
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise PreconditionError("t_list must be strictly increasing")
    droplets, solutions = [], []
    c_start = None
    complete = True
    try:
        for t in t_list:
            sol = obs.solve_obstacle(Q, laplQ, loc, t, z_ref=z_ref,
                                     c_start=c_start, **solver_kw)
            c_start = sol.boundary_constant
            droplets.append(obs.make_droplet(sol, laplQ, Q, potential_ref,
                                             localization_ref))
            solutions.append(sol)
    except DroplabError:
        if not droplets:
            raise
        complete = False
    # monotonicity along the chain: masks nondecreasing, qhat nondecreasing
    for a, b, sa, sb in zip(droplets, droplets[1:], solutions, solutions[1:]):
        if not fld.contained_in(a.mask, b.mask, slack_cells=1):
            raise InconsistencyError("chain masks are not nondecreasing")
        tol = qhat_tol if qhat_tol is not None else 10.0 * max(sa.tol_obs, sb.tol_obs)
        if float((sa.qhat.values - sb.qhat.values).max()) > tol:
            raise InconsistencyError("qhat is not monotone along the chain")
    return DropletChain(droplets, t_list[: len(droplets)], potential_ref,
                        localization_ref, solutions, complete)


def evolve_chain(spec: PotentialSpec, loc: Localization, t_list,
                 grid: fld.Grid2D, **solver_kw) -> DropletChain:
    """One obstacle solve per t, warm-started, with monotonicity asserted."""
    Q, laplQ = sample_potential(spec, grid)
    return _evolve_fields(Q, laplQ, loc, t_list, potential_ref=spec,
                          localization_ref=loc, **solver_kw)


def _difference_measure(p: DropletPair) -> np.ndarray:
    """Per-cell masses of 1_{S2 \\ S1} lapQ dA with sub-cell boundaries."""
    m2 = obs.region_measure(p.s2)
    m1 = obs.region_measure(p.s1)
    return np.clip(m2 - m1, 0.0, None)


def _interior_complex(d: obs.Droplet):
    inner = fld.interior_nodes(d.mask)
    Z = d.grid.node_complex()
    return Z[inner.members]


def mass_centroid(d: obs.Droplet) -> complex:
    Z = d.grid.node_complex()
    w = d.density.values[d.mask.members]
    z = Z[d.mask.members]
    return complex((z * w).sum() / w.sum())


def richardson_moments(p: DropletPair, a: complex | None = None,
                       k_max: int | None = None) -> MomentReport:
    """Harmonic moments of the growth annulus against lapQ dA.

    The constant test function integrates to t' - t; the decaying moments
    Re/Im (z-a)^{-k} integrate to zero for any pair in the domination
    order.  `a` defaults to the mass centroid of the smaller droplet and
    must be interior to it.
    """
    if k_max is None:
        k_max = DEFAULTS["k_max"]
    if not fld.contained_in(p.s1.mask, p.s2.mask, slack_cells=1):
        raise PreconditionError("richardson_moments needs s1 contained in s2")
    if a is None:
        a = mass_centroid(p.s1)
    a = complex(a)
    g = p.grid
    inner = fld.interior_nodes(p.s1.mask)
    i = int(np.round((a.real - g.x0) / g.h))
    j = int(np.round((a.imag - g.y0) / g.h))
    if not (0 <= i < g.nx and 0 <= j < g.ny and inner.members[j, i]):
        raise PreconditionError("moment center a must be interior to s1")

    w = _difference_measure(p)
    Z = g.node_complex()
    dt = p.s2.t - p.s1.t
    if dt < 0:
        raise PreconditionError("pair is not ordered by mass")
    tol_mass = max(DEFAULTS["tol_mass_floor"], 4.0 * g.h) * max(p.s2.t, 1e-12)
    entries = [MomentEntry(0, "const", float(w.sum()), dt, tol_mass)]
    tol_k = 5e-3 * max(dt, 1e-12)
    sel = w > 0
    zc = Z[sel] - a
    wc = w[sel]
    for k in range(1, k_max + 1):
        hk = zc ** (-k)
        entries.append(MomentEntry(k, "Re", float((hk.real * wc).sum()), 0.0, tol_k))
        entries.append(MomentEntry(k, "Im", float((hk.imag * wc).sum()), 0.0, tol_k))
    return MomentReport(p.s1.t, p.s2.t, a, entries)


def richardson_inequality(p: DropletPair, a: complex, b: complex) -> float:
    """Integral of [log|z-a|^2 - log|z-b|^2] lapQ dA over S2 \\ S1.

    The test function is subharmonic off S1, harmonic off S2 and vanishes
    at infinity, so the value must be >= 0 (up to quadrature error)
    whenever S1 is dominated by S2.  The cell containing `a` uses the
    effective-radius rule of the log kernel.
    """
    a = complex(a)
    b = complex(b)
    g = p.grid
    inner1 = fld.interior_nodes(p.s1.mask)
    Z = g.node_complex()

    def node_of(pt):
        i = int(np.round((pt.real - g.x0) / g.h))
        j = int(np.round((pt.imag - g.y0) / g.h))
        return i, j

    ia, ja = node_of(a)
    ib, jb = node_of(b)
    diff2 = p.s2.mask.members & ~p.s1.mask.members
    if not (0 <= ia < g.nx and 0 <= ja < g.ny and diff2[ja, ia]):
        raise PreconditionError("a must lie in s2 minus s1")
    if not (0 <= ib < g.nx and 0 <= jb < g.ny and inner1.members[jb, ib]):
        raise PreconditionError("b must lie in the interior of s1")

    w = _difference_measure(p)
    sel = w > 0
    za = np.abs(Z[sel] - a)
    zb = np.abs(Z[sel] - b)
    r_eff = g.h * np.exp(fld.CELL_LOG_CONSTANT)
    la = 2.0 * np.log(np.maximum(za, r_eff))
    lb = 2.0 * np.log(np.maximum(zb, r_eff))
    return float(((la - lb) * w[sel]).sum())


def harmonic_measure_quotient(chain: DropletChain, i: int, f: fld.ScalarField) -> float:
    """Difference-quotient approximation of int f d(omega_infinity) at step i."""
    if i + 1 >= len(chain):
        raise PreconditionError("need a successor entry in the chain")
    p = chain.pair(i, i + 1)
    dt = p.s2.t - p.s1.t
    w = _difference_measure(p)
    if not (w > 0).any():
        raise PreconditionError("empty difference set between chain entries")
    return float((f.values * w).sum() / dt)


def backward_hele_shaw(K_star: fld.RegionMask, laplQ: fld.ScalarField,
                       t_list, *, domination_tol: float = 0.02,
                       **solver_kw) -> DropletChain:
    """Unique weak Hele-Shaw solution ending at K* (backward in time).

    Builds Qtilde = -U^{Q,K*} from the density 1_{K*} lapQ, then runs the
    forward chain for the localized potential (Qtilde, Sigma=K*) over the
    requested times.  Consecutive pairs are asserted to be in the
    domination order for Qtilde.
    """
    g = K_star.grid
    t_list = sorted(float(t) for t in t_list)
    dens_on = laplQ.values[K_star.members]
    if dens_on.min() < 0:
        raise PreconditionError("lapQ must be >= 0 on K*")
    trimmed = obs.remove_shallow(K_star, laplQ, t_scale=1.0)
    if trimmed.count != K_star.count:
        raise PreconditionError("K* contains shallow points")
    t_star = float(dens_on.sum()) * g.cell_area_dA
    if t_list and t_list[-1] >= t_star:
        raise PreconditionError(
            f"t={t_list[-1]} exceeds the terminal mass t*={t_star:.6g}")

    density = fld.ScalarField(g, np.where(K_star.members, laplQ.values, 0.0))
    U = fld.log_potential(density, K_star, fld.full_mask(g),
                          allow_large=g.nx * g.ny > fld.POTENTIAL_GRID_CAP)
    Qt = fld.ScalarField(g, -U.values)
    lapQt = density
    Z = g.node_complex()
    wts = density.values[K_star.members]
    centroid = complex((Z[K_star.members] * wts).sum() / wts.sum())

    chain = _evolve_fields(Qt, lapQt, Localization(K_star), t_list,
                           potential_ref=Qt, localization_ref=K_star,
                           z_ref=(centroid.real, centroid.imag), **solver_kw)
    for i in range(len(chain) - 1):
        res = check_domination(chain.pair(i, i + 1), domination_tol)
        if not res:
            raise InconsistencyError(
                f"backward chain breaks domination at step {i} "
                f"(violation {res.max_violation:.3g})")
    return chain


def correctly_indexed(chain: DropletChain, laplQ: fld.ScalarField) -> bool:
    """Every entry carries mass t within its solve's tol_mass."""
    for d, sol in zip(chain.droplets, chain.solutions):
        m = fld.integrate_dA(laplQ, d.mask)
        if abs(m - d.t) > sol.tol_mass:
            return False
    return True
