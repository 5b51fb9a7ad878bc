"""Local-droplet verification and the domination partial order.

Everything here is rebuilt from the defining potential (the field
qhat_S = gamma* - U^{Q,S} is recomputed from the density), so these
checks are independent of the obstacle-solver path that produced the
masks.  All set comparisons allow a 1-cell dilation tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field as fld
from . import obstacle as obs
from .defaults import DEFAULTS
from .errors import PreconditionError
from .potential import Localization


@dataclass
class DropletPair:
    """Two droplets of one potential on a shared grid, s1 the smaller."""

    s1: obs.Droplet
    s2: obs.Droplet

    def __post_init__(self):
        if not fld.grids_match(self.s1.grid, self.s2.grid):
            raise PreconditionError("droplet pair must share a grid")

    @property
    def grid(self):
        return self.s1.grid


@dataclass
class ConditionReport:
    passed: bool
    worst_value: float
    worst_node: tuple | None = None

    def to_dict(self):
        return {"pass": self.passed, "worst_value": self.worst_value,
                "worst_node": self.worst_node}


@dataclass
class LocalDropletReport:
    t: float
    robin: float
    conditions: dict
    passed: bool

    def to_dict(self):
        return {"t": self.t, "robin": self.robin, "passed": self.passed,
                "conditions": {k: v.to_dict() for k, v in self.conditions.items()}}


def _worst_node(values, sel):
    jj, ii = np.nonzero(sel)
    k = int(np.argmin(values))
    return (int(ii[k]), int(jj[k]))


def verify_local_droplet(
    S: fld.RegionMask,
    loc: Localization,
    Q: fld.ScalarField,
    laplQ: fld.ScalarField,
    tol: float,
    tol_flat: float | None = None,
) -> LocalDropletReport:
    """Check the five local-droplet conditions for the set S inside Sigma.

    (i) lapQ >= -tol on S, (ii) no shallow points, (iii) reports the mass,
    (iv) U^{Q,S} + Q flat on S within tol_flat, (v) U^{Q,S} + Q >= gamma*
    - tol on Sigma minus S.
    """
    if S.count == 0:
        raise PreconditionError("S is empty")
    g = S.grid
    constrained = loc.constrained(g)
    if not bool(np.all(constrained[S.members])):
        raise PreconditionError("S is not contained in Sigma")

    dens_on_S = laplQ.values[S.members]
    cond_i = ConditionReport(bool(dens_on_S.min() >= -tol), float(dens_on_S.min()),
                             _worst_node(dens_on_S, S.members))

    t = float(dens_on_S.sum()) * g.cell_area_dA
    trimmed = obs.remove_shallow(S, laplQ, t_scale=max(t, 1e-12))
    cond_ii = ConditionReport(trimmed.count == S.count,
                              float(S.count - trimmed.count))

    density = fld.ScalarField(g, np.where(S.members, laplQ.values, 0.0))
    dtmp = obs.Droplet(mask=S, t=t, density=density, robin=np.nan)
    U = obs.droplet_potential(dtmp, fld.RegionMask(g, constrained))
    uq = U.values + Q.values
    on_S = uq[S.members]
    gamma = float(on_S.mean())
    spread = float(on_S.max() - on_S.min())
    if tol_flat is None:
        jj, ii = np.nonzero(S.members)
        box = Q.values[jj.min():jj.max() + 1, ii.min():ii.max() + 1]
        tol_flat = DEFAULTS["tol_flat_rel"] * float(box.max() - box.min())
    cond_iv = ConditionReport(spread <= tol_flat, spread)

    off = constrained & ~S.members
    if off.any():
        margins = (uq - gamma)[off]
        cond_v = ConditionReport(bool(margins.min() >= -tol), float(margins.min()),
                                 _worst_node(margins, off))
    else:
        cond_v = ConditionReport(True, np.inf)  # minimal localization: vacuous

    conditions = {"i_density_nonneg": cond_i, "ii_no_shallow": cond_ii,
                  "iii_mass": ConditionReport(True, t),
                  "iv_flat": cond_iv, "v_exterior_bound": cond_v}
    passed = all(c.passed for c in conditions.values())
    return LocalDropletReport(t=t, robin=gamma, conditions=conditions, passed=passed)


def obstacle_field_of(d: obs.Droplet, Q: fld.ScalarField,
                      targets: fld.RegionMask | None = None) -> fld.ScalarField:
    """qhat_S = gamma* - U^{Q,S}, rebuilt from the droplet's own density."""
    g = d.grid
    if targets is None:
        targets = fld.full_mask(g)
    U = obs.droplet_potential(d, targets)
    gamma = d.robin
    if not np.isfinite(gamma):
        gamma = obs.robin_constant(d, Q).gamma_star
    return fld.ScalarField(g, gamma - U.values, targets.members.copy())


@dataclass
class DominationResult:
    dominated: bool
    max_violation: float
    witness: tuple | None

    def __bool__(self):
        return self.dominated


def check_domination(p: DropletPair, tol: float) -> DominationResult:
    """S1 < S2 in the domination order iff qhat_{S1} <= Q on S2."""
    if not fld.contained_in(p.s1.mask, p.s2.mask, slack_cells=1):
        raise PreconditionError("check_domination needs s1 contained in s2 (1-cell slack)")
    g = p.grid
    Q = _potential_field(p.s1, g)
    qs1 = obstacle_field_of(p.s1, Q, p.s2.mask)
    viol = (qs1.values - Q.values)[p.s2.mask.members]
    k = int(np.argmax(viol))
    jj, ii = np.nonzero(p.s2.mask.members)
    witness = (int(ii[k]), int(jj[k]))
    worst = float(viol[k])
    return DominationResult(worst <= tol, worst, None if worst <= tol else witness)


def _potential_field(d: obs.Droplet, g) -> fld.ScalarField:
    ref = d.potential_ref
    if isinstance(ref, fld.ScalarField):
        return ref
    if ref is None:
        raise PreconditionError("droplet carries no potential reference")
    from .potential import sample_potential  # circular-safe local import

    Q, _ = sample_potential(ref, g)
    return Q


@dataclass
class HullBoundaryReport:
    fraction: float
    passed: bool
    total_boundary_nodes: int


def hull_boundary_inclusion(s_star_t0: fld.RegionMask, s_t: fld.RegionMask) -> HullBoundaryReport:
    """Fraction of the hull boundary of S*_{t0} inside the 1-cell dilation of S_t."""
    if not fld.grids_match(s_star_t0.grid, s_t.grid):
        raise PreconditionError("masks must share a grid")
    hull = fld.polynomial_hull(s_star_t0)
    bnd = fld.boundary_nodes(hull)
    if bnd.count == 0:
        return HullBoundaryReport(1.0, True, 0)
    target = fld.dilate(s_t, 1).members
    frac = float(target[bnd.members].mean())
    return HullBoundaryReport(frac, frac == 1.0, bnd.count)


@dataclass
class DbarReport:
    max_modulus: float
    interior_nodes: int
    available: bool


def dbar_boundary_check(S: fld.RegionMask, Q: fld.ScalarField,
                        laplQ: fld.ScalarField) -> DbarReport:
    """Max |dbar(U^{Q,S} + Q)| over interior droplet nodes (centered differences).

    For a genuine droplet the Cauchy-Riemann combination vanishes on S, so
    the discrete value must be O(h).
    """
    g = S.grid
    inner = fld.interior_nodes(S)
    inner.members[0, :] = inner.members[-1, :] = False
    inner.members[:, 0] = inner.members[:, -1] = False
    if inner.count == 0:
        return DbarReport(np.nan, 0, False)
    density = fld.ScalarField(g, np.where(S.members, laplQ.values, 0.0))
    dtmp = obs.Droplet(mask=S, t=1.0, density=density, robin=np.nan)
    # the stencil needs U at the 4-neighbors of every interior node
    U = obs.droplet_potential(dtmp, fld.dilate(inner, 1))
    f = U.values + Q.values
    fx = (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2 * g.h)
    fy = (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2 * g.h)
    mod = 0.5 * np.hypot(fx, fy)  # |dbar f| = |fx + i fy| / 2
    return DbarReport(float(mod[inner.members].max()), inner.count, True)


def comparison_principle(p: DropletPair, Q: fld.ScalarField, tol: float) -> bool:
    """qhat_{S2} <= qhat_{S1} + tol on Phull(S1), with equality on S1."""
    hull = fld.polynomial_hull(p.s1.mask)
    q1 = obstacle_field_of(p.s1, Q, hull)
    q2 = obstacle_field_of(p.s2, Q, hull)
    diff = (q2.values - q1.values)[hull.members]
    on_s1 = np.abs(q2.values - q1.values)[p.s1.members]
    return bool(diff.max() <= tol and on_s1.max() <= tol)


def hole_freezing(p: DropletPair) -> bool:
    """For S1 < S2, growth avoids the holes: (S2 \\ S1) cap Phull(S1) = empty."""
    hull = fld.polynomial_hull(p.s1.mask)
    grown = p.s2.mask.members & ~fld.dilate(p.s1.mask, 1).members
    return not bool((grown & hull.members).any())
