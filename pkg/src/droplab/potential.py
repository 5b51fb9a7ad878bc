"""External fields Q: builtin analytic families, growth checks, localization."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field as fld
from .errors import ConfigurationError, PreconditionError

FAMILIES = ("quadratic", "anisotropic_quadratic", "quartic", "two_well", "grid_sampled")


def _default_growth_certificate(family, params):
    """(delta0, C0) with Q >= (1+delta0) log(1+|z|^2) - C0 for the family.

    Chosen with comfortable margin; check_growth verifies them nodewise.
    """
    if family == "quadratic":
        return 1.0, 2.0
    if family == "anisotropic_quadratic":
        c = abs(params.get("c", 0.0))
        return 0.5, 1.5 * np.log(1.5 / max(1.0 - c, 1e-3)) + 2.0
    if family == "quartic":
        a = params.get("a", 0.0)
        extra = 0.5 * a * a if a < 0 else 0.0
        return 1.0, 3.0 + extra
    if family == "two_well":
        d = params.get("d", 1.0)
        return 1.0, 2.0 * np.log(1.0 + 4.0 * d * d) + 2.0
    return 0.0, 0.0


@dataclass
class PotentialSpec:
    """External field Q with closed-form Laplacian and growth metadata.

    delta0, C0 certify the extra-growth bound
        Q(z) >= (1 + delta0) log(1 + |z|^2) - C0;
    t_max is the largest admissible droplet mass (None = unbounded).
    """

    family: str
    params: dict = dc_field(default_factory=dict)
    delta0: float | None = None
    C0: float | None = None
    t_max: float | None = None
    sampled: "fld.ScalarField | None" = None  # grid_sampled payload

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown potential family '{self.family}'")
        if self.family == "anisotropic_quadratic":
            if not abs(self.params.get("c", 0.0)) < 1:
                raise ConfigurationError("anisotropic_quadratic needs |c| < 1")
        if self.family == "two_well" and self.params.get("d", 1.0) <= 0:
            raise ConfigurationError("two_well needs d > 0")
        if self.family == "grid_sampled":
            if self.sampled is None:
                f = self.params.get("file")
                if not f:
                    raise ConfigurationError("grid_sampled needs a 'file' parameter")
                self.sampled = fld.load_field(f)
            if self.t_max is None:
                raise ConfigurationError("grid_sampled potentials must declare t_max")
        d0, c0 = _default_growth_certificate(self.family, self.params)
        if self.delta0 is None:
            self.delta0 = d0
        if self.C0 is None:
            self.C0 = c0
        if self.delta0 < 0:
            raise ConfigurationError("delta0 must be >= 0")

    # -- closed-form evaluation -------------------------------------------

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "quadratic":
            return x * x + y * y
        if self.family == "anisotropic_quadratic":
            c = self.params.get("c", 0.0)
            return (1 + c) * x * x + (1 - c) * y * y
        if self.family == "quartic":
            a = self.params.get("a", 0.0)
            r2 = x * x + y * y
            return 0.5 * r2 * r2 + a * r2
        if self.family == "two_well":
            d = self.params.get("d", 1.0)
            # |z^2 - d^2|^2 / (4 d^2)
            re = x * x - y * y - d * d
            im = 2.0 * x * y
            return (re * re + im * im) / (4.0 * d * d)
        return self._interp_sampled(x, y)

    def laplacian_values(self, x, y):
        """Closed-form quarter-Laplacian for the builtin families."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family in ("quadratic", "anisotropic_quadratic"):
            return np.ones(np.broadcast(x, y).shape)
        if self.family == "quartic":
            a = self.params.get("a", 0.0)
            return 2.0 * (x * x + y * y) + a
        if self.family == "two_well":
            d = self.params.get("d", 1.0)
            return (x * x + y * y) / (d * d)
        raise ConfigurationError("grid_sampled has no closed-form Laplacian")

    def gradient(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "quadratic":
            return 2.0 * x, 2.0 * y
        if self.family == "anisotropic_quadratic":
            c = self.params.get("c", 0.0)
            return 2.0 * (1 + c) * x, 2.0 * (1 - c) * y
        if self.family == "quartic":
            a = self.params.get("a", 0.0)
            r2 = x * x + y * y
            return 2.0 * x * (r2 + a), 2.0 * y * (r2 + a)
        if self.family == "two_well":
            d = self.params.get("d", 1.0)
            r2 = x * x + y * y
            return x * (r2 - d * d) / (d * d), y * (r2 + d * d) / (d * d)
        raise ConfigurationError("grid_sampled has no closed-form gradient")

    def _interp_sampled(self, x, y):
        g = self.sampled.grid
        fx = np.clip((x - g.x0) / g.h, 0.0, g.nx - 1.000001)
        fy = np.clip((y - g.y0) / g.h, 0.0, g.ny - 1.000001)
        i0 = fx.astype(int)
        j0 = fy.astype(int)
        tx = fx - i0
        ty = fy - j0
        v = self.sampled.values
        return ((1 - tx) * (1 - ty) * v[j0, i0] + tx * (1 - ty) * v[j0, i0 + 1]
                + (1 - tx) * ty * v[j0 + 1, i0] + tx * ty * v[j0 + 1, i0 + 1])

    def label(self) -> str:
        if not self.params:
            return self.family
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.family}({inner})"

    def to_dict(self):
        return {"family": self.family, "params": dict(self.params),
                "delta0": self.delta0, "C0": self.C0, "t_max": self.t_max}


@dataclass
class Localization:
    """Closed set Sigma where the obstacle Q is imposed; None means the whole box."""

    sigma: "fld.RegionMask | None" = None

    def constrained(self, grid) -> np.ndarray:
        if self.sigma is None:
            return np.ones(grid.shape, dtype=bool)
        if not fld.grids_match(self.sigma.grid, grid):
            raise ConfigurationError("localization mask lives on a different grid")
        return self.sigma.members

    def label(self) -> str:
        return "all" if self.sigma is None else f"mask({self.sigma.count} cells)"


ALL = Localization(None)


def sample_potential(spec: PotentialSpec, grid: "fld.Grid2D"):
    """Sample (Q, lapQ) on the grid; closed-form lapQ for builtin families."""
    if spec.family == "grid_sampled":
        if not fld.grids_match(spec.sampled.grid, grid):
            raise ConfigurationError("grid_sampled potential was dumped on a different grid")
        Q = spec.sampled.copy()
        lap = fld.laplacian(Q)
        # extend the undefined ring by its nearest interior value; keep the mask
        v = lap.values
        v[0, :], v[-1, :] = v[1, :], v[-2, :]
        v[:, 0], v[:, -1] = v[:, 1], v[:, -2]
        return Q, lap
    X, Y = grid.meshgrid()
    Q = fld.ScalarField(grid, spec.evaluate(X, Y))
    lap = fld.ScalarField(grid, spec.laplacian_values(X, Y))
    return Q, lap


@dataclass
class GrowthReport:
    passed: bool
    rings_increasing: bool
    certificate_ok: bool
    worst_node: tuple | None
    worst_margin: float

    def to_dict(self):
        return {"passed": self.passed, "rings_increasing": self.rings_increasing,
                "certificate_ok": self.certificate_ok,
                "worst_node": self.worst_node, "worst_margin": self.worst_margin}


def check_growth(spec: PotentialSpec, grid: "fld.Grid2D", t: float) -> GrowthReport:
    """Report-only growth diagnostic for (Q, t) on this box.

    Checks that G = Q - t log|z|^2 increases outward across the three
    outermost node rings, and verifies the (delta0, C0) extra-growth
    certificate at every node.
    """
    Q, _ = sample_potential(spec, grid)
    X, Y = grid.meshgrid()
    r2 = np.maximum(X * X + Y * Y, 1e-30)
    G = Q.values - t * np.log(r2)

    ii, jj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny))
    ring = np.minimum(np.minimum(ii, grid.nx - 1 - ii), np.minimum(jj, grid.ny - 1 - jj))
    # step one node toward the box interior on each binding side
    di = np.where(ii <= grid.nx - 1 - ii, 1, -1)
    dj = np.where(jj <= grid.ny - 1 - jj, 1, -1)
    step_i = np.where(np.minimum(ii, grid.nx - 1 - ii) <= ring, di, 0)
    step_j = np.where(np.minimum(jj, grid.ny - 1 - jj) <= ring, dj, 0)
    worst_node = None
    worst = np.inf
    rings_ok = True
    sel = ring <= 2
    inner = G[jj[sel] + step_j[sel], ii[sel] + step_i[sel]]
    margin = G[sel] - inner
    k = int(np.argmin(margin))
    if margin[k] < 0:
        rings_ok = False
    if margin[k] < worst:
        worst = float(margin[k])
        worst_node = (int(ii[sel][k]), int(jj[sel][k]))

    cert = Q.values - ((1.0 + spec.delta0) * np.log1p(r2) - spec.C0)
    cert_ok = bool(cert.min() >= 0)
    if cert.min() < worst:
        worst = float(cert.min())
        j, i = np.unravel_index(int(np.argmin(cert)), cert.shape)
        worst_node = (int(i), int(j))
    return GrowthReport(rings_ok and cert_ok, rings_ok, cert_ok, worst_node, worst)


def localize(Q: "fld.ScalarField", loc: Localization):
    """Return (Q, constrained-node mask) for the localization Q_Sigma.

    Off Sigma the obstacle is simply absent (+infinity is structural,
    never a floating sentinel).
    """
    constrained = loc.constrained(Q.grid)
    if loc.sigma is not None and loc.sigma.count == 0:
        raise PreconditionError("localization Sigma is empty")
    return Q, constrained
