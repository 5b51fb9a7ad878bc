"""Centralized numerical defaults, echoed verbatim into run manifests."""
from __future__ import annotations

import numpy as np

DEFAULTS = {
    # obstacle solver
    "tol_obs_rel": 1e-8,       # coincidence tolerance = tol_obs_rel * (max Q - min Q)
    "tol_mass_floor": 1e-3,    # tol_mass = max(floor, 4h) * t
    "tol_flat_rel": 0.05,      # Frostman flatness = rel * Q-range over droplet bbox
    "margin_cells": 10,        # required droplet distance to box edge
    "max_sweeps": 200_000,
    "bisect_max": 60,
    # shallow-point removal
    "r_shallow_cells": 3,      # r_shallow = 3h
    "eps_mass_rel": 1e-6,      # eps_mass = 1e-6 * t
    # robin
    "tol_robin": 0.01,
    # richardson / evolution
    "k_max": 4,
    # gas
    "step_sigma": None,        # default 1/sqrt(m)
    "fekete_multistart": 4,
    "fekete_iterations": 3000,
    # detgas
    "tol_gs": 1e-8,
}


def tol_obs(q_values) -> float:
    rng = float(np.max(q_values) - np.min(q_values))
    return DEFAULTS["tol_obs_rel"] * max(rng, 1e-30)


def tol_mass(h: float, t: float) -> float:
    return max(DEFAULTS["tol_mass_floor"], 4.0 * h) * t


def psor_omega(nx: int, ny: int) -> float:
    n = max(nx, ny)
    return 2.0 / (1.0 + np.sin(np.pi / n))
