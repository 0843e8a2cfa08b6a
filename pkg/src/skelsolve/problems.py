"""Boundary-data presets and analytic reference solutions."""

from __future__ import annotations

import numpy as np

from .geometry import Boundary
from .kernels import LAPLACE, STOKES, SystemSpec


def boundary_data(spec: SystemSpec, b: Boundary, preset: str, params: dict | None = None) -> np.ndarray:
    """Assemble the rhs data vector for a named preset.

    Presets
    -------
    neumann_source_sink : Laplace; flux 0 on the outer curve, +1 on hole 1,
        -1 on hole 2 (holes must be congruent for consistency).
    dirichlet_source_sink : Stokes; (1, 0) on the outer curve, +n on hole 1,
        -n on hole 2.
    annulus_couette : Stokes; tangential velocities u_theta = v_inner on the
        hole and v_outer on the outer circle.
    zero : homogeneous data.
    custom : per-curve constants, params = {"values": [[fx, fy] | f, ...]}.
    """
    params = params or {}
    dpn = spec.dof_per_node
    f = np.zeros((b.n_nodes, dpn))
    if preset == "zero":
        pass
    elif preset == "neumann_source_sink":
        if spec.pde != LAPLACE or b.n_holes < 2:
            raise ValueError("neumann_source_sink needs Laplace with >= 2 holes")
        f[b.curve_nodes(1), 0] = 1.0
        f[b.curve_nodes(2), 0] = -1.0
    elif preset == "dirichlet_source_sink":
        if spec.pde != STOKES or b.n_holes < 2:
            raise ValueError("dirichlet_source_sink needs Stokes with >= 2 holes")
        f[b.curve_nodes(0), 0] = 1.0
        i1, i2 = b.curve_nodes(1), b.curve_nodes(2)
        f[i1] = b.normals[i1]
        f[i2] = -b.normals[i2]
    elif preset == "annulus_couette":
        if spec.pde != STOKES or b.n_holes != 1:
            raise ValueError("annulus_couette needs Stokes on an annulus")
        v_out = params.get("v_outer", -0.5)
        v_in = params.get("v_inner", 1.0)
        for c, v in ((0, v_out), (1, v_in)):
            ids = b.curve_nodes(c)
            pos = b.positions[ids]
            r = np.linalg.norm(pos, axis=1)
            f[ids, 0] = -v * pos[:, 1] / r
            f[ids, 1] = v * pos[:, 0] / r
    elif preset == "custom":
        vals = params["values"]
        if len(vals) != len(b.curves):
            raise ValueError("custom data needs one value per curve")
        for c, v in enumerate(vals):
            f[b.curve_nodes(c)] = np.broadcast_to(np.atleast_1d(v), (1, dpn))
    else:
        raise ValueError(f"unknown boundary data preset {preset!r}")
    return f.ravel()


def couette_velocity(points, r_inner: float = 0.5, r_outer: float = 1.0,
                     v_inner: float = 1.0, v_outer: float = -0.5) -> np.ndarray:
    """Analytic Stokes velocity between concentric rotating circles.

    u_theta(r) = A r + B / r with the wall speeds matched; u_r = 0. Serves
    as the exact oracle for the annulus accuracy tests.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    A = (v_outer * r_outer - v_inner * r_inner) / (r_outer**2 - r_inner**2)
    B = v_inner * r_inner - A * r_inner**2
    r = np.linalg.norm(pts, axis=1)
    ut = A * r + B / r
    return np.stack([-ut * pts[:, 1] / r, ut * pts[:, 0] / r], axis=1)
