"""Kernel evaluation and system-matrix blocks for the two supported PDEs.

Stokes (Dirichlet velocity data), density mu on the boundary:

    A = -1/2 I + D + N
    D: stresslet double layer, block (i,j) = (1/pi) (r.n_j)/|r|^4 (r x r) w_j
       with r = x_i - x_j; smooth-curve diagonal limit -(kappa_j/(2 pi)) tau x tau w_j
    N: nullspace completion, block n_i x n_j w_j

Laplace (Neumann data f = du/dn, normals out of the domain):

    A = -1/2 I - D + N
    D: adjoint double layer -(1/(2 pi)) (r.n_i)/|r|^2 w_j, diagonal limit
       -(kappa_i/(4 pi)) w_i
    N: rank-one completion, row of quadrature weights

The Laplace interior representation here is u = -S mu with S the single
layer -(1/(2 pi)) log|r|; the sign pairs with the backward system above so
that Neumann data n_1 reproduces the harmonic field x_1 (checked against
the analytic oracle in the tests).

Multiply-connected Stokes problems are augmented with Stokeslet/rotlet
columns H (3 per hole, centered at interior points c_i) and weighted
rigid-body functionals Psi; the solve couples [A H; Psi^T -I].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Boundary

LAPLACE = "laplace_neumann"
STOKES = "stokes_dirichlet"

JUMP_COEFFICIENT = -0.5


@dataclass(frozen=True)
class SystemSpec:
    """PDE / kernel selection."""

    pde: str

    def __post_init__(self):
        if self.pde not in (LAPLACE, STOKES):
            raise ValueError(f"unknown pde {self.pde!r}")

    @property
    def dof_per_node(self) -> int:
        return 2 if self.pde == STOKES else 1

    @property
    def jump_coefficient(self) -> float:
        return JUMP_COEFFICIENT

    def augmented(self, b: Boundary) -> bool:
        return self.pde == STOKES and b.n_holes >= 1

    def n_dofs(self, b: Boundary) -> int:
        return self.dof_per_node * b.n_nodes


@dataclass
class AugmentationData:
    """Stokeslet/rotlet columns and weighted nullspace functionals.

    Columns are grouped per hole: [e1-Stokeslet, e2-Stokeslet, rotlet].
    Psi carries quadrature weights so Psi^T mu discretizes the boundary
    integrals of mu against the rigid-body motions of each hole.
    """

    H: np.ndarray            # (2N, 3p)
    Psi: np.ndarray          # (2N, 3p)
    hole_centers: np.ndarray  # (p, 2)

    @property
    def n_columns(self) -> int:
        return self.H.shape[1]


def _dof_split(dofs, dpn):
    dofs = np.asarray(dofs, dtype=np.int64)
    return dofs // dpn, dofs % dpn


def eval_block(spec: SystemSpec, b: Boundary, rows, cols) -> np.ndarray:
    """Dense sub-block of the boundary system matrix at scalar-DOF indices.

    Entry (a, b) = jump * [a == b] + w_b * (kernel(a, b) + nullspace term),
    with the smooth-curve limit on same-node kernel entries.
    """
    dpn = spec.dof_per_node
    nr, cr = _dof_split(rows, dpn)
    nc, cc = _dof_split(cols, dpn)
    pr, pc = b.positions[nr], b.positions[nc]
    rx = pr[:, None, 0] - pc[None, :, 0]
    ry = pr[:, None, 1] - pc[None, :, 1]
    r2 = rx * rx + ry * ry
    same = nr[:, None] == nc[None, :]
    r2s = np.where(same, 1.0, r2)

    if spec.pde == STOKES:
        nsc = b.normals[nc]
        rdn = rx * nsc[None, :, 0] + ry * nsc[None, :, 1]
        coef = rdn / (np.pi * r2s * r2s)
        rca = np.where((cr == 0)[:, None], rx, ry)
        rcb = np.where((cc == 0)[None, :], rx, ry)
        kern = coef * rca * rcb
        # same-node limit: -(kappa/(2 pi)) tau_ca tau_cb, tangent = (-n_y, n_x)
        tau = np.stack([-b.normals[:, 1], b.normals[:, 0]], axis=1)
        tr = tau[nr, cr]
        tc = tau[nc, cc]
        lim = -(b.curvatures[nc][None, :] / (2 * np.pi)) * tr[:, None] * tc[None, :]
        kern = np.where(same, lim, kern)
        kern += b.normals[nr, cr][:, None] * b.normals[nc, cc][None, :]
    else:
        nrt = b.normals[nr]
        rdn = rx * nrt[:, None, 0] + ry * nrt[:, None, 1]
        kern = rdn / (2 * np.pi * r2s)
        lim = np.broadcast_to(b.curvatures[nr][:, None] / (4 * np.pi), kern.shape)
        kern = np.where(same, lim, kern)
        kern = kern + 1.0

    out = kern * b.weights[nc][None, :]
    out += np.where(np.asarray(rows, np.int64)[:, None] == np.asarray(cols, np.int64)[None, :],
                    JUMP_COEFFICIENT, 0.0)
    return out


def eval_block_pair(spec: SystemSpec, b: Boundary, far, box):
    """(K[far, box], K[box, far]^T) sharing geometry temporaries.

    Requires the two DOF sets to live on disjoint nodes (true for a box
    and its far field), so no jump or diagonal-limit handling is needed.
    """
    dpn = spec.dof_per_node
    nf, cf = _dof_split(far, dpn)
    nb, cb = _dof_split(box, dpn)
    pf, pb = b.positions[nf], b.positions[nb]
    rx = pf[:, None, 0] - pb[None, :, 0]
    ry = pf[:, None, 1] - pb[None, :, 1]
    r2 = rx * rx + ry * ry
    wf = b.weights[nf][:, None]
    wb = b.weights[nb][None, :]
    if spec.pde == STOKES:
        nbv = b.normals[nb]
        nfv = b.normals[nf]
        rdn_b = rx * nbv[None, :, 0] + ry * nbv[None, :, 1]
        rdn_f = rx * nfv[:, None, 0] + ry * nfv[:, None, 1]
        ir4 = 1.0 / (np.pi * r2 * r2)
        rcf = np.where((cf == 0)[:, None], rx, ry)
        rcb = np.where((cb == 0)[None, :], rx, ry)
        rr = rcf * rcb
        nsp = b.normals[nf, cf][:, None] * b.normals[nb, cb][None, :]
        k_in = (rdn_b * ir4 * rr + nsp) * wb
        k_out_t = (-rdn_f * ir4 * rr + nsp) * wf
        return k_in, k_out_t
    nfv = b.normals[nf]
    nbv = b.normals[nb]
    rdn_f = rx * nfv[:, None, 0] + ry * nfv[:, None, 1]
    rdn_b = rx * nbv[None, :, 0] + ry * nbv[None, :, 1]
    ir2 = 1.0 / (2 * np.pi * r2)
    k_in = (rdn_f * ir2 + 1.0) * wb
    k_out_t = (-rdn_b * ir2 + 1.0) * wf
    return k_in, k_out_t


def eval_forward_block(spec: SystemSpec, b: Boundary, targets, cols,
                       check_interior: bool = True) -> np.ndarray:
    """Interior-evaluation operator rows: density DOFs -> field at targets.

    No jump term, no nullspace term. Rows are the field components at each
    target (1 for Laplace, 2 for Stokes). Targets must lie strictly inside
    the domain.
    """
    targets = np.atleast_2d(np.asarray(targets, float))
    if check_interior and not np.all(b.point_in_domain(targets)):
        raise ValueError("targets must lie strictly inside the domain")
    dpn = spec.dof_per_node
    nc, cc = _dof_split(cols, dpn)
    pc = b.positions[nc]
    rx = targets[:, None, 0] - pc[None, :, 0]
    ry = targets[:, None, 1] - pc[None, :, 1]
    r2 = rx * rx + ry * ry
    w = b.weights[nc][None, :]
    if spec.pde == LAPLACE:
        return 0.5 * np.log(r2) / (2 * np.pi) * w
    nsc = b.normals[nc]
    rdn = rx * nsc[None, :, 0] + ry * nsc[None, :, 1]
    coef = rdn / (np.pi * r2 * r2) * w
    rcb = np.where((cc == 0)[None, :], rx, ry)
    out = np.empty((2 * len(targets), len(nc)))
    out[0::2] = coef * rx * rcb
    out[1::2] = coef * ry * rcb
    return out


def stokeslet_rotlet_columns(points, centers) -> np.ndarray:
    """Stokeslet/rotlet velocity columns at arbitrary points, 3 per center.

    Per center c: (1/(4 pi)) [log(1/|r|) I + (r x r)/|r|^2] for the two
    Stokeslet columns and (1/(4 pi |r|^2)) r-perp for the rotlet, with
    perp convention (a, b)-perp = (-b, a).
    """
    points = np.atleast_2d(np.asarray(points, float))
    centers = np.atleast_2d(np.asarray(centers, float))
    m, p = len(points), len(centers)
    H = np.empty((2 * m, 3 * p))
    for i, c in enumerate(centers):
        r = points - c[None, :]
        r2 = (r * r).sum(axis=1)
        lg = -0.5 * np.log(r2)
        pref = 1.0 / (4 * np.pi)
        H[0::2, 3 * i] = pref * (lg + r[:, 0] * r[:, 0] / r2)
        H[1::2, 3 * i] = pref * (r[:, 1] * r[:, 0] / r2)
        H[0::2, 3 * i + 1] = pref * (r[:, 0] * r[:, 1] / r2)
        H[1::2, 3 * i + 1] = pref * (lg + r[:, 1] * r[:, 1] / r2)
        H[0::2, 3 * i + 2] = pref * (-r[:, 1]) / r2
        H[1::2, 3 * i + 2] = pref * r[:, 0] / r2
    return H


def build_augmentation(b: Boundary) -> AugmentationData:
    """H and Psi for a Stokes problem on a multiply-connected boundary.

    p = 0 yields empty (2N, 0) matrices; the augmented solve then reduces
    to the plain one.
    """
    n = b.n_nodes
    p = b.n_holes
    if p == 0:
        return AugmentationData(np.zeros((2 * n, 0)), np.zeros((2 * n, 0)),
                                np.zeros((0, 2)))
    H = stokeslet_rotlet_columns(b.positions, b.hole_centers)
    Psi = np.zeros((2 * n, 3 * p))
    for i in range(p):
        ids = b.curve_nodes(i + 1)
        w = b.weights[ids]
        Psi[2 * ids, 3 * i] = w
        Psi[2 * ids + 1, 3 * i + 1] = w
        Psi[2 * ids, 3 * i + 2] = -b.positions[ids, 1] * w
        Psi[2 * ids + 1, 3 * i + 2] = b.positions[ids, 0] * w
    return AugmentationData(H, Psi, b.hole_centers.copy())


def nullspace_vectors(b: Boundary) -> np.ndarray:
    """Unweighted discrete nullspace densities (e1, e2, x-perp per hole)."""
    n = b.n_nodes
    p = b.n_holes
    Psi = np.zeros((2 * n, 3 * p))
    for i in range(p):
        ids = b.curve_nodes(i + 1)
        Psi[2 * ids, 3 * i] = 1.0
        Psi[2 * ids + 1, 3 * i + 1] = 1.0
        Psi[2 * ids, 3 * i + 2] = -b.positions[ids, 1]
        Psi[2 * ids + 1, 3 * i + 2] = b.positions[ids, 0]
    return Psi


def proxy_nodes(center, radius: float, count: int):
    """Equispaced circle discretization with uniform trapezoid weights."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if count < 8:
        raise ValueError("need at least 8 proxy nodes")
    th = 2 * np.pi * np.arange(count) / count
    pts = np.asarray(center, float)[None, :] + radius * np.stack(
        [np.cos(th), np.sin(th)], axis=1)
    w = np.full(count, 2 * np.pi * radius / count)
    return pts, w


# ---------------------------------------------------------------------------
# Proxy interaction blocks for skeletonization
# ---------------------------------------------------------------------------
def _stresslet_plain(tpos, spos, snrm):
    """(2m, 2n) stresslet kernel values, no weights."""
    rx = tpos[:, None, 0] - spos[None, :, 0]
    ry = tpos[:, None, 1] - spos[None, :, 1]
    r2 = rx * rx + ry * ry
    coef = (rx * snrm[None, :, 0] + ry * snrm[None, :, 1]) / (np.pi * r2 * r2)
    out = np.empty((2 * len(tpos), 2 * len(spos)))
    out[0::2, 0::2] = coef * rx * rx
    out[0::2, 1::2] = coef * rx * ry
    out[1::2, 0::2] = coef * ry * rx
    out[1::2, 1::2] = coef * ry * ry
    return out


def _stokeslet_plain(tpos, spos):
    rx = tpos[:, None, 0] - spos[None, :, 0]
    ry = tpos[:, None, 1] - spos[None, :, 1]
    r2 = rx * rx + ry * ry
    lg = -0.5 * np.log(r2)
    pref = 1.0 / (4 * np.pi)
    out = np.empty((2 * len(tpos), 2 * len(spos)))
    out[0::2, 0::2] = pref * (lg + rx * rx / r2)
    out[0::2, 1::2] = pref * (rx * ry / r2)
    out[1::2, 0::2] = pref * (ry * rx / r2)
    out[1::2, 1::2] = pref * (lg + ry * ry / r2)
    return out


def proxy_block_incoming(spec: SystemSpec, b: Boundary, ppoints, cols) -> np.ndarray:
    """Proxy-target rows standing in for distant targets of the box sources.

    Stokes samples the stresslet field of the sources on the proxy circle;
    Laplace samples the underlying log potential (the target-normal
    derivative in the true kernel is a linear map applied after the proxy
    representation, so sampling the potential suffices).
    """
    dpn = spec.dof_per_node
    nc, cc = _dof_split(cols, dpn)
    w = b.weights[nc]
    if spec.pde == STOKES:
        blk = _stresslet_plain(ppoints, b.positions[nc], b.normals[nc])
        cols_loc = 2 * np.arange(len(nc)) + cc
        return blk[:, cols_loc] * w[None, :]
    rx = ppoints[:, None, 0] - b.positions[nc][None, :, 0]
    ry = ppoints[:, None, 1] - b.positions[nc][None, :, 1]
    r2 = rx * rx + ry * ry
    return -0.25 * np.log(r2) / np.pi * w[None, :]


def proxy_block_outgoing(spec: SystemSpec, b: Boundary, rows, ppoints, pweights) -> np.ndarray:
    """Proxy-source columns standing in for distant sources, transposed.

    Returned with shape (n_proxy_rows, len(rows)) ready to stack under the
    incoming block. Stokes uses stresslet sources with radial normals plus
    Stokeslet sources (the pair spans interior velocity fields robustly);
    Laplace uses the target-normal dipole kernel at proxy sources.
    """
    dpn = spec.dof_per_node
    nr, cr = _dof_split(rows, dpn)
    pos = b.positions[nr]
    if spec.pde == STOKES:
        center = ppoints.mean(axis=0)
        pn = ppoints - center[None, :]
        pn /= np.linalg.norm(pn, axis=1)[:, None]
        rows_loc = 2 * np.arange(len(nr)) + cr
        b1 = _stresslet_plain(pos, ppoints, pn)[rows_loc] * np.repeat(pweights, 2)[None, :]
        b2 = _stokeslet_plain(pos, ppoints)[rows_loc] * np.repeat(pweights, 2)[None, :]
        return np.vstack([b1.T, b2.T])
    nrt = b.normals[nr]
    rx = pos[:, None, 0] - ppoints[None, :, 0]
    ry = pos[:, None, 1] - ppoints[None, :, 1]
    r2 = rx * rx + ry * ry
    blk = (rx * nrt[:, None, 0] + ry * nrt[:, None, 1]) / (2 * np.pi * r2)
    return (blk * pweights[None, :]).T


def nullspace_capture_rows(spec: SystemSpec, b: Boundary, cols):
    """Rank-one profiles of the completion operator N toward far targets.

    Appending these to the ID stack makes the interpolation matrix also
    reproduce the N contribution of redundant columns/rows outside the
    proxy circle.
    """
    dpn = spec.dof_per_node
    nc, cc = _dof_split(cols, dpn)
    w = b.weights[nc]
    if spec.pde == STOKES:
        incoming = (w * b.normals[nc, cc])[None, :]
        outgoing = b.normals[nc, cc][None, :]
    else:
        incoming = w[None, :]
        outgoing = np.ones((1, len(nc)))
    return incoming, outgoing


# ---------------------------------------------------------------------------
# Dense oracles and validators
# ---------------------------------------------------------------------------
def assemble_dense(spec: SystemSpec, b: Boundary, aug: AugmentationData | None = None) -> np.ndarray:
    """Full system matrix; includes the augmentation corner when given."""
    nd = spec.n_dofs(b)
    dofs = np.arange(nd)
    A = eval_block(spec, b, dofs, dofs)
    if aug is None or aug.n_columns == 0:
        return A
    q = aug.n_columns
    M = np.zeros((nd + q, nd + q))
    M[:nd, :nd] = A
    M[:nd, nd:] = aug.H
    M[nd:, :nd] = aug.Psi.T
    M[nd:, nd:] = -np.eye(q)
    return M


def system_matvec(spec: SystemSpec, b: Boundary, x, aug: AugmentationData | None = None,
                  chunk: int = 1024) -> np.ndarray:
    """Exact (uncompressed) system matrix-vector product, row-chunked.

    Independent of the factorization; used as the residual oracle.
    """
    nd = spec.n_dofs(b)
    x = np.asarray(x, float)
    q = aug.n_columns if aug is not None else 0
    if len(x) != nd + q:
        raise ValueError("dimension mismatch")
    mu = x[:nd]
    out = np.empty(nd + q)
    dofs = np.arange(nd)
    for s in range(0, nd, chunk):
        r = dofs[s:s + chunk]
        out[s:s + len(r)] = eval_block(spec, b, r, dofs) @ mu
    if q:
        lam = x[nd:]
        out[:nd] += aug.H @ lam
        out[nd:] = aug.Psi.T @ mu - lam
    return out


def net_flux(b: Boundary, f) -> float:
    """Discrete net flux of Dirichlet velocity data through the boundary."""
    f2 = np.asarray(f, float).reshape(-1, 2)
    return float(np.sum(b.weights * (f2 * b.normals).sum(axis=1)))


def check_consistency(b: Boundary, f, rtol: float = 1e-10):
    """Reject Stokes Dirichlet data with nonzero net flux (incompressibility)."""
    flux = net_flux(b, f)
    scale = float(np.linalg.norm(np.asarray(f, float).ravel()))
    if abs(flux) > rtol * max(scale, 1e-300):
        raise ValueError(
            f"inconsistent Dirichlet data: net flux {flux:.3e} exceeds "
            f"{rtol:.1e} * ||f|| = {rtol * scale:.3e}")
