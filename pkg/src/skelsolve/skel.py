"""Recursive skeletonization factorization with proxy compression.

Working bottom-up over an adaptive quadtree, each box B of active scalar
DOFs is compressed: a two-sided interpolative decomposition of its
interactions with nearby active DOFs (inside a proxy circle) and with the
proxy circle itself splits B into skeleton S and redundant R with
interpolation matrix T, after which block Gaussian elimination decouples R.
The per-box operations are stored implicitly (T plus Schur blocks) and
applied in sequence; the assembled object satisfies

    A ~ U^-1 X_D V^-1,     solve: x = V X_D^-1 U b,

with X_D block diagonal (per-box X_RR blocks plus the root block). Boxes
within one level read only pre-level state, so they can be compressed in
any order or in parallel with bit-identical results; zeros created by
sibling eliminations are not propagated within a level.

For augmented systems [A H; Psi^T -I] the same U, V factor the top-left
block; the solve eliminates the X_RR blocks and solves one LU of the
corner [X_SS, (UH)_S; (Psi^T V)_S, -I - sum_i (Psi^T V)_R_i X_RR^-1 (UH)_R_i]
for the root skeleton and the Stokeslet/rotlet strengths jointly.

After a local geometry perturbation, only marked boxes are recompressed
(`update`); with the root box fixed, the result equals a from-scratch
factorization exactly.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels, tree as tree_mod
from .dense import PLU, PivotedQR, SingularPivotError
from .geometry import Boundary, PerturbationReport
from .kernels import AugmentationData, SystemSpec
from .tree import Tree, proxy_radius

logger = logging.getLogger(__name__)

PIVOT_RATIO_FLOOR = 1e-12
DEFAULT_PROXY_COUNT = 64
DEFAULT_PROXY_FACTOR = 1.5


class RootBoxExceededError(RuntimeError):
    """A perturbed node escaped the fixed root box; refactor from scratch."""


@dataclass
class BoxFactors:
    """Per-box interpolation and elimination blocks.

    Immutable once built; updates share these objects across
    factorizations (index arrays are remapped copies, matrices are shared).
    """

    key: tuple
    b_dofs: np.ndarray      # active DOFs of the box, canonical order
    S_loc: np.ndarray       # skeleton positions into b_dofs
    R_loc: np.ndarray       # redundant positions into b_dofs
    T: np.ndarray           # (|S|, |R|)
    X_rr: np.ndarray        # modified redundant block, raw
    lu: PLU                 # its pivoted LU
    X_sr: np.ndarray        # (|S|, |R|)
    X_rs_div: np.ndarray    # X_rr^-1 X_rs, (|R|, |S|)
    Xss_mod: np.ndarray     # Schur-complemented skeleton block, (|S|, |S|)

    @property
    def skel_dofs(self) -> np.ndarray:
        return self.b_dofs[self.S_loc]

    @property
    def red_dofs(self) -> np.ndarray:
        return self.b_dofs[self.R_loc]

    def remapped(self, dof_map: np.ndarray) -> "BoxFactors":
        return BoxFactors(self.key, dof_map[self.b_dofs], self.S_loc, self.R_loc,
                          self.T, self.X_rr, self.lu, self.X_sr, self.X_rs_div,
                          self.Xss_mod)


@dataclass
class Factorization:
    spec: SystemSpec
    boundary: Boundary
    tree: Tree
    tol: float
    proxy_count: int
    proxy_factor: float
    factors: dict                      # key -> BoxFactors
    sweep_levels: list                 # [(level, [keys])] bottom-up, excl. root
    root_dofs: np.ndarray
    E_root: np.ndarray                 # raw root block (for apply)
    top: PLU                           # corner LU (augmented) or root LU
    aug: AugmentationData | None
    UH: np.ndarray | None              # U applied to H, (nd, q)
    PsiV: np.ndarray | None            # V^T applied to Psi, (nd, q)
    UH_div: np.ndarray | None          # rows at R_i hold X_RR^-1 (UH)_R_i
    nonroot: np.ndarray | None         # mask of DOFs eliminated below the root
    stats: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.spec.n_dofs(self.boundary)

    @property
    def n_aug(self) -> int:
        return self.aug.n_columns if self.aug is not None else 0

    @property
    def dim(self) -> int:
        return self.n_dofs + self.n_aug

    # ------------------------------------------------------------------
    def _boxes(self, reverse: bool = False):
        levels = self.sweep_levels if not reverse else self.sweep_levels[::-1]
        for lev, keys in levels:
            yield lev, keys

    def apply(self, x, workers: int = 1) -> np.ndarray:
        """Compressed matrix-vector product ~ A x (augmented system included)."""
        x = np.asarray(x, float)
        if x.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: got {x.shape[0]}, need {self.dim}")
        nd = self.n_dofs
        with threadpool_limits(limits=1):
            y = x[:nd].copy()
            lam = x[nd:]
            # V^-1, leaves upward
            for _, keys in self._boxes():
                for k in keys:
                    bf = self.factors[k]
                    sd, rd = bf.skel_dofs, bf.red_dofs
                    y[sd] += bf.T @ y[rd]
                    y[rd] += bf.X_rs_div @ y[sd]
            bottom = self.PsiV.T @ y - lam if self.n_aug else np.zeros(0)
            # X_D
            stash = {}
            for _, keys in self._boxes():
                for k in keys:
                    bf = self.factors[k]
                    rd = bf.red_dofs
                    stash[k] = y[rd].copy()
                    y[rd] = bf.X_rr @ y[rd]
            y[self.root_dofs] = self.E_root @ y[self.root_dofs]
            if self.n_aug:
                y += self.UH @ lam
            # U^-1, top downward
            for _, keys in self._boxes(reverse=True):
                for k in keys:
                    bf = self.factors[k]
                    sd, rd = bf.skel_dofs, bf.red_dofs
                    t = stash[k]
                    if self.n_aug:
                        t = t + self.UH_div[rd] @ lam
                    y[sd] += bf.X_sr @ t
                    y[rd] += bf.T.T @ y[sd]
        return np.concatenate([y, bottom])

    def solve(self, rhs, workers: int = 1) -> np.ndarray:
        """Approximate solution of the (augmented) system for one rhs.

        For augmented systems the rhs is [f; 0] of length 2N + 3p and the
        result is [mu; lambda].
        """
        rhs = np.asarray(rhs, float)
        if rhs.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: got {rhs.shape[0]}, need {self.dim}")
        nd = self.n_dofs
        with threadpool_limits(limits=1):
            x = rhs.copy()
            for _, keys in self._boxes():
                self._level_up(keys, x, workers)
            if self.n_aug:
                mask = self.nonroot
                corr = x[nd:] - self.PsiV[mask].T @ x[:nd][mask]
                sol = self.top.solve(np.concatenate([x[self.root_dofs], corr]))
                ns = len(self.root_dofs)
                x[self.root_dofs] = sol[:ns]
                lam = sol[ns:]
                x[nd:] = lam
                x[:nd][mask] -= self.UH_div[mask] @ lam
            else:
                x[self.root_dofs] = self.top.solve(x[self.root_dofs])
            for _, keys in self._boxes(reverse=True):
                self._level_down(keys, x, workers)
        return x

    def _level_up(self, keys, x, workers: int):
        def one(k):
            bf = self.factors[k]
            sd, rd = bf.skel_dofs, bf.red_dofs
            r = x[rd] - bf.T.T @ x[sd]
            r = bf.lu.solve(r)
            x[sd] -= bf.X_sr @ r
            x[rd] = r
        if workers > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(one, keys))
        else:
            for k in keys:
                one(k)

    def _level_down(self, keys, x, workers: int):
        def one(k):
            bf = self.factors[k]
            sd, rd = bf.skel_dofs, bf.red_dofs
            x[rd] -= bf.X_rs_div @ x[sd]
            x[sd] -= bf.T @ x[rd]
        if workers > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(one, keys))
        else:
            for k in keys:
                one(k)


# ---------------------------------------------------------------------------
# Compression machinery
# ---------------------------------------------------------------------------
class _Compressor:
    """Shared state for one factor/update pass."""

    def __init__(self, spec, b, t, tol, proxy_count, proxy_factor, propagate_zeros=False):
        self.spec = spec
        self.b = b
        self.tree = t
        self.tol = tol
        self.proxy_count = proxy_count
        self.proxy_factor = proxy_factor
        self.propagate_zeros = propagate_zeros
        self.dpn = spec.dof_per_node
        self.dof_pos = np.repeat(b.positions, self.dpn, axis=0)
        self.factors: dict = {}
        self._processed: set = set()   # sequential-propagation mode only

    def dofs_of_nodes(self, node_ids: np.ndarray) -> np.ndarray:
        return (self.dpn * node_ids[:, None] + np.arange(self.dpn)[None, :]).ravel()

    def assign_leaf_actives(self):
        for key, bx in self.tree.boxes.items():
            if bx.is_leaf:
                bx.active = self.dofs_of_nodes(bx.node_ids)

    def assign_internal_actives(self, keys):
        for key in keys:
            bx = self.tree.boxes[key]
            if not bx.is_leaf:
                bx.active = np.concatenate(
                    [self.factors[ck].skel_dofs for ck in bx.children])

    def far_dofs(self, bx) -> tuple[np.ndarray, int]:
        """Active DOFs inside the proxy disc (excluding the box's own) and
        the total candidate count, so callers can tell when nothing active
        lies beyond the disc."""
        r_p = proxy_radius(bx.half_width, self.proxy_factor)
        parts = []
        n_cand = 0
        for ck in self.tree.colleagues(bx.key):
            cb = self.tree.boxes[ck]
            if self.propagate_zeros and ck in self._processed:
                parts.append(self.factors[ck].skel_dofs)
                n_cand += len(cb.active)  # zeros only thin the stack, not F_ext
            else:
                parts.append(cb.active)
                n_cand += len(cb.active)
        for k in self.tree.shallow_leaves_near(bx.center, r_p, bx.level):
            parts.append(self.tree.boxes[k].active)
            n_cand += len(parts[-1])
        if not parts:
            return np.empty(0, dtype=np.int64), 0
        cand = np.concatenate(parts)
        d2 = ((self.dof_pos[cand] - bx.center[None, :])**2).sum(axis=1)
        return cand[d2 < r_p * r_p], n_cand

    def self_block(self, bx) -> np.ndarray:
        E = kernels.eval_block(self.spec, self.b, bx.active, bx.active)
        if not bx.is_leaf:
            off = 0
            for ck in bx.children:
                ns = len(self.factors[ck].S_loc)
                sl = slice(off, off + ns)
                E[sl, sl] = self.factors[ck].Xss_mod
                off += ns
        return E

    def compress_box(self, key) -> BoxFactors:
        bx = self.tree.boxes[key]
        B = bx.active
        nB = len(B)
        F = self.far_dofs(bx)
        ppts, pw = kernels.proxy_nodes(bx.center,
                                       proxy_radius(bx.half_width, self.proxy_factor),
                                       self.proxy_count)
        extra_in, extra_out = kernels.nullspace_capture_rows(self.spec, self.b, B)
        if len(F):
            k_in, k_out_t = kernels.eval_block_pair(self.spec, self.b, F, B)
        else:
            k_in = k_out_t = np.zeros((0, nB))
        blocks = [
            k_in,
            kernels.proxy_block_incoming(self.spec, self.b, ppts, B),
            extra_in,
            k_out_t,
            kernels.proxy_block_outgoing(self.spec, self.b, B, ppts, pw),
            extra_out,
        ]
        qr = PivotedQR(np.vstack(blocks))
        k = qr.rank_for_tol(self.tol)
        E = self.self_block(bx)
        while True:
            idr = qr.take(k)
            S, R, T = idr.skeleton, idr.redundant, idr.T
            Ess = E[np.ix_(S, S)]
            X_rr = (E[np.ix_(R, R)] - T.T @ E[np.ix_(S, R)]
                    - E[np.ix_(R, S)] @ T + T.T @ Ess @ T)
            try:
                lu = PLU(X_rr)
                if lu.pivot_ratio >= PIVOT_RATIO_FLOOR or k >= nB:
                    break
            except SingularPivotError:
                if k >= nB:
                    raise
            k = min(nB, k + max(1, (nB - k) // 8))
        X_rs = E[np.ix_(R, S)] - T.T @ Ess
        X_sr = E[np.ix_(S, R)] - Ess @ T
        X_rs_div = lu.solve(X_rs)
        Xss_mod = Ess - X_sr @ X_rs_div
        bf = BoxFactors(key, B, S, R, T, X_rr, lu, X_sr, X_rs_div, Xss_mod)
        bx.skel = B[S]
        bx.red = B[R]
        return bf

    def run_level(self, keys, workers: int, reuse: dict | None = None,
                  dirty: set | None = None, dof_map=None):
        todo = []
        for key in keys:
            if reuse is not None and key not in dirty:
                bf = reuse[key].remapped(dof_map)
                self.factors[key] = bf
                bx = self.tree.boxes[key]
                bx.skel = bf.skel_dofs
                bx.red = bf.red_dofs
                bx.dirty = False
            else:
                todo.append(key)
                self.tree.boxes[key].dirty = True
        if workers > 1 and len(todo) > 1 and not self.propagate_zeros:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for key, bf in zip(todo, pool.map(self.compress_box, todo)):
                    self.factors[key] = bf
        else:
            for key in todo:
                self.factors[key] = self.compress_box(key)
                self._processed.add(key)


def _finish_top(comp: _Compressor, sweep_levels, workers: int) -> Factorization:
    spec, b, t = comp.spec, comp.b, comp.tree
    root = t.root
    if root.is_leaf:
        root.active = comp.dofs_of_nodes(root.node_ids)
    else:
        root.active = np.concatenate([comp.factors[ck].skel_dofs for ck in root.children])
    root_dofs = root.active
    root.skel = root_dofs
    root.red = np.empty(0, dtype=np.int64)
    E_root = comp.self_block(root)
    nd = spec.n_dofs(b)
    aug = kernels.build_augmentation(b) if spec.augmented(b) else None
    q = aug.n_columns if aug is not None else 0
    UH = PsiV = UH_div = nonroot = None
    if q:
        UH = aug.H.copy()
        PsiV = aug.Psi.copy()
        UH_div = np.zeros_like(UH)
        schur = np.zeros((q, q))
        for _, keys in sweep_levels:
            for k in keys:
                bf = comp.factors[k]
                sd, rd = bf.skel_dofs, bf.red_dofs
                # U sweep on H columns
                UH[rd] -= bf.T.T @ UH[sd]
                w = bf.lu.solve(UH[rd])
                UH[sd] -= bf.X_sr @ w
                UH_div[rd] = w
                # V^T sweep on Psi columns
                PsiV[rd] -= bf.T.T @ PsiV[sd]
                PsiV[sd] -= bf.X_rs_div.T @ PsiV[rd]
                schur += PsiV[rd].T @ w
        nonroot = np.ones(nd, dtype=bool)
        nonroot[root_dofs] = False
        ns = len(root_dofs)
        corner = np.zeros((ns + q, ns + q))
        corner[:ns, :ns] = E_root
        corner[:ns, ns:] = UH[root_dofs]
        corner[ns:, :ns] = PsiV[root_dofs].T
        corner[ns:, ns:] = -np.eye(q) - schur
        top = PLU(corner)
    else:
        if spec.pde == kernels.STOKES:
            aug = kernels.build_augmentation(b)  # empty (2N, 0) matrices
            UH = aug.H
            PsiV = aug.Psi
            UH_div = np.zeros_like(UH)
            nonroot = np.ones(nd, dtype=bool)
            nonroot[root_dofs] = False
        top = PLU(E_root)
    k_per_level = {}
    for lev, keys in sweep_levels:
        k_per_level[lev] = max((len(comp.factors[k].S_loc) for k in keys), default=0)
    fct = Factorization(
        spec=spec, boundary=b, tree=t, tol=comp.tol,
        proxy_count=comp.proxy_count, proxy_factor=comp.proxy_factor,
        factors=comp.factors, sweep_levels=sweep_levels, root_dofs=root_dofs,
        E_root=E_root, top=top, aug=aug,
        UH=UH, PsiV=PsiV, UH_div=UH_div, nonroot=nonroot,
        stats={"k_per_level": k_per_level, "root_size": len(root_dofs)})
    return fct


def factor(spec: SystemSpec, b: Boundary, t: Tree, tol: float, workers: int = 1,
           proxy_count: int = DEFAULT_PROXY_COUNT,
           proxy_factor: float = DEFAULT_PROXY_FACTOR,
           propagate_zeros: bool = False) -> Factorization:
    """Build the skeletonization factorization of the boundary system.

    Within each level boxes are compressed independently of one another
    (optionally in a thread pool); results are bit-identical for any
    worker count. `propagate_zeros=True` switches to the sequential
    variant that honors zeros created by earlier boxes on the same level
    (slightly stronger compression, used for validation).
    """
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        comp = _Compressor(spec, b, t, tol, proxy_count, proxy_factor, propagate_zeros)
        comp.assign_leaf_actives()
        sweep_levels = []
        for lev in range(t.depth, 0, -1):
            keys = t.levels[lev]
            comp.assign_internal_actives(keys)
            comp.run_level(keys, workers)
            sweep_levels.append((lev, keys))
        fct = _finish_top(comp, sweep_levels, workers)
    fct.stats["factor_time"] = time.perf_counter() - t0
    fct.stats["n_dofs"] = fct.n_dofs
    return fct


def update(fct: Factorization, b_new: Boundary, report: PerturbationReport,
           workers: int = 1) -> Factorization:
    """Refactor only what a local perturbation invalidated.

    Rebuilds the tree over the new geometry (same root box), marks dirty
    boxes (content changes, ancestors, colleagues of changed inputs),
    recompresses those, and reuses every other box's factors untouched.
    The root block is always rebuilt. The result is identical to
    factoring the new geometry from scratch.
    """
    t0 = time.perf_counter()
    spec = fct.spec
    dpn = spec.dof_per_node
    with threadpool_limits(limits=1):
        try:
            t_new = tree_mod.refit_tree(fct.tree, b_new.positions)
        except tree_mod.TreeError as e:
            raise RootBoxExceededError(
                "perturbed node escaped the root box; refactor with a fresh tree") from e

        own_changed = tree_mod.ownership_changed(t_new, fct.tree, report.old_to_new)
        pts = []
        if len(report.modified_nodes_old):
            pts.append(report.old_positions[report.modified_nodes_old])
        if len(report.modified_nodes_new):
            pts.append(b_new.positions[report.modified_nodes_new])
        pts = np.concatenate(pts) if pts else np.zeros((0, 2))
        content = set(own_changed)
        if len(pts):
            tree_mod._mark_disc_hits(t_new, pts, fct.proxy_factor, content)
        for nid in report.modified_nodes_new:
            key = t_new.node_leaf[nid]
            while key is not None and key not in content:
                content.add(key)
                key = t_new.boxes[key].parent
        dirty = _dirty_closure(t_new, content)

        # old dof -> new dof map
        n_old = len(report.old_to_new)
        dof_map = np.full(dpn * n_old, -1, dtype=np.int64)
        valid = report.old_to_new >= 0
        for c in range(dpn):
            dof_map[dpn * np.flatnonzero(valid) + c] = dpn * report.old_to_new[valid] + c

        comp = _Compressor(spec, b_new, t_new, fct.tol, fct.proxy_count,
                           fct.proxy_factor)
        comp.assign_leaf_actives()
        sweep_levels = []
        for lev in range(t_new.depth, 0, -1):
            keys = t_new.levels[lev]
            comp.assign_internal_actives(keys)
            comp.run_level(keys, workers, reuse=fct.factors, dirty=dirty,
                           dof_map=dof_map)
            sweep_levels.append((lev, keys))
        new_fct = _finish_top(comp, sweep_levels, workers)
    new_fct.stats["update_time"] = time.perf_counter() - t0
    new_fct.stats["n_dirty"] = len(dirty)
    new_fct.stats["n_boxes"] = len(t_new.boxes)
    return new_fct


def _dirty_closure(t: Tree, content: set) -> set:
    marked = {l: set() for l in range(len(t.levels))}
    for key in content:
        marked[key[0]].add(key)
    for lev in range(len(t.levels) - 1, -1, -1):
        grew = set(marked[lev])
        if lev + 1 < len(t.levels):
            for key in marked[lev + 1]:
                p = t.boxes[key].parent
                if p is not None:
                    grew.add(p)
        for key in list(grew):
            grew.update(t.colleagues(key))
        marked[lev] = grew
    out = set()
    for s in marked.values():
        out |= s
    return out


def evaluate_interior(spec: SystemSpec, b: Boundary, solution, targets,
                      chunk: int = 256) -> np.ndarray:
    """Field values at interior targets from a solve() output vector.

    u = D mu + H lambda for Stokes (shape (m, 2)); u = -S mu for Laplace
    (shape (m,)). Exterior targets are rejected.
    """
    targets = np.atleast_2d(np.asarray(targets, float))
    if not np.all(b.point_in_domain(targets)):
        raise ValueError("targets must lie strictly inside the domain")
    sol = np.asarray(solution, float)
    nd = spec.n_dofs(b)
    mu = sol[:nd]
    lam = sol[nd:]
    dofs = np.arange(nd)
    dpn = spec.dof_per_node
    out = np.empty((len(targets), dpn))
    for s in range(0, len(targets), chunk):
        tt = targets[s:s + chunk]
        blk = kernels.eval_forward_block(spec, b, tt, dofs, check_interior=False)
        vals = blk @ mu
        if spec.pde == kernels.STOKES:
            if len(lam):
                vals = vals + kernels.stokeslet_rotlet_columns(tt, b.hole_centers) @ lam
            out[s:s + chunk] = vals.reshape(-1, 2)
        else:
            out[s:s + chunk, 0] = vals
    return out[:, 0] if dpn == 1 else out
