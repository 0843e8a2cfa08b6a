"""Adaptive quadtree over boundary nodes with dirty-marking for updates.

Boxes are addressed by integer grid keys (level, ix, iy); the root is
(0, 0, 0) and children double the grid. Keys are geometric, so a box in a
rebuilt tree is the twin of the old box with the same key. Child order is
SW, SE, NW, NE; empty children are pruned.

The root box is fixed for a problem family (chosen once, inflated, and
reused across perturbations) so that updated factorizations match
from-scratch ones exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHILD_OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))  # SW, SE, NW, NE


class TreeError(ValueError):
    pass


@dataclass
class Box:
    key: tuple[int, int, int]
    center: np.ndarray
    half_width: float
    parent: tuple[int, int, int] | None
    node_ids: np.ndarray             # sorted global node indices owned
    children: list = field(default_factory=list)
    # slots filled during factorization
    active: np.ndarray | None = None
    skel: np.ndarray | None = None
    red: np.ndarray | None = None
    dirty: bool = False

    @property
    def level(self) -> int:
        return self.key[0]

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def circumradius(self) -> float:
        return self.half_width * np.sqrt(2.0)


@dataclass
class Tree:
    root_center: np.ndarray
    root_half_width: float
    leaf_cap: int
    max_depth: int
    boxes: dict = field(default_factory=dict)
    levels: list = field(default_factory=list)   # levels[l] = sorted keys
    node_leaf: np.ndarray | None = None          # node -> leaf key index

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def root(self) -> Box:
        return self.boxes[(0, 0, 0)]

    def colleagues(self, key) -> list:
        lev, ix, iy = key
        out = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                k = (lev, ix + dx, iy + dy)
                if k in self.boxes:
                    out.append(k)
        out.sort()
        return out

    def shallow_leaves_near(self, center, radius: float, level: int) -> list:
        """Leaves above `level` whose box intersects the disc (center, radius)."""
        out = []
        stack = [self.root]
        while stack:
            bx = stack.pop()
            if bx.level >= level:
                continue
            d = np.maximum(np.abs(center - bx.center) - bx.half_width, 0.0)
            if d[0] * d[0] + d[1] * d[1] > radius * radius:
                continue
            if bx.is_leaf:
                out.append(bx.key)
            else:
                stack.extend(self.boxes[k] for k in bx.children)
        out.sort()
        return out


def default_root_box(positions: np.ndarray, inflate: float = 0.1):
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    center = 0.5 * (lo + hi)
    hw = 0.5 * float((hi - lo).max()) * (1.0 + inflate)
    return center, hw


def build_tree(positions: np.ndarray, leaf_cap: int = 64, root_box=None,
               max_depth: int = 40) -> Tree:
    """Adaptive quadtree; leaves hold <= leaf_cap nodes unless at max depth.

    With an explicit root_box, nodes outside it are an error (the root is
    fixed by policy across a problem family and never auto-grown).
    """
    positions = np.asarray(positions, float)
    if root_box is None:
        center, hw = default_root_box(positions)
    else:
        center, hw = np.asarray(root_box[0], float), float(root_box[1])
        if np.any(np.abs(positions - center[None, :]) > hw * (1 + 1e-12)):
            raise TreeError("node outside the fixed root box")
    t = Tree(center, hw, leaf_cap, max_depth)
    levels: dict[int, list] = {}

    def recurse(key, ctr, half, ids, parent):
        bx = Box(key, ctr, half, parent, ids)
        t.boxes[key] = bx
        levels.setdefault(key[0], []).append(key)
        if len(ids) <= leaf_cap or key[0] >= max_depth:
            return
        pos = positions[ids]
        east = pos[:, 0] >= ctr[0]
        north = pos[:, 1] >= ctr[1]
        lev, ix, iy = key
        for dx, dy in CHILD_OFFSETS:
            m = (east == bool(dx)) & (north == bool(dy))
            if not m.any():
                continue
            ck = (lev + 1, 2 * ix + dx, 2 * iy + dy)
            cc = ctr + (np.array([dx, dy]) - 0.5) * half
            bx.children.append(ck)
            recurse(ck, cc, half / 2, ids[m], key)

    all_ids = np.arange(len(positions), dtype=np.int64)
    recurse((0, 0, 0), center.copy(), hw, all_ids, None)
    t.levels = [sorted(levels.get(l, [])) for l in range(max(levels) + 1)]
    leaf_of = np.empty(len(positions), dtype=object)
    for key, bx in t.boxes.items():
        if bx.is_leaf:
            for nid in bx.node_ids:
                leaf_of[nid] = key
    t.node_leaf = leaf_of
    return t


def proxy_radius(half_width: float, factor: float = 1.5) -> float:
    """Proxy circle radius for a box: factor times its circumradius."""
    return factor * half_width * np.sqrt(2.0)


def mark_dirty(t: Tree, modified_nodes, positions=None, extra_positions=None,
               proxy_factor: float = 1.5) -> dict:
    """Boxes needing recompression after modifying the given nodes.

    Marks, bottom-up: boxes whose content changed (they own a modified
    node, or a modified position falls inside their proxy disc), all
    ancestors of marked boxes, and colleagues of boxes whose inputs
    changed. Positions of the modified nodes before and after the edit
    should both be supplied (via `positions` for the tree's own nodes plus
    `extra_positions` for their new locations) so that both the vacated
    and the receiving regions are recompressed.

    Returns {level: sorted key list}; the root is marked whenever the
    modified set is nonempty.
    """
    modified_nodes = np.asarray(modified_nodes, dtype=np.int64)
    pts = []
    if positions is not None and len(modified_nodes):
        pts.append(np.asarray(positions, float)[modified_nodes])
    if extra_positions is not None and len(extra_positions):
        pts.append(np.atleast_2d(np.asarray(extra_positions, float)))
    pts = np.concatenate(pts) if pts else np.zeros((0, 2))
    if len(modified_nodes) == 0 and len(pts) == 0:
        return {}

    content: set = set()
    for nid in modified_nodes:
        key = t.node_leaf[nid]
        while key is not None:
            if key in content:
                break
            content.add(key)
            key = t.boxes[key].parent
    if len(pts):
        _mark_disc_hits(t, pts, proxy_factor, content)

    marked: dict[int, set] = {l: set() for l in range(len(t.levels))}
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
    return {l: sorted(s) for l, s in marked.items() if s}


def _mark_disc_hits(t: Tree, pts: np.ndarray, proxy_factor: float, out: set):
    for lev, keys in enumerate(t.levels):
        if not keys:
            continue
        hw = t.root_half_width / 2**lev
        rad = proxy_radius(hw, proxy_factor)
        step = 2 * hw
        origin = t.root_center - t.root_half_width
        cells = np.floor((pts - origin[None, :]) / step).astype(np.int64)
        reach = int(np.ceil(rad / step)) + 1
        cand = set()
        for cx, cy in {(int(a), int(b)) for a, b in cells}:
            for dx in range(-reach, reach + 1):
                for dy in range(-reach, reach + 1):
                    k = (lev, cx + dx, cy + dy)
                    if k in t.boxes:
                        cand.add(k)
        for k in cand:
            bx = t.boxes[k]
            d2 = ((pts - bx.center[None, :])**2).sum(axis=1)
            if (d2 <= rad * rad).any():
                out.add(k)


def refit_tree(t: Tree, positions_new: np.ndarray) -> Tree:
    """Rebuild over the new positions with the same root box and leaf cap.

    Deterministic construction means boxes over unmodified regions come out
    identical to the old tree (same keys, same owned nodes); factor data for
    them can be carried over by key.
    """
    return build_tree(positions_new, t.leaf_cap,
                      root_box=(t.root_center, t.root_half_width),
                      max_depth=t.max_depth)


def ownership_changed(t_new: Tree, t_old: Tree, old_to_new: np.ndarray) -> set:
    """Keys of new-tree boxes whose owned node set differs from their twin."""
    changed = set()
    for key, bx in t_new.boxes.items():
        twin = t_old.boxes.get(key)
        if twin is None:
            changed.add(key)
            continue
        mapped = old_to_new[twin.node_ids]
        if len(mapped) != len(bx.node_ids) or np.any(mapped < 0) or \
                not np.array_equal(mapped, bx.node_ids):
            changed.add(key)
    for key in t_old.boxes:
        if key not in t_new.boxes:
            p = key
            while p is not None and p not in t_new.boxes:
                p = t_old.boxes[p].parent
            if p is not None:
                changed.add(p)
    return changed
