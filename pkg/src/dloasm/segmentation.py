"""Perception: top-layer extraction, skeletonization, prompt sampling, mask
post-processing (sort / merge / discard), and back-projection to raw 3D shapes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _zhang_thin

from .errors import DegenerateInput, NoCandidate, NoDepthData, NoTopLayer, ShapeError
from .geometry import Polyline3D, dedupe_points
from .grid import GridImage, mask_iou_matrix

_EIGHT = np.ones((3, 3), dtype=int)


@dataclass
class Mask:
    image: GridImage
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DegenerateInput("mask confidence must lie in [0, 1]")

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.image.binary()))


@dataclass
class MaskSet:
    masks: list

    def __post_init__(self):
        shapes = {m.image.values.shape for m in self.masks}
        if len(shapes) > 1:
            raise ShapeError("masks in a set must share dimensions")

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i) -> Mask:
        return self.masks[i]


@dataclass
class Skeleton:
    paths: list  # ordered (k, 2) integer pixel arrays, 8-connected
    source_mask: int = -1

    @property
    def total_length(self) -> int:
        return sum(len(p) for p in self.paths)

    def longest_path(self) -> np.ndarray:
        if not self.paths:
            return np.zeros((0, 2), dtype=int)
        return max(self.paths, key=len)


@dataclass
class SegParams:
    a_threshold: int = 800
    step_s: float = 0.005
    n_prompts: int = 20
    t_merge: float = 0.4
    t_discard: float = 0.1
    prune_min: int = 10

    def __post_init__(self):
        if not 0.0 < self.t_discard <= self.t_merge < 1.0:
            raise DegenerateInput("need 0 < T_discard <= T_merge < 1")
        if self.n_prompts < 1 or self.a_threshold < 1:
            raise DegenerateInput("N and A_threshold must be >= 1")


def extract_top_layer(depth: GridImage, p: SegParams):
    """Scan depth from the closest valid value upward in steps of s; stop at
    the first level whose largest 8-connected component reaches A_threshold.

    Returns (binary GridImage, d_found)."""
    valid = depth.values > 0
    if not valid.any():
        raise NoTopLayer("depth image has no valid pixels")
    d_min = float(depth.values[valid].min())
    d_max = float(depth.values[valid].max())
    d = d_min
    while d <= d_max + 1e-12:
        sel = valid & (depth.values <= d + 1e-12)
        if sel.any():
            labels, n = ndimage.label(sel, structure=_EIGHT)
            if n > 0:
                counts = np.bincount(labels.ravel())[1:]
                best = int(np.argmax(counts)) + 1
                if counts[best - 1] >= p.a_threshold:
                    return depth.like((labels == best).astype(float)), d
        d += p.step_s
    raise NoTopLayer(f"no component reached {p.a_threshold} px by d_max={d_max}")


def largest_component(depth: GridImage) -> GridImage:
    """Fallback mask when the area threshold is never met: the biggest valid
    component over the full depth range."""
    valid = depth.values > 0
    labels, n = ndimage.label(valid, structure=_EIGHT)
    if n == 0:
        return depth.like(np.zeros_like(depth.values))
    counts = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(counts)) + 1
    return depth.like((labels == best).astype(float))


def _neighbor_count(img: np.ndarray) -> np.ndarray:
    return ndimage.convolve(img.astype(int), _EIGHT, mode="constant") - img.astype(int)


def _trace_paths(skel: np.ndarray):
    """Split an 8-connected 1-px skeleton at junctions and order each branch."""
    rs, cs = np.nonzero(skel)
    pixels = set(zip(rs.tolist(), cs.tolist()))
    if not pixels:
        return []

    h, w = skel.shape
    adjacency = {px: [] for px in pixels}
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            r2, c2 = rs + dr, cs + dc
            ok = (r2 >= 0) & (r2 < h) & (c2 >= 0) & (c2 < w)
            ok[ok] = skel[r2[ok], c2[ok]].astype(bool)
            for r, c, qr, qc in zip(rs[ok].tolist(), cs[ok].tolist(),
                                    r2[ok].tolist(), c2[ok].tolist()):
                adjacency[(r, c)].append((qr, qc))

    def neighbors(px):
        return adjacency[px]

    degree = {px: len(nb) for px, nb in adjacency.items()}
    junctions = {px for px, d in degree.items() if d >= 3}
    body = pixels - junctions

    paths = []
    visited = set()
    # chains between junctions / endpoints
    for start in sorted(body):
        if start in visited:
            continue
        nb = [q for q in neighbors(start) if q in body]
        if len(nb) >= 2:
            continue  # interior point; reached from an endpoint
        path = [start]
        visited.add(start)
        cur = start
        while True:
            nxt = [q for q in neighbors(cur) if q in body and q not in visited]
            if not nxt:
                break
            cur = min(nxt)
            path.append(cur)
            visited.add(cur)
        paths.append(np.array(path, dtype=int))
    # isolated cycles (no endpoints)
    for start in sorted(body - visited):
        if start in visited:
            continue
        path = [start]
        visited.add(start)
        cur = start
        while True:
            nxt = [q for q in neighbors(cur) if q in body and q not in visited]
            if not nxt:
                break
            cur = min(nxt)
            path.append(cur)
            visited.add(cur)
        paths.append(np.array(path, dtype=int))
    return paths


def skeletonize(mask: GridImage, prune_min: int = 10, source_mask: int = -1) -> Skeleton:
    """Morphological thinning (Zhang-Suen, 8-connected) plus pruning of
    branches shorter than prune_min pixels."""
    binary = mask.binary()
    if not binary.any():
        return Skeleton([], source_mask)
    if np.count_nonzero(binary) == 1:
        return Skeleton([np.argwhere(binary)], source_mask)
    thin = _zhang_thin(binary, method="zhang")
    paths = _trace_paths(thin)
    if len(paths) > 1:
        kept = [p for p in paths if len(p) >= prune_min]
        if kept:
            paths = kept
    paths.sort(key=lambda p: (-len(p), tuple(p[0])))
    return Skeleton(paths, source_mask)


def sample_prompts(skel: Skeleton, n: int):
    """N pixels spaced equally along the skeleton, allocated to paths in
    proportion to their length (largest-remainder rule)."""
    total = skel.total_length
    if total < 1:
        raise DegenerateInput("skeleton is empty")
    lengths = [len(p) for p in skel.paths]
    quotas = [n * l / total for l in lengths]
    counts = [int(q) for q in quotas]
    remainders = sorted(
        range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    short = n - sum(counts)
    for i in remainders[:short]:
        counts[i] += 1
    prompts = []
    for path, k in zip(skel.paths, counts):
        if k == 0:
            continue
        L = len(path)
        idx = [min(L - 1, int((j + 0.5) * L / k)) for j in range(k)]
        prompts.extend(tuple(path[i]) for i in idx)
    return prompts


def postprocess_masks(raw: MaskSet, p: SegParams) -> MaskSet:
    """Sort by confidence, merge high-IoU pairs, then keep only masks whose
    IoU with every already-kept mask stays below the discard threshold."""
    if len(raw) == 0:
        return MaskSet([])
    order = sorted(
        range(len(raw)),
        key=lambda i: (-raw[i].confidence, -raw[i].area, i))
    stack = np.stack([raw[i].image.binary() for i in order])
    confs = [raw[i].confidence for i in order]
    consumed = np.zeros(len(order), dtype=bool)

    for i in range(len(order)):
        if consumed[i]:
            continue
        for j in range(i + 1, len(order)):
            if consumed[j]:
                continue
            inter = np.count_nonzero(stack[i] & stack[j])
            union = np.count_nonzero(stack[i] | stack[j])
            if union > 0 and inter / union > p.t_merge:
                stack[i] |= stack[j]
                confs[i] = max(confs[i], confs[j])
                consumed[j] = True

    survivors = [k for k in range(len(order)) if not consumed[k]]
    kept = []
    for k in survivors:
        ok = True
        for m in kept:
            inter = np.count_nonzero(stack[k] & stack[m])
            union = np.count_nonzero(stack[k] | stack[m])
            if union > 0 and inter / union > p.t_discard:
                ok = False
                break
        if ok:
            kept.append(k)

    template = raw[0].image
    return MaskSet([
        Mask(template.like(stack[k].astype(float)), confs[k]) for k in kept
    ])


def _ridge_offsets(path: np.ndarray, mask_bin: np.ndarray,
                   depth_vals: np.ndarray, reach: int) -> np.ndarray:
    """Sub-pixel lateral corrections snapping each path pixel onto the local
    depth ridge (the tube crest).

    A thinned mask centerline drifts wherever the mask locally widens — e.g.
    where a cable lies alongside itself — while the top surface still peaks
    above the true centerline. Returns per-point (drow, dcol) floats."""
    h, w = depth_vals.shape
    n = len(path)
    out = np.zeros((n, 2))

    ahead = path[np.minimum(np.arange(n) + 2, n - 1)]
    behind = path[np.maximum(np.arange(n) - 2, 0)]
    d = (ahead - behind).astype(float)
    norms = np.hypot(d[:, 0], d[:, 1])
    ok_dir = norms > 1e-9
    perp = np.zeros((n, 2))
    perp[ok_dir, 0] = -d[ok_dir, 1] / norms[ok_dir]
    perp[ok_dir, 1] = d[ok_dir, 0] / norms[ok_dir]

    offs = np.arange(-reach, reach + 1, dtype=float)           # (m,)
    rr = np.rint(path[:, 0:1] + offs[None, :] * perp[:, 0:1]).astype(int)
    cc = np.rint(path[:, 1:2] + offs[None, :] * perp[:, 1:2]).astype(int)
    inb = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    rs, cs = np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)
    valid = inb & mask_bin[rs, cs] & (depth_vals[rs, cs] > 0)  # (n, m)
    z = np.where(valid, -depth_vals[rs, cs], -np.inf)
    enough = valid.sum(axis=1) >= 3

    # continuity prior: when the mask holds two adjacent crests (a cable
    # lying alongside itself), stay on the ridge already being traced
    prev = 0.0
    best = np.zeros(n)
    m = len(offs)
    offs_list = offs.tolist()
    z_rows = z.tolist()
    valid_rows = valid.tolist()
    active = (ok_dir & enough).tolist()
    for k in range(n):
        if not active[k]:
            continue
        zk = z_rows[k]
        j, top = 0, -np.inf
        for jj in range(m):
            score = zk[jj] - 0.0005 * abs(offs_list[jj] - prev)
            if score > top:
                j, top = jj, score
        b = offs_list[j]
        # three-point parabolic peak interpolation around the chosen crest
        if 0 < j < m - 1 and valid_rows[k][j - 1] and valid_rows[k][j + 1]:
            za, zb_, zc = zk[j - 1], zk[j], zk[j + 1]
            denom = za - 2.0 * zb_ + zc
            if denom < -1e-12:
                b += min(0.5, max(-0.5, 0.5 * (za - zc) / denom))
        prev = b
        best[k] = b
    out[:] = best[:, None] * perp
    return out


def mask_to_raw_shape(mask: GridImage, depth: GridImage, prune_min: int = 10,
                      z_offset: float = 0.0, refine: bool = True) -> Polyline3D:
    """Back-project the dominant skeleton path of a mask through per-pixel
    depth into the world frame; no-data pixels are skipped, producing gaps."""
    if mask.values.shape != depth.values.shape:
        raise ShapeError("mask and depth dimensions differ")
    skel = skeletonize(mask, prune_min)
    path = skel.longest_path()
    if len(path) == 0:
        raise NoDepthData("mask produced no skeleton")
    # thinning end spurs curl toward mask corners; drop a few end pixels
    trim = 3
    if len(path) > 2 * trim + 4:
        path = path[trim:-trim]
    rows, cols = path[:, 0], path[:, 1]
    d = depth.values[rows, cols]
    ok = d > 0
    if np.count_nonzero(ok) < 2:
        raise NoDepthData("skeleton pixels carry no depth")
    frac = np.zeros((len(path), 2))
    if refine and abs(z_offset) > 0:
        reach = max(2, int(np.ceil(abs(z_offset) / depth.pitch)) + 1)
        frac = _ridge_offsets(path, mask.binary(), depth.values, reach)
    rr = rows[ok] + frac[ok, 0]
    cc = cols[ok] + frac[ok, 1]
    x = depth.origin[0] + (cc + 0.5) * depth.pitch
    y = depth.origin[1] + (rr + 0.5) * depth.pitch
    snapped = depth.values[np.clip(np.round(rr).astype(int), 0, depth.height - 1),
                           np.clip(np.round(cc).astype(int), 0, depth.width - 1)]
    z_src = np.where(snapped > 0, snapped, d[ok])
    z = depth.origin[2] - z_src + z_offset
    pts = dedupe_points(np.column_stack([x, y, z]))
    if len(pts) < 2:
        raise NoDepthData("degenerate back-projection")
    return Polyline3D(pts)


def select_target(processed: MaskSet, prune_min: int = 10):
    """Mask with the longest skeleton path; ties resolve to the lower index."""
    if len(processed) == 0:
        raise NoCandidate("no masks to select from")
    best_idx, best_skel, best_len = -1, None, 0
    for i, m in enumerate(processed.masks):
        skel = skeletonize(m.image, prune_min, source_mask=i)
        length = len(skel.longest_path())
        if length > best_len:
            best_idx, best_skel, best_len = i, skel, length
    if best_idx < 0:
        raise NoCandidate("all masks have empty skeletons")
    return best_idx, best_skel
