"""Projective alignment, block-wise non-rigid registration, and stitching.

The end-to-end flow mirrors how slide pairs are aligned in practice: a
global projective transform estimated from hand-picked point pairs brings
the moving image into the fixed image's frame, the frame is divided into a
4x4 grid, each block is registered on a single channel, the recovered
displacement field is replayed onto the other channels, and the blocks are
stitched back together with the inter-block gaps filled from surrounding
content.

Displacement fields are backward maps: ``(dx, dy)`` at an output pixel
gives the source sampling coordinate ``(x + dx, y + dy)``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import DimensionMismatchError, Plane, Raster, ValidityMask

# Slack for the in-bounds test so a numerically-estimated identity
# transform does not invalidate border pixels.
_EDGE_EPS = 1e-6

_FIELD_MAGIC = b"DFLD"

_UNIT_SQUARE = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))

CHANNEL_INDEX = {"R": 0, "G": 1, "B": 2}


class DegenerateGeometryError(ValueError):
    """Point or quad configuration does not determine a projective map."""


class UnregistrableBlockError(ValueError):
    """Block has no intensity variation to register on."""


class RegistrationStageError(RuntimeError):
    """A stage of the end-to-end registration failed; names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PointPair:
    """One manual correspondence: ``source`` (x, y) maps to ``target`` (x, y)."""

    source: tuple[float, float]
    target: tuple[float, float]


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective transform, normalized so the bottom-right entry is 1."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography matrix must be 3x3, got {m.shape}")
        if abs(m[2, 2]) > 0.0:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateGeometryError("homography matrix is not invertible")
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        ones = np.ones((pts.shape[0], 1))
        hom = np.hstack([pts, ones]) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-pixel backward displacement; components stored as float32."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self) -> None:
        dx = np.ascontiguousarray(np.asarray(self.dx, dtype=np.float32))
        dy = np.ascontiguousarray(np.asarray(self.dy, dtype=np.float32))
        if dx.ndim != 2 or dx.shape != dy.shape:
            raise ValueError(f"field components must share a 2-D shape, got {dx.shape} / {dy.shape}")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise ValueError("field components must all be finite")
        dx.setflags(write=False)
        dy.setflags(write=False)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]


def zero_field(width: int, height: int) -> DisplacementField:
    z = np.zeros((height, width), dtype=np.float32)
    return DisplacementField(z, z.copy())


@dataclass(frozen=True)
class BlockGrid:
    """Non-overlapping row/col partition of an image; default 4x4 = 16 blocks."""

    rows: int = 4
    cols: int = 4

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")

    def rects(self, width: int, height: int) -> list[tuple[int, int, int, int]]:
        """Row-major (x0, y0, x1, y1) rectangles with exclusive ends."""
        if width < self.cols or height < self.rows:
            raise ValueError(
                f"image {width}x{height} too small for a {self.rows}x{self.cols} grid"
            )
        xs = [c * width // self.cols for c in range(self.cols + 1)]
        ys = [r * height // self.rows for r in range(self.rows + 1)]
        return [
            (xs[c], ys[r], xs[c + 1], ys[r + 1])
            for r in range(self.rows)
            for c in range(self.cols)
        ]


# ---------------------------------------------------------------------------
# Homography estimation
# ---------------------------------------------------------------------------


def _normalizing_similarity(pts: np.ndarray) -> np.ndarray:
    """Similarity that moves the centroid to the origin and the mean
    distance to sqrt(2) (Hartley preconditioning)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if dist <= 0.0:
        raise DegenerateGeometryError("all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def estimate_homography(pairs) -> Homography:
    """Least-squares projective fit from >= 4 point pairs (normalized DLT).

    With exactly 4 pairs in general position the fit interpolates the
    correspondences exactly.
    """
    pairs = list(pairs)
    if len(pairs) < 4:
        raise ValueError(f"need at least 4 point pairs, got {len(pairs)}")
    src = np.array([p.source for p in pairs], dtype=np.float64)
    dst = np.array([p.target for p in pairs], dtype=np.float64)
    t_src = _normalizing_similarity(src)
    t_dst = _normalizing_similarity(dst)
    sn = (np.hstack([src, np.ones((len(pairs), 1))]) @ t_src.T)[:, :2]
    dn = (np.hstack([dst, np.ones((len(pairs), 1))]) @ t_dst.T)[:, :2]

    rows = []
    for (sx, sy), (dx_, dy_) in zip(sn, dn):
        rows.append([-sx, -sy, -1.0, 0.0, 0.0, 0.0, dx_ * sx, dx_ * sy, dx_])
        rows.append([0.0, 0.0, 0.0, -sx, -sy, -1.0, dy_ * sx, dy_ * sy, dy_])
    a = np.array(rows)
    _, sv, vt = np.linalg.svd(a)
    # A second vanishing singular value means the solution is not unique.
    if sv[-2] <= 1e-10 * sv[0]:
        raise DegenerateGeometryError("degenerate point configuration")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    return Homography(h)


def _require_convex_quad(quad: np.ndarray, name: str) -> None:
    crosses = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        crosses.append(a[0] * b[1] - a[1] * b[0])
    crosses = np.array(crosses)
    if np.any(crosses == 0.0) or not (np.all(crosses > 0) or np.all(crosses < 0)):
        raise DegenerateGeometryError(f"{name} quad is degenerate or not convex")


def two_step_projection(source_quad, target_quad) -> Homography:
    """Compose source-quad -> unit square -> target-quad.

    Matches :func:`estimate_homography` on the same 4 correspondences up to
    floating-point error.
    """
    src = np.asarray(source_quad, dtype=np.float64)
    dst = np.asarray(target_quad, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("quads must each hold exactly 4 (x, y) points")
    _require_convex_quad(src, "source")
    _require_convex_quad(dst, "target")
    to_square = estimate_homography(
        [PointPair(tuple(s), u) for s, u in zip(src, _UNIT_SQUARE)]
    )
    to_target = estimate_homography(
        [PointPair(u, tuple(d)) for u, d in zip(_UNIT_SQUARE, dst)]
    )
    return Homography(to_target.matrix @ to_square.matrix)


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------


def _bilinear_clamped(arr: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample with border-replicate semantics; callers mask out-of-bounds."""
    h, w = arr.shape
    sxc = np.clip(sx, 0.0, float(w - 1))
    syc = np.clip(sy, 0.0, float(h - 1))
    x0 = np.clip(np.floor(sxc).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(syc).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sxc - x0
    fy = syc - y0
    v00 = arr[y0, x0]
    v01 = arr[y0, x1]
    v10 = arr[y1, x0]
    v11 = arr[y1, x1]
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)


def _inside(sx: np.ndarray, sy: np.ndarray, width: int, height: int) -> np.ndarray:
    return (
        (sx >= -_EDGE_EPS)
        & (sx <= width - 1 + _EDGE_EPS)
        & (sy >= -_EDGE_EPS)
        & (sy <= height - 1 + _EDGE_EPS)
    )


def _round_to_u8(values: np.ndarray) -> np.ndarray:
    rounded = np.where(values >= 0.0, np.floor(values + 0.5), np.ceil(values - 0.5))
    return np.clip(rounded, 0.0, 255.0).astype(np.uint8)


def warp(
    image: Plane | Raster, h: Homography, out_size: tuple[int, int]
) -> tuple[Plane | Raster, ValidityMask]:
    """Resample ``image`` into the target frame by inverse mapping.

    ``out_size`` is (width, height). Output pixels whose source sample
    falls outside the image are zeroed and marked invalid.
    """
    out_w, out_h = out_size
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be at least 1x1")
    inv = h.inverse().matrix
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    denom = inv[2, 0] * gx + inv[2, 1] * gy + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]) / denom
        sy = (inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]) / denom
    finite = np.abs(denom) > 1e-12
    sx = np.where(finite, sx, -1.0)
    sy = np.where(finite, sy, -1.0)

    if isinstance(image, Raster):
        valid = _inside(sx, sy, image.width, image.height) & finite
        channels = image.samples.astype(np.float64)
        out = np.zeros((out_h, out_w, 3), dtype=np.uint8)
        for c in range(3):
            vals = _bilinear_clamped(channels[:, :, c], sx, sy)
            out[:, :, c] = np.where(valid, _round_to_u8(vals), 0)
        return Raster(out), ValidityMask(valid)
    valid = _inside(sx, sy, image.width, image.height) & finite
    vals = _bilinear_clamped(image.samples, sx, sy)
    return Plane(np.where(valid, vals, 0.0)), ValidityMask(valid)


def partition_blocks(image: Plane | Raster, grid: BlockGrid) -> list[Plane | Raster]:
    """Cut the image into grid blocks, row-major; blocks tile exactly."""
    rects = grid.rects(image.width, image.height)
    out = []
    for x0, y0, x1, y1 in rects:
        if isinstance(image, Raster):
            out.append(Raster(image.samples[y0:y1, x0:x1].copy()))
        else:
            out.append(Plane(image.samples[y0:y1, x0:x1].copy()))
    return out


def stitch(
    blocks, grid: BlockGrid, width: int, height: int
) -> tuple[Plane | Raster, ValidityMask]:
    """Place (image, mask) blocks back at their grid rectangles."""
    rects = grid.rects(width, height)
    blocks = list(blocks)
    if len(blocks) != len(rects):
        raise ValueError(f"expected {len(rects)} blocks, got {len(blocks)}")
    first_raster = isinstance(blocks[0][0], Raster)
    canvas = (
        np.zeros((height, width, 3), dtype=np.uint8)
        if first_raster
        else np.zeros((height, width), dtype=np.float64)
    )
    mask = np.zeros((height, width), dtype=bool)
    for (block, block_mask), (x0, y0, x1, y1) in zip(blocks, rects):
        if isinstance(block, Raster) is not first_raster:
            raise ValueError("blocks must all share one image type")
        bw, bh = x1 - x0, y1 - y0
        if (block.width, block.height) != (bw, bh):
            raise DimensionMismatchError(
                f"block {block.width}x{block.height} does not fit rect {bw}x{bh}"
            )
        flags = block_mask.flags if isinstance(block_mask, ValidityMask) else np.asarray(block_mask, bool)
        if flags.shape != (bh, bw):
            raise DimensionMismatchError("block mask does not match its rect")
        canvas[y0:y1, x0:x1] = block.samples
        mask[y0:y1, x0:x1] = flags
    image = Raster(canvas) if first_raster else Plane(canvas)
    return image, ValidityMask(mask)


# ---------------------------------------------------------------------------
# Block registration
# ---------------------------------------------------------------------------

_CONTROL_POINTS = 4
_REFINE_STEP = 2
_MIN_LEVEL_SIZE = 16
_PYRAMID_LEVELS = 3


def _box_halve(a: np.ndarray) -> np.ndarray:
    h2, w2 = a.shape[0] // 2, a.shape[1] // 2
    return a[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _ncc_at_shift(f: np.ndarray, m: np.ndarray, tx: int, ty: int, min_overlap: int) -> float | None:
    h, w = f.shape
    xs0, xs1 = max(0, -tx), min(w, w - tx)
    ys0, ys1 = max(0, -ty), min(h, h - ty)
    ow, oh = xs1 - xs0, ys1 - ys0
    if ow <= 0 or oh <= 0 or ow * oh < min_overlap:
        return None
    f_sub = f[ys0:ys1, xs0:xs1]
    m_sub = m[ys0 + ty : ys1 + ty, xs0 + tx : xs1 + tx]
    fc = f_sub - f_sub.mean()
    mc = m_sub - m_sub.mean()
    denom = np.sqrt((fc * fc).sum() * (mc * mc).sum())
    if denom == 0.0:
        return None
    return float((fc * mc).sum() / denom)


def _best_shift(
    f: np.ndarray, m: np.ndarray, center: tuple[int, int], radius: int
) -> tuple[int, int]:
    min_overlap = max(9, f.size // 16)
    best_key = None
    best = center
    for ty in range(center[1] - radius, center[1] + radius + 1):
        for tx in range(center[0] - radius, center[0] + radius + 1):
            score = _ncc_at_shift(f, m, tx, ty, min_overlap)
            if score is None:
                continue
            # Deterministic tie-break: prefer the smaller, then lexically
            # earlier shift.
            key = (score, -(abs(tx) + abs(ty)), -ty, -tx)
            if best_key is None or key > best_key:
                best_key = key
                best = (tx, ty)
    return best


def _search_translation(
    fa: np.ndarray, ma: np.ndarray, coarse_radius: int, fine_radius: int
) -> tuple[int, int]:
    levels = [(fa, ma)]
    while len(levels) < _PYRAMID_LEVELS:
        f_prev, m_prev = levels[-1]
        if min(f_prev.shape) // 2 < _MIN_LEVEL_SIZE:
            break
        levels.append((_box_halve(f_prev), _box_halve(m_prev)))
    est = (0, 0)
    for depth in range(len(levels) - 1, -1, -1):
        f_l, m_l = levels[depth]
        radius = coarse_radius if depth == len(levels) - 1 else fine_radius
        est = _best_shift(f_l, m_l, est, radius)
        if depth > 0:
            est = (est[0] * 2, est[1] * 2)
    return est


def _control_coords(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel coordinates in control-grid units (0 .. n-1)."""
    n = _CONTROL_POINTS
    gx = np.arange(width, dtype=np.float64) * ((n - 1) / (width - 1)) if width > 1 else np.zeros(width)
    gy = np.arange(height, dtype=np.float64) * ((n - 1) / (height - 1)) if height > 1 else np.zeros(height)
    return np.meshgrid(gx, gy)


def _interp_control(ctrl: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return _bilinear_clamped(ctrl, gx, gy)


def _hat_weight(g: np.ndarray, index: int) -> np.ndarray:
    return np.clip(1.0 - np.abs(g - index), 0.0, 1.0)


def _support_slices(index: int, length: int) -> slice:
    n = _CONTROL_POINTS
    if length == 1:
        return slice(0, 1)
    step = (length - 1) / (n - 1)
    lo = 0 if index == 0 else int(np.ceil((index - 1) * step))
    hi = length - 1 if index == n - 1 else int(np.floor((index + 1) * step))
    return slice(lo, hi + 1)


def _refine_control_grid(
    fa: np.ndarray, ma: np.ndarray, tx: float, ty: float, max_sweeps: int
) -> tuple[np.ndarray, np.ndarray]:
    n = _CONTROL_POINTS
    h, w = fa.shape
    ctrl_dx = np.full((n, n), tx, dtype=np.float64)
    ctrl_dy = np.full((n, n), ty, dtype=np.float64)
    gx, gy = _control_coords(w, h)
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dx = _interp_control(ctrl_dx, gx, gy)
    dy = _interp_control(ctrl_dy, gx, gy)

    deltas = [
        (ddx, ddy)
        for ddx in range(-_REFINE_STEP, _REFINE_STEP + 1)
        for ddy in range(-_REFINE_STEP, _REFINE_STEP + 1)
        if (ddx, ddy) != (0, 0)
    ]

    def rect_cost(rows: slice, cols: slice, dxr: np.ndarray, dyr: np.ndarray) -> float:
        # Mean over in-bounds samples only: pixels whose true source lies
        # outside the block carry no signal and must not bend the field.
        sx = xg[rows, cols] + dxr
        sy = yg[rows, cols] + dyr
        valid = _inside(sx, sy, w, h)
        if not valid.any():
            return float("inf")
        vals = _bilinear_clamped(ma, sx, sy)
        return float(np.abs(fa[rows, cols] - vals)[valid].mean())

    for _ in range(max_sweeps):
        improved = False
        for ci in range(n):
            rows = _support_slices(ci, h)
            for cj in range(n):
                cols = _support_slices(cj, w)
                if rows.stop <= rows.start or cols.stop <= cols.start:
                    continue
                phi = _hat_weight(gy[rows, cols], ci) * _hat_weight(gx[rows, cols], cj)
                base_dx = dx[rows, cols]
                base_dy = dy[rows, cols]
                best_cost = rect_cost(rows, cols, base_dx, base_dy)
                best_delta = None
                for ddx, ddy in deltas:
                    cost = rect_cost(rows, cols, base_dx + ddx * phi, base_dy + ddy * phi)
                    if cost < best_cost:
                        best_cost = cost
                        best_delta = (ddx, ddy)
                if best_delta is not None:
                    ctrl_dx[ci, cj] += best_delta[0]
                    ctrl_dy[ci, cj] += best_delta[1]
                    dx[rows, cols] = base_dx + best_delta[0] * phi
                    dy[rows, cols] = base_dy + best_delta[1] * phi
                    improved = True
        if not improved:
            break
    return ctrl_dx, ctrl_dy


def _dense_from_control(
    ctrl_dx: np.ndarray, ctrl_dy: np.ndarray, shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    gx, gy = _control_coords(w, h)
    return _interp_control(ctrl_dx, gx, gy), _interp_control(ctrl_dy, gx, gy)


def _field_mad(fa: np.ndarray, ma: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> float:
    h, w = fa.shape
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx, sy = xg + dx, yg + dy
    valid = _inside(sx, sy, w, h)
    if not valid.any():
        return float("inf")
    vals = _bilinear_clamped(ma, sx, sy)
    return float(np.abs(fa - vals)[valid].mean())


def register_block(
    fixed: Plane,
    moving: Plane,
    *,
    coarse_radius: int = 32,
    fine_radius: int = 3,
    max_sweeps: int = 10,
) -> DisplacementField:
    """Recover a backward displacement field aligning ``moving`` to ``fixed``.

    Stage 1 finds the integer translation maximizing normalized cross-
    correlation, searched coarse to fine over an internal 3-level pyramid.
    Stage 2 refines on a 4x4 control grid of displacements (bilinearly
    interpolated) by coordinate descent over small integer perturbations,
    minimizing the mean absolute difference. The zero field is kept
    whenever the optimized field would score worse on its valid region.
    """
    fa, ma = fixed.samples, moving.samples
    if fa.shape != ma.shape:
        raise DimensionMismatchError(
            f"block shapes differ: {fa.shape} vs {ma.shape}"
        )
    if float(fa.std()) == 0.0 or float(ma.std()) == 0.0:
        raise UnregistrableBlockError("block has zero intensity variance")
    tx, ty = _search_translation(fa, ma, coarse_radius, fine_radius)
    ctrl_dx, ctrl_dy = _refine_control_grid(fa, ma, float(tx), float(ty), max_sweeps)
    dx, dy = _dense_from_control(ctrl_dx, ctrl_dy, fa.shape)
    if _field_mad(fa, ma, dx, dy) > float(np.mean(np.abs(fa - ma))):
        return zero_field(fa.shape[1], fa.shape[0])
    return DisplacementField(dx.astype(np.float32), dy.astype(np.float32))


def apply_field(field: DisplacementField, channel: Plane) -> tuple[Plane, ValidityMask]:
    """Replay a displacement field onto a channel by bilinear sampling."""
    if (field.width, field.height) != (channel.width, channel.height):
        raise DimensionMismatchError(
            f"field {field.width}x{field.height} does not match "
            f"channel {channel.width}x{channel.height}"
        )
    h, w = channel.samples.shape
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = xg + field.dx
    sy = yg + field.dy
    valid = _inside(sx, sy, w, h)
    vals = _bilinear_clamped(channel.samples, sx, sy)
    return Plane(np.where(valid, vals, 0.0)), ValidityMask(valid)


# ---------------------------------------------------------------------------
# Gap filling
# ---------------------------------------------------------------------------

_NEIGHBOR_KERNEL = np.array(
    [[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]], dtype=np.float64
)


def fill_gaps(image: Plane | Raster, mask: ValidityMask) -> Plane | Raster:
    """Fill invalid pixels with the mean of their valid 8-neighbors.

    Runs synchronous dilation passes (each pass reads only the previous
    pass's state, so the result is order independent) until every pixel is
    valid. Valid pixels are preserved bit-exactly.
    """
    from scipy import ndimage

    if (mask.width, mask.height) != (image.width, image.height):
        raise DimensionMismatchError("mask dimensions do not match the image")
    flags = mask.flags.copy()
    if not flags.any():
        raise ValueError("cannot fill gaps: image has no valid pixels")
    is_raster = isinstance(image, Raster)
    if is_raster:
        channels = [image.samples[:, :, c].astype(np.float64) for c in range(3)]
    else:
        channels = [image.samples.copy()]
    for ch in channels:
        ch[~flags] = 0.0

    for _ in range(max(image.width, image.height)):
        if flags.all():
            break
        valid_f = flags.astype(np.float64)
        counts = ndimage.correlate(valid_f, _NEIGHBOR_KERNEL, mode="constant")
        fillable = (~flags) & (counts > 0.0)
        if not fillable.any():
            break
        for ch in channels:
            sums = ndimage.correlate(ch * valid_f, _NEIGHBOR_KERNEL, mode="constant")
            ch[fillable] = sums[fillable] / counts[fillable]
        flags |= fillable
    if not flags.all():
        raise RuntimeError("gap filling did not reach every pixel")

    if is_raster:
        out = np.stack([_round_to_u8(ch) for ch in channels], axis=2)
        return Raster(out)
    return Plane(channels[0])


# ---------------------------------------------------------------------------
# End-to-end pair registration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegistrationConfig:
    channel: str = "G"
    grid: BlockGrid = field(default_factory=BlockGrid)

    def __post_init__(self) -> None:
        if self.channel not in CHANNEL_INDEX:
            raise ValueError(f"registration channel must be one of R, G, B, got {self.channel!r}")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Aligned moving image plus the pre-fill validity mask.

    Iterating yields (aligned, validity); the homography and per-block
    fields are kept for persistence.
    """

    aligned: Raster
    validity: ValidityMask
    homography: Homography
    fields: tuple[DisplacementField, ...]

    def __iter__(self):
        yield self.aligned
        yield self.validity


def _standardize(a: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance copy; stain intensity profiles differ across
    the pair, so blocks are compared in standardized units."""
    std = float(a.std())
    if std == 0.0:
        return a.copy()
    return (a - a.mean()) / std


def _stage(name: str):
    class _StageContext:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, RegistrationStageError):
                raise RegistrationStageError(name, exc) from exc
            return False

    return _StageContext()


def register_pair(
    he: Raster, ihc: Raster, pairs, config: RegistrationConfig | None = None
) -> RegistrationResult:
    """Align an HE image onto its IHC counterpart.

    Projective warp from the manual point pairs, then per-block single
    channel registration with the field replayed onto the remaining
    channels, stitched and gap-filled. The returned mask marks pixels that
    held real (unfilled) data.
    """
    cfg = config or RegistrationConfig()
    chan = CHANNEL_INDEX[cfg.channel]

    with _stage("homography"):
        h = estimate_homography(pairs)
    with _stage("projective-warp"):
        aligned, warp_mask = warp(he, h, (ihc.width, ihc.height))
        # Blocks need defined content everywhere; the out-of-frame band is
        # filled from surrounding tissue but stays invalid in the result.
        if not warp_mask.all_valid():
            aligned = fill_gaps(aligned, warp_mask)

    with _stage("block-registration"):
        rects = cfg.grid.rects(ihc.width, ihc.height)
        fixed_chan = ihc.samples[:, :, chan].astype(np.float64)
        moving_all = aligned.samples.astype(np.float64)
        mask_f = warp_mask.flags.astype(np.float64)
        fields: list[DisplacementField] = []
        blocks: list[tuple[Raster, ValidityMask]] = []
        for x0, y0, x1, y1 in rects:
            f_block = Plane(_standardize(fixed_chan[y0:y1, x0:x1]))
            m_block = Plane(_standardize(moving_all[y0:y1, x0:x1, chan]))
            try:
                fld = register_block(f_block, m_block)
            except UnregistrableBlockError:
                fld = zero_field(x1 - x0, y1 - y0)
            fields.append(fld)

            # Fields are block-local; sampling happens against the full
            # warped image so content can cross block borders.
            bh, bw = y1 - y0, x1 - x0
            xg, yg = np.meshgrid(
                np.arange(x0, x1, dtype=np.float64),
                np.arange(y0, y1, dtype=np.float64),
            )
            sx = xg + fld.dx
            sy = yg + fld.dy
            inbounds = _inside(sx, sy, ihc.width, ihc.height)
            source_valid = _bilinear_clamped(mask_f, sx, sy) >= 1.0 - 1e-9
            block_valid = inbounds & source_valid
            out = np.zeros((bh, bw, 3), dtype=np.uint8)
            for c in range(3):
                vals = _bilinear_clamped(moving_all[:, :, c], sx, sy)
                out[:, :, c] = np.where(block_valid, _round_to_u8(vals), 0)
            blocks.append((Raster(out), ValidityMask(block_valid)))

    with _stage("stitch"):
        stitched, validity = stitch(blocks, cfg.grid, ihc.width, ihc.height)
    with _stage("gap-fill"):
        filled = fill_gaps(stitched, validity) if not validity.all_valid() else stitched

    return RegistrationResult(
        aligned=filled, validity=validity, homography=h, fields=tuple(fields)
    )


# ---------------------------------------------------------------------------
# External formats
# ---------------------------------------------------------------------------


def load_point_pairs(path: str | Path) -> list[PointPair]:
    """Read manual correspondences from CSV (src_x, src_y, dst_x, dst_y)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"src_x", "src_y", "dst_x", "dst_y"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"{path}: point-pair CSV must have columns src_x, src_y, dst_x, dst_y"
            )
        pairs = [
            PointPair(
                source=(float(row["src_x"]), float(row["src_y"])),
                target=(float(row["dst_x"]), float(row["dst_y"])),
            )
            for row in reader
        ]
    return pairs


def save_field(field_: DisplacementField, path: str | Path) -> None:
    """Write a field as DFLD: magic, u32 width/height, then (f32 dx, f32 dy)
    records row-major, all little-endian."""
    records = np.stack([field_.dx, field_.dy], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<II", field_.width, field_.height))
        fh.write(records.tobytes())


def load_field(path: str | Path) -> DisplacementField:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _FIELD_MAGIC:
        raise ValueError(f"{path}: not a displacement-field file")
    width, height = struct.unpack("<II", raw[4:12])
    expected = 12 + width * height * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated field file ({len(raw)} bytes, expected {expected})")
    records = np.frombuffer(raw[12:], dtype="<f4").reshape(height, width, 2)
    return DisplacementField(records[:, :, 0].copy(), records[:, :, 1].copy())
