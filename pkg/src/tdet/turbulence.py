"""Seeded atmospheric-turbulence degradation for annotated images.

The pipeline composes a smooth random geometric warp, spatially variant
PSF blur and additive Gaussian noise, all driven by deterministic streams,
and transports bounding boxes through the same warp so annotations stay
on their objects. Images enter and leave as uint8; the pipeline works on
float32 copies in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .pnm import to_float, to_uint8
from .rng import STREAM_NOISE, STREAM_PSF, STREAM_TILES, STREAM_WARP
from .rng import Xoshiro256, Xoshiro256Vec, child_seed, image_seed

PSF_COUNT = 9
GAUSSIAN_COUNT = 5  # remainder of the bank are defocus disks
MAX_KERNEL_SIDE = 15
IDENTITY_TILE_PROB = 0.2
BLEND_BAND = 4.0  # pixels across a tile boundary that mix two kernels
MIN_BOX_AREA = 4.0  # transported boxes smaller than this are dropped
BOUNDARY_SAMPLES = 64


@dataclass(frozen=True)
class DegradeConfig:
    """Knobs of the degradation pipeline; an all-zero strength config
    (max_displacement 0, zero sigma/radius ranges, zero noise) is an exact
    no-op."""

    seed: int = 0
    max_displacement: float = 2.5
    cell_size: int = 16
    psf_sigma: tuple = (0.4, 1.4)
    psf_radius: tuple = (1.0, 2.5)
    noise_sigma: float = 0.02
    tile_size: int = 16

    def __post_init__(self):
        if self.max_displacement < 0:
            raise ValueError("max_displacement must be >= 0")
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1")
        if self.tile_size < 8:
            raise ValueError("tile_size must be >= 8")
        if not 0.0 <= self.noise_sigma <= 0.1:
            raise ValueError("noise_sigma must lie in [0, 0.1]")
        for name, rng in (("psf_sigma", self.psf_sigma), ("psf_radius", self.psf_radius)):
            lo, hi = rng
            if lo > hi or lo < 0:
                raise ValueError(f"{name} range must be 0 <= lo <= hi")


@dataclass
class PsfBank:
    """Nine normalized blur kernels (odd side length, entries >= 0)."""

    kernels: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.kernels) != PSF_COUNT:
            raise ValueError(f"bank must hold exactly {PSF_COUNT} kernels")
        for k in self.kernels:
            side = k.shape[0]
            if k.shape[0] != k.shape[1] or side % 2 == 0 or not 3 <= side <= MAX_KERNEL_SIDE:
                raise ValueError(f"kernel side must be odd in [3, {MAX_KERNEL_SIDE}]")
            if abs(float(k.sum()) - 1.0) > 1e-6 or (k < 0).any():
                raise ValueError("kernels must be normalized and nonnegative")


@dataclass
class WarpField:
    """Per-pixel displacement (dx, dy), bounded by max_displacement."""

    dx: np.ndarray
    dy: np.ndarray
    max_displacement: float


def _odd_side(extent: float) -> int:
    side = 2 * int(math.ceil(extent)) + 1
    return int(min(max(side, 3), MAX_KERNEL_SIDE))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    side = _odd_side(3.0 * sigma)
    half = side // 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    if sigma <= 0:
        k = np.zeros((side, side))
        k[half, half] = 1.0
    else:
        k = np.exp(-(xx**2 + yy**2) / (2.0 * sigma * sigma))
    return (k / k.sum()).astype(np.float32)


def _disk_kernel(radius: float) -> np.ndarray:
    side = _odd_side(radius)
    half = side // 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    k = (xx**2 + yy**2 <= max(radius, 1e-9) ** 2).astype(np.float64)
    if k.sum() == 0:
        k[half, half] = 1.0
    return (k / k.sum()).astype(np.float32)


def make_psf_bank(config: DegradeConfig) -> PsfBank:
    """Five Gaussian blurs plus four defocus disks, deterministic per seed."""
    rng = Xoshiro256(child_seed(config.seed, STREAM_PSF))
    kernels = []
    for _ in range(GAUSSIAN_COUNT):
        kernels.append(_gaussian_kernel(rng.uniform(*config.psf_sigma)))
    for _ in range(PSF_COUNT - GAUSSIAN_COUNT):
        kernels.append(_disk_kernel(rng.uniform(*config.psf_radius)))
    return PsfBank(kernels)


def gen_warp_field(width: int, height: int, config: DegradeConfig) -> WarpField:
    """Coarse i.i.d. uniform displacements in [-D, D]^2, bilinearly upsampled.

    Smoothness comes from the construction; per-axis magnitude never
    exceeds D anywhere.
    """
    cell = config.cell_size
    if width < cell or height < cell:
        raise ValueError("image must be at least one grid cell in each dimension")
    d = config.max_displacement
    rng = Xoshiro256(child_seed(config.seed, STREAM_WARP))
    nx = int(math.ceil((width - 1) / cell)) + 1
    ny = int(math.ceil((height - 1) / cell)) + 1
    coarse = np.empty((ny, nx, 2), dtype=np.float64)
    for iy in range(ny):
        for ix in range(nx):
            coarse[iy, ix, 0] = rng.uniform(-d, d)
            coarse[iy, ix, 1] = rng.uniform(-d, d)

    ux = np.arange(width, dtype=np.float64) / cell
    uy = np.arange(height, dtype=np.float64) / cell
    ix0 = np.minimum(np.floor(ux).astype(int), nx - 2)
    iy0 = np.minimum(np.floor(uy).astype(int), ny - 2)
    fx = (ux - ix0)[None, :, None]
    fy = (uy - iy0)[:, None, None]
    c00 = coarse[iy0][:, ix0]
    c01 = coarse[iy0][:, ix0 + 1]
    c10 = coarse[iy0 + 1][:, ix0]
    c11 = coarse[iy0 + 1][:, ix0 + 1]
    full = (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)
    return WarpField(
        dx=full[..., 0].astype(np.float32),
        dy=full[..., 1].astype(np.float32),
        max_displacement=d,
    )


def _bilinear_clamped(plane: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Vectorized bilinear sampling with edge clamp (for image warping)."""
    h, w = plane.shape
    px = np.clip(px, 0.0, w - 1.0)
    py = np.clip(py, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(px).astype(int), w - 2) if w > 1 else np.zeros_like(px, int)
    y0 = np.minimum(np.floor(py).astype(int), h - 2) if h > 1 else np.zeros_like(py, int)
    fx = (px - x0).astype(plane.dtype)
    fy = (py - y0).astype(plane.dtype)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1 - fx) * plane[y0, x0] + fx * plane[y0, x1]
    bot = (1 - fx) * plane[y1, x0] + fx * plane[y1, x1]
    return (1 - fy) * top + fy * bot


def warp_image(img: np.ndarray, field: WarpField) -> np.ndarray:
    """Backward warp: output(p) = input sampled at p + field(p), edge-clamped."""
    img = np.asarray(img)
    if img.shape[:2] != field.dx.shape:
        raise ValueError(f"field dims {field.dx.shape} do not match image {img.shape[:2]}")
    h, w = img.shape[:2]
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    px = xs + field.dx
    py = ys + field.dy
    if img.ndim == 2:
        return _bilinear_clamped(img, px, py)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = _bilinear_clamped(img[..., c], px, py)
    return out


def _conv2d_edge_clamped(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Dense 2-D convolution with edge-replicated borders, per channel."""
    half = kernel.shape[0] // 2
    if img.ndim == 2:
        padded = np.pad(img, half, mode="edge")
    else:
        padded = np.pad(img, ((half, half), (half, half), (0, 0)), mode="edge")
    h, w = img.shape[:2]
    out = np.zeros(img.shape, dtype=np.float64)
    for iy in range(kernel.shape[0]):
        for ix in range(kernel.shape[1]):
            kv = float(kernel[iy, ix])
            if kv == 0.0:
                continue
            out += kv * padded[iy : iy + h, ix : ix + w]
    return out.astype(img.dtype)


def apply_spatially_variant_blur(img: np.ndarray, bank: PsfBank, config: DegradeConfig) -> np.ndarray:
    """Tile-local PSF blur with a linear seam blend.

    Each tile draws a kernel index from the bank (or identity with
    probability 0.2); within BLEND_BAND pixels of the nearest interior
    tile boundary, the result mixes linearly with the neighbor tile's
    kernel. Being a convex combination of local pixel values, the output
    stays inside [0, 1] for inputs inside [0, 1].
    """
    h, w = img.shape[:2]
    tile = config.tile_size
    if h < tile or w < tile:
        raise ValueError("image must be at least one tile large")
    nty = int(math.ceil(h / tile))
    ntx = int(math.ceil(w / tile))

    rng = Xoshiro256(child_seed(config.seed, STREAM_TILES))
    assign = np.empty((nty, ntx), dtype=np.int64)
    for ty in range(nty):
        for tx in range(ntx):
            u_ident = rng.random()
            u_pick = rng.random()
            assign[ty, tx] = -1 if u_ident < IDENTITY_TILE_PROB else int(u_pick * PSF_COUNT) % PSF_COUNT

    used = sorted(set(assign.reshape(-1).tolist()))
    results = {-1: img}
    for k in used:
        if k >= 0:
            results[k] = _conv2d_edge_clamped(img, bank.kernels[k])

    ys, xs = np.mgrid[0:h, 0:w]
    ty = ys // tile
    tx = xs // tile
    own = assign[ty, tx]

    # Distance from each pixel center to its tile's four boundaries; the
    # nearest interior boundary decides the blend partner.
    dist_l = (xs + 0.5) - tx * tile
    dist_r = np.minimum((tx + 1) * tile, w) - (xs + 0.5)
    dist_t = (ys + 0.5) - ty * tile
    dist_b = np.minimum((ty + 1) * tile, h) - (ys + 0.5)
    cands = [
        (dist_l, tx > 0, (ty, np.maximum(tx - 1, 0))),
        (dist_r, tx < ntx - 1, (ty, np.minimum(tx + 1, ntx - 1))),
        (dist_t, ty > 0, (np.maximum(ty - 1, 0), tx)),
        (dist_b, ty < nty - 1, (np.minimum(ty + 1, nty - 1), tx)),
    ]
    best_dist = np.full((h, w), np.inf)
    neighbor = own.copy()
    for dist, valid, (niy, nix) in cands:
        better = valid & (dist < best_dist)
        best_dist = np.where(better, dist, best_dist)
        neighbor = np.where(better, assign[niy, nix], neighbor)

    wn = np.clip(0.5 - best_dist / BLEND_BAND, 0.0, 1.0).astype(img.dtype)
    stack = {k: results[k] for k in results}
    flat_own = np.empty_like(img)
    flat_nb = np.empty_like(img)
    for k, res in stack.items():
        mask_o = own == k
        mask_n = neighbor == k
        if img.ndim == 3:
            mask_o = mask_o[..., None]
            mask_n = mask_n[..., None]
        np.copyto(flat_own, res, where=mask_o)
        np.copyto(flat_nb, res, where=mask_n)
    if img.ndim == 3:
        wn = wn[..., None]
    # a + w*(b - a): exact when both tiles produced identical results
    return flat_own + wn * (flat_nb - flat_own)


def transform_boxes(annotations, field: WarpField):
    """Transport boxes through the warp that was applied to the image.

    The image warp is backward (output reads input at p + field), so
    content moves by -field; each box is re-fit as the axis-aligned hull
    of 64 boundary points moved the same way, clipped to the image.
    Hulls below MIN_BOX_AREA px^2 are dropped.
    """
    h, w = field.dx.shape
    out = []
    per_edge = BOUNDARY_SAMPLES // 4
    for ann in annotations:
        xmin, ymin, xmax, ymax = ann.xmin, ann.ymin, ann.xmax, ann.ymax
        ts = np.arange(per_edge, dtype=np.float64) / per_edge
        px = np.concatenate(
            [
                xmin + ts * (xmax - xmin),
                np.full(per_edge, xmax),
                xmax - ts * (xmax - xmin),
                np.full(per_edge, xmin),
            ]
        )
        py = np.concatenate(
            [
                np.full(per_edge, ymin),
                ymin + ts * (ymax - ymin),
                np.full(per_edge, ymax),
                ymax - ts * (ymax - ymin),
            ]
        )
        dx = _bilinear_clamped(field.dx, px, py)
        dy = _bilinear_clamped(field.dy, px, py)
        nx = px - dx
        ny = py - dy
        bxmin = float(np.clip(nx.min(), 0.0, w))
        bxmax = float(np.clip(nx.max(), 0.0, w))
        bymin = float(np.clip(ny.min(), 0.0, h))
        bymax = float(np.clip(ny.max(), 0.0, h))
        if (bxmax - bxmin) * (bymax - bymin) < MIN_BOX_AREA:
            continue
        out.append(replace(ann, xmin=bxmin, ymin=bymin, xmax=bxmax, ymax=bymax))
    return out


def degrade(img: np.ndarray, annotations, config: DegradeConfig, image_index: int = 0):
    """Full degradation: warp, then spatially variant blur, then noise.

    ``img`` is uint8 (H, W) or (H, W, 3); returns the degraded uint8 image
    and the transported annotations. Deterministic per (seed, index): the
    per-image streams derive from seed XOR image_index.
    """
    cfg_img = replace(config, seed=image_seed(config.seed, image_index))
    h, w = img.shape[:2]
    work = to_float(img)

    field = gen_warp_field(w, h, cfg_img)
    work = warp_image(work, field)

    bank = make_psf_bank(config)  # bank is shared; tile draws are per image
    work = apply_spatially_variant_blur(work, bank, cfg_img)

    if config.noise_sigma > 0:
        rng = Xoshiro256Vec(child_seed(cfg_img.seed, STREAM_NOISE))
        noise = rng.normals(work.size).reshape(work.shape).astype(np.float32)
        work = work + config.noise_sigma * noise

    return to_uint8(work), transform_boxes(annotations, field)
