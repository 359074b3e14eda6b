"""Synthetic training-pair generation from brain label maps.

A label map (background 0, brain structures 1-7) is spatially augmented,
its background is populated with random geometric shape labels, and a
gray-scale image is rendered by sampling one intensity per label followed
by randomized corruptions (noise, blur, bias field, downsampling).

All sampling happens in a fixed, documented order from a single generator,
so identical (params, seed) reproduce bit-identical pairs:
transform parameters, then shapes, then intensities, then corruptions.
Everything operates at 1 mm isotropic spacing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .volume import Kind, Volume
from . import volume as vol_ops

BRAIN_LABELS = (1, 2, 3, 4, 5, 6, 7)
FIRST_SHAPE_LABEL = 8


@dataclass(frozen=True)
class SynthesisParams:
    """Sampling ranges for one model's training distribution.

    Shift is in mm, rotation in degrees, scale a +/- fraction around 1,
    blur and warp in mm, noise in normalized intensity units.
    """

    window: int
    n_shapes: int
    shift_max: float
    rot_max: float
    scale_max: float
    blur_sd_max: float
    noise_sd_max: float
    warp_max: float = 3.0
    bias_amplitude: float = 0.3
    downsample_factor_max: int = 2

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.n_shapes < 0:
            raise ValueError("n_shapes must be >= 0")
        for name in ("shift_max", "rot_max", "scale_max", "blur_sd_max",
                     "noise_sd_max", "warp_max", "bias_amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.downsample_factor_max < 1:
            raise ValueError("downsample_factor_max must be >= 1")


# Per-model synthesis ranges (window, shapes, shift, rotation, scale, blur
# SD, noise SD) and sliding-window step sizes.
MODEL_PARAMS: dict[str, SynthesisParams] = {
    "A": SynthesisParams(128, 24, 48.0, 180.0, 0.6, 0.6, 0.40),
    "B": SynthesisParams(96, 24, 32.0, 180.0, 0.4, 0.4, 0.20),
    "C": SynthesisParams(64, 24, 12.0, 180.0, 0.4, 0.2, 0.15),
    "D": SynthesisParams(32, 8, 6.0, 180.0, 0.3, 0.1, 0.15),
}
MODEL_STEPS: dict[str, int] = {"A": 64, "B": 32, "C": 32, "D": 32}


@dataclass(frozen=True)
class TrainingPair:
    image: Volume
    gt: Volume
    metadata: dict = field(default_factory=dict)


def make_phantom_label_map(rng: np.random.Generator, dims) -> Volume:
    """Build a connected 7-structure ellipsoidal phantom brain on background 0.

    Label 1 is the envelope; labels 2-7 are smaller ellipsoids carved inside
    it, so the union of labels 1-7 is a single connected component.
    """
    dims = tuple(int(d) for d in dims)
    if any(d < 32 for d in dims):
        raise ValueError("phantom dims must be >= 32 per axis")
    center = np.array(dims) / 2.0
    radii = np.array([rng.uniform(0.15, 0.22) * d for d in dims])
    grids = np.ogrid[: dims[0], : dims[1], : dims[2]]
    envelope = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii)) <= 1.0

    lm = np.zeros(dims, dtype=np.int32)
    lm[envelope] = 1
    directions = np.array([
        [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]
    ])
    for k, d in enumerate(directions, start=2):
        c = center + d * radii * rng.uniform(0.35, 0.5)
        r = radii * rng.uniform(0.25, 0.4)
        inner = sum(((g - ci) / ri) ** 2 for g, ci, ri in zip(grids, c, r)) <= 1.0
        lm[inner & envelope] = k
        ci = tuple(int(round(v)) for v in c)
        if envelope[ci]:
            lm[ci] = k  # keep every structure present even if overwritten
    return Volume(lm, (1.0, 1.0, 1.0), Kind.LABEL)


def brain_mask(lm: Volume) -> Volume:
    """Union of the brain-structure labels as a binary mask."""
    data = ((lm.data >= BRAIN_LABELS[0]) & (lm.data <= BRAIN_LABELS[-1]))
    return Volume(data.astype(np.uint8), lm.spacing, Kind.MASK)


def _rotation_matrix(angles_deg: np.ndarray) -> np.ndarray:
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _sample_transform(p: SynthesisParams, rng: np.random.Generator) -> dict:
    return {
        "shift_mm": rng.uniform(-p.shift_max, p.shift_max, size=3),
        "rot_deg": rng.uniform(-p.rot_max, p.rot_max, size=3),
        "scale": rng.uniform(1.0 - p.scale_max, 1.0 + p.scale_max),
    }


def _apply_transform(lm: Volume, p: SynthesisParams, params: dict,
                     rng: np.random.Generator) -> Volume:
    dims = lm.dims
    spacing = np.array(lm.spacing)
    center = (np.array(dims) - 1) / 2.0
    rot = _rotation_matrix(params["rot_deg"])
    scale = params["scale"]
    shift_vox = params["shift_mm"] / spacing

    identity = (
        not np.any(params["shift_mm"]) and not np.any(params["rot_deg"])
        and scale == 1.0 and p.warp_max == 0
    )
    if identity:
        return lm

    out_idx = np.indices(dims, dtype=np.float64)
    rel = out_idx - center.reshape(3, 1, 1, 1) - shift_vox.reshape(3, 1, 1, 1)
    inv = np.linalg.inv(rot * scale)
    coords = np.einsum("ij,jxyz->ixyz", inv, rel) + center.reshape(3, 1, 1, 1)

    if p.warp_max > 0:
        # smooth displacement from a low-resolution control grid, amplitude
        # bounded by warp_max (linear upsampling cannot overshoot)
        grid = rng.uniform(-p.warp_max, p.warp_max, size=(3, 8, 8, 8))
        zoom = [d / 8 for d in dims]
        disp = np.stack([ndimage.zoom(g, zoom, order=1) for g in grid])
        coords = coords + disp / spacing.reshape(3, 1, 1, 1)

    out = ndimage.map_coordinates(lm.data, coords, order=0, mode="constant", cval=0)
    return Volume(out.astype(lm.data.dtype), lm.spacing, Kind.LABEL)


def augment_spatial(lm: Volume, p: SynthesisParams, rng: np.random.Generator) -> Volume:
    """Random translation, rotation, isotropic scaling, and smooth warp.

    Resampled nearest-neighbor; voxels mapped from outside the grid become
    background.
    """
    params = _sample_transform(p, rng)
    return _apply_transform(lm, p, params, rng)


def add_random_shapes(lm: Volume, n: int, rng: np.random.Generator) -> Volume:
    """Carve n shape labels (values 8..7+n) out of the background.

    Shapes are a 50/50 mix of randomized ellipsoids and thresholded
    smoothed-noise blobs with radii U(2, w/4) voxels; brain labels are
    never touched.
    """
    if n == 0:
        return lm
    dims = lm.dims
    w = min(dims)
    out = lm.data.copy()
    background = lm.data == 0
    for k in range(n):
        label = FIRST_SHAPE_LABEL + k
        center = rng.uniform(0, np.array(dims))
        radii = rng.uniform(2.0, w / 4.0, size=3)
        angles = rng.uniform(-180, 180, size=3)
        blobby = rng.random() < 0.5
        rmax = float(radii.max())
        mins = np.maximum(np.floor(center - rmax).astype(int), 0)
        maxs = np.minimum(np.ceil(center + rmax).astype(int) + 1, dims)
        if (mins >= maxs).any():
            continue
        sl = tuple(slice(a, b) for a, b in zip(mins, maxs))
        grids = np.ogrid[sl]
        rel = [np.broadcast_to((g - c), tuple(b - a for a, b in zip(mins, maxs)))
               for g, c in zip(grids, center)]
        rot = _rotation_matrix(angles)
        local = np.einsum("ij,jxyz->ixyz", rot.T, np.stack(rel))
        q = sum((local[i] / radii[i]) ** 2 for i in range(3))
        if blobby:
            noise = rng.standard_normal(q.shape)
            noise = ndimage.gaussian_filter(noise, sigma=max(rmax / 4.0, 1.0))
            support = q + noise <= 1.0
        else:
            support = q <= 1.0
        region = support & background[sl]
        out[sl][region] = label
    return Volume(out, lm.spacing, Kind.LABEL)


def _synthesize_raw(lm: Volume, p: SynthesisParams, rng: np.random.Generator):
    """Render a gray-scale image from a label map; returns (data, params)."""
    n_labels = int(lm.data.max()) + 1
    lut = rng.random(n_labels).astype(np.float32)
    img = lut[lm.data]

    noise_sd = float(rng.uniform(0, p.noise_sd_max))
    if noise_sd > 0:
        img = img + noise_sd * rng.standard_normal(img.shape).astype(np.float32)

    blur_sd = float(rng.uniform(0, p.blur_sd_max))
    if blur_sd > 0:
        img = ndimage.gaussian_filter(img, sigma=blur_sd / np.array(lm.spacing))

    bias_amp = float(rng.uniform(0, p.bias_amplitude)) if p.bias_amplitude > 0 else 0.0
    if bias_amp > 0:
        grid = rng.uniform(-bias_amp, bias_amp, size=(4, 4, 4))
        bias = ndimage.zoom(grid, [d / 4 for d in lm.dims], order=1)
        img = img * np.exp(bias).astype(np.float32)

    factor = int(rng.integers(1, p.downsample_factor_max + 1))
    if factor > 1:
        small = ndimage.zoom(img, 1.0 / factor, order=1)
        img = ndimage.zoom(small, np.array(lm.dims) / np.array(small.shape), order=1)

    params = {
        "noise_sd": noise_sd,
        "blur_sd": blur_sd,
        "bias_amp": bias_amp,
        "downsample_factor": factor,
        "prenorm_range": (float(img.min()), float(img.max())),
    }
    return img.astype(np.float32), params


def synthesize_image(lm: Volume, p: SynthesisParams, rng: np.random.Generator) -> Volume:
    """Randomized gray-scale rendering of a label map, normalized to [0, 1]."""
    img, _ = _synthesize_raw(lm, p, rng)
    return vol_ops.minmax_normalize(Volume(img, lm.spacing, Kind.INTENSITY))


def center_brain(lm: Volume, window: int) -> Volume:
    """Crop/pad a label map to a window cube with the brain centroid centered."""
    brain = brain_mask(lm).data
    if brain.sum() == 0:
        return vol_ops.conform_cube(lm, window)
    centroid = np.array(ndimage.center_of_mass(brain))
    mins = np.round(centroid - window / 2.0).astype(int)
    return _crop_window(lm, mins, window)


def _crop_window(lm: Volume, mins, window: int) -> Volume:
    out = np.zeros((window,) * 3, dtype=lm.data.dtype)
    src, dst = [], []
    for a, d in zip(mins, lm.dims):
        lo, hi = max(int(a), 0), min(int(a) + window, d)
        if lo >= hi:
            return Volume(out, lm.spacing, Kind.LABEL)
        src.append(slice(lo, hi))
        dst.append(slice(lo - int(a), hi - int(a)))
    out[tuple(dst)] = lm.data[tuple(src)]
    return Volume(out, lm.spacing, Kind.LABEL)


def make_training_pair(lm: Volume, p: SynthesisParams,
                       rng: np.random.Generator) -> TrainingPair:
    """Full synthesis chain: center brain, augment, add shapes, render.

    The ground truth is the union of brain labels after augmentation; shape
    labels never enter it.
    """
    centered = center_brain(lm, p.window)
    transform = _sample_transform(p, rng)
    augmented = _apply_transform(centered, p, transform, rng)
    with_shapes = add_random_shapes(augmented, p.n_shapes, rng)
    img, corruption = _synthesize_raw(with_shapes, p, rng)
    image = vol_ops.minmax_normalize(Volume(img, lm.spacing, Kind.INTENSITY))
    gt = brain_mask(augmented)
    metadata = {
        "transform": {k: np.asarray(v).tolist() for k, v in transform.items()},
        "corruption": corruption,
        "brain_fraction": float(gt.data.mean()),
        "params": asdict(p),
    }
    return TrainingPair(image, gt, metadata)
