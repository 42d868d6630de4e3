"""Synthetic datasets for the toy tasks.

Two generators, both fully deterministic in (seed, index):

* soft elliptical blobs on a textured background for binary segmentation,
  with exact interior/boundary/exterior region masks derived from the
  mask's Euclidean distance transform;
* band-limited radial-noise textures for K-way classification, where the
  classes differ only in their spectral annulus (per-image normalization
  removes intensity cues).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

__all__ = [
    "BlobSet",
    "TextureSet",
    "gen_blobs",
    "gen_textures",
    "region_masks",
    "REGION_EXTERIOR",
    "REGION_BOUNDARY",
    "REGION_INTERIOR",
]

REGION_EXTERIOR = 0
REGION_BOUNDARY = 1
REGION_INTERIOR = 2

# distance (pixels) from the mask edge that separates boundary from
# interior/exterior in the region partition
_BAND = 5.0

_AREA_RANGE = (0.01, 0.40)
_MAX_ATTEMPTS = 64


@dataclass
class BlobSet:
    """images: [N,1,S,S] float32; masks: [N,1,S,S] float32 in {0,1};
    regions: [N,S,S] int8 with REGION_* codes."""

    images: np.ndarray
    masks: np.ndarray
    regions: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class TextureSet:
    """images: [N,1,S,S] float32 (zero mean, unit std each); labels: [N] int64."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]


def region_masks(mask: np.ndarray, band: float = _BAND) -> np.ndarray:
    """Partition a binary mask into interior / boundary / exterior.

    Interior pixels lie strictly deeper than `band` inside the mask,
    exterior pixels strictly farther than `band` outside it, and the
    boundary band is everything else. The three regions tile the image
    exactly.
    """
    inside = mask.astype(bool)
    d_in = distance_transform_edt(inside)
    d_out = distance_transform_edt(~inside)
    out = np.full(mask.shape, REGION_BOUNDARY, dtype=np.int8)
    out[d_in > band] = REGION_INTERIOR
    out[d_out > band] = REGION_EXTERIOR
    return out


def _one_blob_image(rng: np.random.Generator, size: int):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(_MAX_ATTEMPTS):
        bg = gaussian_filter(rng.standard_normal((size, size)), sigma=6.0)
        bg = 0.15 * bg / (bg.std() + 1e-12)
        img = bg.copy()
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            cx, cy = rng.uniform(0.2 * size, 0.8 * size, size=2)
            a, b = rng.uniform(0.08 * size, 0.22 * size, size=2)
            theta = rng.uniform(0.0, np.pi)
            ct, st = np.cos(theta), np.sin(theta)
            xr = (xx - cx) * ct + (yy - cy) * st
            yr = -(xx - cx) * st + (yy - cy) * ct
            rho = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
            soft = 1.0 / (1.0 + np.exp(-(1.0 - rho) / 0.06))
            img += rng.uniform(0.45, 0.65) * soft
            mask |= rho <= 1.0
        frac = mask.mean()
        if _AREA_RANGE[0] <= frac <= _AREA_RANGE[1]:
            img += 0.1 * rng.standard_normal((size, size))
            return img, mask
    raise RuntimeError("blob sampling failed to hit the target area range")


def gen_blobs(n: int, size: int = 64, seed: int = 0) -> BlobSet:
    """Blob segmentation set; sample i depends only on (seed, i)."""
    images = np.empty((n, 1, size, size), dtype=np.float32)
    masks = np.empty((n, 1, size, size), dtype=np.float32)
    regions = np.empty((n, size, size), dtype=np.int8)
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        img, mask = _one_blob_image(rng, size)
        images[i, 0] = img.astype(np.float32)
        masks[i, 0] = mask.astype(np.float32)
        regions[i] = region_masks(mask)
    return BlobSet(images, masks, regions)


def _radial_grid(size: int) -> np.ndarray:
    f = np.fft.fftfreq(size) * size  # cycles per image
    fy, fx = np.meshgrid(f, f, indexing="ij")
    return np.hypot(fy, fx)


def texture_band_centers(size: int, classes: int,
                         band_lo: float = 0.10, band_hi: float = 0.34) -> np.ndarray:
    """Annulus centers in cycles/image, spread between the given fractions
    of the image size (band_hi must stay below Nyquist at 0.5)."""
    return size * np.linspace(band_lo, band_hi, classes)


def gen_textures(n: int, size: int = 32, classes: int = 4, seed: int = 0,
                 band_lo: float = 0.10, band_hi: float = 0.34) -> TextureSet:
    """Band-limited noise textures; label i%classes keeps classes balanced.

    Each sample filters white noise through a Gaussian annulus in the
    frequency plane centered at its class radius (sigma 1.5 cycles), then
    normalizes to zero mean / unit variance so only the spectrum carries
    class information. Narrowing (band_lo, band_hi) packs the class annuli
    closer together and makes the discrimination harder.
    """
    rr = _radial_grid(size)
    centers = texture_band_centers(size, classes, band_lo, band_hi)
    filters = [np.exp(-((rr - r0) ** 2) / (2 * 1.5**2)) for r0 in centers]
    images = np.empty((n, 1, size, size), dtype=np.float32)
    labels = (np.arange(n) % classes).astype(np.int64)
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        white = rng.standard_normal((size, size))
        spec = np.fft.fft2(white) * filters[labels[i]]
        img = np.fft.ifft2(spec).real
        img = (img - img.mean()) / (img.std() + 1e-12)
        images[i, 0] = img.astype(np.float32)
    return TextureSet(images, labels)
