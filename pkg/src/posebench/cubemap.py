"""ERP <-> cube face conversion and re-projection of per-face depth predictions.

Face frames (pixel ``(a, b)`` -> ``axis + s*right + t*down`` with
``s = 2(a+0.5)/N - 1``, ``t = 2(b+0.5)/N - 1``):

========  ======  ===========  ===========  ===========
face      suffix  axis         right        down
========  ======  ===========  ===========  ===========
front     px      (+1, 0, 0)   (0, +1, 0)   (0, 0, -1)
back      nx      (-1, 0, 0)   (0, -1, 0)   (0, 0, -1)
left      py      (0, +1, 0)   (-1, 0, 0)   (0, 0, -1)
right     ny      (0, -1, 0)   (+1, 0, 0)   (0, 0, -1)
up        pz      (0, 0, +1)   (0, +1, 0)   (+1, 0, 0)
down      nz      (0, 0, -1)   (0, +1, 0)   (-1, 0, 0)
========  ======  ===========  ===========  ===========

``right`` follows increasing ERP column, so faces are not mirrored relative to
the panorama. Seams are not blended: each ERP ray reads only the face whose
axis has the largest dot product with it (first face wins ties).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .calibration import as_depth
from .geometry import _lerp, check_erp, erp_rays, ray_to_pixel, sample_erp

FACE_NAMES = ("front", "back", "left", "right", "up", "down")
FACE_SUFFIXES = ("px", "nx", "py", "ny", "pz", "nz")

FACE_FRAMES = np.array(
    [
        [[1, 0, 0], [0, 1, 0], [0, 0, -1]],
        [[-1, 0, 0], [0, -1, 0], [0, 0, -1]],
        [[0, 1, 0], [-1, 0, 0], [0, 0, -1]],
        [[0, -1, 0], [1, 0, 0], [0, 0, -1]],
        [[0, 0, 1], [0, 1, 0], [1, 0, 0]],
        [[0, 0, -1], [0, 1, 0], [-1, 0, 0]],
    ],
    dtype=np.float64,
)
FACE_FRAMES.flags.writeable = False


@dataclass
class CubeFaceSet:
    """Six square faces stacked as ``(6, N, N)`` or ``(6, N, N, C)`` in :data:`FACE_NAMES` order."""

    faces: np.ndarray

    def __post_init__(self):
        faces = self.faces
        if not isinstance(faces, np.ndarray):
            shapes = {np.shape(f) for f in faces}
            if len(faces) != 6 or len(shapes) != 1:
                raise ValueError(f"need 6 faces of identical shape, got shapes {sorted(shapes)}")
            faces = np.stack([np.asarray(f) for f in faces])
        if faces.ndim not in (3, 4) or faces.shape[0] != 6 or faces.shape[1] != faces.shape[2]:
            raise ValueError(f"faces must have shape (6, N, N[, C]), got {faces.shape}")
        if faces.shape[1] < 2:
            raise ValueError("face_size must be at least 2")
        self.faces = faces

    @property
    def face_size(self) -> int:
        return self.faces.shape[1]

    def face(self, name: str) -> np.ndarray:
        return self.faces[FACE_NAMES.index(name)]


def _face_st(face_size: int):
    c = 2.0 * (np.arange(face_size, dtype=np.float64) + 0.5) / face_size - 1.0
    s, t = np.meshgrid(c, c)
    return s, t


@lru_cache(maxsize=8)
def _face_rays(face_size: int):
    s, t = _face_st(face_size)
    axis, right, down = FACE_FRAMES[:, 0], FACE_FRAMES[:, 1], FACE_FRAMES[:, 2]
    dirs = (axis[:, None, None, :] + s[None, ..., None] * right[:, None, None, :]
            + t[None, ..., None] * down[:, None, None, :])
    secant = np.broadcast_to(np.sqrt(1.0 + s * s + t * t), (6, face_size, face_size)).copy()
    dirs.flags.writeable = False
    secant.flags.writeable = False
    return dirs, secant


def face_rays(face_size: int):
    """Unnormalised face-pixel directions ``(6, N, N, 3)`` and their norms ``(6, N, N)``."""
    return _face_rays(int(face_size))


def erp_to_cubemap(image: np.ndarray, face_size: int | None = None) -> CubeFaceSet:
    image = check_erp(image)
    height, width = image.shape[:2]
    face_size = width // 4 if face_size is None else int(face_size)
    if face_size < 2:
        raise ValueError("face_size must be at least 2")
    dirs, _ = face_rays(face_size)
    u, v = ray_to_pixel(dirs, width, height)
    return CubeFaceSet(sample_erp(image, u, v, "bilinear"))


@lru_cache(maxsize=8)
def _erp_face_lookup(width: int, height: int, face_size: int):
    rays = erp_rays(width, height)
    dots = rays @ FACE_FRAMES[:, 0].T
    idx = np.argmax(dots, axis=-1)
    frames = FACE_FRAMES[idx]
    p = rays / np.take_along_axis(dots, idx[..., None], axis=-1)
    s = np.einsum("hwk,hwk->hw", p, frames[..., 1, :])
    t = np.einsum("hwk,hwk->hw", p, frames[..., 2, :])
    x = np.clip((s + 1.0) * face_size / 2.0 - 0.5, 0.0, face_size - 1.0)
    y = np.clip((t + 1.0) * face_size / 2.0 - 0.5, 0.0, face_size - 1.0)
    for arr in (idx, x, y):
        arr.flags.writeable = False
    return idx, x, y


def face_index_map(width: int, height: int) -> np.ndarray:
    """Index (into :data:`FACE_NAMES`) of the face each ERP pixel reads from."""
    return _erp_face_lookup(int(width), int(height), 2)[0]


def seam_mask(width: int, height: int, band: int = 2) -> np.ndarray:
    """True for ERP pixels within ``band`` pixels of a face boundary."""
    idx = face_index_map(width, height)
    size = 2 * band + 1
    mode = ("nearest", "wrap")
    return ndimage.maximum_filter(idx, size=size, mode=mode) != ndimage.minimum_filter(idx, size=size, mode=mode)


def cubemap_to_erp(faces: CubeFaceSet, width: int, height: int) -> np.ndarray:
    """Assemble an ERP image by bilinear lookup in the max-dot-product face."""
    if not isinstance(faces, CubeFaceSet):
        faces = CubeFaceSet(faces)
    data = faces.faces
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float64)
    n = faces.face_size
    idx, x, y = _erp_face_lookup(int(width), int(height), n)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, n - 1)
    y1 = np.minimum(y0 + 1, n - 1)
    if data.ndim == 4:
        fx = fx[..., None]
        fy = fy[..., None]
    top = _lerp(data[idx, y0, x0], data[idx, y0, x1], fx)
    bottom = _lerp(data[idx, y1, x0], data[idx, y1, x1], fx)
    return _lerp(top, bottom, fy)


def face_planar_to_ray_depth(face_depth, mode: str = "planar") -> np.ndarray:
    """Convert distance-along-axis to ray length by the pixel's secant factor.

    NaN (invalid) stays NaN; negative depth raises.
    """
    face_depth = np.asarray(face_depth, dtype=np.float64)
    if face_depth.ndim != 2 or face_depth.shape[0] != face_depth.shape[1]:
        raise ValueError(f"face depth must be a square grid, got {face_depth.shape}")
    if np.any(face_depth < 0):
        raise ValueError("negative depth in face")
    if mode == "ray":
        return face_depth
    if mode != "planar":
        raise ValueError(f"mode must be planar or ray, got {mode!r}")
    return face_depth * face_rays(face_depth.shape[0])[1][0]


def reproject_cubemap_depth(face_depths, width: int, height: int, mode: str = "planar") -> np.ndarray:
    """Re-project six per-face depth maps to one ERP ray-depth map.

    Any bilinear sample touching an invalid face pixel is invalid (NaN).
    """
    if not isinstance(face_depths, CubeFaceSet):
        face_depths = CubeFaceSet(face_depths)
    if face_depths.faces.ndim != 3:
        raise ValueError("depth faces must be single-channel")
    ray = np.stack([as_depth(face_planar_to_ray_depth(f, mode)) for f in face_depths.faces])
    return cubemap_to_erp(CubeFaceSet(ray), width, height)
