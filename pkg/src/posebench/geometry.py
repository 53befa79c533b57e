"""Equirectangular (ERP) geometry: pixel/ray mapping, Euler rotations and
whole-image rotation by backward warping.

Conventions (pinned, every other module relies on them):

- Longitude ``theta = 2*pi*u/W - pi`` runs left to right over ``[-pi, pi)``.
- Latitude ``phi = pi/2 - pi*v/H`` runs top (north, +Z) to bottom (south, -Z).
- Ray for (theta, phi) is ``(cos phi cos theta, cos phi sin theta, sin phi)``.
- ``(u, v)`` are continuous coordinates; pixel index ``i`` is centred at ``i + 0.5``.
- Euler angles are degrees, composed intrinsically as ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``.

Images are plain numpy arrays of shape ``(H, W)`` or ``(H, W, C)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

INTERPOLATIONS = ("bilinear", "nearest")


@dataclass(frozen=True)
class EulerAngles:
    """Camera orientation in degrees (yaw about Z, pitch about Y, roll about X)."""

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def as_matrix(self) -> np.ndarray:
        return euler_to_rotation(self)


def check_erp(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim not in (2, 3):
        raise ValueError(f"ERP image must be 2-D or 3-D, got shape {image.shape}")
    if image.ndim == 3 and image.shape[2] not in (1, 3):
        raise ValueError(f"ERP image must have 1 or 3 channels, got {image.shape[2]}")
    if image.shape[1] < 2 or image.shape[0] < 1:
        raise ValueError(f"ERP image too small: {image.shape}")
    return image


def pixel_to_ray(u, v, width: int, height: int) -> np.ndarray:
    """Map continuous ERP coordinates to unit rays.

    ``u`` wraps modulo ``width`` and ``v`` is clamped to ``[0, height]``.
    Scalars give a ``(3,)`` vector, arrays give ``(..., 3)``.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    u = np.mod(np.asarray(u, dtype=np.float64), width)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, height)
    theta = 2.0 * np.pi * (u / width) - np.pi
    phi = np.pi / 2.0 - np.pi * (v / height)
    cos_phi = np.cos(phi)
    return np.stack([cos_phi * np.cos(theta), cos_phi * np.sin(theta), np.sin(phi)], axis=-1)


def ray_to_pixel(direction, width: int, height: int) -> tuple:
    """Inverse of :func:`pixel_to_ray`; returns continuous ``(u, v)``.

    At the poles longitude is undefined and ``u = width / 2`` is returned.
    Raises ``ValueError("degenerate direction")`` for zero-length input.
    """
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    horiz = np.hypot(x, y)
    if np.any((horiz == 0.0) & (z == 0.0)):
        raise ValueError("degenerate direction")
    theta = np.where(horiz > 0.0, np.arctan2(y, x), 0.0)
    # atan2 of the horizontal/vertical split is better conditioned than asin near the poles
    phi = np.arctan2(z, horiz)
    u = width * (theta + np.pi) / (2.0 * np.pi)
    v = height * (np.pi / 2.0 - phi) / np.pi
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(angles) -> np.ndarray:
    """Rotation matrix ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` (angles in degrees).

    Accepts an :class:`EulerAngles` or a ``(yaw, pitch, roll)`` sequence.
    """
    if isinstance(angles, EulerAngles):
        yaw, pitch, roll = angles.yaw, angles.pitch, angles.roll
    else:
        yaw, pitch, roll = angles
    if not all(math.isfinite(a) for a in (yaw, pitch, roll)):
        raise ValueError(f"non-finite Euler angles: {(yaw, pitch, roll)}")
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def pose_rotation(pitch: float, roll: float) -> np.ndarray:
    """Yaw-free perturbation ``Ry(pitch) @ Rx(roll)`` used for simulated tilts."""
    return euler_to_rotation((0.0, pitch, roll))


def alignment_rotation(orientation: EulerAngles, keep_yaw: bool = False) -> np.ndarray:
    """Warp rotation that undoes a camera orientation (optionally keeping heading)."""
    if keep_yaw:
        return pose_rotation(orientation.pitch, orientation.roll).T
    return euler_to_rotation(orientation).T


@lru_cache(maxsize=8)
def _pixel_rays(width: int, height: int) -> np.ndarray:
    u = np.arange(width, dtype=np.float64) + 0.5
    v = np.arange(height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    rays = pixel_to_ray(uu, vv, width, height)
    rays.flags.writeable = False
    return rays


def erp_rays(width: int, height: int) -> np.ndarray:
    """Unit rays through every pixel centre, shape ``(height, width, 3)``."""
    return _pixel_rays(int(width), int(height))


def _lerp(a, b, t):
    # exact on constant input, never leaves [min(a, b), max(a, b)]
    out = a + t * (b - a)
    return np.minimum(np.maximum(out, np.minimum(a, b)), np.maximum(a, b))


def sample_erp(image: np.ndarray, u, v, interpolation: str = "bilinear") -> np.ndarray:
    """Sample an ERP image at continuous coordinates.

    Horizontal wrap, vertical clamp. NaN pixels propagate to any bilinear
    sample whose 2x2 neighbourhood contains them.
    """
    image = check_erp(image)
    height, width = image.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if interpolation == "nearest":
        cols = np.mod(np.floor(u).astype(np.int64), width)
        rows = np.clip(np.floor(v).astype(np.int64), 0, height - 1)
        return image[rows, cols]
    if interpolation != "bilinear":
        raise ValueError(f"unknown interpolation {interpolation!r}; expected one of {INTERPOLATIONS}")

    if not np.issubdtype(image.dtype, np.floating):
        image = image.astype(np.float64)
    x = u - 0.5
    y = v - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    c0 = np.mod(x0.astype(np.int64), width)
    c1 = np.mod(c0 + 1, width)
    r0 = y0.astype(np.int64)
    r1 = np.clip(r0 + 1, 0, height - 1)
    r0 = np.clip(r0, 0, height - 1)
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = _lerp(image[r0, c0], image[r0, c1], fx)
    bottom = _lerp(image[r1, c0], image[r1, c1], fx)
    return _lerp(top, bottom, fy)


def rotate_erp(image: np.ndarray, rotation: np.ndarray, interpolation: str = "bilinear") -> np.ndarray:
    """Rotate a full ERP image by backward warping.

    ``output(p) = input(ray_to_pixel(R @ pixel_to_ray(p)))``. Content found at
    input direction ``d`` ends up at ``R.T @ d`` in the output.
    """
    image = check_erp(image)
    height, width = image.shape[:2]
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
    rays = erp_rays(width, height) @ rotation.T
    u, v = ray_to_pixel(rays, width, height)
    out = sample_erp(image, u, v, interpolation)
    return out.astype(image.dtype, copy=False) if np.issubdtype(image.dtype, np.floating) else out


def gravity_align(image: np.ndarray, pose, keep_yaw: bool = False, interpolation: str = "bilinear") -> np.ndarray:
    """Rotate an image captured under ``pose`` back to zero pitch and roll.

    ``pose`` is anything with an ``orientation`` :class:`EulerAngles`
    attribute (e.g. :class:`posebench.landmarks.CameraPose`) or an
    :class:`EulerAngles` itself. With ``keep_yaw`` the camera heading is kept.
    """
    orientation = pose if isinstance(pose, EulerAngles) else pose.orientation
    return rotate_erp(image, alignment_rotation(orientation, keep_yaw), interpolation)


def simulate_pose(image: np.ndarray, pitch: float, roll: float, interpolation: str = "bilinear") -> np.ndarray:
    """Simulate a camera tilted by ``pitch``/``roll`` degrees from a gravity-aligned image.

    Yaw is deliberately not exposed: on an ERP image it is only a horizontal shift.
    """
    return rotate_erp(image, pose_rotation(pitch, roll), interpolation)
