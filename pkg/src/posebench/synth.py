"""Analytic synthetic scenes with closed-form depth, used as ground-truth oracles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import EulerAngles, erp_rays, euler_to_rotation
from .landmarks import CameraPose, Dataset, ImageRecord, Landmark, project_landmark

# +X, -X, +Y, -Y, +Z, -Z walls
DEFAULT_WALL_ALBEDO = (
    (0.85, 0.20, 0.20),
    (0.20, 0.70, 0.25),
    (0.20, 0.30, 0.85),
    (0.90, 0.80, 0.20),
    (0.75, 0.30, 0.80),
    (0.25, 0.80, 0.80),
)


@dataclass(frozen=True)
class BoxRoomScene:
    """Axis-aligned box ``[-a, a] x [-b, b] x [-c, c]`` seen from inside."""

    half_extents: tuple = (4.0, 3.0, 1.5)
    camera: CameraPose = CameraPose()
    wall_albedo: tuple = DEFAULT_WALL_ALBEDO

    def __post_init__(self):
        ext = tuple(float(e) for e in self.half_extents)
        if len(ext) != 3 or min(ext) <= 0:
            raise ValueError(f"half extents must be 3 positive numbers, got {self.half_extents}")
        object.__setattr__(self, "half_extents", ext)
        if any(abs(p) >= e for p, e in zip(self.camera.position, ext)):
            raise ValueError("camera must lie strictly inside the box")
        if len(self.wall_albedo) != 6 or len(set(map(tuple, self.wall_albedo))) != 6:
            raise ValueError("wall_albedo needs 6 distinct colours")


@dataclass(frozen=True)
class SphereShellScene:
    radius: float = 2.0
    camera: CameraPose = field(default_factory=CameraPose)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


def _world_dirs(scene, directions, orientation):
    orientation = scene.camera.orientation if orientation is None else orientation
    rot = euler_to_rotation(orientation)
    return np.asarray(directions, dtype=np.float64) @ rot.T


def _box_hits(scene: BoxRoomScene, world: np.ndarray):
    ext = np.asarray(scene.half_extents)
    cam = np.asarray(scene.camera.position)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.where(world > 0, ext, -ext)
        t = np.where(world != 0, (bound - cam) / world, np.inf)
    axis = np.argmin(t, axis=-1)
    depth = np.take_along_axis(t, axis[..., None], axis=-1)[..., 0]
    sign = np.take_along_axis(world, axis[..., None], axis=-1)[..., 0] < 0
    return depth, 2 * axis + sign


def analytic_depth(scene, directions, orientation: EulerAngles | None = None):
    """Ray length from the camera to the scene along camera-frame unit ``directions``.

    ``orientation`` overrides the scene camera's orientation (position is kept).
    """
    if isinstance(scene, SphereShellScene):
        d = np.asarray(directions, dtype=np.float64)
        out = np.full(d.shape[:-1], float(scene.radius))
        return float(out) if out.ndim == 0 else out
    depth, _ = _box_hits(scene, _world_dirs(scene, directions, orientation))
    return float(depth) if np.ndim(depth) == 0 else depth


def render_erp(scene, width: int, height: int, channels: str = "depth",
               orientation: EulerAngles | None = None):
    """Render depth (``H x W``), RGB (``H x W x 3``) or both as ``(depth, rgb)``."""
    if channels not in ("depth", "rgb", "both"):
        raise ValueError(f"channels must be depth, rgb or both, got {channels!r}")
    rays = erp_rays(width, height)
    if isinstance(scene, SphereShellScene):
        depth = np.full((height, width), float(scene.radius))
        rgb = np.full((height, width, 3), 0.5)
    else:
        depth, wall = _box_hits(scene, _world_dirs(scene, rays, orientation))
        rgb = np.asarray(scene.wall_albedo, dtype=np.float64)[wall]
    if channels == "depth":
        return depth
    if channels == "rgb":
        return rgb
    return depth, rgb


def render_face_depths(scene, face_size: int, mode: str = "planar",
                       orientation: EulerAngles | None = None) -> np.ndarray:
    """Analytic per-face depth, shape ``(6, N, N)``; planar mode divides out the secant."""
    from .cubemap import face_rays

    dirs, secant = face_rays(face_size)
    unit = dirs / secant[..., None]
    depth = analytic_depth(scene, unit, orientation)
    if mode == "planar":
        return depth / secant
    if mode == "ray":
        return depth
    raise ValueError(f"mode must be planar or ray, got {mode!r}")


def place_synthetic_landmarks(scene: BoxRoomScene, count: int = 37, seed: int = 0) -> list:
    """Seeded points uniformly distributed over the wall area of a box room."""
    if count < 2:
        raise ValueError("need at least 2 landmarks")
    a, b, c = scene.half_extents
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    rng = np.random.default_rng(seed)
    walls = rng.choice(6, size=count, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(count, 2))
    ext = np.array([a, b, c])
    out = []
    for i, (wall, (s, t)) in enumerate(zip(walls, uv)):
        axis, negative = divmod(int(wall), 2)
        others = [k for k in range(3) if k != axis]
        xyz = np.zeros(3)
        xyz[axis] = -ext[axis] if negative else ext[axis]
        xyz[others[0]] = s * ext[others[0]]
        xyz[others[1]] = t * ext[others[1]]
        out.append(Landmark(id=f"L{i:02d}", world_xyz=tuple(xyz)))
    return out


def synthetic_dataset(scene: BoxRoomScene, landmarks: list, width: int, height: int,
                      image_id: str = "synth", path: str = "rgb.png") -> Dataset:
    """Single-image dataset whose annotations are exact projections under the scene camera."""
    annotations = {lm.id: project_landmark(lm, scene.camera, width, height) for lm in landmarks}
    fresh = [Landmark(lm.id, lm.world_xyz) for lm in landmarks]
    image = ImageRecord(id=image_id, path=path, pose=scene.camera, annotations=annotations,
                        width=width, height=height)
    return Dataset(landmarks=fresh, images=[image])


def correlated_noise(shape, sigma: float, seed: int, corr_px: float = 2.0) -> np.ndarray:
    """Zero-mean Gaussian field with standard deviation ``sigma`` and a short
    spatial correlation (Gaussian kernel of ``corr_px`` pixels, wrapped horizontally)."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(shape)
    if corr_px > 0:
        white = ndimage.gaussian_filter(white, corr_px, mode=("nearest", "wrap"))
    white -= white.mean()
    return white * (sigma / white.std())


def psnr(reference: np.ndarray, test: np.ndarray, mask: np.ndarray | None = None,
         peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; ``peak`` defaults to the reference's value range."""
    ref = np.asarray(reference, dtype=np.float64)
    tst = np.asarray(test, dtype=np.float64)
    if mask is not None:
        ref = ref[mask]
        tst = tst[mask]
    if peak is None:
        peak = float(ref.max() - ref.min())
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


def pole_mask(height: int, width: int, fraction: float = 0.1) -> np.ndarray:
    """True away from the top and bottom ``fraction`` of rows."""
    band = int(round(height * fraction))
    mask = np.zeros((height, width), dtype=bool)
    mask[band:height - band] = True
    return mask
