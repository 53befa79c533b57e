"""Landmarks, camera poses and the ground truth derived from them."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import EulerAngles, alignment_rotation, euler_to_rotation, pixel_to_ray, ray_to_pixel


@dataclass(frozen=True)
class CameraPose:
    position: tuple = (0.0, 0.0, 0.0)
    orientation: EulerAngles = EulerAngles()

    def __post_init__(self):
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise ValueError(f"camera position must be 3 finite numbers, got {self.position}")
        object.__setattr__(self, "position", pos)
        o = self.orientation
        if not all(math.isfinite(a) for a in (o.yaw, o.pitch, o.roll)):
            raise ValueError(f"non-finite camera orientation {o}")

    @classmethod
    def from_degrees(cls, position, yaw=0.0, pitch=0.0, roll=0.0) -> "CameraPose":
        return cls(tuple(position), EulerAngles(float(yaw), float(pitch), float(roll)))

    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.orientation)


@dataclass
class Landmark:
    id: str
    world_xyz: tuple
    observations: dict = field(default_factory=dict)

    def __post_init__(self):
        xyz = tuple(float(c) for c in self.world_xyz)
        if len(xyz) != 3 or not all(math.isfinite(c) for c in xyz):
            raise ValueError(f"landmark {self.id!r}: coordinates must be 3 finite numbers")
        self.world_xyz = xyz


@dataclass(frozen=True)
class LandmarkSplit:
    train_ids: tuple
    test_ids: tuple
    seed: int
    train_fraction: float


class DeformationClass(str, enum.Enum):
    ALIGNED = "aligned"
    SMALL = "small"
    MODERATE = "moderate"
    HIGH = "high"


DEFORMATION_ORDER = (
    DeformationClass.ALIGNED,
    DeformationClass.SMALL,
    DeformationClass.MODERATE,
    DeformationClass.HIGH,
)

ALIGNED_TOL_DEG = 0.05
SMALL_MAX_DEG = 1.0
HIGH_MIN_DEG = 15.0


@dataclass
class ImageRecord:
    """One dataset image: file path, camera pose and manual pixel annotations.

    ``width``/``height`` give the resolution the annotations refer to; when
    unset they are assumed to match whatever depth map is being scored.
    """

    id: str
    path: str
    pose: CameraPose
    annotations: dict = field(default_factory=dict)
    width: int | None = None
    height: int | None = None


@dataclass
class Dataset:
    landmarks: list
    images: list

    def __post_init__(self):
        ids = [lm.id for lm in self.landmarks]
        if len(set(ids)) != len(ids):
            raise ValueError("landmark ids must be unique")
        image_ids = [im.id for im in self.images]
        if len(set(image_ids)) != len(image_ids):
            raise ValueError("image ids must be unique")
        known = set(ids)
        for im in self.images:
            missing = sorted(set(im.annotations) - known)
            if missing:
                raise ValueError(f"image {im.id!r} annotates unknown landmarks {missing}")
        by_id = {lm.id: lm for lm in self.landmarks}
        for im in self.images:
            for lid, uv in im.annotations.items():
                by_id[lid].observations[im.id] = tuple(uv)

    def landmark(self, landmark_id: str) -> Landmark:
        for lm in self.landmarks:
            if lm.id == landmark_id:
                return lm
        raise KeyError(landmark_id)

    def image(self, image_id: str) -> ImageRecord:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(f"unknown image id {image_id!r}")

    def visible_ids(self, image_id: str) -> list:
        """Annotated landmarks, or every landmark when the image has no annotations."""
        im = self.image(image_id)
        if im.annotations:
            return sorted(im.annotations)
        return sorted(lm.id for lm in self.landmarks)


def _offset(landmark, pose: CameraPose) -> np.ndarray:
    xyz = landmark.world_xyz if isinstance(landmark, Landmark) else landmark
    diff = np.asarray(xyz, dtype=np.float64) - np.asarray(pose.position, dtype=np.float64)
    if not np.any(diff):
        raise ValueError("landmark at camera center")
    return diff


def gt_depth(landmark, pose: CameraPose) -> float:
    """Euclidean landmark-to-camera distance in metres (orientation is irrelevant)."""
    return float(np.linalg.norm(_offset(landmark, pose)))


def project_landmark(landmark, pose: CameraPose, width: int, height: int) -> tuple:
    """Continuous ERP pixel where ``landmark`` appears for a camera at ``pose``."""
    diff = _offset(landmark, pose)
    cam_dir = pose.rotation().T @ (diff / np.linalg.norm(diff))
    return ray_to_pixel(cam_dir, width, height)


def transform_pixel_under_rotation(u, v, rotation, width: int, height: int) -> tuple:
    """Where content at input pixel ``(u, v)`` lands in ``rotate_erp(image, rotation)``.

    Transforming by ``R1`` and then by ``R2`` equals transforming by ``R1 @ R2``,
    mirroring ``rotate_erp(rotate_erp(I, R1), R2) == rotate_erp(I, R1 @ R2)``.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    if np.array_equal(rotation, np.eye(3)):
        return u, v
    ray = pixel_to_ray(u, v, width, height)
    return ray_to_pixel(ray @ rotation, width, height)


def aligned_landmark_pixels(dataset: Dataset, image_id: str, width: int, height: int,
                            keep_yaw: bool = False) -> dict:
    """Pixel of every visible landmark in the gravity-aligned version of an image.

    Annotations are rescaled to ``width x height`` and pushed through the same
    rotation :func:`posebench.geometry.gravity_align` applies. Landmarks
    without annotations are projected analytically.
    """
    im = dataset.image(image_id)
    rot = alignment_rotation(im.pose.orientation, keep_yaw)
    sx = width / im.width if im.width else 1.0
    sy = height / im.height if im.height else 1.0
    out = {}
    for lid in dataset.visible_ids(image_id):
        if lid in im.annotations:
            u, v = im.annotations[lid]
            out[lid] = transform_pixel_under_rotation(u * sx, v * sy, rot, width, height)
        else:
            yaw = im.pose.orientation.yaw if keep_yaw else 0.0
            aligned_pose = CameraPose(im.pose.position, EulerAngles(yaw, 0.0, 0.0))
            out[lid] = project_landmark(dataset.landmark(lid), aligned_pose, width, height)
    return out


def _shuffle_key(seed: int, landmark_id: str) -> str:
    return hashlib.sha256(f"{int(seed)}:{landmark_id}".encode("utf-8")).hexdigest()


def split_landmarks(visible_ids, seed: int = 0, train_fraction: float = 0.5) -> LandmarkSplit:
    """Deterministic train/test split of landmark ids.

    Ids are ordered by ``sha256(f"{seed}:{id}")`` and the first
    ``ceil(train_fraction * n)`` become training landmarks. The result does
    not depend on the order of ``visible_ids`` nor on the platform.
    """
    ids = sorted(set(visible_ids))
    if len(ids) < 2:
        raise ValueError("need at least 2 visible landmarks to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = math.ceil(train_fraction * len(ids) - 1e-9)
    if n_train < 1 or n_train >= len(ids):
        raise ValueError(f"split of {len(ids)} landmarks at {train_fraction} leaves an empty side")
    order = sorted(ids, key=lambda lid: (_shuffle_key(seed, lid), lid))
    return LandmarkSplit(
        train_ids=tuple(sorted(order[:n_train])),
        test_ids=tuple(sorted(order[n_train:])),
        seed=int(seed),
        train_fraction=float(train_fraction),
    )


def classify_pose(pitch: float, roll: float) -> DeformationClass:
    m = max(abs(pitch), abs(roll))
    if m < ALIGNED_TOL_DEG:
        return DeformationClass.ALIGNED
    if m <= SMALL_MAX_DEG:
        return DeformationClass.SMALL
    if m > HIGH_MIN_DEG:
        return DeformationClass.HIGH
    return DeformationClass.MODERATE
