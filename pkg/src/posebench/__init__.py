"""Pose-perturbation benchmark harness for monocular depth on equirectangular images."""

__version__ = "0.1.0"

from .calibration import (
    CalibrationResult,
    DisparityParams,
    ErrorMetric,
    average_image_errors,
    depth_error,
    disparity_to_depth,
    fit_scale,
    sample_depth_at_pixel,
)
from .cubemap import CubeFaceSet, cubemap_to_erp, erp_to_cubemap, face_planar_to_ray_depth, reproject_cubemap_depth
from .geometry import (
    EulerAngles,
    euler_to_rotation,
    gravity_align,
    pixel_to_ray,
    ray_to_pixel,
    rotate_erp,
    simulate_pose,
)
from .landmarks import (
    CameraPose,
    Dataset,
    DeformationClass,
    ImageRecord,
    Landmark,
    LandmarkSplit,
    classify_pose,
    gt_depth,
    project_landmark,
    split_landmarks,
    transform_pixel_under_rotation,
)
from .lowess import LowessConfig, lowess
from .sweep import (
    HIGH_SPEC,
    SMALL_SPEC,
    ErrorRecord,
    ImageTruth,
    SweepSpec,
    aggregate_by_class,
    emit_perturbed_set,
    evaluate_image,
    generate_sweep,
    heatmap_grid,
    score_sweep,
)
from .synth import BoxRoomScene, SphereShellScene, analytic_depth, place_synthetic_landmarks, render_erp
