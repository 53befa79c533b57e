"""Run configuration, embedded verbatim in every output's metadata."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .calibration import DisparityParams, ErrorMetric


@dataclass
class RunConfig:
    metric: str = "rmse"
    lambda_policy: str = "aligned"  # aligned | refit | fixed
    lambda_value: float | None = None
    split_seed: int = 0
    split_fraction: float = 0.5
    split_scope: str = "per-image"  # per-image | global
    keep_yaw: bool = False
    interpolation: str = "bilinear"
    face_size: int | None = None
    depth_mode: str = "planar"
    lowess_frac: float = 0.3
    lowess_iterations: int = 2
    disparity: dict = field(default_factory=dict)  # model id -> DisparityParams fields

    def __post_init__(self):
        ErrorMetric(self.metric)
        if self.lambda_policy not in ("aligned", "refit", "fixed"):
            raise ValueError(f"lambda_policy must be aligned, refit or fixed, got {self.lambda_policy!r}")
        if self.lambda_policy == "fixed" and self.lambda_value is None:
            raise ValueError("lambda_policy 'fixed' needs lambda_value")
        if self.split_scope not in ("per-image", "global"):
            raise ValueError(f"split_scope must be per-image or global, got {self.split_scope!r}")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.depth_mode not in ("planar", "ray"):
            raise ValueError(f"depth_mode must be planar or ray, got {self.depth_mode!r}")
        for params in self.disparity.values():
            DisparityParams(**params)

    def disparity_params(self, model_id: str) -> DisparityParams:
        return DisparityParams(**self.disparity.get(model_id, {}))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
