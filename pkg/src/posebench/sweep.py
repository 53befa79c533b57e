"""Pose sweeps: grid generation, perturbed-image emission, landmark scoring of
external predictions, heatmap grids and per-deformation-class aggregation."""

from __future__ import annotations

import csv
import io
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .calibration import (
    CalibrationResult,
    ErrorMetric,
    as_depth,
    average_image_errors,
    depth_error,
    fit_scale,
    sample_depth_at_pixel,
)
from .formats import FORMAT_SUFFIX, atomic_write_text, read_image, write_image, write_manifest
from .geometry import pose_rotation, simulate_pose
from .landmarks import (
    DEFORMATION_ORDER,
    Dataset,
    DeformationClass,
    LandmarkSplit,
    aligned_landmark_pixels,
    classify_pose,
    gt_depth,
    split_landmarks,
    transform_pixel_under_rotation,
)


@dataclass(frozen=True)
class SweepSpec:
    """Inclusive pitch/roll ranges in degrees sampled every ``step`` degrees."""

    pitch_min: float
    pitch_max: float
    roll_min: float
    roll_max: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"sweep step must be positive, got {self.step}")
        for lo, hi, name in ((self.pitch_min, self.pitch_max, "pitch"), (self.roll_min, self.roll_max, "roll")):
            if lo > hi:
                raise ValueError(f"{name} range is empty ({lo} > {hi})")
            span = (hi - lo) / self.step
            if abs(span - round(span)) > 1e-9:
                raise ValueError(f"{name} span {hi - lo} is not a whole number of {self.step} steps")

    def pitches(self) -> list:
        return _axis_values(self.pitch_min, self.pitch_max, self.step)

    def rolls(self) -> list:
        return _axis_values(self.roll_min, self.roll_max, self.step)


HIGH_SPEC = SweepSpec(-40.0, 40.0, -40.0, 40.0, 10.0)
SMALL_SPEC = SweepSpec(-2.0, 2.0, -2.0, 2.0, 0.5)
NAMED_SPECS = {"high": HIGH_SPEC, "small": SMALL_SPEC}


def _axis_values(lo: float, hi: float, step: float) -> list:
    n = round((hi - lo) / step)
    return [float(lo + i * step) + 0.0 for i in range(n + 1)]


def generate_sweep(spec: SweepSpec) -> list:
    """All ``(pitch, roll)`` pairs, pitch-major, both ascending."""
    return [(p, r) for p in spec.pitches() for r in spec.rolls()]


# --- file naming -------------------------------------------------------------

_TAG_RE = re.compile(r"^(?P<image>.+)__p(?P<p>[+-]\d+\.\d)_r(?P<r>[+-]\d+\.\d)(?P<ext>\.[A-Za-z0-9]+)?$")
PREDICTION_SUFFIXES = (".pfm", ".png16", ".png")


def _fmt_angle(angle: float) -> str:
    angle = float(angle) + 0.0
    if round(angle, 1) != angle:
        raise ValueError(f"angle {angle} is not representable with one decimal in file names")
    return f"{angle:+05.1f}"


def angle_tag(pitch: float, roll: float) -> str:
    return f"p{_fmt_angle(pitch)}_r{_fmt_angle(roll)}"


def prediction_filename(image_id: str, pitch: float, roll: float, suffix: str = ".pfm") -> str:
    return f"{image_id}__{angle_tag(pitch, roll)}{suffix}"


def parse_prediction_filename(name: str) -> tuple:
    """``(image_id, pitch, roll)`` encoded in a sweep file name."""
    m = _TAG_RE.match(Path(name).name)
    if m is None:
        raise ValueError(f"not a sweep file name: {name!r}")
    return m.group("image"), float(m.group("p")) + 0.0, float(m.group("r")) + 0.0


def manifest_filename(image_id: str) -> str:
    return f"{image_id}__manifest.json"


def emit_perturbed_set(image: np.ndarray, image_id: str, spec: SweepSpec, out_dir, fmt: str = "pfm",
                       interpolation: str = "bilinear", overwrite: bool = False) -> list:
    """Write ``simulate_pose(image, p, r)`` for every grid point plus a JSON manifest.

    Returns the manifest entries ``{"file", "pitch", "roll"}``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    suffix = FORMAT_SUFFIX[fmt]
    entries = [{"file": prediction_filename(image_id, p, r, suffix), "pitch": p, "roll": r}
               for p, r in generate_sweep(spec)]
    if not overwrite:
        clash = [e["file"] for e in entries if (out_dir / e["file"]).exists()]
        if (out_dir / manifest_filename(image_id)).exists():
            clash.append(manifest_filename(image_id))
        if clash:
            raise FileExistsError(f"{len(clash)} output file(s) already exist in {out_dir}, e.g. {clash[0]}")
    for e in entries:
        write_image(out_dir / e["file"], simulate_pose(image, e["pitch"], e["roll"], interpolation), fmt)
    write_manifest(out_dir / manifest_filename(image_id), entries)
    return entries


# --- predictions -------------------------------------------------------------

def find_prediction(pred_dir, image_id: str, pitch: float, roll: float) -> Path:
    pred_dir = Path(pred_dir)
    for suffix in PREDICTION_SUFFIXES:
        path = pred_dir / prediction_filename(image_id, pitch, roll, suffix)
        if path.is_file():
            return path
    raise FileNotFoundError(
        f"missing prediction for grid point pitch={pitch:+.1f} roll={roll:+.1f}: "
        f"no {prediction_filename(image_id, pitch, roll, '.pfm|.png16|.png')} in {pred_dir}")


def load_depth(path) -> np.ndarray:
    arr, fmt = read_image(path)
    if fmt == "png8":
        raise ValueError(f"{path}: 8-bit image is not a depth map")
    if arr.ndim != 2:
        raise ValueError(f"{path}: depth map must be single channel")
    return as_depth(arr)


class DirectoryPredictions:
    """Callable ``(pitch, roll) -> depth`` reading ``<image_id>__p.._r..`` files."""

    def __init__(self, pred_dir, image_id: str):
        self.pred_dir = Path(pred_dir)
        self.image_id = image_id

    def path(self, pitch: float, roll: float) -> Path:
        return find_prediction(self.pred_dir, self.image_id, pitch, roll)

    def check(self, grid) -> None:
        for p, r in grid:
            self.path(p, r)

    def __call__(self, pitch: float, roll: float) -> np.ndarray:
        return load_depth(self.path(pitch, roll))


# --- landmark ground truth and scoring ---------------------------------------

@dataclass(frozen=True)
class ErrorRecord:
    model_id: str
    image_id: str
    pitch: float
    roll: float
    metric: str
    value: float
    n_landmarks: int
    lambda_used: float

    @property
    def valid(self) -> bool:
        return self.n_landmarks > 0 and math.isfinite(self.value)

    @property
    def sort_key(self) -> tuple:
        return (self.model_id, self.image_id, self.pitch, self.roll, self.metric)


@dataclass(frozen=True)
class LandmarkResidual:
    model_id: str
    image_id: str
    pitch: float
    roll: float
    landmark_id: str
    gt_depth: float
    pred_depth: float
    lambda_used: float
    fallback: bool

    @property
    def error(self) -> float:
        return self.lambda_used * self.pred_depth - self.gt_depth


def make_split(dataset: Dataset, image_id: str, seed: int = 0, fraction: float = 0.5,
               scope: str = "per-image") -> LandmarkSplit:
    """Per-image split of the visible landmarks, or a dataset-wide split restricted to them."""
    visible = dataset.visible_ids(image_id)
    if scope == "per-image":
        return split_landmarks(visible, seed, fraction)
    if scope != "global":
        raise ValueError(f"split scope must be per-image or global, got {scope!r}")
    full = split_landmarks([lm.id for lm in dataset.landmarks], seed, fraction)
    seen = set(visible)
    train = tuple(i for i in full.train_ids if i in seen)
    test = tuple(i for i in full.test_ids if i in seen)
    if not train or not test:
        raise ValueError(f"global split leaves image {image_id!r} without train or test landmarks")
    return LandmarkSplit(train, test, full.seed, full.train_fraction)


@dataclass
class ImageTruth:
    """Ground truth for scoring one image: landmark distances, gravity-aligned
    landmark pixels (computed per resolution) and the train/test split."""

    dataset: Dataset
    image_id: str
    split: LandmarkSplit
    keep_yaw: bool = False
    gt: dict = field(init=False)
    _pixels: dict = field(init=False, default_factory=dict)

    def __post_init__(self):
        pose = self.dataset.image(self.image_id).pose
        self.gt = {lid: gt_depth(self.dataset.landmark(lid), pose) for lid in self.dataset.visible_ids(self.image_id)}

    @classmethod
    def build(cls, dataset: Dataset, image_id: str, seed: int = 0, fraction: float = 0.5,
              scope: str = "per-image", keep_yaw: bool = False) -> "ImageTruth":
        return cls(dataset, image_id, make_split(dataset, image_id, seed, fraction, scope), keep_yaw)

    def pixels(self, width: int, height: int) -> dict:
        key = (int(width), int(height))
        if key not in self._pixels:
            self._pixels[key] = aligned_landmark_pixels(self.dataset, self.image_id, width, height, self.keep_yaw)
        return self._pixels[key]


def sample_landmarks(depth: np.ndarray, truth: ImageTruth, ids, pitch: float = 0.0, roll: float = 0.0) -> list:
    """``(landmark_id, pred, gt, fallback)`` for every id whose prediction is valid."""
    height, width = depth.shape[:2]
    pixels = truth.pixels(width, height)
    rotation = pose_rotation(pitch, roll)
    out = []
    for lid in ids:
        u, v = transform_pixel_under_rotation(*pixels[lid], rotation, width, height)
        value, fallback = sample_depth_at_pixel(depth, u, v)
        if math.isfinite(value):
            out.append((lid, value, truth.gt[lid], fallback))
    return out


def calibrate_image(depth: np.ndarray, truth: ImageTruth, pitch: float = 0.0, roll: float = 0.0) -> CalibrationResult:
    """Fit the scale on the training landmarks of one prediction."""
    rows = sample_landmarks(depth, truth, truth.split.train_ids, pitch, roll)
    if not rows:
        raise ValueError(f"no valid training landmark in prediction for image {truth.image_id!r}")
    return fit_scale([r[1] for r in rows], [r[2] for r in rows])


def calibrate_pooled(items) -> CalibrationResult:
    """One scale over the training landmarks of several ``(depth, truth)`` pairs."""
    pred, gt = [], []
    for depth, truth in items:
        for _, p, g, _ in sample_landmarks(depth, truth, truth.split.train_ids):
            pred.append(p)
            gt.append(g)
    if not pred:
        raise ValueError("no valid training landmark in any image")
    return fit_scale(pred, gt)


def evaluate_image(depth: np.ndarray, truth: ImageTruth, lam: float, metric="rmse", model_id: str = "model",
                   pitch: float = 0.0, roll: float = 0.0, residuals: list | None = None) -> ErrorRecord:
    """Score one prediction on the test landmarks.

    ``(pitch, roll)`` is the simulated tilt of ``depth`` relative to the
    gravity-aligned image; landmark pixels are moved accordingly. Without any
    valid test landmark the record has ``n_landmarks == 0`` and NaN value.
    """
    metric = ErrorMetric(metric).value
    rows = sample_landmarks(depth, truth, truth.split.test_ids, pitch, roll)
    if residuals is not None:
        residuals.extend(LandmarkResidual(model_id, truth.image_id, pitch, roll, lid, g, p, lam, fb)
                         for lid, p, g, fb in rows)
    if not rows:
        return ErrorRecord(model_id, truth.image_id, pitch, roll, metric, math.nan, 0, lam)
    value = depth_error([r[1] for r in rows], [r[2] for r in rows], lam, metric)
    return ErrorRecord(model_id, truth.image_id, pitch, roll, metric, value, len(rows), lam)


def score_sweep(predictions, truth: ImageTruth, model_id: str = "model", spec: SweepSpec = HIGH_SPEC,
                metric="rmse", lambda_source="aligned", grid=None, residuals: list | None = None) -> list:
    """One :class:`ErrorRecord` per grid point, sorted by ``(pitch, roll)``.

    ``predictions`` is a directory (see :class:`DirectoryPredictions`) or a
    callable ``(pitch, roll) -> depth``. ``lambda_source`` is ``"aligned"``
    (fit once on the untilted prediction), ``"refit"`` (fit at every grid
    point) or a fixed number.
    """
    grid = generate_sweep(spec) if grid is None else [(float(p), float(r)) for p, r in grid]
    if isinstance(predictions, (str, os.PathLike)):
        predictions = DirectoryPredictions(predictions, truth.image_id)
    if isinstance(predictions, DirectoryPredictions):
        predictions.check(grid)

    if lambda_source == "aligned":
        fixed_lam = calibrate_image(predictions(0.0, 0.0), truth).lam
    elif lambda_source == "refit":
        fixed_lam = None
    else:
        fixed_lam = float(lambda_source)

    records = []
    collected = []
    for p, r in grid:
        depth = predictions(p, r)
        lam = fixed_lam if fixed_lam is not None else calibrate_image(depth, truth, p, r).lam
        records.append(evaluate_image(depth, truth, lam, metric, model_id, p, r,
                                      collected if residuals is not None else None))
    if residuals is not None:
        residuals.extend(sorted(collected, key=lambda x: (x.pitch, x.roll, x.landmark_id)))
    return sorted(records, key=lambda rec: rec.sort_key)


# --- heatmaps ----------------------------------------------------------------

@dataclass
class Heatmap:
    """Error grid with pitch descending down the rows and roll ascending across columns."""

    pitches: tuple
    rolls: tuple
    values: np.ndarray
    model_id: str = ""
    image_id: str = ""
    metric: str = "rmse"

    def __eq__(self, other):
        return (isinstance(other, Heatmap) and self.pitches == other.pitches and self.rolls == other.rolls
                and np.array_equal(self.values, other.values, equal_nan=True)
                and (self.model_id, self.image_id, self.metric) == (other.model_id, other.image_id, other.metric))


def heatmap_grid(records) -> Heatmap:
    records = list(records)
    if not records:
        raise ValueError("no records for heatmap")
    keys = {(r.model_id, r.image_id, r.metric) for r in records}
    if len(keys) != 1:
        raise ValueError(f"heatmap needs records of one model/image/metric, got {sorted(keys)}")
    cells = {}
    for rec in records:
        key = (rec.pitch, rec.roll)
        if key in cells:
            raise ValueError(f"duplicate grid cell pitch={rec.pitch} roll={rec.roll}")
        cells[key] = rec.value if rec.valid else math.nan
    pitches = tuple(sorted({k[0] for k in cells}, reverse=True))
    rolls = tuple(sorted({k[1] for k in cells}))
    missing = [(p, r) for p in pitches for r in rolls if (p, r) not in cells]
    if missing:
        raise ValueError(f"grid is not rectangular: {len(missing)} missing cell(s), e.g. {missing[0]}")
    values = np.array([[cells[(p, r)] for r in rolls] for p in pitches], dtype=np.float64)
    model_id, image_id, metric = keys.pop()
    return Heatmap(pitches, rolls, values, model_id, image_id, metric)


def heatmap_records(heatmap: Heatmap, n_landmarks: int = 1, lambda_used: float = 1.0) -> list:
    """Flatten a heatmap back into records (inverse of :func:`heatmap_grid`)."""
    out = []
    for i, p in enumerate(heatmap.pitches):
        for j, r in enumerate(heatmap.rolls):
            v = float(heatmap.values[i, j])
            n = n_landmarks if math.isfinite(v) else 0
            out.append(ErrorRecord(heatmap.model_id, heatmap.image_id, p, r, heatmap.metric, v, n, lambda_used))
    return out


# --- aggregation -------------------------------------------------------------

@dataclass(frozen=True)
class ClassRow:
    deformation: DeformationClass
    mean_error: float | None
    n_records: int
    lambda_used: float | None


def aggregate_by_class(records, classifier: Callable = classify_pose) -> list:
    """Mean error per deformation class in the order aligned, small, moderate, high.

    Invalid records are skipped; empty classes have ``mean_error`` None.
    """
    groups = {c: [] for c in DEFORMATION_ORDER}
    for rec in records:
        if rec.valid:
            groups[DeformationClass(classifier(rec.pitch, rec.roll))].append(rec)
    rows = []
    for cls in DEFORMATION_ORDER:
        recs = groups[cls]
        if recs:
            rows.append(ClassRow(cls, average_image_errors(r.value for r in recs), len(recs),
                                 average_image_errors(r.lambda_used for r in recs)))
        else:
            rows.append(ClassRow(cls, None, 0, None))
    return rows


TABLE_COLUMNS = ("model_id", "λ", "ε(G. Aligned)", "ε(Small Def.)", "ε(High Def.)")
_TABLE_CLASSES = {"ε(G. Aligned)": DeformationClass.ALIGNED, "ε(Small Def.)": DeformationClass.SMALL,
                  "ε(High Def.)": DeformationClass.HIGH}


def deformation_table(records, classifier: Callable = classify_pose) -> list:
    """One row per model with the λ and per-class error columns; "n/a" where empty."""
    by_model = {}
    for rec in records:
        by_model.setdefault(rec.model_id, []).append(rec)
    rows = []
    for model_id in sorted(by_model):
        class_rows = {row.deformation: row for row in aggregate_by_class(by_model[model_id], classifier)}
        valid = [r.lambda_used for r in by_model[model_id] if r.valid]
        row = {"model_id": model_id, "λ": average_image_errors(valid) if valid else "n/a"}
        for col, cls in _TABLE_CLASSES.items():
            mean = class_rows[cls].mean_error
            row[col] = "n/a" if mean is None else mean
        rows.append(row)
    return rows


# --- CSV / SVG ---------------------------------------------------------------

ERROR_CSV_HEADER = ("model_id", "image_id", "pitch_deg", "roll_deg", "metric", "value", "n_landmarks", "lambda")
RESIDUAL_CSV_HEADER = ("model_id", "image_id", "pitch_deg", "roll_deg", "landmark_id", "gt_depth", "pred_depth",
                       "lambda", "error", "abs_error", "fallback")


def _num(x) -> str:
    return x if isinstance(x, str) else repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_error_csv(path, records) -> Path:
    rows = [(r.model_id, r.image_id, _num(r.pitch), _num(r.roll), r.metric, _num(r.value), r.n_landmarks,
             _num(r.lambda_used)) for r in sorted(records, key=lambda rec: rec.sort_key)]
    return atomic_write_text(path, _csv_text(ERROR_CSV_HEADER, rows))


def read_error_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ERROR_CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ErrorRecord(row["model_id"], row["image_id"], float(row["pitch_deg"]), float(row["roll_deg"]),
                            row["metric"], float(row["value"]), int(row["n_landmarks"]), float(row["lambda"]))
                for row in reader]


def write_residual_csv(path, residuals) -> Path:
    rows = [(r.model_id, r.image_id, _num(r.pitch), _num(r.roll), r.landmark_id, _num(r.gt_depth),
             _num(r.pred_depth), _num(r.lambda_used), _num(r.error), _num(abs(r.error)), int(r.fallback))
            for r in residuals]
    return atomic_write_text(path, _csv_text(RESIDUAL_CSV_HEADER, rows))


def read_residual_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESIDUAL_CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [LandmarkResidual(row["model_id"], row["image_id"], float(row["pitch_deg"]), float(row["roll_deg"]),
                                 row["landmark_id"], float(row["gt_depth"]), float(row["pred_depth"]),
                                 float(row["lambda"]), bool(int(row["fallback"])))
                for row in reader]


def write_heatmap_csv(path, heatmap: Heatmap) -> Path:
    rows = [[_num(p)] + [_num(v) for v in heatmap.values[i]] for i, p in enumerate(heatmap.pitches)]
    return atomic_write_text(path, _csv_text(["pitch\\roll"] + [_num(r) for r in heatmap.rolls], rows))


def read_heatmap_csv(path, model_id: str = "", image_id: str = "", metric: str = "rmse") -> Heatmap:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rolls = tuple(float(x) for x in rows[0][1:])
    pitches = tuple(float(r[0]) for r in rows[1:])
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)
    return Heatmap(pitches, rolls, values, model_id, image_id, metric)


def write_lowess_csv(path, x, fitted) -> Path:
    return atomic_write_text(path, _csv_text(("x", "fitted"), [(_num(a), _num(b)) for a, b in zip(x, fitted)]))


def write_class_csv(path, rows) -> Path:
    body = [(r.deformation.value, "n/a" if r.mean_error is None else _num(r.mean_error), r.n_records,
             "n/a" if r.lambda_used is None else _num(r.lambda_used)) for r in rows]
    return atomic_write_text(path, _csv_text(("class", "mean_error", "n_records", "lambda"), body))


def write_table_csv(path, rows) -> Path:
    body = [[row[c] if c == "model_id" else _num(row[c]) for c in TABLE_COLUMNS] for row in rows]
    return atomic_write_text(path, _csv_text(TABLE_COLUMNS, body))


def heatmap_svg(heatmap: Heatmap, cell: int = 40) -> str:
    """Heatmap as SVG; colour ramps linearly from blue (grid min) to red (grid max), NaN cells grey."""
    vals = heatmap.values
    finite = vals[np.isfinite(vals)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    n_rows, n_cols = vals.shape
    margin = 50
    w = margin + n_cols * cell
    h = margin + n_rows * cell
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-size="10">']
    for i, p in enumerate(heatmap.pitches):
        y = margin + i * cell
        parts.append(f'<text x="2" y="{y + cell // 2}">{p:g}</text>')
        for j in range(n_cols):
            x = margin + j * cell
            v = vals[i, j]
            if math.isfinite(v):
                t = (v - lo) / span
                colour = f"rgb({round(255 * t)},0,{round(255 * (1 - t))})"
            else:
                colour = "rgb(128,128,128)"
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{colour}"/>')
    for j, r in enumerate(heatmap.rolls):
        parts.append(f'<text x="{margin + j * cell + 2}" y="{margin - 6}">{r:g}</text>')
    parts.append(f'<text x="2" y="12">pitch\\roll [{heatmap.metric}] {lo:.4g}..{hi:.4g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
