"""File formats: PFM, 16-bit millimetre PNG depth, dataset JSON, sweep manifests
and run metadata. Every writer goes through :func:`atomic_write_bytes` so a
partially written file is never visible under its final name."""

from __future__ import annotations

import hashlib
import io
import json
import os
import re
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .geometry import EulerAngles
from .landmarks import CameraPose, Dataset, ImageRecord, Landmark

PNG16_SCALE = 1000.0
PNG16_MAX = 65535


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- PFM ---------------------------------------------------------------------

def encode_pfm(array) -> bytes:
    """Little-endian PFM bytes; rows are stored bottom-to-top."""
    arr = np.asarray(array)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        header = "Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    height, width = arr.shape[:2]
    body = np.ascontiguousarray(arr[::-1].astype("<f4")).tobytes()
    return f"{header}\n{width} {height}\n-1.0\n".encode("ascii") + body


def decode_pfm(data: bytes) -> np.ndarray:
    fields = []
    pos = 0
    # header: type, "W H", scale; separated by arbitrary whitespace
    while len(fields) < 4:
        m = re.compile(rb"\s*(\S+)").match(data, pos)
        if m is None:
            raise ValueError("truncated PFM header")
        fields.append(m.group(1))
        pos = m.end()
    pos += 1  # single whitespace byte after the scale
    kind, width, height, scale = fields[0], int(fields[1]), int(fields[2]), float(fields[3])
    if kind not in (b"Pf", b"PF"):
        raise ValueError(f"not a PFM file (magic {kind!r})")
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(data) - pos < count * 4:
        raise ValueError("truncated PFM data")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape)[::-1].copy()


def write_pfm(path, array) -> Path:
    return atomic_write_bytes(path, encode_pfm(array))


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


# --- PNG ---------------------------------------------------------------------

def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def encode_png16_depth(depth) -> bytes:
    """Depth in metres -> 16-bit PNG of ``round(depth * 1000)``; 0 marks invalid."""
    d = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(d) & (d > 0)
    mm = np.where(valid, np.rint(np.where(valid, d, 0.0) * PNG16_SCALE), 0.0)
    mm = np.clip(mm, 0, PNG16_MAX).astype(np.uint16)
    return _png_bytes(Image.fromarray(mm))


def write_png16_depth(path, depth) -> Path:
    return atomic_write_bytes(path, encode_png16_depth(depth))


def read_png16_depth(path) -> np.ndarray:
    with Image.open(path) as img:
        mm = np.asarray(img).astype(np.float64)
    if mm.ndim != 2:
        raise ValueError(f"{path}: 16-bit depth PNG must be single channel")
    return np.where(mm > 0, mm / PNG16_SCALE, np.nan)


def read_image(path):
    """Read an image or depth map; returns ``(array, fmt)``.

    ``fmt`` is ``"pfm"`` (float32), ``"png16"`` (depth in metres, NaN
    invalid) or ``"png8"`` (8-bit values as float64 in ``[0, 255]``).
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path), "pfm"
    with Image.open(path) as img:
        mode = img.mode
        arr = np.asarray(img)
    if suffix == ".png16" or mode.startswith("I;16") or mode == "I":
        return read_png16_depth(path), "png16"
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[..., :3]
    return arr.astype(np.float64), "png8"


def write_image(path, array, fmt: str | None = None) -> Path:
    path = Path(path)
    if fmt is None:
        fmt = {".pfm": "pfm", ".png16": "png16"}.get(path.suffix.lower(), "png8")
    if fmt == "pfm":
        return write_pfm(path, array)
    if fmt == "png16":
        return write_png16_depth(path, array)
    if fmt == "png8":
        arr = np.clip(np.rint(np.nan_to_num(np.asarray(array, dtype=np.float64))), 0, 255).astype(np.uint8)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[..., 0]
        return atomic_write_bytes(path, _png_bytes(Image.fromarray(arr)))
    raise ValueError(f"unknown image format {fmt!r}")


FORMAT_SUFFIX = {"pfm": ".pfm", "png16": ".png", "png8": ".png"}


# --- dataset JSON ------------------------------------------------------------

_XYZ = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

DATASET_SCHEMA = {
    "type": "object",
    "required": ["landmarks", "images"],
    "properties": {
        "landmarks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "xyz"],
                "properties": {"id": {"type": "string"}, "xyz": _XYZ},
            },
        },
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "path", "pose"],
                "properties": {
                    "id": {"type": "string"},
                    "path": {"type": "string"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "pose": {
                        "type": "object",
                        "required": ["position", "yaw_deg", "pitch_deg", "roll_deg"],
                        "properties": {
                            "position": _XYZ,
                            "yaw_deg": {"type": "number"},
                            "pitch_deg": {"type": "number"},
                            "roll_deg": {"type": "number"},
                        },
                    },
                    "annotations": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2,
                        },
                    },
                },
            },
        },
    },
}


def dataset_from_dict(doc: dict) -> Dataset:
    """Validate a dataset document and build a :class:`Dataset`.

    Raises ``ValueError`` on schema violations or dangling landmark references.
    """
    try:
        jsonschema.validate(doc, DATASET_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"dataset schema error at {where}: {exc.message}") from None
    landmarks = [Landmark(lm["id"], tuple(lm["xyz"])) for lm in doc["landmarks"]]
    images = []
    for im in doc["images"]:
        p = im["pose"]
        pose = CameraPose(tuple(p["position"]), EulerAngles(p["yaw_deg"], p["pitch_deg"], p["roll_deg"]))
        ann = {k: (float(uv[0]), float(uv[1])) for k, uv in im.get("annotations", {}).items()}
        images.append(ImageRecord(im["id"], im["path"], pose, ann, im.get("width"), im.get("height")))
    return Dataset(landmarks, images)


def dataset_to_dict(dataset: Dataset) -> dict:
    images = []
    for im in dataset.images:
        o = im.pose.orientation
        entry = {
            "id": im.id,
            "path": im.path,
            "pose": {
                "position": list(im.pose.position),
                "yaw_deg": o.yaw,
                "pitch_deg": o.pitch,
                "roll_deg": o.roll,
            },
            "annotations": {k: [float(uv[0]), float(uv[1])] for k, uv in sorted(im.annotations.items())},
        }
        if im.width is not None:
            entry["width"] = im.width
        if im.height is not None:
            entry["height"] = im.height
        images.append(entry)
    return {
        "landmarks": [{"id": lm.id, "xyz": list(lm.world_xyz)} for lm in dataset.landmarks],
        "images": images,
    }


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return dataset_from_dict(doc)


def save_dataset(path, dataset: Dataset) -> Path:
    return atomic_write_text(path, dump_json(dataset_to_dict(dataset)))


# --- manifest & metadata -----------------------------------------------------

def write_manifest(path, entries) -> Path:
    return atomic_write_text(path, dump_json([{"file": e["file"], "pitch": e["pitch"], "roll": e["roll"]}
                                              for e in entries]))


def read_manifest(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_metadata(path, command: str, config: dict, inputs=(), extra: dict | None = None) -> Path:
    """Record the tool version, command, run configuration and input digests.

    Inputs are keyed by file name (not full path) so reruns elsewhere match byte-for-byte.
    """
    from . import __version__

    digests = {}
    for p in inputs:
        p = Path(p)
        if p.is_file():
            digests[p.name] = file_digest(p)
        elif p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file():
                    digests[f"{p.name}/{f.name}"] = file_digest(f)
    doc = {"tool": "posebench", "version": __version__, "command": command,
           "config": config, "inputs": digests}
    if extra:
        doc.update(extra)
    return atomic_write_text(path, dump_json(doc))
