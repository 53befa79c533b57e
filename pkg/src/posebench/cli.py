"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import disparity_to_depth
from .config import RunConfig
from .cubemap import FACE_SUFFIXES, CubeFaceSet, cubemap_to_erp, erp_to_cubemap, reproject_cubemap_depth
from .formats import (
    atomic_write_text,
    dump_json,
    load_dataset,
    read_image,
    save_dataset,
    write_image,
    write_metadata,
    write_pfm,
)
from .geometry import EulerAngles, euler_to_rotation, gravity_align, rotate_erp
from .landmarks import CameraPose
from .lowess import LowessConfig, lowess
from .sweep import (
    NAMED_SPECS,
    DirectoryPredictions,
    ImageTruth,
    SweepSpec,
    aggregate_by_class,
    calibrate_image,
    calibrate_pooled,
    deformation_table,
    emit_perturbed_set,
    evaluate_image,
    find_prediction,
    generate_sweep,
    heatmap_grid,
    heatmap_svg,
    load_depth,
    read_error_csv,
    read_residual_csv,
    score_sweep,
    write_class_csv,
    write_error_csv,
    write_heatmap_csv,
    write_lowess_csv,
    write_residual_csv,
    write_table_csv,
)
from .synth import (
    BoxRoomScene,
    SphereShellScene,
    place_synthetic_landmarks,
    render_erp,
    render_face_depths,
    synthetic_dataset,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _meta_path(output: Path) -> Path:
    return output / "metadata.json" if output.is_dir() else output.with_name(output.name + ".meta.json")


def _record(output, args, config: RunConfig, inputs=(), **extra) -> None:
    write_metadata(_meta_path(Path(output)), args.command, config.to_dict(), inputs, extra)


def _config(args, **overrides) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(base, **overrides)


def _spec(args) -> SweepSpec:
    if args.pitch_range or args.roll_range or args.step:
        if not (args.pitch_range and args.roll_range and args.step):
            raise UsageError("custom sweeps need --pitch-range, --roll-range and --step")
        return SweepSpec(*args.pitch_range, *args.roll_range, args.step)
    return NAMED_SPECS[args.spec]


def _truth(args, config: RunConfig, dataset=None, image_id=None) -> ImageTruth:
    dataset = dataset or load_dataset(args.dataset)
    return ImageTruth.build(dataset, image_id or args.image, config.split_seed, config.split_fraction,
                            config.split_scope, config.keep_yaw)


def _lambda_from_json(path) -> float:
    with open(path, encoding="utf-8") as fh:
        return float(json.load(fh)["lambda"])


# --- commands ----------------------------------------------------------------

def cmd_rotate(args):
    config = _config(args, interpolation=args.interp)
    image, fmt = read_image(args.input)
    rot = euler_to_rotation(EulerAngles(args.yaw, args.pitch, args.roll))
    write_image(args.output, rotate_erp(image, rot, config.interpolation), fmt)
    _record(args.output, args, config, [args.input])


def cmd_gravity_align(args):
    config = _config(args, interpolation=args.interp, keep_yaw=args.keep_yaw or None)
    pose = load_dataset(args.dataset).image(args.image).pose
    image, fmt = read_image(args.input)
    write_image(args.output, gravity_align(image, pose, config.keep_yaw, config.interpolation), fmt)
    _record(args.output, args, config, [args.input, args.dataset])


def cmd_cubemap(args):
    config = _config(args, face_size=getattr(args, "face_size", None), depth_mode=getattr(args, "mode", None))
    if args.action == "split":
        image, fmt = read_image(args.input)
        faces = erp_to_cubemap(image, config.face_size)
        for suffix, face in zip(FACE_SUFFIXES, faces.faces):
            write_image(Path(f"{args.prefix}_{suffix}{Path(args.input).suffix}"), face, fmt)
        _record(Path(f"{args.prefix}_faces"), args, config, [args.input])
        return
    paths = [_face_path(args.prefix, s) for s in FACE_SUFFIXES]
    if args.depth:
        faces = CubeFaceSet([load_depth(p) for p in paths])
        erp, fmt = reproject_cubemap_depth(faces, args.width, args.height, config.depth_mode), "pfm"
    else:
        loaded = [read_image(p) for p in paths]
        erp, fmt = cubemap_to_erp(CubeFaceSet([a for a, _ in loaded]), args.width, args.height), loaded[0][1]
    write_image(args.output, erp, fmt)
    _record(args.output, args, config, paths)


def _face_path(prefix, suffix) -> Path:
    matches = sorted(Path(prefix).parent.glob(f"{Path(prefix).name}_{suffix}.*"))
    matches = [m for m in matches if not m.name.endswith(".meta.json")]
    if not matches:
        raise FileNotFoundError(f"missing cube face {prefix}_{suffix}.*")
    return matches[0]


def cmd_disparity(args):
    config = _config(args)
    key = args.model or "default"
    fields = dict(config.disparity.get(key, {}))
    for name, val in (("alpha", args.alpha), ("eps_stability", args.eps),
                      ("clip_min", args.clip_min), ("clip_max", args.clip_max)):
        if val is not None:
            fields[name] = val
    config = replace(config, disparity={**config.disparity, key: fields})
    raw, _ = read_image(args.input)
    if raw.ndim != 2:
        raise ValueError("raw disparity must be single channel")
    write_pfm(args.output, disparity_to_depth(raw, config.disparity_params(key)))
    _record(args.output, args, config, [args.input])


def _aligned_prediction(path, image_id) -> Path:
    path = Path(path)
    return find_prediction(path, image_id, 0.0, 0.0) if path.is_dir() else path


def cmd_calibrate(args):
    config = _config(args, split_seed=args.seed, split_fraction=args.fraction, split_scope=args.scope,
                     keep_yaw=args.keep_yaw or None)
    dataset = load_dataset(args.dataset)
    images = args.image
    if len(images) > 1 and not Path(args.predictions).is_dir():
        raise UsageError("calibrating several images needs a predictions directory")
    items = []
    inputs = [args.dataset]
    for image_id in images:
        pred = _aligned_prediction(args.predictions, image_id)
        inputs.append(pred)
        items.append((load_depth(pred), _truth(args, config, dataset, image_id)))
    result = calibrate_image(*items[0]) if len(items) == 1 else calibrate_pooled(items)
    doc = {
        "lambda": result.lam,
        "n_train": result.n_train,
        "residual_rms": result.residual_rms,
        "mode": "per-image" if len(items) == 1 else "pooled",
        "images": list(images),
        "train_ids": {t.image_id: list(t.split.train_ids) for _, t in items},
        "seed": config.split_seed,
        "fraction": config.split_fraction,
        "scope": config.split_scope,
    }
    atomic_write_text(args.out, dump_json(doc))
    _record(args.out, args, config, inputs)


def cmd_evaluate(args):
    config = _config(args, metric=args.metric, split_seed=args.seed, split_fraction=args.fraction,
                     split_scope=args.scope, keep_yaw=args.keep_yaw or None)
    truth = _truth(args, config)
    depth = load_depth(args.prediction)
    if args.lambda_value is not None:
        lam = args.lambda_value
    elif args.calibration:
        lam = _lambda_from_json(args.calibration)
    else:
        lam = calibrate_image(depth, truth, args.pitch, args.roll).lam
    residuals = []
    rec = evaluate_image(depth, truth, lam, config.metric, args.model, args.pitch, args.roll, residuals)
    write_error_csv(args.out, [rec])
    if args.residuals:
        write_residual_csv(args.residuals, residuals)
    _record(args.out, args, config, [args.prediction, args.dataset])
    print(f"{rec.metric}={rec.value!r} n={rec.n_landmarks} lambda={rec.lambda_used!r}")


def cmd_sweep(args):
    config = _config(args, interpolation=args.interp)
    image, fmt = read_image(args.input)
    out_fmt = args.format or fmt
    entries = emit_perturbed_set(image, args.image_id, _spec(args), args.out, out_fmt, config.interpolation,
                                 args.overwrite)
    _record(Path(args.out), args, config, [args.input], sweep=asdict(_spec(args)), image_id=args.image_id)
    print(f"wrote {len(entries)} perturbed images to {args.out}")


def cmd_score(args):
    config = _config(args, metric=args.metric, lambda_policy=args.lambda_policy, lambda_value=args.lambda_value,
                     split_seed=args.seed, split_fraction=args.fraction, split_scope=args.scope,
                     keep_yaw=args.keep_yaw or None)
    if args.calibration:
        config = replace(config, lambda_policy="fixed", lambda_value=_lambda_from_json(args.calibration))
    truth = _truth(args, config)
    pred_dir = Path(args.predictions)
    if (pred_dir / args.model).is_dir():
        pred_dir = pred_dir / args.model
    source = config.lambda_value if config.lambda_policy == "fixed" else config.lambda_policy
    spec = _spec(args)
    predictions = DirectoryPredictions(pred_dir, args.image)
    predictions.check(generate_sweep(spec))
    residuals = []
    records = score_sweep(predictions, truth, args.model, spec, config.metric, source, residuals=residuals)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_error_csv(out / "errors.csv", records)
    write_residual_csv(out / "residuals.csv", residuals)
    used = [args.dataset] + [predictions.path(p, r) for p, r in generate_sweep(spec)]
    _record(out, args, config, used, sweep=asdict(spec), model_id=args.model, image_id=args.image)
    bad = [r for r in records if not r.valid]
    for r in bad:
        print(f"warning: no valid test landmark at pitch={r.pitch:+.1f} roll={r.roll:+.1f}", file=sys.stderr)
    print(f"scored {len(records)} grid points ({len(bad)} invalid) -> {out / 'errors.csv'}")


def cmd_heatmap(args):
    config = _config(args)
    records = read_error_csv(args.errors)
    if args.model:
        records = [r for r in records if r.model_id == args.model]
    if args.image:
        records = [r for r in records if r.image_id == args.image]
    hm = heatmap_grid(records)
    write_heatmap_csv(args.out, hm)
    if args.svg:
        atomic_write_text(args.svg, heatmap_svg(hm))
    _record(args.out, args, config, [args.errors])


def cmd_lowess(args):
    config = _config(args, lowess_frac=args.frac, lowess_iterations=args.iterations)
    residuals = []
    for path in args.residuals:
        residuals.extend(read_residual_csv(path))
    if not residuals:
        raise ValueError("no residual rows to smooth")
    ys = {"abs_error": lambda r: abs(r.error), "error": lambda r: r.error,
          "squared_error": lambda r: r.error ** 2}[args.y]
    cfg = LowessConfig(config.lowess_frac, config.lowess_iterations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for model_id in sorted({r.model_id for r in residuals}):
        rows = [r for r in residuals if r.model_id == model_id]
        x = np.array([r.gt_depth for r in rows])
        y = np.array([ys(r) for r in rows])
        if args.grid:
            pts = np.linspace(x.min(), x.max(), args.grid)
        else:
            pts = np.unique(x)
        write_lowess_csv(out / f"lowess_{model_id}.csv", pts, lowess(x, y, cfg, pts))
    _record(out, args, config, args.residuals)


def cmd_aggregate(args):
    config = _config(args)
    records = []
    for path in args.errors:
        records.extend(read_error_csv(path))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for model_id in sorted({r.model_id for r in records}):
        write_class_csv(out / f"classes_{model_id}.csv",
                        aggregate_by_class([r for r in records if r.model_id == model_id]))
    write_table_csv(out / "table.csv", deformation_table(records))
    _record(out, args, config, args.errors)


def cmd_synth(args):
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pose = CameraPose.from_degrees(args.position, args.yaw, args.pitch, args.roll)
    if args.scene == "sphere":
        scene = SphereShellScene(args.radius, pose)
    else:
        scene = BoxRoomScene(tuple(args.half_extents), pose)
    depth, rgb = render_erp(scene, args.width, args.height, "both")
    write_pfm(out / "depth.pfm", depth)
    write_image(out / "rgb.png", rgb * 255.0, "png8")
    if args.scene == "box":
        landmarks = place_synthetic_landmarks(scene, args.landmarks, args.seed)
        save_dataset(out / "dataset.json",
                     synthetic_dataset(scene, landmarks, args.width, args.height, args.image_id, "rgb.png"))
    if args.faces:
        for suffix, face in zip(FACE_SUFFIXES, render_face_depths(scene, args.faces, config.depth_mode)):
            write_pfm(out / f"faces_{suffix}.pfm", face)
    _record(out, args, config)


# --- parser ------------------------------------------------------------------

def _add_split(p):
    p.add_argument("--seed", type=int, help="landmark split seed")
    p.add_argument("--fraction", type=float, help="training fraction of landmarks")
    p.add_argument("--scope", choices=("per-image", "global"), help="landmark split scope")
    p.add_argument("--keep-yaw", action="store_true", help="gravity alignment keeps camera heading")


def _add_spec(p):
    p.add_argument("--spec", choices=sorted(NAMED_SPECS), default="high")
    p.add_argument("--pitch-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--roll-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--step", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posebench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"posebench {__version__}")
    parser.add_argument("--config", help="RunConfig JSON file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rotate", help="rotate an ERP image by yaw/pitch/roll")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--roll", type=float, default=0.0)
    p.add_argument("--interp", choices=("bilinear", "nearest"))
    p.set_defaults(func=cmd_rotate)

    p = sub.add_parser("gravity-align", help="undo a dataset image's camera tilt")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--dataset", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--keep-yaw", action="store_true")
    p.add_argument("--interp", choices=("bilinear", "nearest"))
    p.set_defaults(func=cmd_gravity_align)

    p = sub.add_parser("cubemap", help="split an ERP image into cube faces or assemble faces")
    csub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    s = csub.add_parser("split")
    s.add_argument("input")
    s.add_argument("prefix", help="faces are written as PREFIX_{px,nx,py,ny,pz,nz}.<ext>")
    s.add_argument("--face-size", type=int)
    s.set_defaults(func=cmd_cubemap)
    a = csub.add_parser("assemble")
    a.add_argument("prefix")
    a.add_argument("output")
    a.add_argument("--width", type=int, required=True)
    a.add_argument("--height", type=int, required=True)
    a.add_argument("--depth", action="store_true", help="faces hold depth; convert and propagate invalids")
    a.add_argument("--mode", choices=("planar", "ray"), help="per-face depth convention")
    a.set_defaults(func=cmd_cubemap)

    p = sub.add_parser("disparity", help="convert raw sigmoid disparity output to metric depth")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--model", help="take parameters from the config's disparity table")
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--clip-min", type=float)
    p.add_argument("--clip-max", type=float)
    p.set_defaults(func=cmd_disparity)

    p = sub.add_parser("calibrate", help="fit the depth scale on training landmarks")
    p.add_argument("predictions", help="aligned prediction file, or a sweep predictions directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--image", required=True, action="append", help="repeat to pool several images")
    p.add_argument("--out", required=True)
    _add_split(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score one prediction on test landmarks")
    p.add_argument("prediction")
    p.add_argument("--dataset", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--model", default="model")
    p.add_argument("--pitch", type=float, default=0.0, help="simulated pitch of the prediction")
    p.add_argument("--roll", type=float, default=0.0, help="simulated roll of the prediction")
    p.add_argument("--lambda", dest="lambda_value", type=float)
    p.add_argument("--calibration", help="lambda JSON from `calibrate`")
    p.add_argument("--metric", choices=("rmse", "mse", "mae"))
    p.add_argument("--out", required=True)
    p.add_argument("--residuals")
    _add_split(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="emit pitch/roll perturbed copies of a gravity-aligned image")
    p.add_argument("input")
    p.add_argument("--image-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("pfm", "png8", "png16"))
    p.add_argument("--interp", choices=("bilinear", "nearest"))
    p.add_argument("--overwrite", action="store_true")
    _add_spec(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="score a model's sweep predictions")
    p.add_argument("--predictions", required=True, help="predictions root (or the model's directory)")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--metric", choices=("rmse", "mse", "mae"))
    p.add_argument("--lambda-policy", choices=("aligned", "refit", "fixed"))
    p.add_argument("--lambda", dest="lambda_value", type=float)
    p.add_argument("--calibration", help="lambda JSON from `calibrate` (implies fixed policy)")
    p.add_argument("--out", required=True)
    _add_spec(p)
    _add_split(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("heatmap", help="pitch x roll error grid from an errors CSV")
    p.add_argument("errors")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.add_argument("--model")
    p.add_argument("--image")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("lowess", help="LOWESS error-vs-depth curves per model")
    p.add_argument("residuals", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--frac", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--y", choices=("abs_error", "error", "squared_error"), default="abs_error")
    p.add_argument("--grid", type=int, help="evaluate on N evenly spaced depths instead of the data")
    p.set_defaults(func=cmd_lowess)

    p = sub.add_parser("aggregate", help="per-deformation-class error table")
    p.add_argument("errors", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("synth", help="render an analytic synthetic scene")
    p.add_argument("--scene", choices=("box", "sphere"), default="box")
    p.add_argument("--width", type=int, default=2048)
    p.add_argument("--height", type=int, default=1024)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--half-extents", type=float, nargs=3, default=(4.0, 3.0, 1.5))
    p.add_argument("--position", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--roll", type=float, default=0.0)
    p.add_argument("--landmarks", type=int, default=37)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-id", default="synth")
    p.add_argument("--faces", type=int, help="also write analytic cube-face depths of this size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"posebench: usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"posebench: I/O error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"posebench: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
