"""Command-line pipeline: plenoptic PLY in, 3DGS PLY + metrics + loss log out.

Stages communicate only through files so any of them can be swapped for an
external tool (for example a real COLMAP run between render-views and init).
Option values resolve as: built-in default < JSON ``--config`` file < flag.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .camera_rig import CameraIntrinsics, export_colmap_model, generate_spherical_rig
from .eval_metrics import (
    SizeReport,
    evaluate_views,
    metrics_dict,
    size_report,
    surface_distance_stats,
    write_metrics,
)
from .gaussian_model import export_gs_ply, load_gs_ply, save_gs_ply
from .plenoptic_io import (
    Material,
    PlenopticMesh,
    SampleKind,
    SurfaceSampleMode,
    load_plenoptic,
    save_plenoptic,
    surface_samples,
    synth_plenoptic,
)
from .splat_trainer import (
    CustomFromGeometry,
    DefaultFromColmap,
    RandomSparse,
    TrainConfig,
    TrainingData,
    initialize,
    train,
)
from .view_renderer import RenderConfig, render_dataset

log = logging.getLogger("plenosplat")

DATASET_DIR = "dataset"
INIT_NAME = "init.ply"
MODEL_NAME = "model.ply"
METRICS_NAME = "metrics.json"
LOSS_NAME = "loss.csv"


class ConfigError(ValueError):
    """Bad option values or config file (exit status 2)."""


@dataclass(frozen=True)
class Opt:
    flag: str
    default: object = None
    type: type | None = None
    nargs: int | None = None
    choices: tuple | None = None
    boolean: bool = False
    help: str = ""

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


_SAMPLE_KINDS = {"vertices": SampleKind.VERTICES, "face-centers": SampleKind.FACE_CENTERS, "both": SampleKind.BOTH}

OPTIONS = {o.dest: o for o in [
    # files
    Opt("--input", help="plenoptic PLY (point cloud or mesh)"),
    Opt("--out", help="output file or directory"),
    Opt("--dataset", help="directory written by render-views"),
    Opt("--model", help="3DGS PLY"),
    Opt("--colmap-dir", help="COLMAP text model for --init colmap (default <dataset>/sparse/0)"),
    Opt("--loss-log", help="loss CSV path for train"),
    Opt("--seed", 0, int),
    # synthetic asset
    Opt("--shape", "sphere", choices=("sphere", "cube")),
    Opt("--n-points", 2000, int),
    Opt("--size", 1.0, float, help="sphere radius or cube half-extent"),
    Opt("--n-capture", 16, int, help="capture cameras baked into the asset"),
    Opt("--capture-radius", 3.0, float),
    Opt("--base-color", (0.6, 0.4, 0.2), float, 3),
    Opt("--specular", 0.5, float),
    Opt("--shininess", 8.0, float),
    Opt("--light-dir", (0.0, 1.0, 1.0), float, 3),
    # rig
    Opt("--n-cameras", 24, int),
    Opt("--radius", 3.0, float),
    Opt("--center", (0.0, 0.0, 0.0), float, 3),
    Opt("--width", 128, int),
    Opt("--height", 128, int),
    Opt("--fx", None, float, help="focal length in pixels (default: image width)"),
    # renderer
    Opt("--sharpness-n", 10.0, float),
    Opt("--point-radius", 1.5, float),
    Opt("--background", (0.0, 0.0, 0.0), float, 3),
    # surface sampling and init
    Opt("--sample-kind", "vertices", choices=tuple(_SAMPLE_KINDS)),
    Opt("--subset-fraction", 1.0, float),
    Opt("--init", "custom", choices=("custom", "colmap", "random")),
    Opt("--freeze-positions", False, boolean=True),
    Opt("--n-random", 1000, int),
    Opt("--bbox-min", (-1.0, -1.0, -1.0), float, 3),
    Opt("--bbox-max", (1.0, 1.0, 1.0), float, 3),
    # training: one flag per TrainConfig field
    Opt("--iters", TrainConfig.iterations, int),
    Opt("--lr-position", TrainConfig.lr_position, float),
    Opt("--lr-scale", TrainConfig.lr_scale, float),
    Opt("--lr-rotation", TrainConfig.lr_rotation, float),
    Opt("--lr-opacity", TrainConfig.lr_opacity, float),
    Opt("--lr-sh", TrainConfig.lr_sh, float),
    Opt("--sh-rest-lr-scale", TrainConfig.sh_rest_lr_scale, float),
    Opt("--loss-lambda", TrainConfig.loss_lambda, float),
    Opt("--densify", TrainConfig.densify, boolean=True),
    Opt("--densify-interval", TrainConfig.densify_interval, int),
    Opt("--densify-until", TrainConfig.densify_until, int),
    Opt("--densify-grad-threshold", TrainConfig.densify_grad_threshold, float),
    Opt("--prune-opacity-threshold", TrainConfig.prune_opacity_threshold, float),
    Opt("--split-scale-threshold", TrainConfig.split_scale_threshold, float),
    Opt("--sh-degree", TrainConfig.sh_degree, int),
    # eval
    Opt("--reference", help="plenoptic PLY for surface distances and size ratios"),
]}

_FILES = ["input", "out", "seed"]
_SYNTH = ["shape", "n_points", "size", "n_capture", "capture_radius", "base_color", "specular", "shininess", "light_dir"]
_RIG = ["n_cameras", "radius", "center", "width", "height", "fx"]
_RENDER = ["sharpness_n", "point_radius", "background", "sample_kind"]
_INIT = ["init", "colmap_dir", "freeze_positions", "n_random", "bbox_min", "bbox_max", "sample_kind",
         "subset_fraction", "sh_degree"]
_TRAIN = ["iters", "lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_sh", "sh_rest_lr_scale",
          "loss_lambda", "densify", "densify_interval", "densify_until", "densify_grad_threshold",
          "prune_opacity_threshold", "split_scale_threshold", "sh_degree", "background"]

SUBCOMMANDS = {
    "synth": (_SYNTH + ["out", "seed"], ["out"], "write a synthetic plenoptic sphere or cube"),
    "render-views": (_FILES + _RIG + _RENDER, ["input", "out"], "render a training dataset (PNGs, COLMAP model, manifest)"),
    "export-colmap": (_FILES + _RIG + ["sample_kind"], ["input", "out"], "write only the COLMAP text model of the rig"),
    "init": (_FILES + ["dataset"] + _INIT, ["out"], "build the initial 3DGS PLY"),
    "train": (["dataset", "model", "out", "loss_log", "seed"] + _TRAIN, ["dataset", "model", "out"], "optimize a 3DGS PLY against a dataset"),
    "eval": (["model", "dataset", "reference", "out", "background"], ["model"], "compute image, surface and size metrics"),
    "transcode": (_FILES + _RIG + _RENDER + _INIT + _TRAIN, ["input", "out"], "render-views, init, train and eval in one go"),
}


# config files may use TrainConfig field names
_CONFIG_ALIASES = {"iterations": "iters"}


def _uniq(seq):
    return list(dict.fromkeys(seq))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plenosplat", description="Transcode plenoptic point clouds into 3D Gaussian splats.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (dests, _, help_text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file of option values (flags take precedence)")
        for dest in _uniq(dests):
            o = OPTIONS[dest]
            # defaults stay None here so flags can be told apart from config values
            if o.boolean:
                p.add_argument(o.flag, action=argparse.BooleanOptionalAction, default=None,
                               help=f"{o.help} (default: {o.default})".strip())
            else:
                p.add_argument(o.flag, type=o.type, nargs=o.nargs, choices=o.choices, default=None,
                               help=f"{o.help} (default: {o.default})".strip())
    return parser


def resolve_options(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and explicit flags."""
    dests = _uniq(SUBCOMMANDS[command][0])
    opts = {d: OPTIONS[d].default for d in dests}
    if ns.config:
        try:
            cfg = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in cfg.items():
            key = _CONFIG_ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
            if key not in OPTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            if key in opts:  # keys for other subcommands are allowed and ignored
                opts[key] = value
    for d in dests:
        v = getattr(ns, d, None)
        if v is not None:
            opts[d] = v
    for d in dests:
        if OPTIONS[d].choices and opts[d] not in OPTIONS[d].choices:
            raise ConfigError(f"{d} must be one of {', '.join(OPTIONS[d].choices)}")
    return opts


# -- option to object conversion ---------------------------------------------


def _vec(opts, key):
    v = opts[key]
    if v is None or len(v) != 3:
        raise ConfigError(f"{key} needs three numbers")
    return tuple(float(x) for x in v)


def _intrinsics(opts) -> CameraIntrinsics:
    fx = opts["fx"] if opts["fx"] is not None else float(opts["width"])
    return CameraIntrinsics.centered(int(opts["width"]), int(opts["height"]), float(fx))


def rig_from(opts):
    return generate_spherical_rig(int(opts["n_cameras"]), _vec(opts, "center"), float(opts["radius"]), _intrinsics(opts))


def render_config_from(opts) -> RenderConfig:
    return RenderConfig(float(opts["sharpness_n"]), float(opts["point_radius"]), _vec(opts, "background"))


def train_config_from(opts) -> TrainConfig:
    return TrainConfig(
        iterations=int(opts["iters"]), lr_position=opts["lr_position"], lr_scale=opts["lr_scale"],
        lr_rotation=opts["lr_rotation"], lr_opacity=opts["lr_opacity"], lr_sh=opts["lr_sh"],
        sh_rest_lr_scale=opts["sh_rest_lr_scale"], loss_lambda=opts["loss_lambda"], densify=bool(opts["densify"]),
        densify_interval=int(opts["densify_interval"]),
        densify_until=None if opts["densify_until"] is None else int(opts["densify_until"]),
        densify_grad_threshold=opts["densify_grad_threshold"], prune_opacity_threshold=opts["prune_opacity_threshold"],
        split_scale_threshold=opts["split_scale_threshold"], seed=int(opts["seed"]), sh_degree=int(opts["sh_degree"]),
        background=_vec(opts, "background"),
    )


def load_points(path, opts, fraction: float = 1.0):
    """Load a plenoptic PLY and reduce a mesh (or subsample a cloud) to points."""
    asset = load_plenoptic(path)
    kind = _SAMPLE_KINDS[opts["sample_kind"]]
    if isinstance(asset, PlenopticMesh):
        return surface_samples(asset, SurfaceSampleMode(kind, fraction), int(opts["seed"]))
    if fraction < 1.0:
        return surface_samples(asset, SurfaceSampleMode(SampleKind.VERTICES, fraction), int(opts["seed"]))
    return asset


# -- stages --------------------------------------------------------------------


def cmd_synth(opts) -> None:
    cams = generate_spherical_rig(int(opts["n_capture"]), radius=float(opts["capture_radius"])).positions()
    mat = Material(_vec(opts, "base_color"), float(opts["specular"]), float(opts["shininess"]), _vec(opts, "light_dir"))
    cloud = synth_plenoptic(opts["shape"], int(opts["n_points"]), cams, mat, int(opts["seed"]), float(opts["size"]))
    save_plenoptic(cloud, opts["out"])
    log.info("wrote %d points x %d views to %s", cloud.point_count, cloud.n_views, opts["out"])


def cmd_render_views(opts) -> None:
    cloud = load_points(opts["input"], opts)
    manifest = render_dataset(cloud, rig_from(opts), render_config_from(opts), opts["out"])
    log.info("rendered %d views into %s", len(manifest), opts["out"])


def cmd_export_colmap(opts) -> None:
    cloud = load_points(opts["input"], opts)
    Path(opts["out"]).mkdir(parents=True, exist_ok=True)
    export_colmap_model(rig_from(opts), cloud, opts["out"])


def init_strategy_from(opts):
    if opts["init"] == "custom":
        if not opts["input"]:
            raise ConfigError("--init custom needs --input")
        pts = load_points(opts["input"], opts, float(opts["subset_fraction"]))
        return CustomFromGeometry(pts.positions, pts.mean_colors(), bool(opts["freeze_positions"]))
    if opts["init"] == "colmap":
        model_dir = opts["colmap_dir"]
        if model_dir is None:
            if not opts.get("dataset"):
                raise ConfigError("--init colmap needs --colmap-dir or --dataset")
            model_dir = str(Path(opts["dataset"]) / "sparse" / "0")
        return DefaultFromColmap(model_dir)
    return RandomSparse(int(opts["n_random"]), _vec(opts, "bbox_min"), _vec(opts, "bbox_max"), int(opts["seed"]))


def cmd_init(opts) -> None:
    cfg = TrainConfig(sh_degree=int(opts["sh_degree"]), seed=int(opts["seed"]))
    model = initialize(init_strategy_from(opts), cfg)
    save_gs_ply(model, opts["out"])
    log.info("initialized %d splats into %s", len(model), opts["out"])


def cmd_train(opts) -> None:
    cfg = train_config_from(opts)
    data = TrainingData.from_dir(opts["dataset"])
    init = load_gs_ply(opts["model"])
    if init.sh_degree != cfg.sh_degree:
        raise ConfigError(f"model has SH degree {init.sh_degree} but --sh-degree is {cfg.sh_degree}")
    result = train(init, data, cfg)
    save_gs_ply(result.model, opts["out"])
    if opts["loss_log"]:
        result.write_csv(opts["loss_log"])
    log.info("trained %d iterations, %d splats", len(result.log), len(result.model))


def cmd_eval(opts) -> None:
    model = load_gs_ply(opts["model"])
    images = surface = None
    if opts["dataset"]:
        data = TrainingData.from_dir(opts["dataset"])
        images = evaluate_views(model, data.cameras, data.images, _vec(opts, "background"))
    if opts["reference"]:
        ref = load_plenoptic(opts["reference"])
        ref = ref.vertices if isinstance(ref, PlenopticMesh) else ref
        surface = surface_distance_stats(model, ref)
        size = size_report(model, ref)
    else:
        size = SizeReport(0, len(export_gs_ply(model)), len(model), 0)
    text = write_metrics(metrics_dict(images, surface, size), opts["out"])
    if not opts["out"]:
        sys.stdout.write(text)


def cmd_transcode(opts) -> None:
    """Run the stages in sequence through the same files they would write alone."""
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / DATASET_DIR
    cmd_render_views({**opts, "out": str(dataset)})
    cmd_init({**opts, "out": str(out / INIT_NAME), "dataset": str(dataset)})
    cmd_train({**opts, "dataset": str(dataset), "model": str(out / INIT_NAME), "out": str(out / MODEL_NAME),
               "loss_log": str(out / LOSS_NAME)})
    cmd_eval({"model": str(out / MODEL_NAME), "dataset": str(dataset), "reference": opts["input"],
              "out": str(out / METRICS_NAME), "background": opts["background"]})


COMMANDS = {
    "synth": cmd_synth,
    "render-views": cmd_render_views,
    "export-colmap": cmd_export_colmap,
    "init": cmd_init,
    "train": cmd_train,
    "eval": cmd_eval,
    "transcode": cmd_transcode,
}


def validate(command: str, opts: dict) -> None:
    """Build every config object the command will use so bad values fail early."""
    dests = set(SUBCOMMANDS[command][0])
    try:
        if dests >= set(_RIG):
            rig_from(opts)
        if dests >= {"sharpness_n", "point_radius"}:
            render_config_from(opts)
        if "iters" in dests:
            train_config_from(opts)
        if "subset_fraction" in dests:
            SurfaceSampleMode(_SAMPLE_KINDS[opts["sample_kind"]], float(opts["subset_fraction"]))
        if "sh_degree" in dests:
            TrainConfig(sh_degree=int(opts["sh_degree"]))
        if command in ("init", "transcode"):
            if opts["init"] == "random" and int(opts["n_random"]) < 1:
                raise ConfigError("--n-random must be >= 1")
            if opts["init"] == "custom" and not opts["input"]:
                raise ConfigError("--init custom needs --input")
            if opts["init"] == "colmap" and not (opts["colmap_dir"] or opts.get("dataset") or command == "transcode"):
                raise ConfigError("--init colmap needs --colmap-dir or --dataset")
        if command == "synth":
            _vec(opts, "base_color"), _vec(opts, "light_dir")
            if int(opts["n_points"]) < 1 or int(opts["n_capture"]) < 1:
                raise ConfigError("--n-points and --n-capture must be >= 1")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)  # exits 2 on unknown subcommands or bad flags
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    try:
        opts = resolve_options(ns.command, ns)
        missing = [d for d in SUBCOMMANDS[ns.command][1] if not opts.get(d)]
        if missing:
            raise ConfigError("missing required option(s): " + ", ".join(OPTIONS[d].flag for d in missing))
        validate(ns.command, opts)
    except ConfigError as exc:
        sub.error(str(exc))  # usage + message, exit 2
    try:
        COMMANDS[ns.command](opts)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"plenosplat {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
