"""Command-line interface: dataset generation, detector and network
training, accuracy evaluation, and timing benchmarks.

Exit codes: 0 success, 2 configuration/validation error, 1 runtime error.
The HEADPOSE_THREADS environment variable caps render parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import evaluate as ev
from . import nn
from .detector import LinearDetector, oracle_roi, sample_training_windows, train_detector
from .icp import IcpConfig
from .phantom import (VirtualCamera, build_phantom, generate_dataset,
                      load_dataset, plan_trajectory)


class CliError(Exception):
    """Configuration or validation problem; maps to exit code 2."""


# --- config handling -------------------------------------------------------

GEN_DEFAULTS = {
    "phantom_seed": 0,
    "phantom_resolution": 60000,
    "grid_dims": [5, 5, 4],
    "rotations_per_cell": 20,
    "max_angle_deg": 20.0,
    "test_fraction": 0.2,
    "val_fraction": 0.1,
}

DETECT_DEFAULTS = {
    "n_frames": 80,
    "window": 48,
    "negatives_per_frame": 3,
    "holdout_fraction": 0.2,
}

TRAIN_DEFAULTS = {
    "epochs": 30,
    "batch_size": 16,
    "lr": 1e-3,
    "lr_drops": [],             # [[epoch, factor], ...] step schedule
    "aug_noise": 0.0,           # additive input-noise augmentation std
    "crop_jitter_px": 0,        # max crop-window shift augmentation (px)
    "path_widths": [16, 32, 64],
    "path_strides": [1, 2, 2],
    "fusion_width": 128,
    "fusion_stride": 2,
    "max_frames": 0,            # 0 = whole train split
}

BENCH_DEFAULTS = {
    "n_frames": 210,
    "warmup": 10,
}


def load_config(path, defaults: dict) -> dict:
    cfg = dict(defaults)
    if path:
        if not os.path.exists(path):
            raise CliError(f"config file not found: {path}")
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as e:
                raise CliError(f"config is not valid JSON: {e}") from e
        unknown = sorted(set(user) - set(defaults))
        if unknown:
            raise CliError(f"unknown config keys: {unknown}; "
                           f"expected a subset of {sorted(defaults)}")
        cfg.update(user)
    return cfg


def open_dataset(path):
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise CliError(f"no dataset manifest under {path}")
    return load_dataset(path)


def load_detector_arg(path):
    if path is None:
        return None
    if not os.path.exists(path):
        raise CliError(f"detector file not found: {path}")
    return LinearDetector.load(path)


# --- commands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = load_config(args.config, GEN_DEFAULTS)
    phantom = build_phantom(seed=cfg["phantom_seed"],
                            resolution=cfg["phantom_resolution"])
    camera = VirtualCamera()
    plan = plan_trajectory(camera, grid_dims=tuple(cfg["grid_dims"]),
                           rotations_per_cell=cfg["rotations_per_cell"],
                           seed=args.seed,
                           max_angle_deg=cfg["max_angle_deg"])
    dataset = generate_dataset(phantom, camera, plan, args.out,
                               test_fraction=cfg["test_fraction"],
                               val_fraction=cfg["val_fraction"])
    print(f"wrote {len(dataset.frames)} frames to {args.out} "
          f"(train {len(dataset.train_ids)}, val {len(dataset.val_ids)}, "
          f"test {len(dataset.test_ids)})")
    return 0


def cmd_detect_train(args) -> int:
    cfg = load_config(args.config, DETECT_DEFAULTS)
    dataset = open_dataset(args.dataset)
    phantom = ev.phantom_from_dataset(dataset)
    channel = dataset.meta.get("detector_channel", "ir")
    ids = dataset.train_ids[:cfg["n_frames"]]
    frames = [dataset.load_frame(i) for i in ids]
    rois = [oracle_roi(dataset.camera, fr.ground_truth, phantom)
            for fr in frames]
    pos, neg = sample_training_windows(
        frames, rois, cfg["window"], channel,
        negatives_per_frame=cfg["negatives_per_frame"], seed=args.seed)
    det = train_detector(pos, neg, channel=channel, seed=args.seed,
                         holdout_fraction=cfg["holdout_fraction"])
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "detector.json")
    det.save(out)
    print(f"wrote {out}  threshold {det.threshold:.4f} "
          f"({len(pos)} pos / {len(neg)} neg windows)")
    return 0


def _net_config(cfg, args):
    return nn.NetConfig(path_widths=tuple(cfg["path_widths"]),
                        path_strides=tuple(cfg["path_strides"]),
                        fusion_width=cfg["fusion_width"],
                        fusion_stride=cfg["fusion_stride"],
                        seed=args.seed)


def cmd_train(args) -> int:
    cfg = load_config(args.config, TRAIN_DEFAULTS)
    dataset = open_dataset(args.dataset)
    phantom = ev.phantom_from_dataset(dataset)
    detector = load_detector_arg(args.detector)
    roi_fn = ev.make_roi_fn(dataset, phantom, detector)
    multi = args.arch == "multi"

    train_ids = dataset.train_ids
    if cfg["max_frames"]:
        train_ids = train_ids[:cfg["max_frames"]]
    t0 = time.perf_counter()
    inputs, targets = ev.dataset_tensors(dataset, train_ids, roi_fn,
                                         with_crop=multi)
    val_inputs, val_targets = ev.dataset_tensors(dataset, dataset.val_ids,
                                                 roi_fn, with_crop=multi)
    build = nn.build_multiscale_model if multi else nn.build_singlepath_model
    model = build(_net_config(cfg, args))
    curve = nn.train(model, inputs, targets,
                     nn.TrainConfig(batch_size=cfg["batch_size"],
                                    epochs=cfg["epochs"], lr=cfg["lr"],
                                    lr_drops=tuple(
                                        tuple(d) for d in cfg["lr_drops"]),
                                    aug_noise=cfg["aug_noise"],
                                    crop_jitter_px=cfg["crop_jitter_px"],
                                    seed=args.seed),
                     val_inputs=val_inputs, val_targets=val_targets)
    train_s = time.perf_counter() - t0

    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, f"model_{args.arch}.hpnn")
    nn.save_model(model, model_path)
    nn.save_loss_curve(curve, os.path.join(args.out,
                                           f"loss_{args.arch}.csv"))
    with open(model_path + ".meta.json", "w") as f:
        json.dump({"arch": args.arch, "dataset": args.dataset,
                   "n_train": len(train_ids), "epochs": cfg["epochs"],
                   "seed": args.seed,
                   "timing": {"train_s": train_s}}, f, indent=1,
                  sort_keys=True)
    print(f"wrote {model_path}  final train MSE {curve[-1][1]:.3g}  "
          f"val MSE {curve[-1][2]:.3g}  ({train_s:.1f} s)")
    return 0


def _method_artifacts(args, dataset):
    """Resolve (and validate) the artifacts one eval/bench method needs.
    Returns a frame-processing report function."""
    phantom = ev.phantom_from_dataset(dataset)
    detector = load_detector_arg(args.detector)
    roi_fn = ev.make_roi_fn(dataset, phantom, detector)
    return phantom, roi_fn


def _load_model_for(method, path):
    if path is None:
        raise CliError(f"method {method!r} needs --model")
    if not os.path.exists(path):
        raise CliError(f"model file not found: {path}")
    model = nn.load_model(path)
    want_multi = method == "multi-path"
    is_multi = model.spec["kind"] == "multiscale"
    if want_multi != is_multi:
        raise CliError(f"method {method!r} does not match checkpoint kind "
                       f"{model.spec['kind']!r}")
    return model


def _resolve_template(args, phantom, out_dir):
    if args.template:
        if not os.path.exists(args.template):
            raise CliError(f"template file not found: {args.template}")
        return ev.load_template(args.template), None
    t0 = time.perf_counter()
    template = ev.build_face_template(phantom)
    build_s = time.perf_counter() - t0
    path = os.path.join(out_dir, "template.hppc")
    ev.save_template(template, path)
    return template, build_s


def cmd_eval(args) -> int:
    dataset = open_dataset(args.dataset)
    phantom, roi_fn = _method_artifacts(args, dataset)
    frame_ids = dataset.test_ids
    if args.max_frames:
        frame_ids = frame_ids[:args.max_frames]
    os.makedirs(args.out, exist_ok=True)

    if args.method == "model-based":
        template, _ = _resolve_template(args, phantom, args.out)
        report = ev.evaluate_icp(template, dataset, frame_ids, roi_fn)
    else:
        model = _load_model_for(args.method, args.model)
        report = ev.evaluate_cnn(model, args.method, dataset, frame_ids,
                                 roi_fn)

    tag = args.method.replace("-", "_")
    with open(os.path.join(args.out, f"report_{tag}.json"), "w") as f:
        json.dump(report.to_json(), f, indent=1, sort_keys=True)
    report.write_csv(os.path.join(args.out, f"frames_{tag}.csv"))
    table = ev.format_accuracy_table([report])
    with open(os.path.join(args.out, f"table_{tag}.txt"), "w") as f:
        f.write(table)
    print(table, end="")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config, BENCH_DEFAULTS)
    dataset = open_dataset(args.dataset)
    phantom, roi_fn = _method_artifacts(args, dataset)
    os.makedirs(args.out, exist_ok=True)
    frame_ids = (dataset.test_ids * ((cfg["n_frames"] //
                                      max(len(dataset.test_ids), 1)) + 1)
                 )[:cfg["n_frames"]]

    rows = []
    template, build_s = _resolve_template(args, phantom, args.out)
    icp_cfg = IcpConfig()

    def icp_frame(frame):
        from .icp import depth_to_pointcloud, icp_register, initialize_from_roi
        from .kdtree import KdTree
        roi = roi_fn(frame)
        scene = depth_to_pointcloud(frame, dataset.camera)
        init = initialize_from_roi(roi, frame, dataset.camera, template)
        icp_register(template, scene, init, icp_cfg, scene_tree=KdTree(scene),
                     camera=dataset.camera)

    mean, std, n = ev.bench_method(icp_frame, dataset, frame_ids,
                                   warmup=cfg["warmup"])
    rows.append(ev.BenchRow("model-based", build_s or 0.0, mean, std, n))

    for method, path in (("single-path", args.model_single),
                         ("multi-path", args.model_multi)):
        if path is None:
            continue
        model = _load_model_for(method, path)
        meta_path = path + ".meta.json"
        setup_s = 0.0
        if os.path.exists(meta_path):
            with open(meta_path) as f:
                setup_s = json.load(f)["timing"]["train_s"]

        def cnn_frame(frame, model=model):
            roi = roi_fn(frame) if "crop" in model.input_names else None
            ins = ev.cnn_inputs_for_frame(frame, roi, model)
            nn.predict_pose(model, ins, dataset.bounds)

        mean, std, n = ev.bench_method(cnn_frame, dataset, frame_ids,
                                       warmup=cfg["warmup"])
        rows.append(ev.BenchRow(method, setup_s, mean, std, n))

    table = ev.format_timing_table(rows)
    with open(os.path.join(args.out, "bench.json"), "w") as f:
        json.dump([r.to_json() for r in rows], f, indent=1, sort_keys=True)
    with open(os.path.join(args.out, "bench.txt"), "w") as f:
        f.write(table)
    print(table, end="")
    return 0


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="headpose",
                                description="synthetic head-pose pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required, help="output directory")

    g = sub.add_parser("gen", help="render a synthetic dataset")
    common(g)
    g.set_defaults(fn=cmd_gen)

    d = sub.add_parser("detect-train", help="train the HOG face detector")
    common(d)
    d.add_argument("--dataset", required=True)
    d.set_defaults(fn=cmd_detect_train)

    t = sub.add_parser("train", help="train a pose-regression network")
    common(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--arch", choices=("single", "multi"), required=True)
    t.add_argument("--detector", default=None,
                   help="detector JSON for crops (default: oracle ROI)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="per-frame pose errors on the test split")
    common(e)
    e.add_argument("--dataset", required=True)
    e.add_argument("--method", choices=ev.METHODS, required=True)
    e.add_argument("--model", default=None, help="network checkpoint")
    e.add_argument("--template", default=None, help="template point cloud")
    e.add_argument("--detector", default=None)
    e.add_argument("--max-frames", type=int, default=0,
                   help="evaluate only the first N test frames")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="per-image timing report")
    common(b)
    b.add_argument("--dataset", required=True)
    b.add_argument("--model-single", default=None)
    b.add_argument("--model-multi", default=None)
    b.add_argument("--template", default=None)
    b.add_argument("--detector", default=None)
    b.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
