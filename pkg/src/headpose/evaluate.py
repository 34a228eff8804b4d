"""Evaluation and benchmark layer: per-frame pose errors for the
model-based tracker and both network variants, aggregate reports shaped
like the accuracy and timing tables, and JSON/CSV/text serialization."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .detector import LinearDetector, Roi, crop, detect, oracle_roi
from .geometry import WorkspaceBounds, pose_error
from .icp import (IcpConfig, Template, depth_to_pointcloud, icp_register,
                  initialize_from_roi, voxel_downsample)
from .kdtree import KdTree
from .nn import ModelGraph, frame_to_inputs, predict_pose
from .phantom import Dataset, HeadPhantom, VirtualCamera, build_phantom

METHODS = ("model-based", "single-path", "multi-path")


@dataclass
class FrameEval:
    frame_id: int
    position_mm: float
    orientation_deg: float
    time_ms: float


@dataclass
class EvalReport:
    method: str
    frames: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, "
                             f"expected one of {METHODS}")

    def _stat(self, attr):
        vals = np.array([getattr(f, attr) for f in self.frames])
        return float(vals.mean()), float(vals.std())

    @property
    def position_mean_std(self):
        return self._stat("position_mm")

    @property
    def orientation_mean_std(self):
        return self._stat("orientation_deg")

    @property
    def time_mean_std(self):
        return self._stat("time_ms")

    def to_json(self) -> dict:
        """Timing lives under a single 'timing' key so deterministic
        comparisons can drop it wholesale."""
        pm, ps = self.position_mean_std
        om, os_ = self.orientation_mean_std
        tm, ts = self.time_mean_std
        return {
            "method": self.method,
            "n_frames": len(self.frames),
            "position_mm": {"mean": pm, "std": ps},
            "orientation_deg": {"mean": om, "std": os_},
            "frames": [{"frame_id": f.frame_id,
                        "position_mm": f.position_mm,
                        "orientation_deg": f.orientation_deg}
                       for f in self.frames],
            "timing": {"per_frame_ms": {"mean": tm, "std": ts},
                       "frame_ms": [f.time_ms for f in self.frames]},
        }

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("frame_id,position_mm,orientation_deg,time_ms\n")
            for fr in self.frames:
                f.write(f"{fr.frame_id},{fr.position_mm:.9g},"
                        f"{fr.orientation_deg:.9g},{fr.time_ms:.6g}\n")

    @staticmethod
    def read_csv(path, method: str) -> "EvalReport":
        frames = []
        with open(path) as f:
            header = f.readline().strip()
            if header != "frame_id,position_mm,orientation_deg,time_ms":
                raise ValueError(f"unexpected eval CSV header: {header!r}")
            for line in f:
                fid, pos, ori, ms = line.strip().split(",")
                frames.append(FrameEval(int(fid), float(pos), float(ori),
                                        float(ms)))
        return EvalReport(method, frames)


def strip_timing(report_json: dict) -> dict:
    out = dict(report_json)
    out.pop("timing", None)
    return out


def format_accuracy_table(reports: list[EvalReport]) -> str:
    """Aligned text table: one row per method, mean +/- std for position
    and orientation errors."""
    rows = [("Method", "Position [mm]", "Orientation [deg]", "Frames")]
    for r in reports:
        pm, ps = r.position_mean_std
        om, os_ = r.orientation_mean_std
        rows.append((r.method, f"{pm:.2f} +/- {ps:.2f}",
                     f"{om:.3f} +/- {os_:.3f}", str(len(r.frames))))
    return _align(rows)


@dataclass
class BenchRow:
    method: str
    setup_s: float              # training or template-build duration
    per_image_ms_mean: float
    per_image_ms_std: float
    n_timed: int

    def to_json(self) -> dict:
        return {"method": self.method, "setup_s": self.setup_s,
                "per_image_ms": {"mean": self.per_image_ms_mean,
                                 "std": self.per_image_ms_std},
                "n_timed": self.n_timed}


def format_timing_table(rows: list[BenchRow]) -> str:
    """Two data rows per the timing-table structure: setup time and
    per-image processing time, one column block per method."""
    header = ("", *[r.method for r in rows])
    setup = ("Setup time [s]", *[f"{r.setup_s:.1f}" for r in rows])
    per = ("Processing time [ms]",
           *[f"{r.per_image_ms_mean:.2f} +/- {r.per_image_ms_std:.2f}"
             for r in rows])
    return _align([header, setup, per])


def _align(rows) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                     for r in rows) + "\n"


# --- per-method frame processing ------------------------------------------


def make_roi_fn(dataset: Dataset, phantom: HeadPhantom,
                detector: LinearDetector | None):
    """ROI source for evaluation: the trained detector when given, else
    the projected-silhouette oracle."""
    if detector is not None:
        return lambda frame: detect(frame, detector)
    return lambda frame: oracle_roi(dataset.camera, frame.ground_truth,
                                    phantom)


def build_face_template(phantom: HeadPhantom, voxel_mm: float = 5.0,
                        face_z: float = -0.17) -> Template:
    """Frontal-surface template for registration against camera-facing
    depth frames; the occluded back of the head only adds trimming load."""
    dirs = phantom.points / np.linalg.norm(phantom.points, axis=1,
                                           keepdims=True)
    return Template(voxel_downsample(phantom.points[dirs[:, 2] < face_z],
                                     voxel_mm))


def save_template(template: Template, path) -> None:
    fileio.write_pointcloud(path, template.points)


def load_template(path) -> Template:
    return Template(fileio.read_pointcloud(path))


def evaluate_icp(template: Template, dataset: Dataset, frame_ids,
                 roi_fn, cfg: IcpConfig | None = None) -> EvalReport:
    """Model-based tracker on independent frames: ROI initialization plus
    ICP refinement, per frame (the split is a random pose set, not a
    temporal sequence)."""
    cfg = cfg or IcpConfig()
    report = EvalReport("model-based")
    for fid in frame_ids:
        frame = dataset.load_frame(fid)
        t0 = time.perf_counter()
        roi = roi_fn(frame)
        if roi is None:
            raise ValueError(f"face detection failed on frame {fid}")
        scene = depth_to_pointcloud(frame, dataset.camera)
        init = initialize_from_roi(roi, frame, dataset.camera, template)
        result = icp_register(template, scene, init, cfg,
                              scene_tree=KdTree(scene), camera=dataset.camera)
        ms = (time.perf_counter() - t0) * 1e3
        err = pose_error(result.pose, frame.ground_truth)
        report.frames.append(FrameEval(fid, err.position_mm,
                                       err.orientation_deg, ms))
    return report


def cnn_inputs_for_frame(frame, roi: Roi | None, model: ModelGraph):
    """Network inputs for one frame; the crop path is fed only when the
    model asks for it."""
    needs_crop = "crop" in model.input_names
    crop_frame = crop(frame, roi) if (needs_crop and roi is not None) else None
    ins = frame_to_inputs(frame, crop_frame)
    return {k: ins[k] for k in model.input_names}


def evaluate_cnn(model: ModelGraph, method: str, dataset: Dataset, frame_ids,
                 roi_fn, bounds: WorkspaceBounds | None = None) -> EvalReport:
    bounds = bounds or dataset.bounds
    report = EvalReport(method)
    for fid in frame_ids:
        frame = dataset.load_frame(fid)
        t0 = time.perf_counter()
        roi = roi_fn(frame) if "crop" in model.input_names else None
        ins = cnn_inputs_for_frame(frame, roi, model)
        pose = predict_pose(model, ins, bounds)
        ms = (time.perf_counter() - t0) * 1e3
        err = pose_error(pose, frame.ground_truth)
        report.frames.append(FrameEval(fid, err.position_mm,
                                       err.orientation_deg, ms))
    return report


def bench_method(process_frame, dataset: Dataset, frame_ids,
                 warmup: int = 10) -> tuple[float, float, int]:
    """Serial per-image wall time: mean and std in ms over the frames
    after the warmup prefix."""
    times = []
    for k, fid in enumerate(frame_ids):
        frame = dataset.load_frame(fid)
        t0 = time.perf_counter()
        process_frame(frame)
        dt = (time.perf_counter() - t0) * 1e3
        if k >= warmup:
            times.append(dt)
    if not times:
        raise ValueError(f"need more than {warmup} frames to benchmark")
    arr = np.array(times)
    return float(arr.mean()), float(arr.std()), len(times)


# --- training-set assembly -------------------------------------------------


def dataset_tensors(dataset: Dataset, frame_ids, roi_fn,
                    with_crop: bool = True):
    """Stacked network inputs and scaled pose targets for a list of frame
    ids. Returns (inputs dict, targets (N,7))."""
    from .geometry import pose_to_target

    full, crops, targets = [], [], []
    for fid in frame_ids:
        frame = dataset.load_frame(fid)
        roi = roi_fn(frame) if with_crop else None
        if with_crop and roi is None:
            raise ValueError(f"face detection failed on frame {fid}")
        ins = frame_to_inputs(frame, crop(frame, roi) if with_crop else None)
        full.append(ins["full"][0])
        if with_crop:
            crops.append(ins["crop"][0])
        targets.append(pose_to_target(frame.ground_truth, dataset.bounds))
    inputs = {"full": np.stack(full)}
    if with_crop:
        inputs["crop"] = np.stack(crops)
    return inputs, np.stack(targets).astype(np.float32)


def phantom_from_dataset(dataset: Dataset) -> HeadPhantom:
    """Rebuild the exact phantom a dataset was rendered from."""
    return build_phantom(seed=dataset.meta["phantom_seed"],
                         resolution=dataset.meta["phantom_points"])
