"""Model-based tracking: depth back-projection, Kabsch alignment,
trimmed point-to-point ICP, and template construction from a head scan.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    HeadScanSample,
    RigidTransform,
    apply,
    compile_head_scan,
    matrix_to_quat,
    pose_error,
)
from .kdtree import KdTree
from .phantom import Frame, VirtualCamera


@dataclass
class Template:
    """Surface points in the marker/phantom frame (mm)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 100:
            raise ValueError("template needs at least 100 finite 3-D points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite template points")
        self.points = pts

    def face_centroid(self) -> np.ndarray:
        """Centroid of the forward 30% of the template (face side, -z)."""
        z = self.points[:, 2]
        cut = np.quantile(z, 0.3)
        return self.points[z <= cut].mean(axis=0)


@dataclass
class IcpConfig:
    max_iterations: int = 150
    tol_mm: float = 0.01
    tol_deg: float = 0.01
    trim_fraction: float = 0.2
    trim_floor_mm: float = 3.0  # pairs closer than this are never trimmed
    max_corr_mm: float = 30.0
    divergence_residual_mm: float = 10.0
    warmup_iterations: int = 25  # translation-only pre-alignment steps
    warmup_stop_mm: float = 2.0  # hand over to the full solve below this step

    def __post_init__(self):
        if not (0.0 <= self.trim_fraction <= 0.5):
            raise ValueError("trim_fraction must be in [0, 0.5]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class IcpResult:
    pose: RigidTransform
    iterations: int
    residual_mm: float         # trimmed RMS over the final survivor set
    converged: bool
    n_correspondences: int = 0
    residual_history: list = field(default_factory=list)


def depth_to_pointcloud(frame: Frame, camera: VirtualCamera) -> np.ndarray:
    """Back-project all valid (d > 0) depth pixels to camera-frame points."""
    vs, us = np.nonzero(frame.depth > 0)
    d = frame.depth[vs, us].astype(np.float64)
    x = (us - camera.cx) * d / camera.fx
    y = (vs - camera.cy) * d / camera.fy
    return np.stack([x, y, d], axis=1)


def kabsch_align(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform T with T(src) ~ dst (SVD, proper
    rotation enforced via the determinant sign)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src and dst must be matching (N, 3) arrays")
    if len(src) < 3:
        raise ValueError("need at least 3 correspondence pairs")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0 or s[1] <= 1e-9 * s[0]:
        raise ValueError("degenerate (collinear) correspondence configuration")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - r @ c_src
    return RigidTransform(matrix_to_quat(r), t)


def voxel_downsample(points: np.ndarray, voxel_mm: float) -> np.ndarray:
    """Average points per occupied voxel; output sorted by voxel key so the
    result is deterministic."""
    points = np.asarray(points, dtype=np.float64)
    keys = np.floor(points / voxel_mm).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys, points = keys[order], points[order]
    boundaries = np.any(np.diff(keys, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.nonzero(boundaries)[0] + 1, [len(points)]])
    return np.array([points[a:b].mean(axis=0)
                     for a, b in zip(starts[:-1], starts[1:])])


def template_from_scan(samples: list[HeadScanSample],
                       voxel_mm: float = 3.0) -> Template:
    """Compile marker-frame pointer positions, then voxel-downsample to
    even out the sampling density."""
    if len(samples) < 100:
        raise ValueError("need at least 100 scan samples")
    cloud = compile_head_scan(samples)
    return Template(voxel_downsample(cloud, voxel_mm))


def initialize_from_roi(roi, frame: Frame, camera: VirtualCamera,
                        template: Template) -> RigidTransform:
    """Coarse pose: identity rotation (head facing the camera) and the
    median back-projected ROI depth point, offset by the template's face
    centroid."""
    half_w, half_h = roi.width / 2.0, roi.height / 2.0
    u0 = max(0, int(np.floor(roi.cu - half_w)))
    u1 = min(camera.width, int(np.ceil(roi.cu + half_w)) + 1)
    v0 = max(0, int(np.floor(roi.cv - half_h)))
    v1 = min(camera.height, int(np.ceil(roi.cv + half_h)) + 1)
    patch = frame.depth[v0:v1, u0:u1]
    vs, us = np.nonzero(patch > 0)
    if len(vs) < 20:
        raise ValueError(f"only {len(vs)} valid depth pixels inside the ROI")
    d = patch[vs, us].astype(np.float64)
    x = (us + u0 - camera.cx) * d / camera.fx
    y = (vs + v0 - camera.cy) * d / camera.fy
    median_pt = np.median(np.stack([x, y, d], axis=1), axis=0)
    return RigidTransform([1, 0, 0, 0], median_pt - template.face_centroid())


def icp_register(template: Template, scene_points: np.ndarray,
                 init: RigidTransform, cfg: IcpConfig | None = None,
                 scene_tree: KdTree | None = None,
                 camera: VirtualCamera | None = None,
                 border_margin_px: float = 2.0) -> IcpResult:
    """Trimmed point-to-point ICP. Per iteration: nearest scene neighbor
    for every transformed template point, distance gate, drop the worst
    trim_fraction, Kabsch on the survivors. Stops when the pose change
    falls below (tol_mm, tol_deg), or when the trimmed RMS residual stops
    decreasing (the update that raised it is discarded), so the logged
    residual history is non-increasing by construction.

    When a camera is given, template points projecting outside the image
    (minus a small margin) are skipped each iteration: points clipped by
    the frame border otherwise drag the alignment toward the border.

    Before the main loop a translation-only warmup runs: same
    correspondences, but the update is the mean offset with the rotation
    frozen. A translation error fed straight into Kabsch leaks into the
    rotation estimate and takes many iterations to unwind; removing the
    bulk of it first keeps the full solve in the well-behaved regime."""
    cfg = cfg or IcpConfig()
    scene_points = np.asarray(scene_points, dtype=np.float64)
    tree = scene_tree if scene_tree is not None else KdTree(scene_points)
    pose = init

    def _visible(moved):
        if camera is None:
            return np.ones(len(moved), dtype=bool)
        z_ok = moved[:, 2] > 1.0
        uv = np.full((len(moved), 2), -1e9)
        uv[z_ok] = camera.project(moved[z_ok])
        m = border_margin_px
        return (z_ok & (uv[:, 0] >= m) & (uv[:, 0] < camera.width - m) &
                (uv[:, 1] >= m) & (uv[:, 1] < camera.height - m))

    for _ in range(cfg.warmup_iterations):
        moved = apply(pose, template.points)
        vis = _visible(moved)
        if vis.sum() < 3:
            break
        dist, idx = tree.query(moved[vis])
        gate = dist <= cfg.max_corr_mm
        if gate.sum() < 3:
            break
        delta = (scene_points[idx[gate]] - moved[vis][gate]).mean(axis=0)
        # the warmup only unwinds the bulk translation offset; pushing it
        # further lets translation fully compensate a rotation error, which
        # locks the correspondence field into a biased local minimum that
        # the full solve cannot escape
        if np.linalg.norm(delta) < max(cfg.tol_mm, cfg.warmup_stop_mm):
            break
        pose = RigidTransform(pose.q, np.asarray(pose.t) + delta)
    history: list[float] = []
    n_surv = 0
    prev_pose = init
    prev_n_surv = 0
    for it in range(1, cfg.max_iterations + 1):
        moved = apply(pose, template.points)
        vis = _visible(moved)
        if vis.sum() < 3:
            return IcpResult(pose=pose, iterations=it, residual_mm=np.inf,
                             converged=False, n_correspondences=0,
                             residual_history=history)
        moved = moved[vis]
        src_pts = template.points[vis]
        dist, idx = tree.query(moved)
        gate = dist <= cfg.max_corr_mm
        n_gated = int(gate.sum())
        if n_gated < 3:
            return IcpResult(pose=pose, iterations=it, residual_mm=np.inf,
                             converged=False, n_correspondences=n_gated,
                             residual_history=history)
        h = max(3, int(np.ceil((1.0 - cfg.trim_fraction) * n_gated)))
        gi = np.nonzero(gate)[0]
        order = np.argsort(dist[gi], kind="stable")
        # trimming keeps the h best pairs, but never drops pairs below the
        # absolute floor: on clean data full-quantile trimming admits a
        # self-consistent biased fixed point
        cutoff = max(dist[gi[order[h - 1]]], cfg.trim_floor_mm)
        survivors = gi[order][dist[gi[order]] <= cutoff]
        # logged residual is the classical trimmed RMS (h best pairs); the
        # floor-expanded survivor set feeds Kabsch but its membership
        # fluctuates, which would make the logged sequence noisy
        residual = float(np.sqrt(np.mean(dist[gi[order[:h]]] ** 2)))
        if history and residual > history[-1]:
            # the last Kabsch step raised the trimmed residual (the
            # survivor set shifted); discard it and stop at the previous
            # pose, keeping the logged history non-increasing
            return IcpResult(pose=prev_pose, iterations=it,
                             residual_mm=history[-1], converged=True,
                             n_correspondences=prev_n_surv,
                             residual_history=history)
        history.append(residual)
        n_surv = len(survivors)
        new_pose = kabsch_align(src_pts[survivors],
                                scene_points[idx[survivors]])
        step = pose_error(pose, new_pose)
        prev_pose, prev_n_surv = pose, n_surv
        pose = new_pose
        if step.position_mm < cfg.tol_mm and step.orientation_deg < cfg.tol_deg:
            return IcpResult(pose=pose, iterations=it, residual_mm=residual,
                             converged=True, n_correspondences=n_surv,
                             residual_history=history)
    return IcpResult(pose=pose, iterations=cfg.max_iterations,
                     residual_mm=history[-1], converged=False,
                     n_correspondences=n_surv, residual_history=history)


@dataclass
class TrackRecord:
    frame_id: int
    pose: RigidTransform
    residual_mm: float
    time_s: float
    reinitialized: bool


def track_sequence(template: Template, frames: list[Frame],
                   camera: VirtualCamera, cfg: IcpConfig | None = None,
                   roi_fn=None) -> list[TrackRecord]:
    """Track an ordered frame sequence. Frame 0 initializes from the ROI;
    later frames start from the previous pose and fall back to ROI
    re-initialization when the registration diverges."""
    cfg = cfg or IcpConfig()
    if roi_fn is None:
        raise ValueError("roi_fn is required to initialize tracking")
    records: list[TrackRecord] = []
    prev_pose = None
    for k, frame in enumerate(frames):
        t0 = time.perf_counter()
        scene = depth_to_pointcloud(frame, camera)
        tree = KdTree(scene)
        reinit = False
        if prev_pose is None:
            roi = roi_fn(frame)
            if roi is None:
                raise ValueError(f"face detection failed on frame {frame.frame_id}")
            init = initialize_from_roi(roi, frame, camera, template)
            reinit = True
        else:
            init = prev_pose
        result = icp_register(template, scene, init, cfg, scene_tree=tree,
                              camera=camera)
        if prev_pose is not None and (not result.converged or
                                      result.residual_mm > cfg.divergence_residual_mm):
            roi = roi_fn(frame)
            if roi is not None:
                init = initialize_from_roi(roi, frame, camera, template)
                result = icp_register(template, scene, init, cfg, scene_tree=tree,
                                      camera=camera)
                reinit = True
        prev_pose = result.pose
        records.append(TrackRecord(frame_id=frame.frame_id, pose=result.pose,
                                   residual_mm=result.residual_mm,
                                   time_s=time.perf_counter() - t0,
                                   reinitialized=reinit))
    return records
