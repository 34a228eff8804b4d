"""Synthetic data generation: procedural head phantom, virtual pinhole
depth camera, grid trajectory planning, and labeled dataset output.

Stands in for the physical acquisition rig (robot arm, RGBD sensor,
optical tracker). Frame ground truth is the phantom-to-camera transform.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .geometry import (
    RigidTransform,
    WorkspaceBounds,
    apply,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_matrix,
)


@dataclass
class HeadPhantom:
    points: np.ndarray        # (N, 3) mm, phantom frame
    normals: np.ndarray       # (N, 3) unit, outward
    albedo: np.ndarray        # (N, 3) in [0, 1]
    face_mask: np.ndarray     # (N,) bool, True on the face region
    seed: int = 0

    def face_points(self) -> np.ndarray:
        return self.points[self.face_mask]


@dataclass
class VirtualCamera:
    fx: float = 240.0
    fy: float = 240.0
    cx: float = 80.0
    cy: float = 60.0
    width: int = 160
    height: int = 120
    sigma0_mm: float = 1.5    # depth noise scale at 1 m
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def depth_sigma(self, z_mm) -> np.ndarray:
        return self.sigma0_mm * (np.asarray(z_mm) / 1000.0) ** 2

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """(N, 3) camera-frame points -> (N, 2) pixel coordinates (u, v)."""
        z = pts_cam[:, 2]
        return np.stack([self.fx * pts_cam[:, 0] / z + self.cx,
                         self.fy * pts_cam[:, 1] / z + self.cy], axis=1)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "sigma0_mm": self.sigma0_mm, "pose": self.pose.to_json()}

    @staticmethod
    def from_json(d: dict) -> "VirtualCamera":
        return VirtualCamera(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                             width=d["width"], height=d["height"],
                             sigma0_mm=d["sigma0_mm"],
                             pose=RigidTransform.from_json(d["pose"]))


@dataclass
class Frame:
    rgb: np.ndarray           # (H, W, 3) in [0, 1]
    depth: np.ndarray         # (H, W) mm, 0 where no return
    ir: np.ndarray            # (H, W) in [0, 1]
    ground_truth: RigidTransform
    frame_id: int = 0

    def channels(self) -> np.ndarray:
        """(5, H, W) planar stack: R, G, B, D, IR."""
        return np.concatenate([np.moveaxis(self.rgb, 2, 0),
                               self.depth[None], self.ir[None]]).astype(np.float32)

    @staticmethod
    def from_channels(ch: np.ndarray, ground_truth: RigidTransform,
                      frame_id: int = 0) -> "Frame":
        return Frame(rgb=np.moveaxis(ch[:3], 0, 2).copy(), depth=ch[3].copy(),
                     ir=ch[4].copy(), ground_truth=ground_truth,
                     frame_id=frame_id)


@dataclass
class TrajectoryPlan:
    positions: np.ndarray       # (cells, 3) grid cell centers, mm
    poses: list[RigidTransform]  # phantom->camera, one per frame
    max_angle_deg: float
    seed: int


@dataclass
class Dataset:
    root: str
    camera: VirtualCamera
    bounds: WorkspaceBounds
    frames: list[dict]          # manifest entries
    train_ids: list[int]
    val_ids: list[int]
    test_ids: list[int]
    meta: dict = field(default_factory=dict)

    def load_frame(self, frame_id: int) -> Frame:
        entry = self.frames[frame_id]
        assert entry["id"] == frame_id
        ch = fileio.read_frame_channels(os.path.join(self.root, entry["file"]))
        return Frame.from_channels(ch, RigidTransform.from_json(entry["pose"]),
                                   frame_id)


# ---------------------------------------------------------------------------
# Phantom construction

# Triaxial on purpose: a surface of revolution would leave one rotation
# axis unconstrained for point-to-point registration.
_ELLIPSOID = np.array([78.0, 100.0, 92.0])  # semi-axes (x, y, z), mm

# The facial axis is -z so that an identity pose in front of a +z-looking
# camera shows the face; ground-truth quaternions then stay near identity.
# (direction, amplitude, angular width rad); bumps scale the radius
_BUMPS = [
    ((0.0, -0.12, -1.0), 0.24, 0.16),    # nose
    ((0.0, 0.32, -0.95), 0.05, 0.25),    # brow ridge
    ((0.0, -0.80, -0.60), 0.10, 0.28),   # chin
    ((-0.55, -0.12, -0.75), 0.06, 0.22),  # cheekbones
    ((0.55, -0.12, -0.75), 0.06, 0.22),
    ((-0.97, 0.0, 0.05), 0.09, 0.18),    # ears
    ((0.97, 0.0, 0.05), 0.09, 0.18),
]

_HAIR_ALBEDO = np.array([0.18, 0.14, 0.10])
_SKIN_ALBEDO = np.array([0.85, 0.66, 0.55])
_DARK_SPOTS = [  # eyes and mouth, for gradient texture
    ((-0.30, 0.18, -0.93), 0.10),
    ((0.30, 0.18, -0.93), 0.10),
    ((0.0, -0.45, -0.89), 0.12),
]


def _fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.float64)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _radius_scale(dirs: np.ndarray) -> np.ndarray:
    s = np.ones(len(dirs))
    for d0, amp, width in _BUMPS:
        d0 = np.asarray(d0) / np.linalg.norm(d0)
        ang = np.arccos(np.clip(dirs @ d0, -1, 1))
        s += amp * np.exp(-0.5 * (ang / width) ** 2)
    return s


def _surface(dirs: np.ndarray) -> np.ndarray:
    return dirs * _ELLIPSOID * _radius_scale(dirs)[:, None]


def build_phantom(seed: int = 0, resolution: int = 60000) -> HeadPhantom:
    """Procedural head-scale surface cloud: ellipsoid cranium with nose,
    brow, and chin relief. Deterministic for a fixed seed."""
    if resolution < 5000:
        raise ValueError(f"resolution {resolution} below minimum 5000 points")
    rng = np.random.default_rng(seed)
    dirs = _fibonacci_directions(resolution)
    points = _surface(dirs)

    # numerical normals from the parametric surface
    e1 = np.cross(dirs, np.where(np.abs(dirs[:, 2:3]) < 0.9,
                                 [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]))
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(dirs, e1)
    eps = 1e-4

    def shifted(e):
        d = dirs + eps * e
        return _surface(d / np.linalg.norm(d, axis=1, keepdims=True))

    du = shifted(e1) - shifted(-e1)
    dv = shifted(e2) - shifted(-e2)
    normals = np.cross(du, dv)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    flip = np.sum(normals * dirs, axis=1) < 0
    normals[flip] = -normals[flip]

    # mild radial jitter so distinct seeds give distinct clouds
    points = points + normals * rng.normal(0.0, 0.15, size=(len(points), 1))

    albedo = np.tile(_SKIN_ALBEDO, (resolution, 1))
    hair = dirs[:, 1] > 0.55
    albedo[hair] = _HAIR_ALBEDO
    for d0, width in _DARK_SPOTS:
        d0 = np.asarray(d0) / np.linalg.norm(d0)
        ang = np.arccos(np.clip(dirs @ d0, -1, 1))
        dark = np.exp(-0.5 * (ang / width) ** 2)
        albedo *= (1.0 - 0.75 * dark)[:, None]
    albedo = np.clip(albedo + rng.normal(0, 0.015, albedo.shape), 0, 1)

    face_mask = dirs[:, 2] < -0.5   # within 60 degrees of the facial axis
    return HeadPhantom(points=points, normals=normals, albedo=albedo,
                       face_mask=face_mask, seed=seed)


# ---------------------------------------------------------------------------
# Trajectory planning

_AXES = np.eye(3)  # roll (x), pitch (y), yaw (z) rotation axes


def plan_trajectory(camera: VirtualCamera,
                    grid_dims: tuple[int, int, int] = (3, 3, 2),
                    rotations_per_cell: int = 25,
                    seed: int = 0,
                    x_range_mm: tuple[float, float] = (-50.0, 50.0),
                    y_range_mm: tuple[float, float] = (-35.0, 35.0),
                    z_range_mm: tuple[float, float] = (550.0, 850.0),
                    max_angle_deg: float = 20.0) -> TrajectoryPlan:
    """Grid of positions over the camera FoV; at each cell,
    rotations_per_cell random orientations within +/-max_angle_deg per
    axis, the axis order re-randomized per cell."""
    if min(grid_dims) < 1:
        raise ValueError("grid dims must be >= 1 per axis")
    rng = np.random.default_rng(seed)

    def axis_positions(rng_mm, n):
        lo, hi = rng_mm
        if n == 1:
            return np.array([(lo + hi) / 2.0])
        return np.linspace(lo, hi, n)

    xs = axis_positions(x_range_mm, grid_dims[0])
    ys = axis_positions(y_range_mm, grid_dims[1])
    zs = axis_positions(z_range_mm, grid_dims[2])
    cells = np.array([(x, y, z) for z in zs for y in ys for x in xs])

    uv = camera.project(cells)
    bad = np.where((uv[:, 0] < 0) | (uv[:, 0] >= camera.width) |
                   (uv[:, 1] < 0) | (uv[:, 1] >= camera.height))[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"grid cell {i} at {cells[i].tolist()} projects outside the "
            f"image (pixel {uv[i].tolist()})")

    poses = []
    for cell in cells:
        order = rng.permutation(3)
        for _ in range(rotations_per_cell):
            angles = rng.uniform(-max_angle_deg, max_angle_deg, size=3)
            q = np.array([1.0, 0.0, 0.0, 0.0])
            for ax in order:
                q = quat_multiply(quat_from_axis_angle(_AXES[ax], angles[ax]), q)
            poses.append(RigidTransform(q, cell))
    return TrajectoryPlan(positions=cells, poses=poses,
                          max_angle_deg=max_angle_deg, seed=seed)


# ---------------------------------------------------------------------------
# Rendering

_LIGHT_DIR = np.array([-0.25, 0.35, -1.0]) / np.linalg.norm([-0.25, 0.35, -1.0])
_IR_REF_MM = 500.0
_AMBIENT = 0.25
_SPLAT = 1       # pixel neighborhood radius considered per point
_SPLAT_MM = 1.9  # lateral paint radius in mm at the point depth


def render_frame(phantom: HeadPhantom, camera: VirtualCamera,
                 pose: RigidTransform, noise_seed: int = 0,
                 frame_id: int = 0) -> Frame:
    """Point-splat render with a per-pixel z-buffer. Depth carries Gaussian
    noise with sigma = sigma0 * (z / 1 m)^2; RGB is Lambertian-shaded
    albedo; IR falls off with inverse squared range."""
    h, w = camera.height, camera.width
    pts = apply(pose, phantom.points)
    rot = quat_to_matrix(pose.q)
    nrm = phantom.normals @ rot.T

    z = pts[:, 2]
    front = z > 1.0
    if not np.any(front):
        raise ValueError("empty frame: phantom fully behind the camera")
    uv = camera.project(pts[front])
    ui = np.round(uv[:, 0]).astype(np.int64)
    vi = np.round(uv[:, 1]).astype(np.int64)
    pz = z[front]
    keep = (ui >= -_SPLAT) & (ui < w + _SPLAT) & (vi >= -_SPLAT) & (vi < h + _SPLAT)
    if not np.any(keep):
        raise ValueError("empty frame: phantom fully outside the frustum")
    idx = np.where(front)[0][keep]
    ui, vi, pz = ui[keep], vi[keep], pz[keep]

    # Each point paints the pixels whose ray passes within _SPLAT_MM of it
    # laterally. The rounded center pixel keeps the point's exact Z; other
    # pixels intersect their ray with the point's tangent plane unless the
    # incidence is grazing.
    uf, vf = uv[keep, 0], uv[keep, 1]
    n_dot_p = np.einsum("ij,ij->i", nrm[idx], pts[idx])
    min_z = float(pz.min())

    def splat_depth(du, dv, uu, vv):
        if du == 0 and dv == 0:
            return pz
        rx = (uu - camera.cx) / camera.fx
        ry = (vv - camera.cy) / camera.fy
        r_norm = np.sqrt(rx * rx + ry * ry + 1.0)
        n_dot_r = nrm[idx, 0] * rx + nrm[idx, 1] * ry + nrm[idx, 2]
        safe = np.abs(n_dot_r) > 0.25 * r_norm
        t = np.where(safe, n_dot_p / np.where(safe, n_dot_r, 1.0), pz)
        return np.maximum(np.clip(t, pz - 8.0, pz + 8.0), min_z)

    offsets = [(du, dv) for dv in range(-_SPLAT, _SPLAT + 1)
               for du in range(-_SPLAT, _SPLAT + 1)]
    zbuf = np.full(h * w, np.inf)
    depths = {}
    for du, dv in offsets:
        uu, vv = ui + du, vi + dv
        lat_px2 = (uu - uf) ** 2 + (vv - vf) ** 2
        lat_mm2 = lat_px2 * (pz / camera.fx) ** 2
        ok = ((uu >= 0) & (uu < w) & (vv >= 0) & (vv < h) &
              (lat_mm2 <= _SPLAT_MM ** 2))
        d = splat_depth(du, dv, uu, vv)
        depths[(du, dv)] = (ok, d)
        np.minimum.at(zbuf, vv[ok] * w + uu[ok], d[ok])

    rgb = np.zeros((h * w, 3), dtype=np.float64)
    ir = np.zeros(h * w, dtype=np.float64)
    # winner attributes: any splat whose depth equals the buffer value at a
    # pixel; later (higher-index) writes win ties deterministically
    lambert = np.clip(np.sum(nrm[idx] * (-_LIGHT_DIR), axis=1), 0, 1)
    shade = np.clip(_AMBIENT + (1 - _AMBIENT) * lambert, 0, 1)
    view = pts[idx] / np.linalg.norm(pts[idx], axis=1, keepdims=True)
    ir_lambert = np.clip(np.sum(nrm[idx] * (-view), axis=1), 0, 1)
    ir_val = np.clip(ir_lambert * (_IR_REF_MM / pz) ** 2, 0, 1)
    for du, dv in offsets:
        uu, vv = ui + du, vi + dv
        ok, d = depths[(du, dv)]
        pix = vv[ok] * w + uu[ok]
        win = d[ok] == zbuf[pix]
        rgb[pix[win]] = phantom.albedo[idx[ok][win]] * shade[ok][win, None]
        ir[pix[win]] = ir_val[ok][win]

    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    painted = zbuf < np.inf
    if camera.sigma0_mm > 0:
        rng = np.random.default_rng(noise_seed)
        noise = rng.normal(size=int(painted.sum()))
        depth[painted] += noise * camera.depth_sigma(depth[painted])
        depth = np.maximum(depth, 0.0)

    return Frame(rgb=rgb.reshape(h, w, 3).astype(np.float32),
                 depth=depth.reshape(h, w).astype(np.float32),
                 ir=ir.reshape(h, w).astype(np.float32),
                 ground_truth=pose, frame_id=frame_id)


# ---------------------------------------------------------------------------
# Dataset generation

def _worker_count() -> int:
    return max(1, int(os.environ.get("HEADPOSE_THREADS", "1")))


def generate_dataset(phantom: HeadPhantom, camera: VirtualCamera,
                     plan: TrajectoryPlan, out_dir: str,
                     test_fraction: float = 0.2,
                     val_fraction: float = 0.1) -> Dataset:
    """Render every planned pose, write frames plus manifest.json, and
    split train+val / test 80/20 with a seeded shuffle. val_fraction is
    taken from within the train+val portion."""
    os.makedirs(out_dir, exist_ok=True)
    n = len(plan.poses)
    pad = 20.0
    positions = plan.positions
    bounds = WorkspaceBounds(positions.min(axis=0) - pad,
                             positions.max(axis=0) + pad)

    seeds = [plan.seed * 1_000_003 + i for i in range(n)]

    def render_one(i):
        return render_frame(phantom, camera, plan.poses[i],
                            noise_seed=seeds[i], frame_id=i)

    entries = []
    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rendered = list(pool.map(render_one, range(n)))
    else:
        rendered = map(render_one, range(n))
    for i, frame in enumerate(rendered):
        fname = f"frame_{i:05d}.hpf"
        fileio.write_frame_channels(os.path.join(out_dir, fname),
                                    frame.channels())
        entries.append({"id": i, "file": fname,
                        "pose": plan.poses[i].to_json(),
                        "noise_seed": seeds[i]})

    rng = np.random.default_rng(plan.seed + 987)
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    test_ids = sorted(int(i) for i in perm[:n_test])
    trainval = [int(i) for i in perm[n_test:]]
    n_val = int(round(len(trainval) * val_fraction))
    val_ids = sorted(trainval[:n_val])
    train_ids = sorted(trainval[n_val:])

    manifest = {
        "camera": camera.to_json(),
        "bounds": bounds.to_json(),
        "phantom_seed": phantom.seed,
        "phantom_points": int(len(phantom.points)),
        "plan_seed": plan.seed,
        "max_angle_deg": plan.max_angle_deg,
        "detector_channel": "ir",
        "frames": entries,
        "split": {"train": train_ids, "val": val_ids, "test": test_ids},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
    return load_dataset(out_dir)


def load_dataset(root: str) -> Dataset:
    with open(os.path.join(root, "manifest.json")) as f:
        manifest = json.load(f)
    ids = [e["id"] for e in manifest["frames"]]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate frame ids in manifest")
    return Dataset(root=root,
                   camera=VirtualCamera.from_json(manifest["camera"]),
                   bounds=WorkspaceBounds.from_json(manifest["bounds"]),
                   frames=manifest["frames"],
                   train_ids=manifest["split"]["train"],
                   val_ids=manifest["split"]["val"],
                   test_ids=manifest["split"]["test"],
                   meta=manifest)
