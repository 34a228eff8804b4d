"""Face-region detection: HOG features, a ridge-trained linear window
classifier, and multi-scale sliding-window search. Supplies the crop for
the high-resolution CNN path and the ICP initialization ROI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .phantom import Frame, HeadPhantom, VirtualCamera
from .geometry import RigidTransform, apply

_BLOCK_EPS = 1e-5
_STRIDE_PX = 4
_PYRAMID_SCALE = 1.25


@dataclass
class HogParams:
    cell: int = 4     # px per cell side
    bins: int = 9     # unsigned orientation bins over [0, 180)
    block: int = 2    # cells per block side


@dataclass
class Roi:
    cu: float
    cv: float
    width: float
    height: float
    score: float


@dataclass
class LinearDetector:
    weights: np.ndarray
    bias: float
    window: int               # square window side, px
    threshold: float
    hog: HogParams
    channel: str = "ir"       # "ir" or "luma"

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"weights": self.weights.tolist(), "bias": self.bias,
                       "window": self.window, "threshold": self.threshold,
                       "cell": self.hog.cell, "bins": self.hog.bins,
                       "block": self.hog.block, "channel": self.channel}, f)

    @staticmethod
    def load(path) -> "LinearDetector":
        with open(path) as f:
            d = json.load(f)
        return LinearDetector(weights=np.array(d["weights"]), bias=d["bias"],
                              window=d["window"], threshold=d["threshold"],
                              hog=HogParams(d["cell"], d["bins"], d["block"]),
                              channel=d["channel"])


def gray_channel(frame: Frame, channel: str = "ir") -> np.ndarray:
    if channel == "ir":
        return frame.ir.astype(np.float64)
    if channel == "luma":
        return frame.rgb.astype(np.float64) @ [0.299, 0.587, 0.114]
    raise ValueError(f"unknown detector channel {channel!r}")


def _cell_histograms(img: np.ndarray, cell: int, bins: int) -> np.ndarray:
    """Gradient orientation histograms per cell, linear vote interpolation
    between adjacent unsigned-orientation bins."""
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    # edge orientation (perpendicular to the gradient): a vertical step
    # edge lands in the 90 degree bin
    ang = np.degrees(np.arctan2(gx, gy)) % 180.0
    pos = ang * bins / 180.0
    b0 = np.floor(pos).astype(np.int64) % bins
    frac = pos - np.floor(pos)
    b1 = (b0 + 1) % bins
    hc, wc = img.shape[0] // cell, img.shape[1] // cell
    hist = np.zeros((hc, wc, bins))
    ys, xs = np.mgrid[0:hc * cell, 0:wc * cell]
    cy, cx = (ys // cell).ravel(), (xs // cell).ravel()
    m = mag[:hc * cell, :wc * cell].ravel()
    np.add.at(hist, (cy, cx, b0[:hc * cell, :wc * cell].ravel()),
              m * (1 - frac[:hc * cell, :wc * cell].ravel()))
    np.add.at(hist, (cy, cx, b1[:hc * cell, :wc * cell].ravel()),
              m * frac[:hc * cell, :wc * cell].ravel())
    return hist


def _normalized_blocks(cells: np.ndarray, block: int) -> np.ndarray:
    """Overlapping block grid (stride one cell), each block L2-normalized."""
    hc, wc, bins = cells.shape
    hb, wb = hc - block + 1, wc - block + 1
    if hb < 1 or wb < 1:
        raise ValueError("image smaller than one HOG block")
    view = np.lib.stride_tricks.sliding_window_view(cells, (block, block),
                                                    axis=(0, 1))
    blocks = view.reshape(hb, wb, bins * block * block)
    norms = np.linalg.norm(blocks, axis=2, keepdims=True)
    return blocks / (norms + _BLOCK_EPS)


def hog_features(gray: np.ndarray, cell: int = 4, bins: int = 9,
                 block: int = 2) -> np.ndarray:
    """Flat block-normalized HOG descriptor for one window-sized image."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.shape[0] < cell * block or gray.shape[1] < cell * block:
        raise ValueError("image smaller than one HOG block")
    cells = _cell_histograms(gray, cell, bins)
    return _normalized_blocks(cells, block).ravel()


def hog_length(window: int, p: HogParams) -> int:
    nc = window // p.cell
    nb = nc - p.block + 1
    return nb * nb * p.bins * p.block * p.block


def train_detector(positive_windows: list[np.ndarray],
                   negative_windows: list[np.ndarray],
                   hog: HogParams | None = None,
                   ridge_lambda: float = 1e-3,
                   holdout_fraction: float = 0.2,
                   seed: int = 0,
                   channel: str = "ir") -> LinearDetector:
    """Ridge regression on HOG features with +/-1 targets; the decision
    threshold maximizes balanced accuracy on a held-out 20%."""
    hog = hog or HogParams()
    if len(positive_windows) < 50 or len(negative_windows) < 50:
        raise ValueError("need at least 50 windows per class")
    window = positive_windows[0].shape[0]
    feats = [hog_features(w, hog.cell, hog.bins, hog.block)
             for w in list(positive_windows) + list(negative_windows)]
    x = np.array(feats)
    y = np.concatenate([np.ones(len(positive_windows)),
                        -np.ones(len(negative_windows))])
    # stratified split: hold out the same fraction of each class. Each
    # class gets its own identically-seeded generator, so swapping the
    # classes swaps the decision sign exactly
    n_pos = len(positive_windows)
    perm_p = np.random.default_rng(seed).permutation(n_pos)
    perm_n = n_pos + np.random.default_rng(seed).permutation(
        len(negative_windows))
    k_p = max(1, int(round(holdout_fraction * n_pos)))
    k_n = max(1, int(round(holdout_fraction * len(negative_windows))))
    hold = np.concatenate([perm_p[:k_p], perm_n[:k_n]])
    fit = np.concatenate([perm_p[k_p:], perm_n[k_n:]])
    if len(np.unique(y[fit])) < 2:
        raise ValueError("training split degenerated to a single class")

    xa = np.hstack([x[fit], np.ones((len(fit), 1))])
    if xa.shape[1] <= xa.shape[0]:
        a = xa.T @ xa + ridge_lambda * np.eye(xa.shape[1])
        wb = np.linalg.solve(a, xa.T @ y[fit])
    else:
        # dual form: same minimizer, n x n solve when features outnumber
        # training windows
        g = xa @ xa.T + ridge_lambda * np.eye(xa.shape[0])
        wb = xa.T @ np.linalg.solve(g, y[fit])
    weights, bias = wb[:-1], float(wb[-1])

    scores = x[hold] @ weights + bias
    labels = y[hold]
    candidates = np.concatenate([[-np.inf], np.sort(scores)])
    best_thr, best_acc = 0.0, -1.0
    for thr in candidates:
        pred = np.where(scores > thr, 1.0, -1.0)
        pos = labels > 0
        if pos.any() and (~pos).any():
            acc = 0.5 * ((pred[pos] > 0).mean() + (pred[~pos] < 0).mean())
        else:
            acc = (pred == labels).mean()
        if acc > best_acc:
            best_acc, best_thr = acc, float(thr)
    return LinearDetector(weights=weights, bias=bias, window=window,
                          threshold=best_thr, hog=hog, channel=channel)


def _resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) + 0.5) * img.shape[0] / h - 0.5
    xs = (np.arange(w) + 0.5) * img.shape[1] / w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, img.shape[0] - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, img.shape[1] - 1)
    y1 = np.clip(y0 + 1, 0, img.shape[0] - 1)
    x1 = np.clip(x0 + 1, 0, img.shape[1] - 1)
    fy = np.clip(ys - y0, 0, 1)[:, None]
    fx = np.clip(xs - x0, 0, 1)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy[:, :1]) + bot * fy[:, :1]


def _score_windows(gray: np.ndarray, det: LinearDetector):
    """Dense window scores at cell-stride over one pyramid level."""
    p = det.hog
    cells = _cell_histograms(gray, p.cell, p.bins)
    blocks = _normalized_blocks(cells, p.block)
    nb = det.window // p.cell - p.block + 1  # blocks per window side
    hb, wb = blocks.shape[:2]
    if hb < nb or wb < nb:
        return None
    view = np.lib.stride_tricks.sliding_window_view(blocks, (nb, nb),
                                                    axis=(0, 1))
    feats = view.transpose(0, 1, 3, 4, 2).reshape(hb - nb + 1, wb - nb + 1, -1)
    return feats @ det.weights + det.bias


def detect(frame: Frame, det: LinearDetector,
           pyramid_levels: int = 3) -> Roi | None:
    """Highest-scoring sliding window above threshold over the scale
    pyramid, mapped back to base resolution; None if nothing passes."""
    gray = gray_channel(frame, det.channel)
    best = None
    scale = 1.0
    for _ in range(pyramid_levels):
        h = int(round(gray.shape[0] / scale))
        w = int(round(gray.shape[1] / scale))
        if h < det.window or w < det.window:
            break
        level = gray if scale == 1.0 else _resize_bilinear(gray, h, w)
        scores = _score_windows(level, det)
        if scores is not None:
            i, j = np.unravel_index(np.argmax(scores), scores.shape)
            s = scores[i, j]
            if s > det.threshold and (best is None or s > best.score):
                half = det.window / 2.0
                best = Roi(cu=(j * det.hog.cell + half) * scale,
                           cv=(i * det.hog.cell + half) * scale,
                           width=det.window * scale,
                           height=det.window * scale,
                           score=float(s))
        scale *= _PYRAMID_SCALE
    return best


def oracle_roi(camera: VirtualCamera, ground_truth_pose: RigidTransform,
               phantom: HeadPhantom) -> Roi:
    """Ground-truth ROI: bounding box of the projected face-region points,
    clipped to the image."""
    pts = apply(ground_truth_pose, phantom.face_points())
    pts = pts[pts[:, 2] > 1.0]
    if len(pts) == 0:
        raise ValueError("face region behind the camera")
    uv = camera.project(pts)
    u0, v0 = uv.min(axis=0)
    u1, v1 = uv.max(axis=0)
    u0, u1 = np.clip([u0, u1], 0, camera.width - 1)
    v0, v1 = np.clip([v0, v1], 0, camera.height - 1)
    if u1 <= u0 or v1 <= v0:
        raise ValueError("face region outside the frustum")
    return Roi(cu=(u0 + u1) / 2.0, cv=(v0 + v1) / 2.0,
               width=u1 - u0, height=v1 - v0, score=np.inf)


def crop(frame: Frame, roi: Roi, crop_px: int = 60) -> Frame:
    """Square crop_px window centered on the ROI, shifted (not shrunk) to
    stay inside the image. Pose metadata is unchanged."""
    h, w = frame.depth.shape
    if crop_px > min(h, w):
        raise ValueError(f"crop {crop_px} larger than frame {h}x{w}")
    u0 = int(round(roi.cu)) - crop_px // 2
    v0 = int(round(roi.cv)) - crop_px // 2
    u0 = min(max(u0, 0), w - crop_px)
    v0 = min(max(v0, 0), h - crop_px)
    return Frame(rgb=frame.rgb[v0:v0 + crop_px, u0:u0 + crop_px].copy(),
                 depth=frame.depth[v0:v0 + crop_px, u0:u0 + crop_px].copy(),
                 ir=frame.ir[v0:v0 + crop_px, u0:u0 + crop_px].copy(),
                 ground_truth=frame.ground_truth,
                 frame_id=frame.frame_id)


def sample_training_windows(frames, rois, window: int, channel: str,
                            negatives_per_frame: int = 2, seed: int = 0,
                            min_offset_px: int = 20):
    """Positive windows: ROI-sized boxes around each frame's ROI center,
    resized to the detector window (scale normalization). Negatives: boxes
    of the same size with centers displaced by at least min_offset_px."""
    rng = np.random.default_rng(seed)
    pos, neg = [], []
    for frame, roi in zip(frames, rois):
        gray = gray_channel(frame, channel)
        h, w = gray.shape
        side = int(round(min(1.1 * max(roi.width, roi.height), h, w)))

        def window_at(cu, cv):
            u0 = min(max(int(round(cu)) - side // 2, 0), w - side)
            v0 = min(max(int(round(cv)) - side // 2, 0), h - side)
            box = gray[v0:v0 + side, u0:u0 + side]
            return _resize_bilinear(box, window, window)

        pos.append(window_at(roi.cu, roi.cv))
        got = 0
        while got < negatives_per_frame:
            cu = rng.uniform(side / 2, w - side / 2)
            cv = rng.uniform(side / 2, h - side / 2)
            if np.hypot(cu - roi.cu, cv - roi.cv) >= min_offset_px:
                neg.append(window_at(cu, cv))
                got += 1
    return pos, neg
