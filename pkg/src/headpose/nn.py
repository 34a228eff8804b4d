"""From-scratch CNN stack for pose regression: NHWC tensors, conv/dense
layers with analytic gradients, a small DAG container, the two-path
multi-scale architecture and its single-path baseline, MSE loss, Adam,
and binary checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .fileio import read_model, write_model
from .geometry import RigidTransform, WorkspaceBounds, target_to_pose


# --- functional conv ---------------------------------------------------------

def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int = 1) -> np.ndarray:
    """Same-padded 2-D convolution, NHWC input, (kh, kw, cin, cout) weights.
    Output height = ceil(H / stride)."""
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise ValueError(f"input has {cin} channels, kernel expects {wcin}")
    pt, pb = _same_pad(h, kh, stride)
    pl, pr = _same_pad(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    view = view[:, ::stride, ::stride]        # (n, oh, ow, cin, kh, kw)
    oh, ow = view.shape[1], view.shape[2]
    cols = view.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * cin)
    out = cols @ w.reshape(kh * kw * cin, cout) + b
    return out.reshape(n, oh, ow, cout)


def conv2d_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                    stride: int = 1):
    """Gradients of conv2d_forward with respect to input, weights, bias."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    pt, pb = _same_pad(h, kh, stride)
    pl, pr = _same_pad(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    view = view[:, ::stride, ::stride]
    oh, ow = view.shape[1], view.shape[2]
    cols = view.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * cin)
    dflat = dout.reshape(n * oh * ow, cout)
    dw = (cols.T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(kh * kw * cin, cout).T)
    dcols = dcols.reshape(n, oh, ow, kh, kw, cin)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + oh * stride:stride,
                j:j + ow * stride:stride] += dcols[:, :, :, i, j]
    return dxp[:, pt:pt + h, pl:pl + wd], dw, db


# --- layers ------------------------------------------------------------------

class Conv2d:
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3,
                 stride: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32, name: str = "conv"):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (kernel * kernel * in_ch))
        self.w = (rng.normal(0, std, (kernel, kernel, in_ch, out_ch))
                  .astype(dtype))
        self.b = np.zeros(out_ch, dtype=dtype)
        self.stride = stride
        self.name = name
        self._x = None

    def forward(self, x):
        self._x = x
        return conv2d_forward(x, self.w, self.b, self.stride)

    def backward(self, dout):
        dx, self.dw, self.db = conv2d_backward(self._x, self.w, dout,
                                               self.stride)
        return (dx,)

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def param_names(self):
        return [f"{self.name}.w", f"{self.name}.b"]


class ReLU:
    def __init__(self, name: str = "relu"):
        self.name = name
        self._x = None  # kept (not just the mask) so gradient checks can
        # confirm no preactivation sits on the kink

    def forward(self, x):
        self._x = x
        return np.where(x > 0, x, 0)

    def backward(self, dout):
        return (np.where(self._x > 0, dout, 0),)

    def params(self):
        return []

    def grads(self):
        return []

    def param_names(self):
        return []


class Dense:
    def __init__(self, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 name: str = "dense"):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / in_dim)
        self.w = rng.normal(0, std, (in_dim, out_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.name = name
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        self.dw = self._x.T @ dout
        self.db = dout.sum(axis=0)
        return (dout @ self.w.T,)

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def param_names(self):
        return [f"{self.name}.w", f"{self.name}.b"]


class GlobalAvgPool:
    def __init__(self, name: str = "pool"):
        self.name = name
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._shape
        dx = np.broadcast_to(dout[:, None, None, :] / (h * w),
                             self._shape).copy()
        return (dx,)

    def params(self):
        return []

    def grads(self):
        return []

    def param_names(self):
        return []


class Concat:
    """Channel concatenation of two feature maps. Maps whose spatial sizes
    differ are center-cropped to the common minimum before stacking; the
    backward pass zero-embeds gradients back into the original extents."""

    def __init__(self, name: str = "concat"):
        self.name = name
        self._shapes = None
        self._offsets = None
        self._widths = None

    @staticmethod
    def aligned_size(shape_a, shape_b):
        """Common (H, W) after center-crop alignment; error if either map
        would lose half or more of a spatial dimension."""
        h = min(shape_a[0], shape_b[0])
        w = min(shape_a[1], shape_b[1])
        if 2 * h <= max(shape_a[0], shape_b[0]) or \
           2 * w <= max(shape_a[1], shape_b[1]):
            raise ValueError(
                f"paths cannot be fused: feature maps {tuple(shape_a)} and "
                f"{tuple(shape_b)} differ too much spatially")
        return h, w

    def forward(self, a, b):
        h, w = self.aligned_size(a.shape[1:3], b.shape[1:3])
        self._shapes = (a.shape, b.shape)
        self._offsets = []
        parts = []
        for x in (a, b):
            oy = (x.shape[1] - h) // 2
            ox = (x.shape[2] - w) // 2
            self._offsets.append((oy, ox))
            parts.append(x[:, oy:oy + h, ox:ox + w])
        self._widths = (a.shape[3], b.shape[3])
        return np.concatenate(parts, axis=3)

    def backward(self, dout):
        ca = self._widths[0]
        douts = (dout[..., :ca], dout[..., ca:])
        dins = []
        for x_shape, (oy, ox), d in zip(self._shapes, self._offsets, douts):
            dx = np.zeros(x_shape, dtype=dout.dtype)
            dx[:, oy:oy + d.shape[1], ox:ox + d.shape[2]] = d
            dins.append(dx)
        return tuple(dins)

    def params(self):
        return []

    def grads(self):
        return []

    def param_names(self):
        return []


class ResBottleneckBlock:
    """1x1 reduce, 3x3 (carries the stride), 1x1 expand, plus an identity
    or 1x1-conv shortcut; ReLU after the first two convs and after the
    residual addition. No batch normalization."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 name: str = "res"):
        rng = rng or np.random.default_rng(0)
        mid = max(out_ch // 4, 1)
        self.name = name
        self.conv1 = Conv2d(in_ch, mid, 1, 1, rng, dtype, f"{name}.conv1")
        self.relu1 = ReLU()
        self.conv2 = Conv2d(mid, mid, 3, stride, rng, dtype, f"{name}.conv2")
        self.relu2 = ReLU()
        self.conv3 = Conv2d(mid, out_ch, 1, 1, rng, dtype, f"{name}.conv3")
        if in_ch == out_ch and stride == 1:
            self.shortcut = None
        else:
            self.shortcut = Conv2d(in_ch, out_ch, 1, stride, rng, dtype,
                                   f"{name}.shortcut")
        self.relu_out = ReLU()

    def forward(self, x):
        r = self.conv3.forward(
            self.relu2.forward(self.conv2.forward(
                self.relu1.forward(self.conv1.forward(x)))))
        s = x if self.shortcut is None else self.shortcut.forward(x)
        return self.relu_out.forward(r + s)

    def backward(self, dout):
        dsum = self.relu_out.backward(dout)[0]
        dr = self.conv1.backward(
            self.relu1.backward(self.conv2.backward(
                self.relu2.backward(self.conv3.backward(dsum)[0])[0])[0])[0])[0]
        if self.shortcut is None:
            ds = dsum
        else:
            ds = self.shortcut.backward(dsum)[0]
        return (dr + ds,)

    def _sublayers(self):
        subs = [self.conv1, self.conv2, self.conv3]
        if self.shortcut is not None:
            subs.append(self.shortcut)
        return subs

    def params(self):
        return [p for s in self._sublayers() for p in s.params()]

    def grads(self):
        return [g for s in self._sublayers() for g in s.grads()]

    def param_names(self):
        return [n for s in self._sublayers() for n in s.param_names()]


# --- graph -------------------------------------------------------------------

@dataclass
class Node:
    name: str
    layer: object
    inputs: list


class ModelGraph:
    """Small DAG of layers in topological order. Nodes name their inputs,
    which are either graph input names or earlier node names."""

    def __init__(self, input_names: list[str], nodes: list[Node],
                 spec: dict | None = None):
        self.input_names = list(input_names)
        self.nodes = nodes
        self.spec = spec or {}
        seen = set(self.input_names)
        for node in nodes:
            for i in node.inputs:
                if i not in seen:
                    raise ValueError(f"node {node.name} uses undefined "
                                     f"input {i!r}")
            seen.add(node.name)

    def forward(self, inputs: dict) -> np.ndarray:
        missing = [k for k in self.input_names if k not in inputs]
        if missing:
            raise ValueError(f"missing model inputs {missing}")
        values = dict(inputs)
        for node in self.nodes:
            values[node.name] = node.layer.forward(
                *[values[i] for i in node.inputs])
        return values[self.nodes[-1].name]

    def backward(self, dout: np.ndarray) -> dict:
        """Backpropagate from the output; returns input-name -> gradient."""
        acc = {self.nodes[-1].name: dout}
        for node in reversed(self.nodes):
            if node.name not in acc:
                continue
            dins = node.layer.backward(acc.pop(node.name))
            for iname, d in zip(node.inputs, dins):
                acc[iname] = acc[iname] + d if iname in acc else d
        return {k: acc[k] for k in self.input_names if k in acc}

    def iter_layers(self):
        """Yield every layer, descending into composite blocks."""
        for node in self.nodes:
            yield node.layer
            if isinstance(node.layer, ResBottleneckBlock):
                yield node.layer.relu1
                yield node.layer.relu2
                yield node.layer.relu_out
                yield from node.layer._sublayers()

    def relu_preactivations(self):
        """Inputs cached by every ReLU during the last forward pass."""
        return [lay._x for lay in self.iter_layers()
                if isinstance(lay, ReLU) and lay._x is not None]

    def parameters(self):
        return [p for n in self.nodes for p in n.layer.params()]

    def gradients(self):
        return [g for n in self.nodes for g in n.layer.grads()]

    def param_names(self):
        return [m for n in self.nodes for m in n.layer.param_names()]

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != len(flat):
            raise ValueError(f"checkpoint has {len(flat)} values, model "
                             f"needs {offset}")


# --- builders ----------------------------------------------------------------

@dataclass
class NetConfig:
    full_shape: tuple = (60, 80, 5)   # full image after 2x downsampling
    crop_shape: tuple = (60, 60, 5)
    path_widths: tuple = (16, 32, 64)
    path_strides: tuple = (1, 2, 2)
    fusion_width: int = 128
    fusion_stride: int = 2
    seed: int = 0

    def __post_init__(self):
        if len(self.path_widths) != len(self.path_strides):
            raise ValueError("path_widths and path_strides lengths differ")


def _path_nodes(prefix, input_name, in_shape, cfg, rng, dtype):
    """Stem conv + ReLU + bottleneck stack; returns (nodes, out_name,
    out_shape)."""
    nodes = []
    h, w, c = in_shape
    w0 = cfg.path_widths[0]
    nodes.append(Node(f"{prefix}_stem",
                      Conv2d(c, w0, 3, 1, rng, dtype, f"{prefix}_stem"),
                      [input_name]))
    nodes.append(Node(f"{prefix}_stem_relu", ReLU(), [f"{prefix}_stem"]))
    prev, prev_ch = f"{prefix}_stem_relu", w0
    for k, (width, stride) in enumerate(zip(cfg.path_widths,
                                            cfg.path_strides)):
        name = f"{prefix}_block{k}"
        nodes.append(Node(name, ResBottleneckBlock(prev_ch, width, stride,
                                                   rng, dtype, name), [prev]))
        prev, prev_ch = name, width
        h, w = -(-h // stride), -(-w // stride)
    return nodes, prev, (h, w, prev_ch)


def build_multiscale_model(cfg: NetConfig | None = None,
                           dtype=np.float32) -> ModelGraph:
    """Two-path model: downsampled full image and face crop, fused by
    channel concatenation, then one bottleneck block, global average
    pooling, and a 7-wide dense head."""
    cfg = cfg or NetConfig()
    rng = np.random.default_rng(cfg.seed)
    full_nodes, full_out, full_shape = _path_nodes(
        "full", "full", cfg.full_shape, cfg, rng, dtype)
    crop_nodes, crop_out, crop_shape = _path_nodes(
        "crop", "crop", cfg.crop_shape, cfg, rng, dtype)
    Concat.aligned_size(full_shape[:2], crop_shape[:2])  # fusion feasibility
    nodes = full_nodes + crop_nodes
    nodes.append(Node("fuse", Concat("fuse"), [full_out, crop_out]))
    fused_ch = full_shape[2] + crop_shape[2]
    nodes.append(Node("fuse_block",
                      ResBottleneckBlock(fused_ch, cfg.fusion_width,
                                         cfg.fusion_stride, rng, dtype,
                                         "fuse_block"), ["fuse"]))
    nodes.append(Node("gap", GlobalAvgPool(), ["fuse_block"]))
    nodes.append(Node("head", Dense(cfg.fusion_width, 7, rng, dtype, "head"),
                      ["gap"]))
    spec = {"kind": "multiscale", "cfg": _cfg_dict(cfg)}
    return ModelGraph(["full", "crop"], nodes, spec)


def build_singlepath_model(cfg: NetConfig | None = None,
                           dtype=np.float32) -> ModelGraph:
    """Baseline: one path over the downsampled full image, same head."""
    cfg = cfg or NetConfig()
    rng = np.random.default_rng(cfg.seed)
    nodes, out, shape = _path_nodes("full", "full", cfg.full_shape, cfg, rng,
                                    dtype)
    nodes.append(Node("fuse_block",
                      ResBottleneckBlock(shape[2], cfg.fusion_width,
                                         cfg.fusion_stride, rng, dtype,
                                         "fuse_block"), [out]))
    nodes.append(Node("gap", GlobalAvgPool(), ["fuse_block"]))
    nodes.append(Node("head", Dense(cfg.fusion_width, 7, rng, dtype, "head"),
                      ["gap"]))
    spec = {"kind": "singlepath", "cfg": _cfg_dict(cfg)}
    return ModelGraph(["full"], nodes, spec)


def _cfg_dict(cfg: NetConfig) -> dict:
    d = asdict(cfg)
    for key in ("full_shape", "crop_shape", "path_widths", "path_strides"):
        d[key] = list(d[key])
    return d


def _cfg_from_dict(d: dict) -> NetConfig:
    return NetConfig(full_shape=tuple(d["full_shape"]),
                     crop_shape=tuple(d["crop_shape"]),
                     path_widths=tuple(d["path_widths"]),
                     path_strides=tuple(d["path_strides"]),
                     fusion_width=d["fusion_width"],
                     fusion_stride=d["fusion_stride"],
                     seed=d["seed"])


def save_model(model: ModelGraph, path) -> None:
    write_model(path, model.spec, model.parameters())


def load_model(path) -> ModelGraph:
    spec, flat = read_model(path)
    cfg = _cfg_from_dict(spec["cfg"])
    if spec["kind"] == "multiscale":
        model = build_multiscale_model(cfg)
    elif spec["kind"] == "singlepath":
        model = build_singlepath_model(cfg)
    else:
        raise ValueError(f"unknown model kind {spec['kind']!r}")
    model.set_flat_params(flat.astype(np.float32))
    return model


# --- loss and optimizer ------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries; returns (loss, dloss/dpred)."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None
    names: list = None


def init_adam(model: ModelGraph, lr: float = 1e-3) -> AdamState:
    params = model.parameters()
    return AdamState(lr=lr,
                     m=[np.zeros_like(p, dtype=np.float64) for p in params],
                     v=[np.zeros_like(p, dtype=np.float64) for p in params],
                     names=model.param_names())


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    state.step += 1
    t = state.step
    for k, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            name = state.names[k] if state.names else f"param[{k}]"
            raise FloatingPointError(f"non-finite gradient for {name}")
        state.m[k] = state.beta1 * state.m[k] + (1 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1 - state.beta2) * g ** 2
        m_hat = state.m[k] / (1 - state.beta1 ** t)
        v_hat = state.v[k] / (1 - state.beta2 ** t)
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


# --- training and inference --------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 30
    lr: float = 1e-3
    seed: int = 0
    # step schedule: (epoch, factor) pairs; at the start of each listed
    # epoch the learning rate is multiplied by the factor
    lr_drops: tuple = ()
    # std of additive Gaussian noise applied to every training input
    # channel per batch (training only); 0 disables augmentation
    aug_noise: float = 0.0
    # max per-sample circular shift (px) of the "crop" input during
    # training; the pose target is unchanged, teaching the crop path that
    # its features are translation-invariant within the window
    crop_jitter_px: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.aug_noise < 0:
            raise ValueError("aug_noise must be >= 0")
        if self.crop_jitter_px < 0:
            raise ValueError("crop_jitter_px must be >= 0")
        for pair in self.lr_drops:
            epoch, factor = pair
            if epoch < 0 or factor <= 0:
                raise ValueError(f"bad lr_drops entry {pair!r}")


def _batch_loss(model, inputs, targets, batch_size=64):
    total, n = 0.0, len(targets)
    for a in range(0, n, batch_size):
        sl = slice(a, min(a + batch_size, n))
        pred = model.forward({k: v[sl] for k, v in inputs.items()})
        total += np.sum((pred.astype(np.float64) - targets[sl]) ** 2)
    return total / (n * targets.shape[1])


def train(model: ModelGraph, inputs: dict, targets: np.ndarray,
          cfg: TrainConfig | None = None, val_inputs: dict | None = None,
          val_targets: np.ndarray | None = None):
    """Epoch-shuffled minibatch Adam on MSE. inputs maps each model input
    name to an (N, ...) array. Returns a loss curve: one
    (epoch, train_mse, val_mse) row per epoch (val_mse is NaN without a
    validation set)."""
    cfg = cfg or TrainConfig()
    n = len(targets)
    if n == 0:
        raise ValueError("empty training set")
    for k in model.input_names:
        if k not in inputs:
            raise ValueError(f"missing training input {k!r}")
        if len(inputs[k]) != n:
            raise ValueError(f"input {k!r} has {len(inputs[k])} rows, "
                             f"targets have {n}")
    state = init_adam(model, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    drops = {int(e): float(f) for e, f in cfg.lr_drops}
    curve = []
    for epoch in range(cfg.epochs):
        if epoch in drops:
            state.lr *= drops[epoch]
        order = rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for a in range(0, n, cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            batch = {k: v[idx] for k, v in inputs.items()}
            if cfg.crop_jitter_px and "crop" in batch:
                j = cfg.crop_jitter_px
                shifts = rng.integers(-j, j + 1, size=(len(idx), 2))
                crop = batch["crop"].copy()
                for i, (dy, dx) in enumerate(shifts):
                    crop[i] = np.roll(crop[i], (dy, dx), axis=(0, 1))
                batch["crop"] = crop
            if cfg.aug_noise > 0:
                batch = {k: v + rng.normal(0, cfg.aug_noise, v.shape)
                         .astype(v.dtype) for k, v in batch.items()}
            pred = model.forward(batch)
            loss, dpred = mse_loss(pred, targets[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"training diverged: loss={loss} at epoch {epoch}, "
                    f"batch {n_batches}, step {state.step}")
            model.backward(dpred.astype(pred.dtype))
            adam_step(model.parameters(), model.gradients(), state)
            epoch_loss += loss
            n_batches += 1
        val = np.nan
        if val_targets is not None and len(val_targets):
            val = _batch_loss(model, val_inputs, val_targets)
        curve.append((epoch, epoch_loss / n_batches, val))
    return curve


def save_loss_curve(curve, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_mse,val_mse\n")
        for epoch, tr, val in curve:
            f.write(f"{epoch},{tr:.10g},{val:.10g}\n")


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 area-average downsampling of an (H, W, C) image."""
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2]
                   + x[1::2, 1::2])


def frame_to_inputs(frame, crop_frame=None, depth_scale_mm: float = 1000.0):
    """Network inputs for one frame: channels stacked HWC, depth scaled to
    meters so every channel sits in a unit-ish range, full image
    downsampled by 2."""

    def stack(fr):
        arr = np.transpose(fr.channels(), (1, 2, 0)).astype(np.float32)
        arr[..., 3] /= depth_scale_mm
        return arr

    inputs = {"full": downsample2(stack(frame))[None].astype(np.float32)}
    if crop_frame is not None:
        inputs["crop"] = stack(crop_frame)[None]
    return inputs


def predict_pose(model: ModelGraph, inputs: dict,
                 bounds: WorkspaceBounds) -> RigidTransform:
    """Forward pass, then decode the 7-vector through the target scaling;
    the quaternion is renormalized (canonical w >= 0 handled by
    RigidTransform)."""
    out = model.forward(inputs)
    vec = np.asarray(out[0], dtype=np.float64)
    q = 2.0 * vec[3:] - 1.0
    if np.linalg.norm(q) < 1e-6:
        raise ValueError("degenerate orientation output")
    return target_to_pose(vec, bounds)
