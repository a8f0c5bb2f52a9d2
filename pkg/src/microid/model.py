"""Dual-pathway spatiotemporal convolutional classifier.

The slow pathway sees every alpha-th frame at full channel width; the fast
pathway sees all frames at a beta fraction of the width. After each stage a
time-strided lateral convolution maps fast features onto the slow temporal
grid and is concatenated onto the slow channels. Global average pooling of
both pathways feeds a single fully connected identification head.
"""

import hashlib
import json
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

LATERAL_OUT_RATIO = 2  # lateral conv widens fast channels by this factor


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture + init hyperparameters.

    input_shape is (T, H, W, C) of the clips fed to the model; alpha must
    divide T and beta scales the fast pathway's channel widths.
    """

    num_classes: int
    input_shape: tuple[int, int, int, int]
    alpha: int = 4
    beta: float = 0.125
    base_channels: int = 48
    stage_depths: tuple[int, ...] = (1, 1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        t, h, w, c = self.input_shape
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if t % self.alpha != 0:
            raise ValueError(f"alpha={self.alpha} does not divide window length {t}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if not self.stage_depths or any(d < 1 for d in self.stage_depths):
            raise ValueError("stage_depths must be non-empty positive counts")
        if c not in (1, 3):
            raise ValueError("input channels must be 1 or 3")
        if h < 8 or w < 8:
            raise ValueError("spatial input must be at least 8x8")
        for width in self.slow_widths():
            if _round_half_up(self.beta * width) < 1:
                raise ValueError(
                    f"beta={self.beta} collapses a fast stage below one channel"
                )

    def slow_widths(self):
        return [self.base_channels * (2 ** s) for s in range(len(self.stage_depths))]

    def fast_widths(self):
        return [_round_half_up(self.beta * w) for w in self.slow_widths()]


class Stem3d(nn.Module):
    """Conv + BN + ReLU + spatial max-pool; H and W shrink 4x, T is kept."""

    def __init__(self, in_channels, out_channels, temporal_kernel=1):
        super().__init__()
        kt = temporal_kernel
        self.conv = nn.Conv3d(in_channels, out_channels, (kt, 7, 7),
                              stride=(1, 2, 2), padding=(kt // 2, 3, 3), bias=False)
        self.bn = nn.BatchNorm3d(out_channels)
        self.pool = nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))

    def forward(self, x):
        return self.pool(F.relu(self.bn(self.conv(x))))


class BasicBlock3d(nn.Module):
    """Two 3x3x3 convs with a residual connection; optional spatial stride."""

    def __init__(self, in_channels, out_channels, spatial_stride=1):
        super().__init__()
        s = spatial_stride
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3,
                               stride=(1, s, s), padding=1, bias=False)
        self.bn1 = nn.BatchNorm3d(out_channels)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(out_channels)
        if in_channels != out_channels or s != 1:
            self.proj = nn.Conv3d(in_channels, out_channels, 1,
                                  stride=(1, s, s), bias=False)
            self.proj_bn = nn.BatchNorm3d(out_channels)
        else:
            self.proj = None

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return F.relu(y + skip)


def _lateral_temporal_kernel(alpha):
    # Odd kernel spanning >= alpha frames so stride-alpha output length is
    # exactly T/alpha with symmetric padding.
    return alpha + 1 if alpha % 2 == 0 else alpha


class LateralFuse(nn.Module):
    """Time-strided conv carrying fast features onto the slow temporal grid."""

    def __init__(self, fast_channels, alpha):
        super().__init__()
        kt = _lateral_temporal_kernel(alpha)
        self.conv = nn.Conv3d(fast_channels, LATERAL_OUT_RATIO * fast_channels,
                              (kt, 1, 1), stride=(alpha, 1, 1),
                              padding=((kt - 1) // 2, 0, 0), bias=False)
        self.bn = nn.BatchNorm3d(LATERAL_OUT_RATIO * fast_channels)

    def forward(self, fast):
        return F.relu(self.bn(self.conv(fast)))


def _make_stage(in_channels, out_channels, depth, spatial_stride):
    blocks = [BasicBlock3d(in_channels, out_channels, spatial_stride)]
    for _ in range(depth - 1):
        blocks.append(BasicBlock3d(out_channels, out_channels, 1))
    return nn.Sequential(*blocks)


def init_parameters(module, seed):
    """Deterministic fan-in-scaled init: seeded normals for conv/FC weights,
    zeros for biases, identity for norm layers."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv3d, nn.Linear)):
                fan_in = m.weight[0].numel()
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm3d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
                m.num_batches_tracked.zero_()


class SlowFastNet(nn.Module):
    """The dual-pathway identification network.

    forward() takes the two pathway tensors in (B, C, T, H, W) layout; use
    `sample_pathways`/`clips_to_batch` to produce them from clip data.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        t, h, w, c = config.input_shape
        slow_w = config.slow_widths()
        fast_w = config.fast_widths()

        self.slow_stem = Stem3d(c, config.base_channels, temporal_kernel=1)
        self.fast_stem = Stem3d(c, fast_w[0], temporal_kernel=5)

        slow_stages, fast_stages, laterals = [], [], []
        slow_in = config.base_channels
        fast_in = fast_w[0]
        for s, depth in enumerate(config.stage_depths):
            stride = 1 if s == 0 else 2
            slow_stages.append(_make_stage(slow_in, slow_w[s], depth, stride))
            fast_stages.append(_make_stage(fast_in, fast_w[s], depth, stride))
            laterals.append(LateralFuse(fast_w[s], config.alpha))
            slow_in = slow_w[s] + LATERAL_OUT_RATIO * fast_w[s]
            fast_in = fast_w[s]
        self.slow_stages = nn.ModuleList(slow_stages)
        self.fast_stages = nn.ModuleList(fast_stages)
        self.laterals = nn.ModuleList(laterals)

        head_in = slow_w[-1] + LATERAL_OUT_RATIO * fast_w[-1] + fast_w[-1]
        self.head = nn.Linear(head_in, config.num_classes)

        init_parameters(self, config.seed)

    def forward(self, slow, fast):
        xs = self.slow_stem(slow)
        xf = self.fast_stem(fast)
        for stage_s, stage_f, lateral in zip(self.slow_stages, self.fast_stages,
                                             self.laterals):
            xs = stage_s(xs)
            xf = stage_f(xf)
            xs = torch.cat([xs, lateral(xf)], dim=1)
        pooled = torch.cat([xs.mean(dim=(2, 3, 4)), xf.mean(dim=(2, 3, 4))], dim=1)
        return self.head(pooled)

    @property
    def fingerprint(self):
        return architecture_fingerprint(self)


class StaticFrameNet(nn.Module):
    """Single-frame control classifier with the slow pathway's depth/widths.

    Takes (B, C, H, W) frames; internally runs the same 3D blocks with a
    singleton time axis so the backbone matches the slow pathway exactly.
    """

    def __init__(self, num_classes, in_channels, base_channels=48,
                 stage_depths=(1, 1), seed=0):
        super().__init__()
        stage_depths = tuple(stage_depths)
        widths = [base_channels * (2 ** s) for s in range(len(stage_depths))]
        self.stem = Stem3d(in_channels, base_channels, temporal_kernel=1)
        stages = []
        cin = base_channels
        for s, depth in enumerate(stage_depths):
            stages.append(_make_stage(cin, widths[s], depth, 1 if s == 0 else 2))
            cin = widths[s]
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(widths[-1], num_classes)
        init_parameters(self, seed)

    def forward(self, frames):
        x = frames.unsqueeze(2)  # (B, C, 1, H, W)
        x = self.stages(self.stem(x))
        return self.head(x.mean(dim=(2, 3, 4)))


def architecture_fingerprint(net):
    """Hash of the layer shapes plus the shape-invisible config knobs."""
    desc = {
        "parameters": [(n, tuple(p.shape)) for n, p in net.named_parameters()],
        "buffers": [(n, tuple(b.shape)) for n, b in net.named_buffers()],
    }
    config = getattr(net, "config", None)
    if config is not None:
        desc["alpha"] = config.alpha
        desc["input_shape"] = config.input_shape
        desc["num_classes"] = config.num_classes
    blob = json.dumps(desc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def weights_hash(net):
    """Hash of all parameter/buffer values; equal iff training was identical."""
    h = hashlib.sha256()
    for name, tensor in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return h.hexdigest()[:16]


def build_model(config):
    """Construct a SlowFastNet with deterministic seeded initialization."""
    net = SlowFastNet(config)
    net.eval()
    return net


def sample_pathways(clip_data, alpha):
    """Split (T, H, W, C) clip data into (slow, fast) frame volumes.

    The fast pathway keeps all T frames; the slow pathway takes every
    alpha-th frame starting at index 0.
    """
    arr = np.asarray(clip_data)
    t = arr.shape[0]
    if alpha < 1 or t % alpha != 0:
        raise ValueError(f"alpha={alpha} does not divide clip length {t}")
    return arr[::alpha], arr


def _to_torch(batch):
    # (B, T, H, W, C) -> (B, C, T, H, W); float64 stays double so numerical
    # checks can run the full forward pass at high precision
    batch = np.ascontiguousarray(batch)
    if batch.dtype != np.float64:
        batch = batch.astype(np.float32)
    t = torch.from_numpy(batch)
    return t.permute(0, 4, 1, 2, 3).contiguous()


def clips_to_batch(clips, alpha, expected_shape=None):
    """Stack ClipTensors (or bare arrays) into (slow, fast) torch batches."""
    arrays = []
    for c in clips:
        arr = c.data if hasattr(c, "data") else np.asarray(c)
        if expected_shape is not None and tuple(arr.shape) != tuple(expected_shape):
            cid = getattr(c, "clip_id", "<array>")
            raise ValueError(
                f"clip {cid}: shape {tuple(arr.shape)} != model input {tuple(expected_shape)}"
            )
        arrays.append(arr)
    full = np.stack(arrays)
    return _to_torch(full[:, ::alpha]), _to_torch(full)


def frames_to_tensor(frames):
    """(N, H, W, C) numpy frames -> (N, C, H, W) torch tensor."""
    t = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32))
    return t.permute(0, 3, 1, 2).contiguous()


def forward_clips(net, clips, batch_size=16):
    """Inference-mode logits for a list of clips; returns (N, K) float array."""
    if not clips:
        raise ValueError("empty clip set")
    net.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(clips), batch_size):
            slow, fast = clips_to_batch(clips[i:i + batch_size], net.config.alpha,
                                        expected_shape=net.config.input_shape)
            logits = net(slow, fast)
            if not torch.isfinite(logits).all():
                raise RuntimeError("non-finite logits")
            outs.append(logits.numpy())
    return np.concatenate(outs, axis=0)


def forward_clip(net, clip):
    """Logits for a single clip; returns (K,) float array."""
    return forward_clips(net, [clip], batch_size=1)[0]


def predict_proba_batch(net, clips, batch_size=16):
    logits = torch.from_numpy(forward_clips(net, clips, batch_size=batch_size))
    return F.softmax(logits, dim=1).numpy()


def predict_proba(net, clip):
    """Softmax class probabilities for a single clip."""
    return predict_proba_batch(net, [clip], batch_size=1)[0]


def predict_proba_frames(net, frames, batch_size=16):
    """Softmax probabilities of a StaticFrameNet over (N, H, W, C) frames."""
    net.eval()
    x = frames_to_tensor(frames)
    outs = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            outs.append(F.softmax(net(x[i:i + batch_size]), dim=1).numpy())
    return np.concatenate(outs, axis=0)


def config_to_dict(config):
    d = asdict(config)
    d["input_shape"] = list(d["input_shape"])
    d["stage_depths"] = list(d["stage_depths"])
    return d


def config_from_dict(d):
    d = dict(d)
    d["input_shape"] = tuple(d["input_shape"])
    d["stage_depths"] = tuple(d["stage_depths"])
    return ModelConfig(**d)


CHECKPOINT_FORMAT = "microid-checkpoint"


def save_checkpoint(net, path):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": config_to_dict(net.config),
        "fingerprint": net.fingerprint,
        "state_dict": net.state_dict(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path):
    """Rebuild a model from disk, verifying the architecture fingerprint."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    config = config_from_dict(payload["config"])
    net = SlowFastNet(config)
    if net.fingerprint != payload["fingerprint"]:
        raise ValueError(
            f"{path}: fingerprint mismatch "
            f"(stored {payload['fingerprint']}, rebuilt {net.fingerprint})"
        )
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return net
