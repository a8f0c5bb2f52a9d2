"""Spatiotemporal Grad-CAM for the dual-pathway classifier.

Channel weights are the global average of the target-class score's gradient
over the chosen pathway's final-stage activations (pooled jointly over
T' x H' x W'); the raw map is the ReLU of the weighted activation sum, and
the upsampled map is its trilinear interpolation to input resolution with
the maximum normalized to 1. Overlays blend a green tint with strength
proportional to saliency, for eyeballing whether the model looks at the
moving region.
"""

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from . import model as model_mod

PATHWAYS = ("slow", "fast")
DEFAULT_MAX_ALPHA = 0.6


@dataclass(frozen=True)
class SaliencyMap:
    """Raw pathway-resolution map plus its input-aligned upsampling."""

    raw: np.ndarray           # (T', H', W'), nonnegative, unnormalized
    upsampled: np.ndarray     # (T, H, W_px), max 1 unless raw is all zero
    channel_weights: np.ndarray  # (C',) pooled gradients per channel
    target_class: int
    pathway: str

    def __post_init__(self):
        if self.raw.ndim != 3 or self.upsampled.ndim != 3:
            raise ValueError("saliency volumes must be rank-3")
        if np.any(self.raw < 0) or np.any(self.upsampled < 0):
            raise ValueError("saliency values must be nonnegative")


def final_stage(net, pathway):
    """The module whose output activations Grad-CAM differentiates."""
    if pathway not in PATHWAYS:
        raise ValueError(f"unknown pathway {pathway!r}; expected one of {PATHWAYS}")
    return net.slow_stages[-1] if pathway == "slow" else net.fast_stages[-1]


def pathway_activations(net, clip, pathway="fast", perturb=None):
    """Forward a clip and return (logits, final-stage activations).

    `perturb`, if given, is added to the activations before they continue
    through the network — the knob finite-difference checks turn.
    """
    config = net.config
    slow, fast = model_mod.clips_to_batch([clip], config.alpha,
                                          expected_shape=config.input_shape)
    captured = {}

    def hook(_module, _inputs, output):
        if perturb is not None:
            output = output + perturb
        captured["acts"] = output
        return output

    handle = final_stage(net, pathway).register_forward_hook(hook)
    try:
        net.eval()
        logits = net(slow, fast)
    finally:
        handle.remove()
    return logits, captured["acts"]


def compute_gradcam(net, clip, target_class, pathway="fast"):
    """Class-discriminative saliency from the selected pathway's last stage."""
    config = net.config
    if not 0 <= int(target_class) < config.num_classes:
        raise ValueError(
            f"target_class {target_class} out of range for {config.num_classes} classes")
    target_class = int(target_class)

    with torch.enable_grad():
        logits, acts = pathway_activations(net, clip, pathway=pathway)
        if acts.numel() == 0:
            raise ValueError("zero-size activation volume")
        score = logits[0, target_class]
        grads = torch.autograd.grad(score, acts)[0]

    weights = grads.mean(dim=(2, 3, 4))                       # (1, C')
    weighted = (weights[:, :, None, None, None] * acts).sum(dim=1)
    raw = F.relu(weighted)                                    # (1, T', H', W')

    raw = raw.detach()
    t, h, w, _ = config.input_shape
    upsampled = F.interpolate(raw.unsqueeze(0), size=(t, h, w),
                              mode="trilinear", align_corners=False)[0, 0]
    peak = float(upsampled.max())
    if peak > 0:
        upsampled = upsampled / peak

    return SaliencyMap(
        raw=raw[0].detach().numpy().astype(np.float32),
        upsampled=upsampled.detach().numpy().astype(np.float32),
        channel_weights=weights[0].detach().numpy().astype(np.float64),
        target_class=target_class,
        pathway=pathway,
    )


def _frames_to_bgr_u8(clip_data):
    frames = np.round(np.asarray(clip_data) * 255.0).astype(np.uint8)
    if frames.shape[3] == 1:
        frames = np.repeat(frames, 3, axis=3)
    return frames


def render_overlays(smap, clip, out_dir, max_alpha=DEFAULT_MAX_ALPHA):
    """Write one green-tinted overlay PNG per input frame; returns the paths.

    Blend per pixel: out = (1 - a*s) * frame + a*s * green, with s the
    upsampled saliency and a the configured maximum opacity, so zero
    saliency reproduces the frame exactly.
    """
    if not 0 < max_alpha <= 1:
        raise ValueError("max_alpha must be in (0, 1]")
    data = clip.data if hasattr(clip, "data") else np.asarray(clip)
    if smap.upsampled.shape != data.shape[:3]:
        raise ValueError(
            f"saliency shape {smap.upsampled.shape} does not match clip {data.shape[:3]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    frames = _frames_to_bgr_u8(data).astype(np.float64)
    green = np.array([0.0, 255.0, 0.0])  # BGR
    paths = []
    for t in range(frames.shape[0]):
        s = (max_alpha * smap.upsampled[t])[:, :, None]
        blended = np.round((1.0 - s) * frames[t] + s * green).astype(np.uint8)
        path = out_dir / f"overlay_{t:06d}.png"
        if not cv2.imwrite(str(path), blended):
            raise OSError(f"could not write {path}")
        paths.append(path)
    return paths


def saliency_mass_in_tube(smap, centers, radius):
    """Fraction of upsampled saliency mass inside per-frame disks.

    centers is a (T, 2) array of (y, x) per input frame; the union of the
    disks over time is the 'tube' the motion occupies. Returns 0 when the
    map is identically zero.
    """
    vol = np.asarray(smap.upsampled, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (vol.shape[0], 2):
        raise ValueError(f"centers must be ({vol.shape[0]}, 2), got {centers.shape}")
    if radius <= 0:
        raise ValueError("radius must be positive")
    total = vol.sum()
    if total <= 0:
        return 0.0
    yy, xx = np.mgrid[0:vol.shape[1], 0:vol.shape[2]]
    inside = 0.0
    for t in range(vol.shape[0]):
        cy, cx = centers[t]
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        inside += float(vol[t][mask].sum())
    return inside / float(total)


def dump_raw_map(smap, path):
    """Persist the raw saliency volume in the packed-tensor container."""
    from . import packfile

    return packfile.write_packed(path, smap.raw[..., None])
