"""Synthetic motion-signature dataset generation.

Every clip shows the same static base image with a small Gaussian blob
moving along a short straight segment. Identity is the (path, direction)
pair: by default each spatial path is shared by two subjects that traverse
it in opposite directions, so a single frame carries (almost) no identity
information and only the motion dynamics separate the classes. Per-clip
jitter (start frame, motion amplitude, pixel noise) prevents pixel-level
memorization.
"""

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import cv2
import numpy as np

from . import data as data_mod

DIRECTIONS = ("forward", "reverse")


@dataclass(frozen=True)
class SubjectSignature:
    """Which trajectory a subject owns and how it is traversed."""

    subject_id: int
    path_id: int
    direction: str
    motion_span: int = 15
    blob_sigma: float = 3.0

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")


@dataclass(frozen=True)
class SynthConfig:
    num_paths: int = 4
    clips_per_subject: int = 20
    frame_size: tuple[int, int] = (64, 64)  # (height, width)
    window: int = 64
    motion_span: int = 15
    blob_sigma: float = 3.0
    blob_amplitude: float = 0.85
    noise_std: float = 0.02
    start_jitter: int = 3
    amp_jitter: float = 0.10
    paired_directions: bool = True  # False: one subject per path, all forward
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))
        if self.num_paths < 1:
            raise ValueError("need at least one path")
        if self.num_subjects < 2:
            raise ValueError("need at least 2 subjects")
        if self.clips_per_subject < 4:
            raise ValueError("need at least 4 clips per subject")
        if not 2 <= self.motion_span <= self.window:
            raise ValueError("motion_span must be in [2, window]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if min(self.frame_size) < 16:
            raise ValueError("frames smaller than 16px leave no room for motion")

    @property
    def num_subjects(self):
        return 2 * self.num_paths if self.paired_directions else self.num_paths


def signatures(config):
    """One SubjectSignature per subject; (path, direction) pairs are unique."""
    sigs = []
    for p in range(config.num_paths):
        if config.paired_directions:
            sigs.append(SubjectSignature(2 * p, p, "forward",
                                         config.motion_span, config.blob_sigma))
            sigs.append(SubjectSignature(2 * p + 1, p, "reverse",
                                         config.motion_span, config.blob_sigma))
        else:
            sigs.append(SubjectSignature(p, p, "forward",
                                         config.motion_span, config.blob_sigma))
    return sigs


def path_segment(config, path_id):
    """Endpoints of a spatial path as ((y0, x0), (y1, x1)).

    Path centers sit on a ring around the image center (quadrant centers
    for the default four paths); segments run tangentially so distinct
    paths stay spatially separated.
    """
    h, w = config.frame_size
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ring = 0.28 * min(h, w)
    half = 0.11 * min(h, w)
    angle = 2.0 * math.pi * path_id / config.num_paths + math.pi / 4.0
    py = cy + ring * math.sin(angle)
    px = cx + ring * math.cos(angle)
    tangent = angle + math.pi / 2.0
    dy, dx = math.sin(tangent), math.cos(tangent)
    return (py - half * dy, px - half * dx), (py + half * dy, px + half * dx)


def _clip_rng(config, subject_id, clip_index):
    return np.random.default_rng([int(config.seed), int(subject_id), int(clip_index)])


def _draw_jitter(config, rng):
    base_start = (config.window - config.motion_span) // 2
    start = base_start
    if config.start_jitter > 0:
        start += int(rng.integers(-config.start_jitter, config.start_jitter + 1))
    start = min(max(start, 0), config.window - config.motion_span)
    amp = 1.0
    if config.amp_jitter > 0:
        amp += float(rng.uniform(-config.amp_jitter, config.amp_jitter))
    return start, amp


def trajectory(config, signature, start, amplitude):
    """Per-frame blob centers (window, 2) in (y, x) plus the apex index.

    The blob rests at the path start before the motion, traverses the
    segment over motion_span frames, then rests at the path end. Reverse
    subjects run the same parameterization mirrored in time, so the apex
    (temporal midpoint of the motion) lands on the same spatial point for
    both directions.
    """
    (y0, x0), (y1, x1) = path_segment(config, signature.path_id)
    my, mx = (y0 + y1) / 2.0, (x0 + x1) / 2.0
    # Amplitude jitter scales the segment about its midpoint.
    y0, x0 = my + (y0 - my) * amplitude, mx + (x0 - mx) * amplitude
    y1, x1 = my + (y1 - my) * amplitude, mx + (x1 - mx) * amplitude
    span = signature.motion_span
    centers = np.empty((config.window, 2), dtype=np.float64)
    for t in range(config.window):
        if t < start:
            u = 0.0
        elif t >= start + span:
            u = 1.0
        else:
            u = (t - start) / (span - 1)
        if signature.direction == "reverse":
            u = 1.0 - u
        centers[t, 0] = y0 + u * (y1 - y0)
        centers[t, 1] = x0 + u * (x1 - x0)
    apex = start + (span - 1) // 2
    return centers, apex


def clip_motion(config, signature, clip_index):
    """Ground-truth blob centers and apex for a generated clip (same jitter
    stream as `render_clip`)."""
    rng = _clip_rng(config, signature.subject_id, clip_index)
    start, amp = _draw_jitter(config, rng)
    return trajectory(config, signature, start, amp)


def base_image(config):
    """Shared low-frequency background, identical for every subject."""
    h, w = config.frame_size
    rng = np.random.default_rng([int(config.seed), 0xBA5E])
    coarse = rng.uniform(0.30, 0.55, size=(5, 5)).astype(np.float32)
    img = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
    return np.clip(img, 0.0, 1.0)


def _blob(shape, center, sigma, amplitude):
    h, w = shape
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
    return (amplitude * np.exp(-d2 / (2.0 * sigma * sigma))).astype(np.float32)


def render_clip(config, signature, clip_index, base=None):
    """Render one clip as uint8 grayscale frames (window, H, W); returns
    (frames, apex_index)."""
    if base is None:
        base = base_image(config)
    rng = _clip_rng(config, signature.subject_id, clip_index)
    start, amp = _draw_jitter(config, rng)
    centers, apex = trajectory(config, signature, start, amp)
    frames = np.empty((config.window,) + config.frame_size, dtype=np.uint8)
    for t in range(config.window):
        frame = base + _blob(config.frame_size, centers[t],
                             signature.blob_sigma, config.blob_amplitude)
        if config.noise_std > 0:
            frame = frame + rng.normal(0.0, config.noise_std,
                                       size=config.frame_size).astype(np.float32)
        frames[t] = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    return frames, apex


def clip_name(subject_id, clip_index):
    return f"s{subject_id:02d}_c{clip_index:03d}"


def parse_clip_id(clip_id):
    """Inverse of `clip_name`: returns (subject_id, clip_index)."""
    try:
        s, c = clip_id.split("_")
        return int(s[1:]), int(c[1:])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"not a synth clip id: {clip_id!r}") from exc


def generate_dataset(config, out_dir):
    """Write frames + manifest + provenance config under `out_dir`; returns
    the loaded DatasetManifest. Regeneration with the same config is
    byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = base_image(config)

    rows = []
    for sig in signatures(config):
        for i in range(config.clips_per_subject):
            cid = clip_name(sig.subject_id, i)
            clip_dir = out_dir / "frames" / cid
            clip_dir.mkdir(parents=True, exist_ok=True)
            frames, apex = render_clip(config, sig, i, base=base)
            for t in range(frames.shape[0]):
                ok = cv2.imwrite(str(clip_dir / f"{t:06d}.png"), frames[t])
                if not ok:
                    raise OSError(f"failed to write frame under {clip_dir}")
            rows.append({
                "clip_id": cid,
                "frame_dir": str(Path("frames") / cid),
                "subject_id": sig.subject_id,
                "apex_index": apex,
                "onset_index": apex - (sig.motion_span - 1) // 2,
                "offset_index": apex + sig.motion_span // 2,
                "dataset_name": "synth",
            })

    manifest_path = data_mod.write_manifest(out_dir / "manifest.csv", rows)
    with open(out_dir / "synth_config.json", "w") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return data_mod.load_manifest(manifest_path, target_size=config.frame_size)


def load_synth_config(dataset_dir):
    with open(Path(dataset_dir) / "synth_config.json") as fh:
        raw = json.load(fh)
    raw["frame_size"] = tuple(raw["frame_size"])
    return SynthConfig(**raw)


def apex_frames(manifest, channels=None):
    """Apex frame of every clip as (N, H, W, C) float32 plus labels.

    The single-frame view of the dataset used by the static control
    classifier.
    """
    frames, labels, clip_ids = [], [], []
    for e in manifest.entries:
        paths = data_mod.list_frames(e)
        img = data_mod._read_image(paths[e.apex_index])
        if channels is not None:
            img = data_mod._coerce_channels(img, channels)
        frames.append(data_mod.preprocess_frames([img], e.crop_rect, manifest.target_size)[0])
        labels.append(e.subject_id)
        clip_ids.append(e.clip_id)
    return np.stack(frames), np.asarray(labels, dtype=np.int64), clip_ids


def saliency_tube_radius(config, cell_size=8.0):
    """Dilation radius for the motion tube used in saliency checks.

    Blob support (3 sigma) widened by one saliency-map cell (the final
    stage sits at 1/8 input resolution by default) plus a small margin for
    trilinear interpolation spill.
    """
    return 3.0 * config.blob_sigma + cell_size + 3.0


def static_baseline_accuracy(manifest, seed, epochs=12, ratio=0.5, learning_rate=1e-3,
                             batch_size=16, base_channels=48, stage_depths=(1, 1)):
    """Rank-1 test accuracy of a classifier that sees only the apex frame.

    The no-motion control: with direction-paired subjects the apex frame is
    (near) identical for both members of a pair, capping this score around
    the share of clips whose path alone identifies the subject.
    """
    from . import evaluation, model, training

    train_m, test_m = data_mod.split_dataset(manifest, ratio, seed)
    if not test_m.entries:
        raise ValueError("empty test split")
    x_train, y_train, _ = apex_frames(train_m)
    x_test, y_test, test_ids = apex_frames(test_m)

    solver = training.SolverConfig(solver="adam", learning_rate=learning_rate,
                                   batch_size=batch_size, epochs=epochs, seed=seed)
    net = model.StaticFrameNet(
        num_classes=manifest.num_subjects,
        in_channels=x_train.shape[3],
        base_channels=base_channels,
        stage_depths=stage_depths,
        seed=training.derive_seed(seed, "static-baseline"),
    )
    frames_t = model.frames_to_tensor(x_train)
    training.fit_classifier(net, lambda idx: (frames_t[idx],), y_train, solver)

    net.eval()
    probs = model.predict_proba_frames(net, x_test, batch_size=batch_size)
    records = [
        evaluation.PredictionRecord(cid, int(y), int(np.argmax(p)), p)
        for cid, y, p in zip(test_ids, y_test, probs)
    ]
    return evaluation.rank1_accuracy(records)
