"""Dataset manifests, frame preprocessing, apex-centered windowing and splits.

A manifest is a CSV file with one row per clip:

    clip_id,frame_dir,subject_id,apex_index,onset_index,offset_index,
    crop_x,crop_y,crop_w,crop_h,dataset_name

Optional columns are left empty. `frame_dir` points at a directory of
zero-padded numbered image files (``000000.png`` ...) and is resolved
relative to the manifest file when not absolute.
"""

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

DEFAULT_WINDOW = 64

MANIFEST_FIELDS = [
    "clip_id",
    "frame_dir",
    "subject_id",
    "apex_index",
    "onset_index",
    "offset_index",
    "crop_x",
    "crop_y",
    "crop_w",
    "crop_h",
    "dataset_name",
]

# Resize targets of the supported source databases; anything else needs an
# explicit target size or falls back to the native frame size.
DATASET_SIZES = {
    "smic": (150, 150),
    "casme2": (300, 300),
    "casme ii": (300, 300),
    "samm": (400, 400),
}

_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass(frozen=True)
class ManifestEntry:
    """One clip: identity label, apex location and optional crop rectangle."""

    clip_id: str
    frame_dir: Path
    subject_id: int
    apex_index: int
    onset_index: int | None = None
    offset_index: int | None = None
    crop_rect: tuple[int, int, int, int] | None = None  # (x, y, w, h)
    dataset_name: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    target_size: tuple[int, int]  # (height, width)
    label_map: dict  # original subject id -> compact label

    @property
    def num_subjects(self):
        return len(self.label_map)

    def subjects(self):
        """Compact labels present in this manifest, sorted."""
        return sorted({e.subject_id for e in self.entries})


@dataclass
class ClipTensor:
    """Fixed-length normalized frame block, the unit fed to models."""

    data: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    subject_id: int
    clip_id: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError(f"clip {self.clip_id}: expected (T,H,W,C), got {self.data.shape}")
        if self.data.shape[3] not in (1, 3):
            raise ValueError(f"clip {self.clip_id}: channels must be 1 or 3")
        if not np.isfinite(self.data).all():
            raise ValueError(f"clip {self.clip_id}: non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError(f"clip {self.clip_id}: values outside [0, 1]")


def _read_image(path):
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return img


def list_frames(entry):
    """Sorted numbered frame files of a clip. Raises if the directory is empty."""
    if not entry.frame_dir.is_dir():
        raise FileNotFoundError(f"clip {entry.clip_id}: frame_dir {entry.frame_dir} missing")
    frames = sorted(
        p for p in entry.frame_dir.iterdir()
        if p.suffix.lower() in _IMAGE_EXTENSIONS
    )
    if not frames:
        raise FileNotFoundError(f"clip {entry.clip_id}: no frames in {entry.frame_dir}")
    return frames


def _parse_optional_int(value, row_id, field):
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise ValueError(f"clip {row_id}: bad {field} {value!r}") from exc


def load_manifest(path, target_size=None):
    """Load and validate a manifest CSV.

    Subject ids are compacted to 0..K-1 (sorted original order), so after
    loading, `entry.subject_id` is directly usable as the class label;
    `label_map` records the original id of each label. Entries are sorted by
    clip_id, and every subject must own at least two clips so a stratified
    split is possible. `target_size` overrides the per-database default; for
    unknown dataset names the native size of the first frame is used.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent

    raw_entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_FIELDS:
            raise ValueError(f"manifest {path}: header must be {','.join(MANIFEST_FIELDS)}")
        for row in reader:
            clip_id = row["clip_id"].strip()
            if not clip_id:
                raise ValueError(f"manifest {path}: empty clip_id")
            frame_dir = Path(row["frame_dir"])
            if not frame_dir.is_absolute():
                frame_dir = root / frame_dir
            subject = int(row["subject_id"])
            if subject < 0:
                raise ValueError(f"clip {clip_id}: negative subject_id")
            apex = int(row["apex_index"])
            onset = _parse_optional_int(row["onset_index"], clip_id, "onset_index")
            offset = _parse_optional_int(row["offset_index"], clip_id, "offset_index")
            crop_vals = [row[k] for k in ("crop_x", "crop_y", "crop_w", "crop_h")]
            if any(v != "" for v in crop_vals):
                if any(v == "" for v in crop_vals):
                    raise ValueError(f"clip {clip_id}: crop rectangle must give all 4 fields")
                crop = tuple(int(v) for v in crop_vals)
            else:
                crop = None
            raw_entries.append(
                ManifestEntry(
                    clip_id=clip_id,
                    frame_dir=frame_dir,
                    subject_id=subject,
                    apex_index=apex,
                    onset_index=onset,
                    offset_index=offset,
                    crop_rect=crop,
                    dataset_name=row["dataset_name"].strip(),
                )
            )

    if not raw_entries:
        raise ValueError(f"manifest {path}: no entries")

    seen = set()
    for e in raw_entries:
        if e.clip_id in seen:
            raise ValueError(f"duplicate clip_id {e.clip_id!r}")
        seen.add(e.clip_id)

    raw_entries.sort(key=lambda e: e.clip_id)

    # Per-clip structural checks against the actual frame files.
    for e in raw_entries:
        n = len(list_frames(e))
        if not 0 <= e.apex_index < n:
            raise ValueError(
                f"clip {e.clip_id}: apex out of range (apex={e.apex_index}, frames={n})"
            )
        if e.onset_index is not None and e.offset_index is not None:
            if not e.onset_index <= e.apex_index <= e.offset_index:
                raise ValueError(f"clip {e.clip_id}: onset/apex/offset out of order")

    # Label compaction in sorted original-id order.
    originals = sorted({e.subject_id for e in raw_entries})
    label_map = {orig: i for i, orig in enumerate(originals)}
    counts = {orig: 0 for orig in originals}
    for e in raw_entries:
        counts[e.subject_id] += 1
    single = [orig for orig, c in counts.items() if c < 2]
    if single:
        raise ValueError(
            f"subjects with a single clip cannot be split: {single}"
        )

    entries = tuple(replace(e, subject_id=label_map[e.subject_id]) for e in raw_entries)

    if target_size is None:
        names = {e.dataset_name.lower() for e in entries}
        known = {DATASET_SIZES[n] for n in names if n in DATASET_SIZES}
        if len(known) == 1:
            target_size = known.pop()
        elif len(known) > 1:
            raise ValueError(f"mixed dataset sizes {known}; pass target_size explicitly")
        else:
            probe = _read_image(list_frames(entries[0])[0])
            target_size = (probe.shape[0], probe.shape[1])
    target_size = (int(target_size[0]), int(target_size[1]))
    if target_size[0] <= 0 or target_size[1] <= 0:
        raise ValueError(f"target_size must be positive, got {target_size}")

    return DatasetManifest(entries=entries, target_size=target_size, label_map=label_map)


def write_manifest(path, rows):
    """Write manifest rows (dicts keyed by MANIFEST_FIELDS) as CSV."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for row in rows:
            out = {k: ("" if row.get(k) is None else row.get(k, "")) for k in MANIFEST_FIELDS}
            writer.writerow(out)
    return path


def _center_square(shape):
    h, w = shape[:2]
    side = min(h, w)
    y = (h - side) // 2
    x = (w - side) // 2
    return x, y, side, side


def preprocess_frames(raw_frames, crop_rect, target_size):
    """Crop, resize and scale a frame sequence to float32 [0, 1].

    When `crop_rect` is None, frames are center-cropped to the largest
    square. Already-normalized float input at the target geometry passes
    through unchanged, so the operation is idempotent.
    """
    frames = [np.asarray(f) for f in raw_frames]
    if not frames:
        raise ValueError("empty frame sequence")
    th, tw = int(target_size[0]), int(target_size[1])
    out = []
    for i, frame in enumerate(frames):
        if frame.ndim not in (2, 3):
            raise ValueError(f"frame {i}: expected 2D or 3D array, got shape {frame.shape}")
        h, w = frame.shape[:2]
        rect = crop_rect if crop_rect is not None else _center_square(frame.shape)
        x, y, cw, ch = (int(v) for v in rect)
        if cw <= 0 or ch <= 0:
            raise ValueError(f"frame {i}: zero-area crop rectangle {rect}")
        if x < 0 or y < 0 or x + cw > w or y + ch > h:
            raise ValueError(f"frame {i}: crop {rect} outside {w}x{h} frame")
        cropped = frame[y:y + ch, x:x + cw]
        if (ch, cw) != (th, tw):
            cropped = cv2.resize(cropped, (tw, th), interpolation=cv2.INTER_LINEAR)
        if np.issubdtype(cropped.dtype, np.integer):
            scale = float(np.iinfo(cropped.dtype).max)
            scaled = cropped.astype(np.float32) / scale
        else:
            scaled = cropped.astype(np.float32)
            if scaled.size and (scaled.min() < 0.0 or scaled.max() > 1.0):
                raise ValueError(f"frame {i}: float input outside [0, 1]")
        if scaled.ndim == 2:
            scaled = scaled[:, :, np.newaxis]
        out.append(scaled)
    return np.stack(out, axis=0)


def pad_to_window(frames, window):
    """Extend a short sequence to `window` frames by duplicating the ends.

    ceil((window-n)/2) copies of the first frame go in front and
    floor((window-n)/2) copies of the last frame at the back, keeping the
    original run near the temporal center.
    """
    n = len(frames)
    if n == 0:
        raise ValueError("cannot pad an empty sequence")
    if n > window:
        raise ValueError(f"sequence of {n} frames exceeds window {window}; window it first")
    front = math.ceil((window - n) / 2)
    back = (window - n) // 2
    items = [frames[0]] * front + list(frames) + [frames[n - 1]] * back
    if isinstance(frames, np.ndarray):
        return np.stack(items, axis=0)
    return items


def apex_window(frames, apex_index, window):
    """Select `window` frames around the apex.

    Long clips are sliced with the window centered on the apex and clamped
    to the clip bounds; short clips are padded via `pad_to_window`. The
    apex frame is always contained in the result.
    """
    n = len(frames)
    if not 0 <= apex_index < n:
        raise ValueError(f"apex_index {apex_index} out of range for {n} frames")
    if n < window:
        return pad_to_window(frames, window)
    start = min(max(apex_index - window // 2, 0), n - window)
    return frames[start:start + window]


def split_dataset(manifest, ratio, seed):
    """Per-subject stratified split into (train, test) manifests.

    Each subject's clips are shuffled with an RNG derived from
    (seed, subject) and cut at round(ratio * count), with at least one clip
    on each side. Deterministic for fixed inputs.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    by_subject = {}
    for e in manifest.entries:
        by_subject.setdefault(e.subject_id, []).append(e)

    train, test = [], []
    for subject in sorted(by_subject):
        clips = sorted(by_subject[subject], key=lambda e: e.clip_id)
        if len(clips) < 2:
            raise ValueError(f"subject {subject} has a single clip; split impossible")
        rng = np.random.default_rng([int(seed), int(subject)])
        order = rng.permutation(len(clips))
        n_train = int(math.floor(ratio * len(clips) + 0.5))
        n_train = min(max(n_train, 1), len(clips) - 1)
        picked = [clips[i] for i in order]
        train.extend(picked[:n_train])
        test.extend(picked[n_train:])

    def _sub(entries):
        return DatasetManifest(
            entries=tuple(sorted(entries, key=lambda e: e.clip_id)),
            target_size=manifest.target_size,
            label_map=dict(manifest.label_map),
        )

    return _sub(train), _sub(test)


def _coerce_channels(frame, channels):
    has_color = frame.ndim == 3 and frame.shape[2] >= 3
    if channels == 1 and has_color:
        return cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
    if channels == 3 and not has_color:
        squeezed = frame[:, :, 0] if frame.ndim == 3 else frame
        return cv2.cvtColor(squeezed, cv2.COLOR_GRAY2BGR)
    return frame


def load_clip(entry, target_size, window=DEFAULT_WINDOW, channels=None):
    """Read, preprocess and window one clip into a ClipTensor.

    `channels` forces grayscale (1) or color (3); by default the native
    channel count of the frame files is kept.
    """
    paths = list_frames(entry)
    selected = apex_window(paths, entry.apex_index, window)
    cache = {}
    frames = []
    for p in selected:
        if p not in cache:
            img = _read_image(p)
            if channels is not None:
                img = _coerce_channels(img, channels)
            cache[p] = img
        frames.append(cache[p])
    data = preprocess_frames(frames, entry.crop_rect, target_size)
    return ClipTensor(data=data, subject_id=entry.subject_id, clip_id=entry.clip_id)


def load_clips(manifest, window=DEFAULT_WINDOW, channels=None):
    """Load every clip in a manifest, sorted by clip_id."""
    return [
        load_clip(e, manifest.target_size, window=window, channels=channels)
        for e in manifest.entries
    ]
