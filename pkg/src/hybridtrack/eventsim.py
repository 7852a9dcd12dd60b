"""Synthetic RGB scenes, a minimal event-camera model and crop geometry.

Scenes are rendered twice: once as scene radiance (linear, unbounded) and once
through an 8-bit RGB sensor that applies the illumination gain, read noise and
clipping. Events are generated from the radiance in the log domain, so the
simulated event camera keeps its dynamic range in low-light and overexposed
episodes while the RGB frames degrade.
"""

from __future__ import annotations

import csv
import io
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised for invalid scene, binning or crop parameters."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in center/size form, pixel units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ConfigError(f"degenerate box: w={self.w}, h={self.h}")
        if not np.all(np.isfinite([self.cx, self.cy, self.w, self.h])):
            raise ConfigError("box has non-finite coordinates")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def xyxy(self) -> np.ndarray:
        return np.array([self.cx - self.w / 2, self.cy - self.h / 2,
                         self.cx + self.w / 2, self.cy + self.h / 2])

    @classmethod
    def from_array(cls, a) -> "BoundingBox":
        return cls(*(float(v) for v in a))


@dataclass
class EventStream:
    """Time-ordered events stored column-wise."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    resolution: tuple[int, int]
    t_range: tuple[float, float]

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns have different lengths")
        if n:
            h, w = self.resolution
            if np.any(np.diff(self.t) < 0):
                raise ValueError("event timestamps must be nondecreasing")
            if self.x.min() < 0 or self.x.max() >= w or self.y.min() < 0 or self.y.max() >= h:
                raise ValueError("event coordinates outside sensor resolution")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be +1 or -1")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls, resolution, t_range=(0.0, 0.0)) -> "EventStream":
        z = np.zeros(0)
        return cls(z, z, z, z, tuple(resolution), tuple(t_range))

    def window(self, t0: float, t1: float) -> "EventStream":
        lo, hi = np.searchsorted(self.t, [t0, t1], side="left")
        return EventStream(self.t[lo:hi], self.x[lo:hi], self.y[lo:hi], self.p[lo:hi],
                           self.resolution, (t0, t1))

    @classmethod
    def concatenate(cls, streams: Sequence["EventStream"]) -> "EventStream":
        if not streams:
            raise ValueError("nothing to concatenate")
        t = np.concatenate([s.t for s in streams])
        order = np.argsort(t, kind="stable")
        return cls(t[order],
                   np.concatenate([s.x for s in streams])[order],
                   np.concatenate([s.y for s in streams])[order],
                   np.concatenate([s.p for s in streams])[order],
                   streams[0].resolution,
                   (min(s.t_range[0] for s in streams), max(s.t_range[1] for s in streams)))


@dataclass
class EventTensor:
    """Stack of event frames, shape (T, 3, H, W).

    Channel 0 counts positive events, channel 1 negative events. Channel 2 is
    the signed count difference clipped to [-c_max, c_max] and mapped to
    [0, 1] at pixels that saw any event; silent pixels stay 0.
    """

    data: np.ndarray
    t_bins: np.ndarray

    @property
    def steps(self) -> int:
        return self.data.shape[0]


@dataclass
class Distractor:
    color: tuple[float, float, float]
    size: tuple[float, float]
    start: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    shape: str = "square"


@dataclass
class SceneSpec:
    """Everything needed to render one synthetic sequence.

    ``illumination`` is a base gain; ``episodes`` lists ``[first, last, gain]``
    frame ranges that override it (low light < 1, overexposure > 1).
    """

    height: int = 260
    width: int = 346
    n_frames: int = 30
    fps: float = 30.0
    target_shape: str = "square"
    target_color: tuple[float, float, float] = (0.9, 0.2, 0.2)
    target_size: tuple[float, float] = (28.0, 28.0)
    target_start: tuple[float, float] = (173.0, 130.0)
    target_velocity: tuple[float, float] = (0.0, 0.0)
    target_accel: tuple[float, float] = (0.0, 0.0)
    size_rate: float = 0.0
    distractors: list[Distractor] = field(default_factory=list)
    background_seed: int = 0
    background_contrast: float = 0.25
    background_level: float = 0.5
    illumination: float = 1.0
    episodes: list[tuple[int, int, float]] = field(default_factory=list)
    noise_std: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("canvas size must be positive")
        if not self.fps > 0:
            raise ConfigError("frame rate must be positive")
        if self.n_frames < 1:
            raise ConfigError("need at least one frame")
        if self.target_shape not in ("square", "disk"):
            raise ConfigError(f"unknown target shape {self.target_shape!r}")
        if min(self.target_size) <= 0:
            raise ConfigError("target size must be positive")
        if self.illumination <= 0 or any(g <= 0 for _, _, g in self.episodes):
            raise ConfigError("illumination gains must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        for box in _trajectory(self):
            x0, y0, x1, y1 = box.xyxy()
            if x1 <= 0 or y1 <= 0 or x0 >= self.width or y0 >= self.height:
                raise ConfigError("target leaves the canvas")

    def timestamps(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.float64) / self.fps

    def gain(self, frame: int) -> float:
        g = self.illumination
        for first, last, eg in self.episodes:
            if first <= frame <= last:
                g = eg
        return float(g)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        d["distractors"] = [Distractor(**{k: tuple(v) if isinstance(v, list) else v
                                          for k, v in dd.items()})
                            for dd in d.get("distractors", [])]
        d["episodes"] = [tuple(e) for e in d.get("episodes", [])]
        for k in ("target_color", "target_size", "target_start", "target_velocity", "target_accel"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _trajectory(spec: SceneSpec) -> list[BoundingBox]:
    boxes = []
    w0, h0 = spec.target_size
    for k in range(spec.n_frames):
        cx = spec.target_start[0] + spec.target_velocity[0] * k + 0.5 * spec.target_accel[0] * k * k
        cy = spec.target_start[1] + spec.target_velocity[1] * k + 0.5 * spec.target_accel[1] * k * k
        s = 1.0 + spec.size_rate * k
        boxes.append(BoundingBox(cx, cy, w0 * s, h0 * s))
    return boxes


def _background(spec: SceneSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.background_seed)
    h, w = spec.height, spec.width
    # smooth texture: bilinear upsampling of a coarse random grid
    gh, gw = h // 16 + 2, w // 16 + 2
    coarse = rng.uniform(-1, 1, size=(3, gh, gw))
    ry = _interp_matrix(np.arange(h) / 16.0, gh)
    rx = _interp_matrix(np.arange(w) / 16.0, gw)
    tex = np.einsum("yi,cij,xj->cyx", ry, coarse, rx)
    tint = rng.uniform(0.8, 1.2, size=(3, 1, 1))
    return np.clip(spec.background_level * tint + spec.background_contrast * tex, 0.0, 1.0)


def _interp_matrix(coords: np.ndarray, n: int) -> np.ndarray:
    """Rows of linear-interpolation weights sampling ``n`` grid points at ``coords``.

    Coordinates outside [0, n-1] receive zero weight on the missing neighbours,
    which implements zero padding.
    """
    m = np.zeros((len(coords), n))
    i0 = np.floor(coords).astype(np.int64)
    frac = coords - i0
    for idx, wgt in ((i0, 1.0 - frac), (i0 + 1, frac)):
        ok = (idx >= 0) & (idx < n)
        np.add.at(m, (np.nonzero(ok)[0], idx[ok]), wgt[ok])
    return m


def _paint(img: np.ndarray, box: BoundingBox, color, shape: str) -> None:
    _, h, w = img.shape
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    if shape == "disk":
        mask = ((xs - box.cx) / (box.w / 2)) ** 2 + ((ys - box.cy) / (box.h / 2)) ** 2 <= 1.0
    else:
        mask = (np.abs(xs - box.cx) <= box.w / 2) & (np.abs(ys - box.cy) <= box.h / 2)
    img[:, mask] = np.asarray(color, dtype=img.dtype)[:, None]


def render_radiance(spec: SceneSpec) -> tuple[list[np.ndarray], list[BoundingBox]]:
    """Linear scene radiance per frame (illumination applied, no sensor)."""
    spec.validate()
    bg = _background(spec)
    boxes = _trajectory(spec)
    frames = []
    for k, box in enumerate(boxes):
        img = bg.copy()
        for d in spec.distractors:
            db = BoundingBox(d.start[0] + d.velocity[0] * k, d.start[1] + d.velocity[1] * k, *d.size)
            _paint(img, db, d.color, d.shape)
        _paint(img, box, spec.target_color, spec.target_shape)
        frames.append(img * spec.gain(k))
    return frames, boxes


def render_scene(spec: SceneSpec) -> tuple[list[np.ndarray], list[BoundingBox]]:
    """RGB sensor frames (3xHxW in [0, 1], 8-bit quantised) and ground-truth boxes."""
    radiance, boxes = render_radiance(spec)
    rng = np.random.default_rng(spec.seed)
    frames = []
    for img in radiance:
        if spec.noise_std > 0:
            img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
        frames.append(np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0)
    return frames, boxes


def _luminance(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        return frame.mean(axis=0)
    return frame


def simulate_events(frames: Sequence[np.ndarray], timestamps: Sequence[float],
                    contrast_threshold: float = 0.2, *, log_domain: bool = False,
                    eps: float = 1e-3) -> EventStream:
    """Emit threshold-crossing events between consecutive frames.

    Each pixel keeps a reference log intensity. Between frames k-1 and k the
    pixel emits ``floor(|L_k - ref| / threshold)`` events of sign
    ``sign(L_k - ref)`` and the reference moves by that many thresholds.
    Event times are found by linear interpolation of log intensity inside the
    frame interval. ``log_domain`` marks frames that already hold log intensity.
    """
    if not contrast_threshold > 0:
        raise ConfigError("contrast threshold must be positive")
    if len(frames) != len(timestamps):
        raise ValueError("one timestamp per frame required")
    if len(frames) == 0:
        raise ValueError("no frames")
    ts = np.asarray(timestamps, dtype=np.float64)
    lum = [_luminance(f) for f in frames]
    logs = lum if log_domain else [np.log(np.maximum(f, eps)) for f in lum]
    h, w = logs[0].shape
    if len(frames) < 2:
        return EventStream.empty((h, w), (ts[0], ts[0]))

    ref = logs[0].copy()
    chunks = []
    for k in range(1, len(logs)):
        prev, cur = logs[k - 1], logs[k]
        diff = cur - ref
        # the tiny slack keeps exact multiples of the threshold from being lost to rounding
        n = np.floor(np.abs(diff) / contrast_threshold + 1e-9).astype(np.int64)
        ys, xs = np.nonzero(n)
        if len(ys) == 0:
            continue
        counts = n[ys, xs]
        sign = np.sign(diff[ys, xs])
        rep = np.repeat(np.arange(len(ys)), counts)
        # crossing index 1..n within each pixel
        first = np.cumsum(counts) - counts
        idx = np.arange(len(rep)) - first[rep] + 1
        level = ref[ys, xs][rep] + sign[rep] * idx * contrast_threshold
        span = (cur - prev)[ys, xs][rep]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(span != 0, (level - prev[ys, xs][rep]) / span, 1.0)
        frac = np.clip(frac, 0.0, 1.0)
        t = ts[k - 1] + frac * (ts[k] - ts[k - 1])
        chunks.append((t, xs[rep], ys[rep], sign[rep].astype(np.int8)))
        ref[ys, xs] += sign * counts * contrast_threshold

    if not chunks:
        return EventStream.empty((h, w), (ts[0], ts[-1]))
    t = np.concatenate([c[0] for c in chunks])
    order = np.argsort(t, kind="stable")
    return EventStream(t[order],
                       np.concatenate([c[1] for c in chunks])[order],
                       np.concatenate([c[2] for c in chunks])[order],
                       np.concatenate([c[3] for c in chunks])[order],
                       (h, w), (ts[0], ts[-1]))


def events_to_frames(stream: EventStream, t0: float, t1: float, T: int,
                     size: tuple[int, int] | None = None, c_max: float = 5.0) -> EventTensor:
    """Bin events in [t0, t1) into ``T`` equal-width frames of 3 channels."""
    if T <= 0:
        raise ConfigError("T must be positive")
    if not t0 < t1:
        raise ConfigError("need t0 < t1")
    h, w = size if size is not None else stream.resolution
    if h <= 0 or w <= 0:
        raise ConfigError("empty frame size")
    edges = np.linspace(t0, t1, T + 1)
    data = np.zeros((T, 3, h, w), dtype=np.float64)
    sel = (stream.t >= t0) & (stream.t < t1) & (stream.x < w) & (stream.y < h)
    if np.any(sel):
        tb = np.clip(np.searchsorted(edges, stream.t[sel], side="right") - 1, 0, T - 1)
        ch = np.where(stream.p[sel] > 0, 0, 1)
        flat = ((tb * 3 + ch) * h + stream.y[sel]) * w + stream.x[sel]
        data.reshape(-1)[:] = np.bincount(flat, minlength=data.size)
        diff = np.clip(data[:, 0] - data[:, 1], -c_max, c_max)
        active = (data[:, 0] + data[:, 1]) > 0
        data[:, 2] = np.where(active, (diff + c_max) / (2 * c_max), 0.0)
    return EventTensor(data=data, t_bins=edges)


def normalize_event_frames(data: np.ndarray, cap: float = 5.0) -> np.ndarray:
    """Scale count channels by ``cap`` and clip everything to [0, 1]."""
    out = np.array(data, dtype=np.float64, copy=True)
    out[..., :2, :, :] /= cap
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class CropMap:
    """Affine map canvas -> crop: ``crop = (canvas - origin) * scale``."""

    x0: float
    y0: float
    scale: float

    def to_crop(self, box: BoundingBox) -> BoundingBox:
        return BoundingBox((box.cx - self.x0) * self.scale, (box.cy - self.y0) * self.scale,
                           box.w * self.scale, box.h * self.scale)

    def to_canvas(self, box: BoundingBox) -> BoundingBox:
        return BoundingBox(box.cx / self.scale + self.x0, box.cy / self.scale + self.y0,
                           box.w / self.scale, box.h / self.scale)


def crop_window(box: BoundingBox, context_factor: float, out_size: int) -> CropMap:
    side = context_factor * float(np.sqrt(box.w * box.h))
    return CropMap(box.cx - side / 2.0, box.cy - side / 2.0, out_size / side)


def crop_resize(source: np.ndarray, box: BoundingBox, context_factor: float,
                out_size: int | tuple[int, int]) -> tuple[np.ndarray, CropMap]:
    """Square crop of side ``context_factor * sqrt(w h)`` around ``box``, resized bilinearly.

    ``source`` is (..., H, W); leading axes (channels, time) are carried through.
    Regions beyond the canvas are zero.
    """
    if not isinstance(box, BoundingBox):
        box = BoundingBox.from_array(box)
    if isinstance(out_size, tuple):
        if out_size[0] != out_size[1]:
            raise ConfigError("only square crops are supported")
        out_size = out_size[0]
    if context_factor <= 0:
        raise ConfigError("context factor must be positive")
    cmap = crop_window(box, context_factor, out_size)
    src = np.asarray(source)
    h, w = src.shape[-2:]
    centers = (np.arange(out_size) + 0.5) / cmap.scale - 0.5
    ry = _interp_matrix(cmap.y0 + centers, h)
    rx = _interp_matrix(cmap.x0 + centers, w)
    rows, cols = np.nonzero(ry.any(axis=0))[0], np.nonzero(rx.any(axis=0))[0]
    if len(rows) == 0 or len(cols) == 0:
        return np.zeros(src.shape[:-2] + (out_size, out_size)), cmap
    # only the source window touched by the crop takes part in the product
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    out = np.einsum("yi,...ij,xj->...yx", ry[:, r0:r1], src[..., r0:r1, c0:c1], rx[:, c0:c1], optimize=True)
    return out, cmap


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_events_csv(path, stream: EventStream) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("t,x,y,p\n")
        np.savetxt(fh, np.column_stack([stream.t, stream.x, stream.y, stream.p]),
                   fmt=["%.9f", "%d", "%d", "%d"], delimiter=",")


def read_events_csv(path, resolution: tuple[int, int]) -> EventStream:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != "t,x,y,p":
            raise ValueError(f"{path}: expected header 't,x,y,p', got {header!r}")
        body = fh.read()
    if not body.strip():
        return EventStream.empty(resolution)
    arr = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return EventStream(arr[:, 0], arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64),
                       arr[:, 3].astype(np.int8), resolution,
                       (float(arr[0, 0]), float(arr[-1, 0])))


def write_boxes_csv(path, boxes: Sequence[BoundingBox], extra: dict | None = None) -> None:
    """CSV ``frame,cx,cy,w,h`` (plus any per-frame extra columns)."""
    extra = extra or {}
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "cx", "cy", "w", "h", *extra])
        for i, b in enumerate(boxes):
            wr.writerow([i, f"{b.cx:.6f}", f"{b.cy:.6f}", f"{b.w:.6f}", f"{b.h:.6f}",
                         *(col[i] for col in extra.values())])


def read_boxes_csv(path) -> tuple[list[BoundingBox], dict[str, np.ndarray]]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"frame", "cx", "cy", "w", "h"} <= set(rows[0]):
        raise ValueError(f"{path}: missing box columns")
    rows.sort(key=lambda r: int(r["frame"]))
    boxes = [BoundingBox(float(r["cx"]), float(r["cy"]), float(r["w"]), float(r["h"])) for r in rows]
    extra = {}
    if rows:
        for k in set(rows[0]) - {"frame", "cx", "cy", "w", "h"}:
            extra[k] = np.array([float(r[k]) for r in rows])
    return boxes, extra


def save_scene_spec(path, spec: SceneSpec) -> None:
    Path(path).write_text(yaml.safe_dump(json.loads(json.dumps(spec.to_dict())), sort_keys=False))


def load_scene_spec(path) -> SceneSpec:
    return SceneSpec.from_dict(yaml.safe_load(Path(path).read_text()) or {})


def save_frames_png(directory, frames: Sequence[np.ndarray]) -> None:
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        Image.fromarray(np.transpose(to_uint8(f), (1, 2, 0))).save(directory / f"{i:05d}.png")


def load_frames_png(directory, as_uint8: bool = False) -> list[np.ndarray]:
    """Frames as (3, H, W); float in [0, 1] unless ``as_uint8``."""
    from PIL import Image

    files = sorted(Path(directory).glob("*.png"))
    out = [np.ascontiguousarray(np.transpose(np.asarray(Image.open(f).convert("RGB")), (2, 0, 1))) for f in files]
    return out if as_uint8 else [f / 255.0 for f in out]


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """8-bit copy of a [0, 1] frame; uint8 input is returned unchanged."""
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        return frame
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
