"""Synthetic RGB-event tracking benchmark.

Five scene families ("splits") stress different conditions:

- ``easy``: slow target, normal light, no distractors
- ``low_light``: slow target seen through a dark, noisy RGB sensor
- ``overexposed``: slow target under a saturating gain
- ``fast_motion``: target moving several times faster than ``easy``
- ``distractor``: moving look-alike objects around the target

Per-sequence seeds come from :class:`numpy.random.SeedSequence` keyed on
(seed, subset, split, index), so train and test never share a seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..eventsim import (BoundingBox, Distractor, EventStream, SceneSpec, load_frames_png, load_scene_spec,
                        read_boxes_csv, read_events_csv, render_radiance, render_scene, save_frames_png,
                        save_scene_spec, simulate_events, to_uint8, write_boxes_csv, write_events_csv)

log = logging.getLogger(__name__)

SPLITS = ("easy", "low_light", "overexposed", "fast_motion", "distractor")
CONTRAST_THRESHOLD = 0.2

# speed ranges in px/frame
SPEEDS = {
    "easy": (0.8, 2.0),
    "low_light": (0.8, 2.0),
    "overexposed": (0.8, 2.0),
    "fast_motion": (6.0, 9.0),
    "distractor": (0.8, 2.0),
}


@dataclass
class Sequence:
    name: str
    split: str
    frames: list[np.ndarray]  # uint8 (3, H, W)
    boxes: list[BoundingBox]
    timestamps: np.ndarray
    events: EventStream
    visible: np.ndarray | None = None
    spec: SceneSpec | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)


def sequence_seed(seed: int, subset: str, split: str, index: int) -> int:
    key = [int(seed), 0 if subset == "train" else 1, SPLITS.index(split), int(index)]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _color(rng) -> tuple[float, float, float]:
    # luminance well away from the 0.35-0.6 background band so the target yields events
    hue = rng.uniform(0, 1)
    lum = rng.uniform(0.1, 0.2) if rng.uniform() < 0.5 else rng.uniform(0.78, 0.9)
    c = lum + 0.3 * np.array([np.cos(2 * np.pi * (hue + k / 3)) for k in range(3)])
    return tuple(float(v) for v in np.clip(c, 0.02, 1.0))


def make_scene(split: str, seed: int, n_frames: int = 30) -> SceneSpec:
    """Draw a random scene of the given family."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    rng = np.random.default_rng(seed)
    h, w = 260, 346
    size = float(rng.uniform(22, 34))
    aspect = float(rng.uniform(0.75, 1.33))
    tw, th = size * np.sqrt(aspect), size / np.sqrt(aspect)
    speed = float(rng.uniform(*SPEEDS[split]))
    angle = float(rng.uniform(0, 2 * np.pi))
    vx, vy = speed * np.cos(angle), speed * np.sin(angle)
    if split == "fast_motion":
        n_frames = min(n_frames, 20)
    # start so the straight path stays inside the canvas margins
    margin = 0.75 * max(tw, th)
    span_x, span_y = vx * (n_frames - 1), vy * (n_frames - 1)
    lo_x, hi_x = margin - min(0.0, span_x), w - margin - max(0.0, span_x)
    lo_y, hi_y = margin - min(0.0, span_y), h - margin - max(0.0, span_y)
    if lo_x > hi_x or lo_y > hi_y:
        raise ValueError("trajectory does not fit the canvas")
    start = (float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))

    spec = SceneSpec(
        height=h, width=w, n_frames=n_frames, fps=30.0,
        target_shape=str(rng.choice(["square", "disk"])),
        target_color=_color(rng), target_size=(tw, th), target_start=start,
        target_velocity=(vx, vy), size_rate=float(rng.uniform(-0.004, 0.004)),
        background_seed=int(rng.integers(2 ** 31)), background_contrast=float(rng.uniform(0.1, 0.25)),
        background_level=float(rng.uniform(0.35, 0.6)),
        noise_std=0.01, seed=int(rng.integers(2 ** 31)),
    )
    if split == "low_light":
        spec.illumination = float(rng.uniform(0.02, 0.04))
        spec.noise_std = 0.03
    elif split == "overexposed":
        spec.illumination = float(rng.uniform(3.0, 4.0))
    elif split == "distractor":
        for _ in range(int(rng.integers(2, 4))):
            ds = float(rng.uniform(0.8, 1.2)) * size
            da = float(rng.uniform(0, 2 * np.pi))
            dv = float(rng.uniform(0.5, 2.0))
            spec.distractors.append(Distractor(
                color=_color(rng), size=(ds, ds),
                start=(float(rng.uniform(ds, w - ds)), float(rng.uniform(ds, h - ds))),
                velocity=(dv * np.cos(da), dv * np.sin(da)),
                shape=str(rng.choice(["square", "disk"]))))
    spec.validate()
    return spec


def synthesize(spec: SceneSpec, name: str = "seq", split: str = "custom") -> Sequence:
    frames, boxes = render_scene(spec)
    frames = [to_uint8(f) for f in frames]
    radiance, _ = render_radiance(spec)
    ts = spec.timestamps()
    events = simulate_events(radiance, ts, CONTRAST_THRESHOLD)
    visible = np.array([_visible(b, spec) for b in boxes])
    return Sequence(name, split, frames, boxes, ts, events, visible, spec)


def _visible(box: BoundingBox, spec: SceneSpec) -> bool:
    x0, y0, x1, y1 = box.xyxy()
    return x1 > 0 and y1 > 0 and x0 < spec.width and y0 < spec.height


def generate_split(seed: int, subset: str, split: str, count: int, n_frames: int = 30) -> list[Sequence]:
    out = []
    for i in range(count):
        s = sequence_seed(seed, subset, split, i)
        out.append(synthesize(make_scene(split, s, n_frames), f"{split}_{i:04d}", split))
        out[-1].meta["seed"] = s
    return out


def split_counts(total: int, mix: list[str]) -> dict[str, int]:
    base, extra = divmod(total, len(mix))
    return {s: base + (1 if i < extra else 0) for i, s in enumerate(mix)}


def write_sequence(directory, seq: Sequence) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_frames_png(d / "frames", seq.frames)
    write_events_csv(d / "events.csv", seq.events)
    write_boxes_csv(d / "gt.csv", seq.boxes, {"visible": seq.visible.astype(int).tolist()})
    if seq.spec is not None:
        save_scene_spec(d / "scene.yaml", seq.spec)
    manifest = {"name": seq.name, "split": seq.split, "n_frames": len(seq),
                "timestamps": [float(t) for t in seq.timestamps],
                "resolution": list(seq.events.resolution), "n_events": len(seq.events),
                "contrast_threshold": CONTRAST_THRESHOLD, **seq.meta}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_sequence(directory) -> Sequence:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    frames = load_frames_png(d / "frames", as_uint8=True)
    boxes, extra = read_boxes_csv(d / "gt.csv")
    res = tuple(manifest["resolution"])
    events = read_events_csv(d / "events.csv", res)
    spec = load_scene_spec(d / "scene.yaml") if (d / "scene.yaml").exists() else None
    visible = extra.get("visible")
    return Sequence(manifest["name"], manifest["split"], frames, boxes,
                    np.asarray(manifest["timestamps"]), events,
                    None if visible is None else visible.astype(bool), spec,
                    {k: v for k, v in manifest.items() if k == "seed"})


def build_benchmark(out_dir, seed: int, n_train: int, n_test: int,
                    mix: Iterable[str] = SPLITS, test_mix: Iterable[str] | None = None,
                    n_frames: int = 30) -> dict:
    """Render train/test sequences to ``out_dir/{train,test}/<name>/`` plus a root manifest.

    ``n_train`` and ``n_test`` are totals spread round-robin over the splits.
    """
    if n_train <= 0 or n_test <= 0:
        raise ValueError("sequence counts must be positive")
    mix = list(mix)
    test_mix = list(test_mix) if test_mix is not None else mix
    root = Path(out_dir)
    entries = []
    for subset, total, splits in (("train", n_train, mix), ("test", n_test, test_mix)):
        for split, count in split_counts(total, splits).items():
            for seq in generate_split(seed, subset, split, count, n_frames):
                path = root / subset / seq.name
                write_sequence(path, seq)
                entries.append({"subset": subset, "split": split, "name": seq.name,
                                "path": str(path.relative_to(root)), "seed": seq.meta["seed"]})
    manifest = {"seed": seed, "n_train": n_train, "n_test": n_test, "sequences": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    log.info("wrote %d sequences to %s", len(entries), root)
    return manifest


def load_benchmark(root, subset: str | None = None, split: str | None = None) -> list[Sequence]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    return [load_sequence(root / e["path"]) for e in manifest["sequences"]
            if (subset is None or e["subset"] == subset) and (split is None or e["split"] == split)]


def mean_displacement(spec: SceneSpec) -> float:
    """Mean per-frame centre displacement of the target along its trajectory."""
    vx, vy = spec.target_velocity
    ax, ay = spec.target_accel
    k = np.arange(spec.n_frames - 1)
    dx = vx + ax * (k + 0.5)
    dy = vy + ay * (k + 0.5)
    return float(np.mean(np.hypot(dx, dy))) if len(k) else 0.0
