"""Synthetic relational videos for training and verification.

Each video is a handful of square blobs moving by random walk on a small
image: actors (body in channel 0, a top/bottom "pose" pattern in channel
1) and context objects (channel 2).  Every integer second whose 2 s window
fits inside the video yields one clip sample with ground-truth actor boxes,
jittered scored proposals, and per-actor multi-hot labels over four
classes:

    0  pose      - the actor's own pattern bit, readable from its RoI
    1  near-obj  - some object center lies within `near_radius` pixels
    2  near-act  - some *other* actor lies within `pair_radius` pixels
    3  joint     - classes 1 and 2 both hold

The geometry is arranged so the relational classes cannot be shortcut:

* objects keep a minimum distance from every actor center and actors keep
  a minimum distance from each other, so neither relation is ever visible
  inside an actor's own RoI crop;
* the pose pattern is a stripe orientation (horizontal vs vertical), which
  survives RoI sampling but averages out under context pooling -- actor
  blobs are indistinguishable in the context map, so deciding "near *me*"
  with several actors present requires joining context layout with the
  actor's spatial position rather than matching appearances.

The "temporal" variant dims objects at random on a per-clip basis while
labels follow the undimmed geometry: single-clip evidence flickers, the
surrounding clips carry it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .boxes import ActorBox
from .errors import ConfigurationError, DataError

NUM_CLASSES = 4


@dataclass(frozen=True)
class SyntheticSpec:
    num_videos: int = 10
    duration_s: int = 21          # clips at t = 1 .. duration-1
    height: int = 32
    width: int = 32
    frames_per_clip: int = 2
    min_actors: int = 1
    max_actors: int = 3
    max_objects: int = 2
    actor_half: int = 3           # blob spans 2*half+1 pixels
    object_half: int = 2
    object_gap: float = 6.5       # objects never closer than this to an actor center
    actor_gap: float = 7.5        # actors never closer than this to each other
    near_radius: float = 11.0     # class 1: object-center distance
    pair_radius: float = 13.0     # class 2: other-actor distance
    walk_std: float = 2.0         # per-second random-walk step, pixels
    pattern_gain: float = 1.0
    noise_std: float = 0.02
    variant: str = "static"       # "static" | "temporal"
    flicker_prob: float = 0.45    # temporal variant: chance a clip dims an object
    dim_gain: float = 0.1

    def __post_init__(self):
        if self.variant not in ("static", "temporal"):
            raise ConfigurationError(f"unknown dataset variant {self.variant!r}")
        if self.duration_s < 2:
            raise ConfigurationError("videos must be at least 2 s long")
        if not 1 <= self.min_actors <= self.max_actors:
            raise ConfigurationError("need 1 <= min_actors <= max_actors")
        if self.object_gap >= self.near_radius or self.actor_gap >= self.pair_radius:
            raise ConfigurationError("exclusion gaps must leave room inside the radii")


@dataclass
class ClipSample:
    video_id: str
    time_s: int
    frames: np.ndarray                    # (T, 3, H, W) float32
    gt_boxes: list[ActorBox]
    gt_labels: np.ndarray                 # (N, NUM_CLASSES) float32 in {0,1}
    proposals: list[ActorBox]

    @property
    def frame_id(self) -> str:
        return f"{self.video_id}:{self.time_s}"


def _paint(frame, channel, cx, cy, half, value, height, width):
    x0, x1 = max(int(round(cx)) - half, 0), min(int(round(cx)) + half, width - 1)
    y0, y1 = max(int(round(cy)) - half, 0), min(int(round(cy)) + half, height - 1)
    frame[channel, y0:y1 + 1, x0:x1 + 1] = value
    return x0, y0, x1, y1


def _paint_stripes(frame, channel, cx, cy, half, value, horizontal, height, width):
    x0, x1 = max(int(round(cx)) - half, 0), min(int(round(cx)) + half, width - 1)
    y0, y1 = max(int(round(cy)) - half, 0), min(int(round(cy)) + half, height - 1)
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    mask = (yy % 2 == 0) if horizontal else (xx % 2 == 0)
    region = frame[channel, y0:y1 + 1, x0:x1 + 1]
    region[mask] = value


def _blob_box(cx, cy, half, height, width, score=1.0) -> ActorBox:
    x0 = max(round(cx) - half, 0)
    x1 = min(round(cx) + half, width - 1)
    y0 = max(round(cy) - half, 0)
    y1 = min(round(cy) + half, height - 1)
    return ActorBox(x0 / width, y0 / height, (x1 + 1) / width, (y1 + 1) / height, score)


def _push_apart(pos, anchors, gap, rng):
    """Move `pos` radially until it is at least `gap` from every anchor."""
    pos = np.asarray(pos, dtype=np.float64)
    for _ in range(4):
        moved = False
        for a in anchors:
            delta = pos - a
            dist = float(np.hypot(*delta))
            if dist >= gap:
                continue
            if dist < 1e-6:
                angle = rng.uniform(0.0, 2 * np.pi)
                delta, dist = np.array([np.cos(angle), np.sin(angle)]), 1.0
            pos = a + delta / dist * gap
            moved = True
        if not moved:
            break
    return pos


def _simulate_tracks(rng, spec: SyntheticSpec, n_actors: int, n_objects: int):
    """Per-second positions with minimum-separation constraints enforced."""
    h, w = spec.height, spec.width
    a_margin = spec.actor_half + 1
    o_margin = spec.object_half + 1

    def clip_a(p):
        return np.clip(p, a_margin, [w - a_margin, h - a_margin])

    def clip_o(p):
        return np.clip(p, o_margin, [w - o_margin, h - o_margin])

    actors = []
    for k in range(n_actors):
        p = rng.uniform(a_margin, [w - a_margin, h - a_margin])
        p = clip_a(_push_apart(p, actors, spec.actor_gap, rng))
        actors.append(p)
    objects = []
    for _ in range(n_objects):
        p = rng.uniform(o_margin, [w - o_margin, h - o_margin])
        p = clip_o(_push_apart(p, actors, spec.object_gap, rng))
        objects.append(p)

    actor_tracks, object_tracks = [list(actors)], [list(objects)]
    for _ in range(spec.duration_s):
        prev_a, prev_o = actor_tracks[-1], object_tracks[-1]
        step_a = []
        for k in range(n_actors):
            p = clip_a(prev_a[k] + rng.normal(0.0, spec.walk_std, size=2))
            p = clip_a(_push_apart(p, step_a, spec.actor_gap, rng))
            step_a.append(p)
        step_o = []
        for k in range(n_objects):
            p = clip_o(prev_o[k] + rng.normal(0.0, spec.walk_std, size=2))
            p = clip_o(_push_apart(p, step_a, spec.object_gap, rng))
            step_o.append(p)
        actor_tracks.append(step_a)
        object_tracks.append(step_o)
    return actor_tracks, object_tracks


def make_synthetic_dataset(spec: SyntheticSpec, seed: int) -> list[ClipSample]:
    """Deterministic: a fixed (spec, seed) always produces identical bytes."""
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    clips: list[ClipSample] = []
    for v in range(spec.num_videos):
        video_id = f"video{seed}_{v:03d}"
        n_actors = int(rng.integers(spec.min_actors, spec.max_actors + 1))
        n_objects = int(rng.integers(0, spec.max_objects + 1))
        actor_tracks, object_tracks = _simulate_tracks(rng, spec, n_actors, n_objects)
        patterns = rng.integers(0, 2, size=n_actors)
        dims = rng.uniform(size=(spec.duration_s + 1, max(n_objects, 1)))

        for t in range(1, spec.duration_s):
            actor_pos = actor_tracks[t]
            object_pos = object_tracks[t]
            if spec.variant == "temporal":
                visible = np.where(dims[t, :n_objects] < spec.flicker_prob,
                                   spec.dim_gain, 1.0)
            else:
                visible = np.ones(n_objects)

            base = np.zeros((3, h, w), dtype=np.float32)
            for k, (ax, ay) in enumerate(actor_pos):
                _paint(base, 0, ax, ay, spec.actor_half, 1.0, h, w)
                # pose pattern: stripe orientation, invisible after pooling
                _paint_stripes(base, 1, ax, ay, spec.actor_half, spec.pattern_gain,
                               horizontal=bool(patterns[k]), height=h, width=w)
            for k, (ox, oy) in enumerate(object_pos):
                _paint(base, 2, ox, oy, spec.object_half, float(visible[k]), h, w)

            frames = np.stack([
                base + rng.normal(0.0, spec.noise_std, size=base.shape)
                for _ in range(spec.frames_per_clip)
            ]).astype(np.float32)

            boxes, labels, proposals = [], [], []
            for k, (ax, ay) in enumerate(actor_pos):
                box = _blob_box(ax, ay, spec.actor_half, h, w)
                near_obj = any(np.hypot(ax - ox, ay - oy) <= spec.near_radius
                               for ox, oy in object_pos)
                near_act = any(np.hypot(ax - bx, ay - by) <= spec.pair_radius
                               for m, (bx, by) in enumerate(actor_pos) if m != k)
                row = np.array([
                    float(patterns[k]),
                    float(near_obj),
                    float(near_act),
                    float(near_obj and near_act),
                ], dtype=np.float32)
                boxes.append(box)
                labels.append(row)
                # one confident jittered proposal per actor, sometimes extras
                jx = np.clip(ax + rng.normal(0.0, 0.5), 0, w - 1)
                jy = np.clip(ay + rng.normal(0.0, 0.5), 0, h - 1)
                proposals.append(_blob_box(jx, jy, spec.actor_half, h, w,
                                           score=float(rng.uniform(0.87, 0.99))))
                if rng.uniform() < 0.3:
                    jx = np.clip(ax + rng.normal(0.0, 1.5), 0, w - 1)
                    jy = np.clip(ay + rng.normal(0.0, 1.5), 0, h - 1)
                    proposals.append(_blob_box(jx, jy, spec.actor_half, h, w,
                                               score=float(rng.uniform(0.4, 0.84))))
            if rng.uniform() < 0.3:
                m = spec.actor_half + 1
                bx, by = rng.uniform([m, m], [w - m, h - m])
                proposals.append(_blob_box(bx, by, spec.actor_half, h, w,
                                           score=float(rng.uniform(0.2, 0.8))))

            clips.append(ClipSample(
                video_id=video_id,
                time_s=t,
                frames=frames,
                gt_boxes=boxes,
                gt_labels=np.stack(labels) if labels else np.zeros((0, NUM_CLASSES), np.float32),
                proposals=proposals,
            ))
    return clips


def label_frequencies(clips: list[ClipSample]) -> np.ndarray:
    """Fraction of actor boxes positive per class (generator tuning aid)."""
    rows = np.concatenate([c.gt_labels for c in clips if len(c.gt_labels)], axis=0)
    return rows.mean(axis=0)


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return {f.name: getattr(spec, f.name) for f in fields(spec)}


def spec_from_dict(d: dict) -> SyntheticSpec:
    known = {f.name for f in fields(SyntheticSpec)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown data keys: {sorted(unknown)}")
    return SyntheticSpec(**d)


# -- on-disk format -----------------------------------------------------------
#
# manifest.json lists every clip with its boxes/labels and the relative path
# of its raw array file; arrays are "u32 rank | rank*u32 dims | float32 LE".


def write_array(path, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(np.uint32(arr.ndim).tobytes())
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    rank = int(np.frombuffer(blob, dtype="<u4", count=1)[0])
    shape = np.frombuffer(blob, dtype="<u4", count=rank, offset=4)
    return np.frombuffer(blob, dtype="<f4", offset=4 + 4 * rank).copy().reshape(shape)


def save_dataset(clips: list[ClipSample], directory):
    directory = Path(directory)
    (directory / "arrays").mkdir(parents=True, exist_ok=True)
    manifest = {"clips": []}
    for i, clip in enumerate(clips):
        rel = f"arrays/{i:06d}.bin"
        write_array(directory / rel, clip.frames)
        manifest["clips"].append({
            "video_id": clip.video_id,
            "time_s": clip.time_s,
            "array": rel,
            "gt": [
                {"box": box.as_list()[:4], "labels": [int(x) for x in labels]}
                for box, labels in zip(clip.gt_boxes, clip.gt_labels)
            ],
            "proposals": [p.as_list() for p in clip.proposals],
        })
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_dataset(directory) -> list[ClipSample]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"dataset manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    clips = []
    for rec in manifest["clips"]:
        boxes = [ActorBox(*g["box"]) for g in rec["gt"]]
        labels = (np.array([g["labels"] for g in rec["gt"]], dtype=np.float32)
                  if rec["gt"] else np.zeros((0, NUM_CLASSES), np.float32))
        proposals = [ActorBox(p[0], p[1], p[2], p[3], p[4]) for p in rec["proposals"]]
        clips.append(ClipSample(
            video_id=rec["video_id"],
            time_s=rec["time_s"],
            frames=read_array(directory / rec["array"]),
            gt_boxes=boxes,
            gt_labels=labels,
            proposals=proposals,
        ))
    return clips
