"""The full detector: backbone -> tokens -> relation encoder -> consensus heads.

One `RelationDetector` owns every parameter (backbone, embedders, encoder
stacks, short- and long-term heads) in a single flat `ParamStore`, built in
a fixed order from one seed, so checkpoints round-trip bit-exactly and two
detectors built with the same config+seed are identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .backbone import backbone_params, toy_backbone
from .bank import BankEntry, RelationBank
from .boxes import ActorBox, filter_boxes, roi_align
from .checkpoint import load_into_store, save_checkpoint
from .consensus import (
    classify,
    consensus_width,
    long_term_logits,
    short_term_logits,
)
from .data import ClipSample
from .encoder import EncoderConfig, build_relation_params, encode_relations
from .errors import ConfigurationError, DataError
from .metrics import Detection, GroundTruth, MapResult, frame_map
from .nn import attention_params, layer_norm_params, uniform_weight
from .tensor import ParamStore, Tensor, no_grad
from .tokens import GridSpec, build_distance_table, embed_actors, embed_patches, pool_to_grid


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    mid_channels: int = 8
    feat_channels: int = 16
    num_classes: int = 4
    omega: int = 5
    grid: GridSpec = field(default_factory=GridSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name not in ("grid", "encoder")}
        d["grid"] = {"side": self.grid.side, "patch": self.grid.patch}
        d["encoder"] = {f.name: getattr(self.encoder, f.name)
                        for f in fields(EncoderConfig)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model keys: {sorted(unknown)}")
        if "grid" in d:
            d["grid"] = _strict_build(GridSpec, d["grid"], "model.grid")
        if "encoder" in d:
            d["encoder"] = _strict_build(EncoderConfig, d["encoder"], "model.encoder")
        return cls(**d)


def _strict_build(cls, d: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown keys under {where}: {sorted(unknown)}")
    return cls(**d)


def build_head_params(store: ParamStore, rng, cfg: ModelConfig) -> dict:
    """Short- and long-term consensus heads over width-3d features."""
    width = consensus_width(cfg.encoder.dim)
    att = cfg.encoder.attention()

    def mlp(prefix):
        return {
            "w1": store.create(f"{prefix}.w1", uniform_weight(rng, width, width)),
            "b1": store.create(f"{prefix}.b1", np.zeros(width, np.float32)),
            "w2": store.create(f"{prefix}.w2", uniform_weight(rng, width, cfg.num_classes)),
            "b2": store.create(f"{prefix}.b2", np.zeros(cfg.num_classes, np.float32)),
        }

    from .nn import AttentionConfig  # local import to avoid a wide surface
    long_att = AttentionConfig(width, att.heads, 1)
    return {
        "short": {"mlp": mlp("head_short.mlp")},
        "long": {
            "attn": attention_params(store, "head_long.attn", rng, long_att),
            "ln": layer_norm_params(store, "head_long.ln", width),
            "dist": store.create("head_long.dist",
                                 build_distance_table(rng, cfg.omega, width)),
            "mlp": mlp("head_long.mlp"),
        },
    }


class RelationDetector:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        self.backbone = backbone_params(self.store, rng, cfg.in_channels,
                                        cfg.mid_channels, cfg.feat_channels)
        self.relation = build_relation_params(self.store, rng, cfg.encoder,
                                              cfg.grid, cfg.feat_channels)
        heads = build_head_params(self.store, rng, cfg)
        self.head_short = heads["short"]
        self.head_long = heads["long"]

    # -- forward paths ------------------------------------------------------

    def feature_map(self, frames) -> Tensor:
        return toy_backbone(frames, self.backbone)

    def relation_streams(self, frames, boxes: list[ActorBox]):
        """Backbone + tokenization + relation encoding for one clip."""
        fmap = self.feature_map(frames)
        pooled = pool_to_grid(fmap, self.cfg.grid)
        ctx = embed_patches(pooled, self.relation["embed"]["patch"], self.cfg.grid)
        rois = [roi_align(fmap, b) for b in boxes]
        from .tensor import concat
        c = self.cfg.feat_channels
        roi_batch = concat([r.reshape((1, c, 7, 7)) for r in rois], axis=0)
        actors = embed_actors(roi_batch, self.relation["embed"]["actor"])
        return encode_relations(ctx, actors, boxes, self.relation,
                                self.cfg.encoder, self.cfg.grid)

    def short_forward(self, frames, boxes: list[ActorBox]):
        """Per-actor consensus features (N, 3d) and class logits (N, classes)."""
        x, y = self.relation_streams(frames, boxes)
        return short_term_logits(x, y, self.head_short["mlp"])

    def long_forward(self, features, support):
        """Long-term logits from clip features and a bank window."""
        return long_term_logits(features, support, self.head_long,
                                self.cfg.encoder.heads)

    # -- parameter groups -----------------------------------------------------

    def all_parameters(self):
        return list(self.store.items())

    def long_head_parameters(self):
        return [(n, t) for n, t in self.store.items() if n.startswith("head_long.")]

    def set_trainable(self, names_prefixes=None):
        """Restrict gradient flow to parameters under the given prefixes."""
        for name, t in self.store.items():
            t.requires_grad = (
                names_prefixes is None
                or any(name.startswith(p) for p in names_prefixes)
            )

    # -- persistence ------------------------------------------------------------

    def save(self, path, extra_config: dict | None = None):
        config = {"model": self.cfg.to_dict()}
        if extra_config:
            config.update(extra_config)
        save_checkpoint(path, config, self.store)

    @classmethod
    def load(cls, path, seed: int = 0) -> "RelationDetector":
        from .checkpoint import load_checkpoint
        config, params = load_checkpoint(path)
        if "model" not in config:
            raise ConfigurationError(f"checkpoint {path} carries no model config")
        detector = cls(ModelConfig.from_dict(config["model"]), seed=seed)
        try:
            detector.store.load_state(params)
        except Exception as exc:
            raise ConfigurationError(f"checkpoint {path} does not match model: {exc}") from exc
        return detector


# -- inference over datasets ---------------------------------------------------


def clip_detections(detector: RelationDetector, clip: ClipSample,
                    bank: RelationBank | None = None) -> list[Detection]:
    """Score-filtered boxes classified into per-class detections."""
    boxes = [b for b, _ in filter_boxes(clip.proposals, [], mode="infer")]
    if not boxes:
        return []
    with no_grad():
        feats, logits = detector.short_forward(clip.frames, boxes)
        if bank is not None:
            support = bank.query_window(clip.video_id, clip.time_s)
            logits = detector.long_forward(feats, support)
        probs = classify(logits).data
    dets = []
    for i, box in enumerate(boxes):
        for cid in range(detector.cfg.num_classes):
            dets.append(Detection(clip.frame_id, box, cid, float(probs[i, cid])))
    return dets


def dataset_ground_truth(clips: list[ClipSample]) -> list[GroundTruth]:
    gts = []
    for clip in clips:
        for box, labels in zip(clip.gt_boxes, clip.gt_labels):
            for cid in np.nonzero(labels > 0.5)[0]:
                gts.append(GroundTruth(clip.frame_id, box, int(cid)))
    return gts


def evaluate_detector(detector: RelationDetector, clips: list[ClipSample],
                      bank: RelationBank | None = None,
                      iou_thresh: float = 0.5) -> MapResult:
    detections = []
    for clip in clips:
        detections.extend(clip_detections(detector, clip, bank))
    return frame_map(detections, dataset_ground_truth(clips), iou_thresh)


def run_inference(detector: RelationDetector, clips: list[ClipSample],
                  bank: RelationBank | None = None) -> list[Detection]:
    dets = []
    for clip in clips:
        dets.extend(clip_detections(detector, clip, bank))
    return dets


# -- bank construction -----------------------------------------------------------


def build_relation_bank(detector: RelationDetector, clips: list[ClipSample],
                        config_hash: str = "") -> RelationBank:
    """Run the frozen short-term model over every clip and store each clip's
    per-actor consensus features keyed by (video, clip time).  Clips whose
    score filter retains no boxes still get an (empty) entry."""
    width = consensus_width(detector.cfg.encoder.dim)
    bank = RelationBank(width, detector.cfg.omega, config_hash)
    if not clips:
        return bank
    for clip in clips:
        boxes = [b for b, _ in filter_boxes(clip.proposals, [], mode="infer")]
        feats: list[np.ndarray] = []
        if boxes:
            with no_grad():
                g, _ = detector.short_forward(clip.frames, boxes)
            feats = [np.ascontiguousarray(g.data[i], dtype=np.float32)
                     for i in range(g.data.shape[0])]
        bank.add_entry(BankEntry(clip.video_id, clip.time_s, feats))
    return bank


def expected_bank_times(duration_s: int) -> list[int]:
    """Clip centers whose full 2 s window fits in [0, duration]: 1 .. duration-1."""
    if duration_s < 2:
        return []
    return list(range(1, duration_s))
