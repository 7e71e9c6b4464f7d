"""reldet: a relation-support action detection head, desk scale.

Two relation streams per actor -- actor-context (token sequence over pooled
feature-map patches) and actor-actor (position-embedded actor tokens) --
are encoded separately, exchange information through bidirectional
multi-head cross-attention, and are fused into per-actor multi-label
logits.  A persistent relation bank of per-clip consensus features enables
a second, long-term consensus head over a temporal window.  Everything is
numpy with a built-in autodiff tape; gradients are verified against finite
differences.
"""

from .bank import BankEntry, RelationBank
from .boxes import ActorBox, filter_boxes, iou, roi_align
from .consensus import classify, long_term_logits, short_term_consensus, short_term_logits
from .data import ClipSample, SyntheticSpec, load_dataset, make_synthetic_dataset, save_dataset
from .encoder import (
    EncoderConfig,
    RelationPair,
    encode_actor_actor,
    encode_actor_context,
    encode_relations,
    relation_exchange,
)
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    EmptyClipError,
    NumericsError,
    ReldetError,
    ValidationError,
)
from .metrics import Detection, GroundTruth, MapResult, frame_map
from .model import (
    ModelConfig,
    RelationDetector,
    build_relation_bank,
    evaluate_detector,
)
from .nn import (
    AttentionConfig,
    cross_attention,
    encoder_layer,
    feed_forward,
    gelu,
    layer_norm,
    linear,
    self_attention,
    softmax_rows,
)
from .tensor import DenseArray, ParamStore, Tensor, as_dense, no_grad
from .tokens import (
    GridSpec,
    TokenSequence,
    actor_position_index,
    assemble_clip,
    assemble_sequence,
    distance_embedding,
    embed_actor,
    embed_patches,
    pool_to_grid,
)
from .train import TrainConfig, bce_loss, learning_rate_at, train_long, train_short

__version__ = "0.1.0"
