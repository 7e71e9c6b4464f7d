"""Built-in verification suites, runnable without any data or config.

Five suites: gradient checks against central finite differences, attention
against the naive per-head oracle, permutation/order invariances, bank
round-trip integrity, and the mAP evaluator against the all-thresholds
oracle.  Each returns (check-name, passed, detail) triples.
"""

from __future__ import annotations

import numpy as np

from . import nn, reference
from .bank import BankEntry, RelationBank
from .boxes import ActorBox
from .consensus import long_term_logits, short_term_logits
from .encoder import EncoderConfig, build_relation_params, encode_relations
from .gradcheck import DEFAULT_TOL, check_gradients
from .metrics import Detection, GroundTruth, frame_map
from .model import ModelConfig, RelationDetector, build_head_params
from .tensor import ParamStore, Tensor
from .tokens import GridSpec
from .train import bce_loss

Check = tuple[str, bool, str]


def _toy_setup():
    cfg = EncoderConfig(dim=8, ffn_hidden=16, heads=2,
                        actor_context_layers=1, actor_actor_layers=1,
                        support_rounds=1, stacks=1)
    grid = GridSpec(side=4, patch=2)  # L = 4
    store = ParamStore()
    rng = np.random.default_rng(7)
    params = build_relation_params(store, rng, cfg, grid, in_channels=2)
    boxes = [ActorBox(0.1, 0.1, 0.4, 0.5), ActorBox(0.5, 0.4, 0.9, 0.9)]
    return cfg, grid, store, params, boxes


def gradient_suite() -> list[Check]:
    rng = np.random.default_rng(11)
    checks: list[Check] = []

    def run(name, build, arrays):
        err = check_gradients(build, arrays)
        checks.append((name, err <= DEFAULT_TOL, f"rel err {err:.2e}"))

    run("linear", lambda x, w, b: (nn.linear(x, w, b) ** 2).sum(),
        [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)])
    run("layer_norm", lambda x, g, s: (nn.layer_norm(x, g, s) ** 2).sum(),
        [rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=4)])
    run("gelu", lambda x: (nn.gelu(x) ** 2).sum(), [rng.normal(size=(2, 5))])
    c = rng.normal(size=(2, 4))
    run("softmax", lambda x: (nn.softmax_rows(x) * Tensor(c)).sum(),
        [rng.normal(size=(2, 4))])

    att = nn.AttentionConfig(8, 2, 12)
    store = ParamStore()
    fp = nn.feed_forward_params(store, "f", rng, att)
    run("ffn", lambda x, w1, b1, w2, b2:
        (nn.feed_forward(x, {"w1": w1, "b1": b1, "w2": w2, "b2": b2}, att) ** 2).sum(),
        [rng.normal(size=(3, 8))] + [fp[k].data.astype(np.float64)
                                     for k in ("w1", "b1", "w2", "b2")])
    ap = nn.attention_params(store, "a", rng, att)
    weights = [ap[k].data.astype(np.float64) for k in ("wq", "wk", "wv", "wo")]
    run("cross_attention", lambda x, y, wq, wk, wv, wo:
        (nn.cross_attention(x, y, {"wq": wq, "wk": wk, "wv": wv, "wo": wo}, att) ** 2).sum(),
        [rng.normal(size=(4, 8)), rng.normal(size=(3, 8))] + weights)
    run("self_attention", lambda x, wq, wk, wv, wo:
        (nn.self_attention(x, {"wq": wq, "wk": wk, "wv": wv, "wo": wo}, att) ** 2).sum(),
        [rng.normal(size=(4, 8))] + weights)

    run("bce", lambda z: bce_loss(z, np.array([[1.0, 0.0], [0.0, 1.0]])),
        [rng.normal(size=(2, 2))])
    return checks


def attention_oracle_suite(num_fixtures: int = 20, tol: float = 1e-5) -> list[Check]:
    rng = np.random.default_rng(3)
    att = nn.AttentionConfig(8, 2, 16)
    checks = []
    worst = 0.0
    for _ in range(num_fixtures):
        store = ParamStore()
        params = nn.attention_params(store, "a", rng, att)
        x = rng.normal(size=(5, 8)).astype(np.float32)
        y = rng.normal(size=(3, 8)).astype(np.float32)
        fast = nn.cross_attention(x, y, params, att).data
        slow = reference.naive_cross_attention(x, y, params, att.heads)
        worst = max(worst, float(np.abs(fast - slow).max()))
        fast = nn.self_attention(x, params, att).data
        slow = reference.naive_self_attention(x, params, att.heads)
        worst = max(worst, float(np.abs(fast - slow).max()))
    checks.append((f"attention vs naive loop ({num_fixtures} fixtures)",
                   worst <= tol, f"max diff {worst:.2e}"))
    return checks


def permutation_suite(tol: float = 1e-5) -> list[Check]:
    checks = []
    rng = np.random.default_rng(5)
    att = nn.AttentionConfig(8, 2, 16)
    store = ParamStore()
    params = nn.attention_params(store, "a", rng, att)
    x = rng.normal(size=(6, 8)).astype(np.float32)
    perm = rng.permutation(6)
    diff = float(np.abs(nn.self_attention(x[perm], params, att).data
                        - nn.self_attention(x, params, att).data[perm]).max())
    checks.append(("self-attention permutation equivariance", diff <= tol,
                   f"max diff {diff:.2e}"))

    cfg, grid, _, rel_params, boxes = _toy_setup()
    ctx = rng.normal(size=(grid.num_patches, cfg.dim)).astype(np.float32)
    actors = rng.normal(size=(2, cfg.dim)).astype(np.float32)
    x1, y1 = encode_relations(ctx, actors, boxes, rel_params, cfg, grid)
    x2, y2 = encode_relations(ctx, actors[::-1].copy(), boxes[::-1], rel_params, cfg, grid)
    diff = max(float(np.abs(x2.data - x1.data[::-1]).max()),
               float(np.abs(y2.data - y1.data[::-1]).max()))
    checks.append(("relation encoder actor-permutation equivariance", diff <= tol,
                   f"max diff {diff:.2e}"))

    store2 = ParamStore()
    head = build_head_params(store2, np.random.default_rng(9),
                             ModelConfig(omega=3, encoder=cfg, grid=grid))
    queries = rng.normal(size=(2, 3 * cfg.dim)).astype(np.float32)
    support = [(o, rng.normal(size=3 * cfg.dim).astype(np.float32))
               for o in (-2, 0, 1, 3)]
    a = long_term_logits(Tensor(queries), support, head["long"], cfg.heads).data
    b = long_term_logits(Tensor(queries), support[::-1], head["long"], cfg.heads).data
    diff = float(np.abs(a - b).max())
    checks.append(("long-term head support-order invariance", diff <= tol,
                   f"max diff {diff:.2e}"))
    return checks


def bank_suite(tmp_path=None) -> list[Check]:
    import tempfile
    from pathlib import Path
    checks = []
    rng = np.random.default_rng(13)
    bank = RelationBank(dim=6, omega=2, config_hash="deadbeef")
    for t in range(1, 8):
        feats = [rng.normal(size=6).astype(np.float32) for _ in range(t % 3)]
        bank.add_entry(BankEntry("vid", t, feats))
    with tempfile.TemporaryDirectory() as td:
        path = Path(tmp_path or td) / "bank.bin"
        bank.save(path)
        loaded = RelationBank.load(path)
        same = len(loaded) == len(bank)
        for t in range(1, 8):
            a = bank.query_window("vid", t)
            b = loaded.query_window("vid", t)
            same = same and len(a) == len(b) and all(
                oa == ob and np.array_equal(fa, fb)
                for (oa, fa), (ob, fb) in zip(a, b))
        checks.append(("bank round-trip bit-exact", same, f"{len(bank)} entries"))
        lo = [o for o, _ in loaded.query_window("vid", 1)]
        hi = [o for o, _ in loaded.query_window("vid", 7)]
        ok = all(o >= 0 for o in lo) and all(o <= 0 for o in hi)
        checks.append(("bank window truncation at boundaries", ok, f"{lo} / {hi}"))
    return checks


def map_suite(tol: float = 1e-9) -> list[Check]:
    b = ActorBox
    fixtures = []
    # one perfect detection
    fixtures.append((
        [Detection("f", b(0.1, 0.1, 0.5, 0.5), 0, 0.9)],
        [GroundTruth("f", b(0.12, 0.1, 0.5, 0.52), 0)]))
    # second detection on an already-matched GT is a false positive
    fixtures.append((
        [Detection("f", b(0.1, 0.1, 0.5, 0.5), 0, 0.9),
         Detection("f", b(0.12, 0.12, 0.52, 0.52), 0, 0.8)],
        [GroundTruth("f", b(0.1, 0.1, 0.5, 0.5), 0)]))
    # miss + hit across frames
    fixtures.append((
        [Detection("f1", b(0.6, 0.6, 0.9, 0.9), 0, 0.95),
         Detection("f2", b(0.1, 0.1, 0.4, 0.4), 0, 0.7)],
        [GroundTruth("f1", b(0.1, 0.1, 0.4, 0.4), 0),
         GroundTruth("f2", b(0.1, 0.1, 0.4, 0.4), 0)]))
    # interleaved classes
    fixtures.append((
        [Detection("f", b(0.1, 0.1, 0.4, 0.4), 0, 0.9),
         Detection("f", b(0.1, 0.1, 0.4, 0.4), 1, 0.6),
         Detection("f", b(0.5, 0.5, 0.8, 0.8), 1, 0.8)],
        [GroundTruth("f", b(0.1, 0.1, 0.4, 0.4), 0),
         GroundTruth("f", b(0.5, 0.5, 0.8, 0.8), 1)]))
    # a long mixed ranking
    rng = np.random.default_rng(17)
    dets, gts = [], []
    for i in range(8):
        x = 0.1 * i
        gts.append(GroundTruth("g", b(x, 0.0, x + 0.09, 0.2), 0))
        if i < 6:
            dets.append(Detection("g", b(x, 0.0, x + 0.09, 0.2), 0,
                                  float(0.3 + 0.08 * i)))
        dets.append(Detection("g", b(0.0, 0.8, 0.1, 0.9), 0,
                              float(rng.uniform(0.1, 0.95))))
    fixtures.append((dets, gts))

    checks = []
    worst = 0.0
    for dets, gts in fixtures:
        ours = frame_map(dets, gts).mean
        _, oracle = reference.brute_force_map(dets, gts)
        worst = max(worst, abs(ours - oracle))
    checks.append((f"frame-mAP vs all-thresholds oracle ({len(fixtures)} fixtures)",
                   worst <= tol, f"max |diff| {worst:.2e}"))
    return checks


SUITES = (
    ("gradients", gradient_suite),
    ("attention-oracle", attention_oracle_suite),
    ("permutation", permutation_suite),
    ("bank-roundtrip", bank_suite),
    ("map-oracle", map_suite),
)


def run_all(verbose_print=print) -> bool:
    all_ok = True
    for suite_name, suite in SUITES:
        results = suite()
        ok = all(passed for _, passed, _ in results)
        all_ok = all_ok and ok
        verbose_print(f"[{'PASS' if ok else 'FAIL'}] suite {suite_name}")
        for name, passed, detail in results:
            verbose_print(f"    {'ok  ' if passed else 'FAIL'} {name}: {detail}")
    return all_ok
