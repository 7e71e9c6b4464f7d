import numpy as np
import pytest

from reldet import nn
from reldet.boxes import ActorBox
from reldet.errors import ConfigurationError, DimensionError, ValidationError
from reldet.gradcheck import check_gradients
from reldet.reference import block_average_pool
from reldet.tensor import ParamStore, Tensor
from reldet.tokens import (
    GridSpec,
    actor_position_index,
    assemble_clip,
    assemble_sequence,
    build_distance_table,
    distance_embedding,
    embed_actor,
    embed_patches,
    pool_to_grid,
    position_flat_index,
)

RNG = np.random.default_rng(7)
GRID = GridSpec(side=16, patch=2)


class TestGridSpec:
    def test_paper_scale_counts(self):
        assert GRID.grid_side == 8
        assert GRID.num_patches == 64

    def test_patch_must_divide_side(self):
        with pytest.raises(ConfigurationError):
            GridSpec(side=16, patch=3)


class TestPoolToGrid:
    def test_constant_map_preserved(self):
        fmap = np.full((2, 13, 29), 3.25, dtype=np.float32)
        out = pool_to_grid(fmap, GRID).data
        assert out.shape == (2, 16, 16)
        assert np.allclose(out, 3.25, atol=1e-6)

    def test_identity_on_matching_size(self):
        fmap = RNG.normal(size=(3, 16, 16)).astype(np.float32)
        out = pool_to_grid(fmap, GRID).data
        assert np.allclose(out, fmap, atol=1e-7)

    def test_idempotent(self):
        fmap = RNG.normal(size=(2, 24, 20)).astype(np.float32)
        once = pool_to_grid(fmap, GRID).data
        twice = pool_to_grid(once, GRID).data
        assert np.allclose(once, twice, atol=1e-6)

    def test_matches_block_average_oracle(self):
        fmap = RNG.normal(size=(2, 32, 32)).astype(np.float64)
        out = pool_to_grid(fmap, GRID).data
        oracle = block_average_pool(fmap, 16)
        assert np.abs(out - oracle).max() < 1e-12

    def test_uneven_sizes_match_oracle(self):
        for w, h in ((17, 23), (5, 40), (16, 9)):
            fmap = RNG.normal(size=(1, w, h)).astype(np.float64)
            out = pool_to_grid(fmap, GRID).data
            oracle = block_average_pool(fmap, 16)
            assert np.abs(out - oracle).max() < 1e-12

    def test_gradient(self):
        err = check_gradients(
            lambda f: (pool_to_grid(f, GridSpec(4, 2)) ** 2).sum(),
            [RNG.normal(size=(2, 6, 7))],
        )
        assert err < 1e-4


def make_embed_params(c, d, rng=None, grid=GRID):
    rng = rng or np.random.default_rng(0)
    store = ParamStore()
    return {
        "patch": nn.linear_params(store, "p", rng, c * grid.patch ** 2, d),
        "actor": nn.linear_params(store, "a", rng, c * 49, d),
        "actor_type": store.create("at", nn.embedding_table(rng, (d,))),
        "context_pos": store.create("cp", nn.embedding_table(rng, (grid.num_patches, d))),
    }


class TestEmbedPatches:
    def test_sixty_four_tokens_at_paper_scale(self):
        params = make_embed_params(4, 32)
        fmap = RNG.normal(size=(4, 16, 16)).astype(np.float32)
        out = embed_patches(fmap, params["patch"], GRID)
        assert out.shape == (64, 32)

    def test_locality_row_major(self):
        # S=4, p=2: token k depends only on quadrant k (row-major order)
        grid = GridSpec(side=4, patch=2)
        params = make_embed_params(1, 8, grid=grid)
        base = RNG.normal(size=(1, 4, 4)).astype(np.float32)
        tokens = embed_patches(base, params["patch"], grid).data
        quadrants = [(0, 0), (0, 2), (2, 0), (2, 2)]  # row-major grid order
        for k, (r, c) in enumerate(quadrants):
            other = base.copy()
            # zero everything except quadrant k
            mask = np.zeros_like(other)
            mask[:, r:r + 2, c:c + 2] = 1
            other = other * mask
            kept = embed_patches(other, params["patch"], grid).data
            assert np.allclose(kept[k], tokens[k], atol=1e-6)

    def test_perturbing_one_patch_changes_only_that_token(self):
        grid = GridSpec(side=4, patch=2)
        params = make_embed_params(2, 8, grid=grid)
        base = RNG.normal(size=(2, 4, 4)).astype(np.float32)
        tokens = embed_patches(base, params["patch"], grid).data
        bumped = base.copy()
        bumped[:, 2:4, 0:2] += 1.0  # patch index 2 in row-major order
        tokens2 = embed_patches(bumped, params["patch"], grid).data
        changed = np.abs(tokens2 - tokens).max(axis=1) > 1e-6
        assert list(changed) == [False, False, True, False]

    def test_zero_weights_give_bias(self):
        params = make_embed_params(1, 6)
        params["patch"]["w"].data[...] = 0.0
        params["patch"]["b"].data[...] = np.arange(6)
        out = embed_patches(np.ones((1, 16, 16), np.float32), params["patch"], GRID).data
        assert np.allclose(out, np.arange(6))


class TestEmbedActor:
    def test_zero_roi_gives_bias(self):
        params = make_embed_params(3, 8)
        params["actor"]["b"].data[...] = np.arange(8)
        out = embed_actor(np.zeros((3, 7, 7), np.float32), params["actor"]).data
        assert np.allclose(out, np.arange(8))

    def test_identical_rois_identical_tokens(self):
        params = make_embed_params(3, 8)
        roi = RNG.normal(size=(3, 7, 7)).astype(np.float32)
        a = embed_actor(roi, params["actor"]).data
        b = embed_actor(roi.copy(), params["actor"]).data
        assert np.array_equal(a, b)

    def test_requires_7x7(self):
        params = make_embed_params(3, 8)
        with pytest.raises(DimensionError):
            embed_actor(np.zeros((3, 6, 7), np.float32), params["actor"])

    def test_projection_gradient(self):
        rng = np.random.default_rng(3)

        def loss(roi, w, b):
            return (embed_actor(roi, {"w": w, "b": b}) ** 2).sum()

        err = check_gradients(loss, [rng.normal(size=(2, 7, 7)),
                                     rng.normal(size=(98, 4)), rng.normal(size=4)])
        assert err < 1e-4


class TestAssembleSequence:
    def test_three_actors_three_sequences_length_65(self):
        params = make_embed_params(4, 16)
        actor_tokens = RNG.normal(size=(3, 16)).astype(np.float32)
        ctx = RNG.normal(size=(64, 16)).astype(np.float32)
        seqs = assemble_clip(actor_tokens, ctx, params)
        assert len(seqs) == 3
        for seq in seqs:
            assert seq.full().shape == (65, 16)
        # context parts identical before encoding
        assert np.array_equal(seqs[0].context_tokens.data, seqs[2].context_tokens.data)

    def test_zero_embeddings_identity(self):
        params = make_embed_params(4, 8)
        params["actor_type"].data[...] = 0.0
        params["context_pos"].data[...] = 0.0
        actor = RNG.normal(size=8).astype(np.float32)
        ctx = RNG.normal(size=(64, 8)).astype(np.float32)
        seq = assemble_sequence(Tensor(actor), Tensor(ctx), params)
        assert np.array_equal(seq.actor_token.data, actor)
        assert np.array_equal(seq.context_tokens.data, ctx)

    def test_deterministic(self):
        params = make_embed_params(4, 8)
        actor = RNG.normal(size=8).astype(np.float32)
        ctx = RNG.normal(size=(64, 8)).astype(np.float32)
        a = assemble_sequence(Tensor(actor), Tensor(ctx), params).full().data
        b = assemble_sequence(Tensor(actor), Tensor(ctx), params).full().data
        assert np.array_equal(a, b)


class TestActorPositionIndex:
    def test_low_corner(self):
        assert actor_position_index(ActorBox(0, 0, 0.25, 0.25), GRID) == (1, 1)

    def test_high_corner(self):
        # center 0.95 -> ceil(7.6) = 8
        assert actor_position_index(ActorBox(0.9, 0.9, 1.0, 1.0), GRID) == (8, 8)

    def test_degenerate_center_clamped(self):
        assert actor_position_index(ActorBox(0, 0, 0, 0), GRID) == (1, 1)

    def test_translation_consistency_within_cell(self):
        # two boxes whose centers share a grid cell get the same index
        a = ActorBox(0.30, 0.50, 0.40, 0.60)  # center (0.35, 0.55)
        b = ActorBox(0.32, 0.53, 0.42, 0.63)  # center (0.37, 0.58), same cells
        assert actor_position_index(a, GRID) == actor_position_index(b, GRID)

    def test_flat_index_row_major(self):
        assert position_flat_index(ActorBox(0, 0, 0.25, 0.25), GRID) == 0
        assert position_flat_index(ActorBox(0.9, 0.9, 1.0, 1.0), GRID) == 63


class TestDistanceEmbedding:
    def test_paper_window_has_21_entries(self):
        table = build_distance_table(np.random.default_rng(0), omega=10, width=12)
        assert table.shape == (21, 12)

    def test_distinct_storage_per_offset(self):
        table = Tensor(build_distance_table(np.random.default_rng(0), 10, 12))
        a = distance_embedding(table, 0, 10).data
        b = distance_embedding(table, 1, 10).data
        assert not np.array_equal(a, b)

    def test_boundaries(self):
        table = Tensor(build_distance_table(np.random.default_rng(0), 3, 4))
        distance_embedding(table, -3, 3)
        distance_embedding(table, 3, 3)
        for bad in (-4, 4):
            with pytest.raises(ValidationError):
                distance_embedding(table, bad, 3)

    def test_gradient_reaches_only_the_selected_row(self):
        table = Tensor(build_distance_table(np.random.default_rng(0), 2, 4),
                       requires_grad=True)
        (distance_embedding(table, 1, 2) ** 2).sum().backward()
        touched = np.abs(table.grad).sum(axis=1) > 0
        assert list(touched) == [False, False, False, True, False]
