"""Network contracts: shapes, permutation equivariance, step-embedding
sensitivity, eval-mode determinism, and end-to-end gradient checks."""

import numpy as np
import pytest

from trajdiff import engine as E
from trajdiff.diffusion import diffusion_loss
from trajdiff.networks import Arch, Denoiser, Encoder, Scorer, sinusoidal_table
from trajdiff.optim import ParameterStore
from trajdiff.selection import scorer_loss

SMALL = Arch(t_p=6, t_f=8, d_c=24, width=24, heads=2, head_dim=12, denoiser_layers=2,
             encoder_layers=1, ffn_width=32, scorer_dim=24, dropout=0.1)


@pytest.fixture(scope="module")
def nets():
    store = ParameterStore(seed=0)
    encoder = Encoder(store, SMALL)
    denoiser = Denoiser(store, SMALL)
    scorer_store = ParameterStore(seed=1)
    scorer = Scorer(scorer_store, SMALL)
    return store, encoder, denoiser, scorer_store, scorer


RNG = np.random.default_rng(99)


class TestEncoder:
    def test_single_agent_shape(self, nets):
        _, encoder, *_ = nets
        ctx = np.asarray(encoder(RNG.standard_normal((1, SMALL.t_p, 2))))
        assert ctx.shape == (1, SMALL.d_c)
        assert np.all(np.isfinite(ctx))

    def test_duplicate_agents_identical_context(self, nets):
        _, encoder, *_ = nets
        track = RNG.standard_normal((SMALL.t_p, 2))
        ctx = np.asarray(encoder(np.stack([track, track])))
        assert np.max(np.abs(ctx[0] - ctx[1])) < 1e-12

    def test_agent_permutation_equivariance(self, nets):
        _, encoder, *_ = nets
        hist = RNG.standard_normal((5, SMALL.t_p, 2))
        perm = np.array([3, 0, 4, 1, 2])
        a = np.asarray(encoder(hist))
        b = np.asarray(encoder(hist[perm]))
        assert np.max(np.abs(a[perm] - b)) < 1e-9

    def test_empty_scene_rejected(self, nets):
        _, encoder, *_ = nets
        with pytest.raises(E.ShapeError, match="at least one agent"):
            encoder(np.zeros((0, SMALL.t_p, 2)))

    def test_wrong_horizon_rejected(self, nets):
        _, encoder, *_ = nets
        with pytest.raises(E.ShapeError):
            encoder(RNG.standard_normal((2, SMALL.t_p + 1, 2)))

    def test_lane_features_enter(self, nets):
        _, encoder, *_ = nets
        hist = RNG.standard_normal((2, SMALL.t_p, 2))
        lanes = RNG.standard_normal((4, SMALL.lane_dim))
        with_lanes = np.asarray(encoder(hist, lane_features=lanes))
        without = np.asarray(encoder(hist))
        assert with_lanes.shape == without.shape
        assert np.max(np.abs(with_lanes - without)) > 0  # lanes change the context

    def test_eval_determinism(self, nets):
        _, encoder, *_ = nets
        hist = RNG.standard_normal((3, SMALL.t_p, 2))
        assert np.array_equal(np.asarray(encoder(hist)), np.asarray(encoder(hist)))


class TestDenoiser:
    def test_output_shape(self, nets):
        _, encoder, denoiser, *_ = nets
        y = RNG.standard_normal((4, SMALL.t_f, 2))
        ctx = RNG.standard_normal((4, SMALL.d_c))
        out = np.asarray(denoiser(y, 3, ctx))
        assert out.shape == (4, SMALL.t_f, 2)

    def test_step_embedding_distinguishes_steps(self, nets):
        denoiser = nets[2]
        y = RNG.standard_normal((1, SMALL.t_f, 2))
        ctx = RNG.standard_normal((1, SMALL.d_c))
        out1 = np.asarray(denoiser(y, 1, ctx))
        out200 = np.asarray(denoiser(y, 200, ctx))
        assert np.max(np.abs(out1 - out200)) > 1e-6

    def test_per_sample_steps(self, nets):
        denoiser = nets[2]
        y = RNG.standard_normal((3, SMALL.t_f, 2))
        ctx = RNG.standard_normal((3, SMALL.d_c))
        out = np.asarray(denoiser(y, np.array([1, 50, 200]), ctx))
        assert out.shape == (3, SMALL.t_f, 2)

    def test_shape_mismatch_rejected(self, nets):
        denoiser = nets[2]
        with pytest.raises(E.ShapeError):
            denoiser(RNG.standard_normal((2, SMALL.t_f + 1, 2)), 1, RNG.standard_normal((2, SMALL.d_c)))
        with pytest.raises(E.ShapeError):
            denoiser(RNG.standard_normal((2, SMALL.t_f, 2)), 1, RNG.standard_normal((3, SMALL.d_c)))

    def test_gradcheck_through_encoder_and_loss(self, nets):
        store, encoder, denoiser, *_ = nets
        hist = RNG.standard_normal((2, 3, SMALL.t_p, 2))
        y = RNG.standard_normal((2, SMALL.t_f, 2))
        eps = RNG.standard_normal((2, SMALL.t_f, 2))
        sel = np.zeros((1, 3))
        sel[0, 0] = 1.0

        def closure(params):
            store.load_values(params)
            ctx = encoder(hist, rng=np.random.default_rng(5))
            focal = E.reshape(E.matmul(sel, ctx), (2, SMALL.d_c))
            out = denoiser(y, np.array([10, 150]), focal, rng=np.random.default_rng(6))
            return diffusion_loss(eps, out)

        report = E.gradient_check(closure, dict(store.values), tolerance=1e-4, max_entries=3)
        assert report.passed, report


class TestScorer:
    def test_single_candidate_softmax_is_one(self, nets):
        scorer = nets[4]
        raw = np.asarray(scorer(RNG.standard_normal((1, SMALL.t_f, 2)), RNG.standard_normal(SMALL.d_c)))
        probs = np.exp(raw) / np.exp(raw).sum()
        assert np.array_equal(probs, [1.0])

    def test_identical_candidates_equal_scores(self, nets):
        scorer = nets[4]
        cand = RNG.standard_normal((SMALL.t_f, 2))
        ctx = RNG.standard_normal(SMALL.d_c)
        raw = np.asarray(scorer(np.stack([cand, cand, cand]), ctx))
        assert np.max(np.abs(raw - raw[0])) < 1e-9

    def test_candidate_permutation_equivariance(self, nets):
        scorer = nets[4]
        cands = RNG.standard_normal((6, SMALL.t_f, 2))
        ctx = RNG.standard_normal(SMALL.d_c)
        perm = np.array([5, 2, 0, 4, 1, 3])
        a = np.asarray(scorer(cands, ctx))
        b = np.asarray(scorer(cands[perm], ctx))
        assert np.max(np.abs(a[perm] - b)) < 1e-9

    def test_softmax_scores_normalized(self, nets):
        scorer = nets[4]
        raw = np.asarray(scorer(RNG.standard_normal((9, SMALL.t_f, 2)), RNG.standard_normal(SMALL.d_c)))
        probs = np.asarray(E.softmax_last(raw))
        assert abs(probs.sum() - 1.0) <= 1e-12

    def test_empty_candidates_rejected(self, nets):
        scorer = nets[4]
        with pytest.raises(E.ShapeError, match="at least one candidate"):
            scorer(np.zeros((0, SMALL.t_f, 2)), RNG.standard_normal(SMALL.d_c))

    def test_batched_matches_single(self, nets):
        scorer = nets[4]
        cands = RNG.standard_normal((2, 5, SMALL.t_f, 2))
        ctx = RNG.standard_normal((2, SMALL.d_c))
        batched = np.asarray(scorer(cands, ctx))
        singles = np.stack([np.asarray(scorer(cands[i], ctx[i])) for i in range(2)])
        assert np.max(np.abs(batched - singles)) < 1e-12

    def test_gradcheck_through_scorer_loss(self, nets):
        scorer_store, scorer = nets[3], nets[4]
        cands = RNG.standard_normal((5, SMALL.t_f, 2))
        ctx = RNG.standard_normal(SMALL.d_c)
        psi = np.abs(RNG.standard_normal(5))

        def closure(params):
            scorer_store.load_values(params)
            raw = scorer(cands, ctx, rng=np.random.default_rng(7))
            return scorer_loss(raw, psi)

        report = E.gradient_check(closure, dict(scorer_store.values), tolerance=1e-4, max_entries=3)
        assert report.passed, report

    def test_paper_shape_conventions(self):
        """Attention projections are (T_f + d_c) x d_k per head; down-proj is d x 1."""
        arch = Arch()
        store = ParameterStore(seed=0)
        Scorer(store, arch)
        assert store["scorer.attn.h0.wq"].shape == (arch.t_f + arch.d_c, arch.head_dim)
        assert store["scorer.down"].shape == (arch.scorer_dim, 1)
        assert store["scorer.traj_embed"].shape == (2 * arch.t_f, arch.t_f)
        assert store["scorer.attn.wo"].shape == (arch.heads * arch.head_dim, arch.scorer_dim)


def test_default_arch_matches_stated_hyperparameters():
    arch = Arch()
    assert arch.denoiser_layers == 5
    assert arch.heads == 4
    assert arch.width == 128
    assert arch.heads * arch.head_dim == 128
    assert arch.dropout == 0.1


def test_sinusoidal_table_shape_and_range():
    table = sinusoidal_table(12, 32)
    assert table.shape == (12, 32)
    assert np.all(np.abs(table) <= 1.0)
    assert not np.allclose(table[0], table[11])


def test_dropout_only_with_generator(nets):
    _, encoder, *_ = nets
    hist = RNG.standard_normal((2, SMALL.t_p, 2))
    eval_a = np.asarray(encoder(hist))
    train = np.asarray(encoder(hist, rng=np.random.default_rng(0)))
    eval_b = np.asarray(encoder(hist))
    assert np.array_equal(eval_a, eval_b)
    assert np.max(np.abs(train - eval_a)) > 0
