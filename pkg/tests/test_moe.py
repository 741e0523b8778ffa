import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moebma import models as glm
from moebma.datagen import Dataset, gen_regression
from moebma.moe import (
    REAL_LINE,
    AdamState,
    GatingParams,
    HalfOpen,
    MoeModel,
    PiecewiseHypothesis,
    TrainConfig,
    adam_step,
    gate_forward,
    init_moe,
    keep_top_k,
    lr_schedule,
    moe_loss,
    moe_loss_and_grad,
    moe_mixture_nll,
    moe_predict,
    piecewise_classify,
    selection_mask,
    single_cell,
    train_glm,
    train_moe,
)
from moebma.models import GlmParams
from oracles import central_diff, random_design, rel_err

NEG = -np.inf


def random_moe(rng, n_experts, d, k, link, scale=1.0):
    P = rng.normal(0.0, scale, (3, n_experts, d))
    return MoeModel.from_packed(P, k, link, 0.1)


def random_batch(rng, n, d, link):
    X = random_design(rng, n, d)
    y = rng.normal(size=n) if link == "identity" else (rng.random(n) < 0.5).astype(float)
    return Dataset(X, y)


class TestKeepTopK:
    def test_basic(self):
        assert keep_top_k([3.0, 1.0, 2.0], 2).tolist() == [3.0, NEG, 2.0]

    def test_single(self):
        assert keep_top_k([5.0], 1).tolist() == [5.0]

    def test_ties_lowest_index(self):
        assert keep_top_k([1.0, 1.0, 0.0], 1).tolist() == [1.0, NEG, NEG]

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            keep_top_k([1.0, 2.0], 3)
        with pytest.raises(ValueError):
            keep_top_k([1.0, 2.0], 0)


class TestGate:
    def test_zero_weights_split_first_two(self):
        g = GatingParams(np.zeros((4, 3)), np.zeros((4, 3)), 2)
        np.testing.assert_allclose(gate_forward(g, np.ones(3)), [0.5, 0.5, 0.0, 0.0])

    def test_closed_form_logits(self):
        g = GatingParams(np.array([[2.0], [1.0], [0.0]]), np.zeros((3, 1)), 2)
        np.testing.assert_allclose(gate_forward(g, [1.0]), [0.7311, 0.2689, 0.0], atol=5e-5)

    def test_train_mode_reproducible(self):
        rng = np.random.default_rng(0)
        g = GatingParams(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), 2)
        x = np.array([1.0, 0.3, -0.2])
        a = gate_forward(g, x, "train", np.random.default_rng(5))
        b = gate_forward(g, x, "train", np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_train_mode_needs_rng(self):
        g = GatingParams(np.zeros((2, 1)), np.zeros((2, 1)), 1)
        with pytest.raises(ValueError):
            gate_forward(g, [1.0], "train")
        gate_forward(g, [1.0], "train", noise=False)

    def test_dimension_mismatch(self):
        g = GatingParams(np.zeros((2, 2)), np.zeros((2, 2)), 1)
        with pytest.raises(ValueError, match="dimension mismatch"):
            gate_forward(g, [1.0, 2.0, 3.0])

    def test_probability_vector_property(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            E = int(rng.integers(1, 7))
            d = int(rng.integers(1, 5))
            k = int(rng.integers(1, E + 1))
            g = GatingParams(rng.normal(0, 3, (E, d)), rng.normal(0, 3, (E, d)), k)
            out = gate_forward(g, rng.normal(size=d), "train", rng)
            assert (out >= 0).all()
            assert abs(out.sum() - 1) < 1e-12
            assert np.count_nonzero(out) <= k

    def test_batch_path_matches_single_input(self):
        rng = np.random.default_rng(2)
        m = random_moe(rng, 4, 3, 2, "identity")
        X = random_design(rng, 20, 3)
        from moebma.moe import moe_forward

        G, _, _ = moe_forward(m, X)
        for i in range(20):
            np.testing.assert_allclose(G[i], gate_forward(m.gating, X[i]), atol=1e-14)


class TestPredict:
    def test_single_expert_is_the_expert(self):
        p = GlmParams([0.5, -1.0], "logistic")
        m = MoeModel(GatingParams(np.zeros((1, 2)), np.zeros((1, 2)), 1), [p])
        X = random_design(np.random.default_rng(0), 10, 2)
        np.testing.assert_array_equal(moe_predict(m, X), glm.logreg_prob(p, X))

    def test_identical_experts(self):
        rng = np.random.default_rng(1)
        theta = rng.normal(size=3)
        m = MoeModel(GatingParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), 2),
                     [GlmParams(theta) for _ in range(3)])
        X = random_design(rng, 10, 3)
        np.testing.assert_allclose(moe_predict(m, X), X @ theta, atol=1e-12)

    def test_hard_gate_picks_first(self):
        m = MoeModel(GatingParams(np.array([[100.0], [0.0]]), np.zeros((2, 1)), 1),
                     [GlmParams([2.0]), GlmParams([-7.0])])
        assert moe_predict(m, [1.0]) == 2.0

    def test_regression_in_convex_hull(self):
        rng = np.random.default_rng(3)
        m = random_moe(rng, 4, 3, 2, "identity")
        X = random_design(rng, 200, 3)
        pred = moe_predict(m, X)
        means = X @ np.stack([e.theta for e in m.experts]).T
        mask = selection_mask(m, X)
        lo = np.where(mask, means, np.inf).min(axis=1)
        hi = np.where(mask, means, -np.inf).max(axis=1)
        assert ((pred >= lo - 1e-12) & (pred <= hi + 1e-12)).all()

    def test_classification_open_interval(self):
        rng = np.random.default_rng(4)
        m = random_moe(rng, 3, 3, 2, "logistic")
        p = moe_predict(m, random_design(rng, 200, 3))
        assert ((p > 0) & (p < 1)).all()

    def test_mixture_nll_one_expert(self):
        rng = np.random.default_rng(5)
        p = GlmParams(rng.normal(size=2), noise_std=0.3)
        m = MoeModel(GatingParams(np.zeros((1, 2)), np.zeros((1, 2)), 1), [p])
        X = random_design(rng, 30, 2)
        y = rng.normal(size=30)
        expected = np.mean(glm.gaussian_nll(y, X @ p.theta, 0.09))
        assert moe_mixture_nll(m, X, y) == pytest.approx(expected)


def frozen_loss(m, batch, eps, mask):
    def f(P):
        return moe_loss_and_grad(MoeModel.from_packed(P, m.k, m.link, m.sigma), batch, eps=eps, mask=mask)[0]

    return f


class TestGradients:
    @pytest.mark.parametrize("link", ["identity", "logistic"])
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_noise_off_frozen_selection(self, link, seed):
        rng = np.random.default_rng(seed)
        E = int(rng.integers(2, 5))
        m = random_moe(rng, E, 3, int(rng.integers(1, E + 1)), link)
        batch = random_batch(rng, 6, 3, link)
        eps = np.zeros((6, E))
        mask = selection_mask(m, batch.X, eps)
        loss, g = moe_loss_and_grad(m, batch, noise=False, mask=mask)
        fd = central_diff(frozen_loss(m, batch, eps, mask), m.packed())
        assert rel_err(g.packed(), fd) < 1e-5

    @pytest.mark.parametrize("link", ["identity", "logistic"])
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_fixed_noise_reaches_noise_weights(self, link, seed):
        rng = np.random.default_rng(seed)
        m = random_moe(rng, 4, 3, 2, link)
        batch = random_batch(rng, 6, 3, link)
        eps = rng.normal(size=(6, 4))
        mask = selection_mask(m, batch.X, eps)
        _, g = moe_loss_and_grad(m, batch, eps=eps, mask=mask)
        fd = central_diff(frozen_loss(m, batch, eps, mask), m.packed())
        assert rel_err(g.packed(), fd) < 1e-5

    def test_unselected_experts_get_no_gradient(self):
        rng = np.random.default_rng(0)
        m = random_moe(rng, 4, 2, 1, "identity")
        batch = random_batch(rng, 1, 2, "identity")
        mask = selection_mask(m, batch.X)
        _, g = moe_loss_and_grad(m, batch, noise=False)
        off = ~mask[0]
        assert (g.theta[off] == 0).all() and (g.w_gate[off] == 0).all()

    def test_zero_residual_zero_expert_gradient(self):
        rng = np.random.default_rng(1)
        theta = rng.normal(size=3)
        m = MoeModel(GatingParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), 2),
                     [GlmParams(theta) for _ in range(3)])
        X = random_design(rng, 10, 3)
        _, g = moe_loss_and_grad(m, Dataset(X, X @ theta), noise=False)
        np.testing.assert_allclose(g.theta, 0.0, atol=1e-14)

    @pytest.mark.parametrize("link", ["identity", "logistic"])
    def test_one_dense_expert_matches_glm(self, link):
        rng = np.random.default_rng(2)
        p = GlmParams(rng.normal(size=3), link)
        m = MoeModel(GatingParams(rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), 1), [p])
        batch = random_batch(rng, 12, 3, link)
        loss, g = moe_loss_and_grad(m, batch, noise=False)
        if link == "identity":
            ref_loss = glm.mse(glm.linreg_mean(p, batch.X), batch.y)
            ref_grad = glm.mse_grad(p, batch)
        else:
            ref_loss = glm.logreg_cross_entropy(p, batch)
            ref_grad = glm.logreg_cross_entropy_grad(p, batch)
        assert loss == pytest.approx(ref_loss, rel=1e-12)
        np.testing.assert_allclose(g.theta[0], ref_grad, rtol=1e-10, atol=1e-14)
        np.testing.assert_array_equal(g.w_gate, 0.0)

    def test_noise_requires_rng(self):
        rng = np.random.default_rng(3)
        m = random_moe(rng, 2, 2, 1, "identity")
        with pytest.raises(ValueError):
            moe_loss_and_grad(m, random_batch(rng, 3, 2, "identity"), noise=True)

    def test_empty_batch(self):
        m = random_moe(np.random.default_rng(0), 2, 2, 1, "identity")
        with pytest.raises(ValueError):
            moe_loss(m, Dataset.empty(2))


class TestOptimizer:
    def test_schedule_initial(self):
        assert lr_schedule(TrainConfig.regression(), 0) == 0.2

    def test_schedule_decay(self):
        assert lr_schedule(TrainConfig.regression(), 1) == pytest.approx(0.2 * math.exp(-0.75))
        assert lr_schedule(TrainConfig.regression(), 1) == pytest.approx(0.09447, abs=1e-5)

    def test_fixed_rate(self):
        cfg = TrainConfig.classification()
        assert lr_schedule(cfg, 0) == lr_schedule(cfg, 25) == 0.001

    def test_zero_gradient_leaves_params(self):
        params = np.array([1.0, -2.0])
        state = AdamState.zeros_like(params)
        for _ in range(50):
            new, state = adam_step(params, state, np.zeros(2), 0.1)
            assert np.array_equal(new, params)

    def test_first_step_is_lr_sign(self):
        new, state = adam_step(np.zeros(3), AdamState.zeros_like(np.zeros(3)), np.array([2.0, -0.5, 0.0]), 0.1)
        np.testing.assert_allclose(new, [-0.1, 0.1, 0.0], atol=1e-7)
        assert state.t == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr0=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")


@pytest.fixture(scope="module")
def degree_one():
    return gen_regression(1, 2000, 500, seed=21)


class TestTraining:
    def test_deterministic(self, degree_one):
        train, _, _ = degree_one
        cfg = TrainConfig.regression(epochs=3, seed=4)
        a, ha = train_moe(init_moe(3, 2, 2, seed=4), train, cfg)
        b, hb = train_moe(init_moe(3, 2, 2, seed=4), train, cfg)
        assert np.array_equal(a.packed(), b.packed()) and ha == hb

    def test_degree_one_fits(self, degree_one):
        train, _, _ = degree_one
        m, hist = train_moe(init_moe(2, 2, 2, seed=0), train, TrainConfig.regression(seed=0))
        assert len(hist) == 30
        assert glm.mse(moe_predict(m, train.X), train.y) < 0.05
        assert hist[-1] < hist[0]

    def test_classification_loss_drops(self):
        from moebma.datagen import gen_classification

        train, _, _ = gen_classification(4, 2000, 10, seed=3)
        m0 = init_moe(3, 3, 2, "logistic", seed=1)
        m, hist = train_moe(m0, train, TrainConfig.classification(seed=1, epochs=10))
        assert len(hist) == 10
        assert moe_loss(m, train) < moe_loss(m0, train)

    @pytest.mark.parametrize("link,optimizer", [("identity", "adam"), ("logistic", "adam"),
                                                ("identity", "sgd")])
    def test_single_expert_reproduces_glm_training(self, link, optimizer):
        rng = np.random.default_rng(6)
        n = 300
        X = random_design(rng, n, 3)
        y = X @ rng.normal(size=3) + 0.1 * rng.normal(size=n)
        if link == "logistic":
            y = (y > 0).astype(float)
        ds = Dataset(X, y)
        cfg = TrainConfig(optimizer=optimizer, lr0=0.05, decay=0.3, epochs=4, batch_size=32, seed=2,
                          noise=False)
        m0 = init_moe(1, 3, 1, link, seed=2)
        m, hist_m = train_moe(m0, ds, cfg)
        p, hist_p = train_glm(m0.experts[0], ds, cfg)
        np.testing.assert_allclose(m.experts[0].theta, p.theta, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(hist_m, hist_p, rtol=1e-10)


class TestPiecewise:
    def test_one_cell_is_the_expert(self):
        expert = lambda x: int(x > 0.3)  # noqa: E731
        h = single_cell(expert)
        for x in np.linspace(-5, 5, 41):
            assert piecewise_classify(h, x) == expert(x)

    def test_boundary_goes_to_lower_cell(self):
        h = PiecewiseHypothesis([(HalfOpen(0.0, 1.0),), (HalfOpen(1.0, 2.0),), (REAL_LINE,)],
                                [lambda x: 0, lambda x: 1, lambda x: 0])
        assert h.cell_index(0.0) == 0
        assert h.cell_index(1.0) == 1
        assert h.cell_index(2.0) == 2
        assert h.cell_index(-4.0) == 2

    def test_union_cells(self):
        h = PiecewiseHypothesis([(HalfOpen(0, 1), HalfOpen(5, 6)), ()], [lambda x: 1, lambda x: 0])
        assert [h(x) for x in (0.5, 3.0, 5.5, 6.0)] == [1, 0, 1, 0]

    def test_cell_expert_count(self):
        with pytest.raises(ValueError):
            PiecewiseHypothesis([(REAL_LINE,)], [lambda x: 0, lambda x: 1])
