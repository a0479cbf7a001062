import itertools
import logging
import math

import numpy as np
import pytest

from framework.errors import ConfigurationError, DataError, DimensionError
from models.config import LossConfig, PELConfig
from services import network
from services.losses import ContrastiveSet
from services.numeric import derive_rng

VARIANTS = ["full", "adapter", "prefix", "ptuning"]
PARADIGMS = ["head", "prompt"]
PEL_GRID = [PELConfig(variant=v, paradigm=p, bottleneck_dim=3, prefix_length=2) for v, p in itertools.product(VARIANTS, PARADIGMS)]
PEL_IDS = [pel.label for pel in PEL_GRID]


def _randomized(params, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    out = params.copy()
    for name, a in out.arrays.items():
        out.arrays[name] = rng.normal(scale=scale, size=a.shape)
    return out


class TestInit:
    def test_same_seed_same_parameters(self):
        pel = PELConfig()
        a = network.init(pel, 32, 16, 3, seed=5)
        b = network.init(pel, 32, 16, 3, seed=5)
        for name in a.arrays:
            assert np.array_equal(a[name], b[name])

    def test_shapes(self):
        params = network.init(PELConfig(variant="adapter", paradigm="prompt"), 4096, 64, 4, seed=0)
        assert params[network.BACKBONE_W].shape == (4096, 64)
        assert params[network.LABEL_EMBEDDINGS].shape == (4, 64)
        assert params[network.ADAPTER_DOWN_W].shape == (64, 8)
        assert params[network.ADAPTER_UP_W].shape == (8, 64)

    def test_backbone_independent_of_variant(self):
        full = network.init(PELConfig(variant="full"), 16, 8, 3, seed=9)
        prefix = network.init(PELConfig(variant="prefix"), 16, 8, 3, seed=9)
        assert np.array_equal(full[network.BACKBONE_W], prefix[network.BACKBONE_W])

    def test_bottleneck_must_be_narrower(self):
        with pytest.raises(ConfigurationError):
            network.init(PELConfig(variant="adapter", bottleneck_dim=8), 16, 8, 3, seed=0)

    def test_check_params_flags_missing_blocks(self):
        params = network.init(PELConfig(variant="adapter", bottleneck_dim=4), 16, 8, 3, seed=0)
        del params.arrays[network.ADAPTER_UP_B]
        with pytest.raises(ConfigurationError):
            network.check_params(params)


class TestForward:
    @pytest.mark.parametrize("variant", ["adapter", "prefix", "ptuning"])
    def test_zeroed_additive_components_match_bare_backbone(self, variant, rng):
        bare = network.init(PELConfig(variant="full", paradigm="head"), 12, 6, 3, seed=1)
        pel = PELConfig(variant=variant, paradigm="head", bottleneck_dim=2)
        params = network.init(pel, 12, 6, 3, seed=1)
        for name in (network.PREFIX, network.PSEUDO_TOKENS):
            if params.has(name):
                params.arrays[name][:] = 0.0
        X = rng.normal(size=(10, 12))
        np.testing.assert_array_equal(network.predict_proba(params, X), network.predict_proba(bare, X))

    def test_hidden_is_tanh_of_affine_map(self, rng):
        params = network.init(PELConfig(variant="adapter", bottleneck_dim=2), 12, 6, 3, seed=1)
        x = rng.normal(size=12)
        expected = np.tanh(x @ params[network.BACKBONE_W] + params[network.BACKBONE_B])
        np.testing.assert_allclose(network.hidden(params, x), expected, atol=1e-15)

    def test_rate_zero_mask_matches_unmasked(self, rng):
        params = network.init(PELConfig(bottleneck_dim=2), 12, 6, 3, seed=1)
        X = rng.normal(size=(5, 12))
        mask = network.dropout_mask(6, 0.0, derive_rng(0))
        assert np.all(mask == 1.0)
        np.testing.assert_array_equal(network.hidden(params, X, mask), network.hidden(params, X))

    def test_mask_is_reproducible(self):
        a = network.dropout_mask(64, 0.5, derive_rng(21, 3))
        b = network.dropout_mask(64, 0.5, derive_rng(21, 3))
        assert np.array_equal(a, b)
        assert set(np.unique(a).tolist()) <= {0.0, 2.0}

    def test_zero_head_is_uniform(self, rng):
        params = network.init(PELConfig(variant="full", paradigm="head"), 4, 3, 5, seed=0)
        params.arrays[network.CLS_W][:] = 0.0
        np.testing.assert_allclose(network.predict_proba(params, rng.normal(size=4)), np.full(5, 0.2))

    def test_hand_computed_probabilities(self):
        params = network.init(PELConfig(variant="full", paradigm="head"), 2, 2, 2, seed=0)
        params.arrays[network.BACKBONE_W] = np.eye(2)
        params.arrays[network.BACKBONE_B] = np.zeros(2)
        params.arrays[network.CLS_W] = np.eye(2)
        params.arrays[network.CLS_B] = np.zeros(2)
        probs = network.predict_proba(params, [math.atanh(0.5), 0.0])
        p0 = 1.0 / (1.0 + math.exp(-0.5))
        np.testing.assert_allclose(probs, [p0, 1.0 - p0], atol=1e-12)

    def test_prompt_prefers_matching_label_embedding(self, rng):
        params = network.init(PELConfig(variant="full", paradigm="prompt"), 3, 3, 3, seed=0)
        params.arrays[network.BACKBONE_W] = np.eye(3)
        params.arrays[network.LABEL_EMBEDDINGS] = np.eye(3) * 0.9
        x = np.array([0.0, math.atanh(0.9), 0.0])
        assert int(np.argmax(network.predict_proba(params, x))) == 1

    def test_probabilities_are_valid(self, rng):
        for pel in PEL_GRID:
            params = _randomized(network.init(pel, 6, 8, 3, seed=2), scale=2.0)
            np.testing.assert_allclose(network.predict_proba(params, rng.normal(size=(20, 6))).sum(axis=1), 1.0, atol=1e-9)

    def test_wrong_input_dimension(self):
        params = network.init(PELConfig(bottleneck_dim=4), 6, 8, 3, seed=2)
        with pytest.raises(DimensionError):
            network.predict_proba(params, np.zeros(5))


class TestVerbalizer:
    def test_label_embeddings_are_class_mean_hidden_vectors(self, rng):
        params = network.init(PELConfig(paradigm="prompt", bottleneck_dim=4), 6, 8, 2, seed=0)
        X = rng.normal(size=(10, 6))
        y = np.array([0, 1] * 5)
        fitted = network.fit_verbalizer(params, X, y)
        h = network.hidden(params, X)
        np.testing.assert_allclose(fitted[network.LABEL_EMBEDDINGS][1], h[y == 1].mean(axis=0))

    def test_missing_class(self, rng):
        params = network.init(PELConfig(paradigm="prompt", bottleneck_dim=4), 6, 8, 3, seed=0)
        with pytest.raises(DataError):
            network.fit_verbalizer(params, rng.normal(size=(4, 6)), np.array([0, 1, 0, 1]))


class TestParameterAccounting:
    @pytest.mark.parametrize("m,d", list(itertools.product([8, 16, 32], [32, 64, 128])))
    def test_adapter_block_size(self, m, d):
        pel = PELConfig(variant="adapter", paradigm="prompt", bottleneck_dim=m)
        assert network.trainable_param_count(pel, 4096, d, 4) == 2 * m * d + d + m

    def test_reference_counts(self):
        assert network.trainable_param_count(PELConfig(variant="adapter", paradigm="prompt"), 4096, 64, 4) == 1096
        assert network.trainable_param_count(PELConfig(variant="prefix", paradigm="prompt"), 4096, 64, 4) == 256
        full = PELConfig(variant="full", paradigm="head")
        assert network.trainable_param_count(full, 10, 4, 3) == 10 * 4 + 4 + 4 * 3 + 3

    @pytest.mark.parametrize("pel", PEL_GRID, ids=PEL_IDS)
    def test_count_matches_gradient_blocks(self, pel, rng):
        params = network.init(pel, 6, 8, 3, seed=0)
        _, grads = network.grad(params, rng.normal(size=(4, 6)), np.array([0, 1, 2, 0]), LossConfig(kind="ce", lam=0.0))
        assert sum(g.size for g in grads.values()) == network.trainable_param_count(pel, 6, 8, 3)

    def test_teacher_phase_tunes_backbone_but_not_verbalizer(self):
        names = network.trainable_names(PELConfig(variant="adapter", paradigm="prompt"), phase="teacher")
        assert network.BACKBONE_W in names
        assert network.LABEL_EMBEDDINGS not in names


def _fd_check(params, objective, names, rng, step=1e-5, samples=12):
    _, grads = objective(params)
    for name in names:
        flat_size = params[name].size
        picks = rng.choice(flat_size, size=min(samples, flat_size), replace=False)
        analytic, numeric = [], []
        for idx in picks:
            pos = np.unravel_index(idx, params[name].shape)
            original = params.arrays[name][pos]
            params.arrays[name][pos] = original + step
            up = objective(params)[0]
            params.arrays[name][pos] = original - step
            down = objective(params)[0]
            params.arrays[name][pos] = original
            analytic.append(grads[name][pos])
            numeric.append((up - down) / (2 * step))
        analytic, numeric = np.array(analytic), np.array(numeric)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * scale + 1e-8, name


class TestGradients:
    @pytest.mark.parametrize("pel", PEL_GRID, ids=PEL_IDS)
    @pytest.mark.parametrize("kind", ["ce", "phce"])
    def test_matches_central_differences(self, pel, kind):
        rng = np.random.default_rng(len(pel.label) + len(kind))
        params = _randomized(network.init(pel, 5, 8, 3, seed=3))
        X = rng.normal(size=(6, 5))
        y = np.array([0, 1, 2, 0, 1, 2])
        mask = network.dropout_mask(8, 0.25, derive_rng(1))
        contrastive = ContrastiveSet(
            anchors=rng.normal(size=(3, 5)), positives=rng.normal(size=(3, 5)), negatives=rng.normal(size=(3, 2, 5))
        )
        loss = LossConfig(kind=kind, tau=3.0, lam=0.5, n_negatives=2)

        def objective(p):
            return network.grad(p, X, y, loss, phase="teacher", mask=mask, contrastive=contrastive)

        _fd_check(params, objective, network.trainable_names(pel, "teacher"), rng)

    def test_literal_contrastive_form(self, rng):
        pel = PELConfig(variant="adapter", paradigm="head", bottleneck_dim=3)
        params = _randomized(network.init(pel, 5, 8, 3, seed=4))
        X = rng.normal(size=(4, 5))
        y = np.array([0, 1, 2, 1])
        cs = ContrastiveSet(rng.normal(size=(2, 5)), rng.normal(size=(2, 5)), rng.normal(size=(2, 3, 5)))
        loss = LossConfig(kind="phce", lam=1.0, n_negatives=3, contrastive_form="literal")
        _fd_check(params, lambda p: network.grad(p, X, y, loss, contrastive=cs), network.trainable_names(pel), rng)

    def test_zero_hidden_anchor_is_dropped(self, rng, caplog):
        # fresh adapter model: zero biases and up projection map a zero row to a zero hidden vector
        params = network.init(PELConfig(variant="adapter", paradigm="head", bottleneck_dim=2), 6, 8, 2, seed=1)
        assert not np.any(network.hidden(params, np.zeros(6)))
        X, y = rng.normal(size=(4, 6)), np.array([0, 1, 0, 1])
        kept = ContrastiveSet(rng.normal(size=(2, 6)), rng.normal(size=(2, 6)), rng.normal(size=(2, 3, 6)))
        with_zero = ContrastiveSet(
            np.vstack([np.zeros((1, 6)), kept.anchors]),
            np.vstack([rng.normal(size=(1, 6)), kept.positives]),
            np.concatenate([rng.normal(size=(1, 3, 6)), kept.negatives]),
        )
        loss = LossConfig(kind="phce", lam=0.5, n_negatives=3)
        with caplog.at_level(logging.WARNING, logger="services.network"):
            value, grads = network.grad(params, X, y, loss, contrastive=with_zero)
        expected_value, expected_grads = network.grad(params, X, y, loss, contrastive=kept)
        assert value == pytest.approx(expected_value, abs=1e-12)
        for name in expected_grads:
            np.testing.assert_allclose(grads[name], expected_grads[name], atol=1e-12)
        assert "skipped=1" in caplog.text

    def test_only_zero_anchors_leaves_classification_loss(self, rng):
        params = network.init(PELConfig(variant="adapter", paradigm="head", bottleneck_dim=2), 6, 8, 2, seed=1)
        X, y = rng.normal(size=(4, 6)), np.array([0, 1, 0, 1])
        cs = ContrastiveSet(np.zeros((1, 6)), rng.normal(size=(1, 6)), rng.normal(size=(1, 2, 6)))
        loss = LossConfig(kind="phce", lam=0.5, n_negatives=2)
        value, _ = network.grad(params, X, y, loss, contrastive=cs)
        assert value == network.grad(params, X, y, loss)[0]

    def test_large_tau_phce_equals_ce(self, rng):
        pel = PELConfig(variant="prefix", paradigm="head")
        params = _randomized(network.init(pel, 5, 8, 3, seed=4))
        X, y = rng.normal(size=(6, 5)), np.array([0, 1, 2, 0, 1, 2])
        ce_value, ce_grads = network.grad(params, X, y, LossConfig(kind="ce", lam=0.0))
        ph_value, ph_grads = network.grad(params, X, y, LossConfig(kind="phce", tau=1e12, lam=0.0))
        assert ce_value == ph_value
        for name in ce_grads:
            assert np.array_equal(ce_grads[name], ph_grads[name])


class TestAdamW:
    def test_first_step_moves_by_learning_rate(self):
        params = network.init(PELConfig(variant="full", paradigm="head"), 1, 1, 2, seed=0)
        opt = network.init_opt(params, "student", lr=0.1, weight_decay=0.0)
        before = params[network.BACKBONE_B].copy()
        network.adamw_step(params, opt, {network.BACKBONE_B: np.ones(1)})
        np.testing.assert_allclose(before - params[network.BACKBONE_B], [0.1], rtol=1e-6)

    def test_zero_gradient_without_decay_is_a_no_op(self):
        params = network.init(PELConfig(variant="adapter", paradigm="head", bottleneck_dim=2), 4, 4, 2, seed=0)
        opt = network.init_opt(params, "student", lr=0.1, weight_decay=0.0)
        before = params.copy()
        zeros = {name: np.zeros_like(params[name]) for name in network.trainable_names(params.pel)}
        network.adamw_step(params, opt, zeros)
        for name in params.arrays:
            assert np.array_equal(params[name], before[name])

    def test_adapter_leaves_backbone_untouched(self, rng):
        pel = PELConfig(variant="adapter", paradigm="prompt", bottleneck_dim=2)
        params = network.init(pel, 6, 4, 2, seed=0)
        w0 = params.copy()
        opt = network.init_opt(params, "student", lr=0.05, weight_decay=0.01)
        X, y = rng.normal(size=(8, 6)), np.array([0, 1] * 4)
        for _ in range(5):
            _, grads = network.grad(params, X, y, LossConfig(kind="ce", lam=0.0))
            network.adamw_step(params, opt, grads)
        assert np.array_equal(params[network.BACKBONE_W], w0[network.BACKBONE_W])
        assert np.array_equal(params[network.LABEL_EMBEDDINGS], w0[network.LABEL_EMBEDDINGS])
        assert not np.array_equal(params[network.ADAPTER_UP_W], w0[network.ADAPTER_UP_W])

    def test_mismatched_gradient(self):
        params = network.init(PELConfig(variant="adapter", bottleneck_dim=2), 4, 4, 2, seed=0)
        opt = network.init_opt(params, "student", lr=0.1)
        with pytest.raises(DimensionError):
            network.adamw_step(params, opt, {network.BACKBONE_W: np.ones((4, 4))})
