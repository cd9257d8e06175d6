"""Joint-loss algebra, optimizer oracles, gradient paths, and the fit loop."""

import math

import numpy as np
import pytest

from stormsense.autodiff import Tape, Tensor, mul
from stormsense.data import PairedInstance, TyphoonObservation
from stormsense.embeddings import EmbeddingTable
from stormsense.features import NormState
from stormsense.text import RawTweet
from stormsense.training import (
    AdamState,
    JointConfig,
    JointDataset,
    JointModels,
    SentimentExample,
    TrainInstance,
    TrainingReport,
    _augment_minority,
    _sample_sentiment,
    adam_step,
    build_joint_dataset,
    clip_gradients,
    compute_losses,
    cross_entropy,
    fit,
    joint_loss,
    train_step,
)


def _toy_table():
    rng = np.random.default_rng(3)
    vocab = {"<pad>": 0, "good": 1, "bad": 2, "storm": 3, "red_cross": 4}
    vectors = rng.normal(scale=0.2, size=(5, 4))
    vectors[0] = 0.0
    return EmbeddingTable(vocab=vocab, vectors=vectors, d=4, entity_marks={4})


def _toy_models(mode="joint", seed=1):
    return JointModels.create(mode, table=_toy_table(), env_dim=5,
                              head_kind="dnn", units=3, seed=seed)


ENVS = np.array([
    [10.0, 130.0, 30.0, 20.0, 1000.0],
    [12.0, 128.0, 60.0, 25.0, 990.0],
    [14.0, 126.0, 95.0, 30.0, 960.0],
    [16.0, 124.0, 140.0, 35.0, 920.0],
])


def _toy_batch():
    a = TrainInstance(0, ENVS[0], np.array([[1, 2, 0], [2, 2, 1]], dtype=np.intp))
    b = TrainInstance(1, ENVS[1], np.array([[2, 1, 1]], dtype=np.intp))
    c = TrainInstance(2, ENVS[2], np.zeros((0, 3), dtype=np.intp))
    d = TrainInstance(3, None, np.zeros((0, 3), dtype=np.intp),
                      fixed_features=np.linspace(0.1, 0.8, 8))
    return [a, b, c, d]


def _toy_norm():
    return NormState.fit(ENVS[:3], [2.0, 1.0, 0.0])


def _toy_sentiment():
    return [SentimentExample(np.array([1, 0, 0], dtype=np.intp), 1),
            SentimentExample(np.array([2, 0, 0], dtype=np.intp), 0)]


def _grad_cfg(**kw):
    base = dict(epochs=1, batch_size=4, seed=0, grad_clip=0.0,
                warmup_epochs=0, oversample=False)
    base.update(kw)
    return JointConfig(**base)


def _total_loss(models, instances, sents, norm, cfg):
    with Tape() as tape:
        l_f1, l_f2 = compute_losses(instances, sents, models, norm, cfg,
                                    training=False)
        total = joint_loss(l_f1, l_f2, cfg)
    return total, tape


def _analytic_grads(models, instances, sents, norm, cfg):
    params = models.trainable()
    for p in params.values():
        p.zero_grad()
    total, tape = _total_loss(models, instances, sents, norm, cfg)
    tape.backward(total)
    return {name: np.array(p.grad) for name, p in params.items()}


def _fd_grad(param, idx, models, instances, sents, norm, cfg, eps=1e-5):
    orig = param.data[idx]
    param.data[idx] = orig + eps
    hi, _ = _total_loss(models, instances, sents, norm, cfg)
    param.data[idx] = orig - eps
    lo, _ = _total_loss(models, instances, sents, norm, cfg)
    param.data[idx] = orig
    return (hi.item() - lo.item()) / (2.0 * eps)


class TestJointConfig:
    def test_defaults_valid(self):
        cfg = JointConfig()
        assert cfg.lambda_f1 == 1.0 and cfg.lambda_f2 == 1.0
        assert cfg.epochs == 100 and cfg.batch_size == 32
        assert (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon) == \
            (0.001, 0.9, 0.999, 1e-8)
        assert cfg.mode == "joint"

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError, match="weights"):
            JointConfig(lambda_f1=-0.1)
        with pytest.raises(ValueError, match="epochs"):
            JointConfig(epochs=0)
        with pytest.raises(ValueError, match="batch_size"):
            JointConfig(batch_size=0)
        with pytest.raises(ValueError, match="mode"):
            JointConfig(mode="ensemble")
        with pytest.raises(ValueError, match="beta"):
            JointConfig(beta1=1.0)
        with pytest.raises(ValueError, match="learning_rate"):
            JointConfig(learning_rate=0.0)


class TestCrossEntropy:
    def test_binary_half_is_ln2(self):
        loss = cross_entropy(Tensor([0.5, 0.5]), 1)
        np.testing.assert_allclose(loss.item(), math.log(2.0), atol=1e-12)

    def test_perfect_prediction_is_zero_within_tolerance(self):
        assert cross_entropy(Tensor([0.0, 1.0]), 1).item() <= 1e-9
        assert cross_entropy(Tensor([0.0, 0.0, 1.0, 0.0]), 2).item() <= 1e-9

    def test_batch_is_mean_of_singles(self):
        batch = cross_entropy(Tensor([[0.5, 0.5], [0.2, 0.8]]), [1, 1])
        one = cross_entropy(Tensor([0.5, 0.5]), 1).item()
        two = cross_entropy(Tensor([0.2, 0.8]), 1).item()
        np.testing.assert_allclose(batch.item(), (one + two) / 2.0, atol=1e-12)

    def test_binary_negative_class_uses_complement(self):
        loss = cross_entropy(Tensor([0.7, 0.3]), 0)
        np.testing.assert_allclose(loss.item(), -math.log(0.7), atol=1e-12)

    def test_categorical_picks_target_probability(self):
        loss = cross_entropy(Tensor([[0.1, 0.2, 0.3, 0.4]]), [3])
        np.testing.assert_allclose(loss.item(), -math.log(0.4), atol=1e-12)

    def test_one_hot_matches_label(self):
        probs = Tensor([[0.2, 0.3, 0.4, 0.1], [0.7, 0.1, 0.1, 0.1]])
        by_label = cross_entropy(probs, [2, 0]).item()
        one_hot = np.array([[0, 0, 1, 0], [1, 0, 0, 0]], dtype=float)
        probs2 = Tensor(probs.data.copy())
        assert cross_entropy(probs2, one_hot).item() == by_label

    def test_target_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy(Tensor([0.5, 0.5]), 2)
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy(Tensor([[0.25] * 4]), [-1])

    def test_malformed_one_hot(self):
        with pytest.raises(ValueError, match="one-hot"):
            cross_entropy(Tensor([[0.5, 0.5]]), np.array([[1.0, 1.0]]))

    def test_non_integer_labels(self):
        with pytest.raises(ValueError, match="integers"):
            cross_entropy(Tensor([[0.5, 0.5], [0.5, 0.5]]), [0.5, 1.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        raw = rng.uniform(0.1, 0.9, size=(3, 2))
        probs = Tensor(raw, requires_grad=True)
        with Tape() as tape:
            loss = cross_entropy(probs, [1, 0, 1])
        tape.backward(loss)
        for idx in ((0, 1), (1, 1), (2, 0)):
            eps = 1e-6
            bumped = raw.copy()
            bumped[idx] += eps
            hi = cross_entropy(Tensor(bumped), [1, 0, 1]).item()
            bumped[idx] -= 2 * eps
            lo = cross_entropy(Tensor(bumped), [1, 0, 1]).item()
            fd = (hi - lo) / (2 * eps)
            np.testing.assert_allclose(probs.grad[idx], fd, atol=1e-4)


class TestJointLoss:
    def test_unit_weights_identity(self):
        rng = np.random.default_rng(0)
        cfg = JointConfig()
        for _ in range(20):
            a, b = rng.uniform(0.0, 5.0, size=2)
            total = joint_loss(Tensor(a), Tensor(b), cfg)
            assert abs(total.item() - (a + b)) <= 1e-12

    def test_spot_value(self):
        total = joint_loss(Tensor(0.3), Tensor(0.7), JointConfig())
        np.testing.assert_allclose(total.item(), 1.0, atol=1e-12)

    def test_zero_losses(self):
        assert joint_loss(Tensor(0.0), Tensor(0.0), JointConfig()).item() == 0.0

    def test_weighted_sum(self):
        cfg = JointConfig(lambda_f1=2.0, lambda_f2=0.5)
        np.testing.assert_allclose(
            joint_loss(Tensor(1.0), Tensor(4.0), cfg).item(), 4.0, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            joint_loss(Tensor(float("nan")), Tensor(0.0), JointConfig())
        with pytest.raises(ValueError, match="finite"):
            joint_loss(Tensor(0.0), Tensor(float("inf")), JointConfig())

    def test_backward_reaches_both_terms(self):
        a = Tensor(2.0, requires_grad=True)
        b = Tensor(3.0, requires_grad=True)
        cfg = JointConfig(lambda_f1=1.0, lambda_f2=2.0)
        with Tape() as tape:
            total = joint_loss(mul(a, a), mul(b, Tensor(1.0)), cfg)
        tape.backward(total)
        np.testing.assert_allclose(a.grad, 4.0)
        np.testing.assert_allclose(b.grad, 2.0)


class TestAdam:
    def test_first_step_magnitude(self):
        p = Tensor(np.ones(3), requires_grad=True)
        params = {"a": p}
        state = AdamState.create(params)
        adam_step(params, {"a": np.ones(3)}, state, JointConfig())
        np.testing.assert_allclose(p.data, np.ones(3) - 0.001, atol=1e-9)
        assert state.t == 1

    def test_zero_gradient_leaves_parameters(self):
        p = Tensor(np.arange(4.0), requires_grad=True)
        params = {"a": p}
        state = AdamState.create(params)
        adam_step(params, {"a": np.zeros(4)}, state, JointConfig())
        np.testing.assert_array_equal(p.data, np.arange(4.0))

    def test_identical_inputs_give_identical_updates(self):
        p1 = Tensor(np.full(2, 0.5), requires_grad=True)
        p2 = Tensor(np.full(2, 0.5), requires_grad=True)
        params = {"a": p1, "b": p2}
        state = AdamState.create(params)
        g = np.array([0.3, -0.7])
        adam_step(params, {"a": g.copy(), "b": g.copy()}, state, JointConfig())
        np.testing.assert_array_equal(p1.data, p2.data)

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        params = {"a": p}
        state = AdamState.create(params)
        with pytest.raises(ValueError, match="does not match"):
            adam_step(params, {"a": np.zeros(4)}, state, JointConfig())

    def test_unknown_parameter_rejected(self):
        params = {"a": Tensor(np.zeros(2), requires_grad=True)}
        state = AdamState.create({})
        with pytest.raises(ValueError, match="missing"):
            adam_step(params, {"a": np.zeros(2)}, state, JointConfig())

    def test_step_counter_advances(self):
        params = {"a": Tensor(np.zeros(2), requires_grad=True)}
        state = AdamState.create(params)
        adam_step(params, {"a": np.zeros(2)}, state, JointConfig())
        adam_step(params, {"a": np.zeros(2)}, state, JointConfig())
        assert state.t == 2


class TestClipGradients:
    def test_scales_down_to_ceiling(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p._grad = np.array([3.0, 4.0])
        norm = clip_gradients({"a": p}, 2.5)
        assert norm == 5.0
        np.testing.assert_allclose(p.grad, [1.5, 2.0], atol=1e-12)

    def test_leaves_small_gradients(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p._grad = np.array([3.0, 4.0])
        norm = clip_gradients({"a": p}, 10.0)
        assert norm == 5.0
        np.testing.assert_array_equal(p.grad, [3.0, 4.0])


class TestGradientPaths:
    def test_classifier_gradients_match_finite_differences(self):
        models = _toy_models()
        batch, sents, norm = _toy_batch(), _toy_sentiment(), _toy_norm()
        cfg = _grad_cfg()
        grads = _analytic_grads(models, batch, sents, norm, cfg)
        w = models.head.params["out.w"]
        for idx in ((0, 0), (3, 2)):
            fd = _fd_grad(w, idx, models, batch, sents, norm, cfg)
            assert abs(grads["classifier.out.w"][idx] - fd) <= \
                1e-4 * max(1.0, abs(fd))

    def test_extractor_gradients_match_finite_differences(self):
        models = _toy_models()
        batch, sents, norm = _toy_batch(), _toy_sentiment(), _toy_norm()
        cfg = _grad_cfg()
        grads = _analytic_grads(models, batch, sents, norm, cfg)
        w = models.sentiment.w_out
        for idx in ((0, 0), (2, 1)):
            fd = _fd_grad(w, idx, models, batch, sents, norm, cfg)
            assert abs(grads["sentiment.w_out"][idx] - fd) <= \
                1e-4 * max(1.0, abs(fd))
        table = models.embedding
        fd = _fd_grad(table, (1, 0), models, batch, sents, norm, cfg)
        assert abs(grads["embedding.table"][(1, 0)] - fd) <= \
            1e-4 * max(1.0, abs(fd))

    def test_classifier_gradients_come_only_from_l_f2(self):
        models = _toy_models()
        batch, sents, norm = _toy_batch(), _toy_sentiment(), _toy_norm()
        both = _analytic_grads(models, batch, sents, norm, _grad_cfg())
        f2_only = _analytic_grads(models, batch, sents, norm,
                                  _grad_cfg(lambda_f1=0.0))
        for name in both:
            if name.startswith("classifier."):
                np.testing.assert_array_equal(both[name], f2_only[name])

    def test_extractor_gradients_decompose_by_lambda(self):
        models = _toy_models()
        batch, sents, norm = _toy_batch(), _toy_sentiment(), _toy_norm()
        both = _analytic_grads(models, batch, sents, norm, _grad_cfg())
        f1_only = _analytic_grads(models, batch, sents, norm,
                                  _grad_cfg(lambda_f2=0.0))
        f2_only = _analytic_grads(models, batch, sents, norm,
                                  _grad_cfg(lambda_f1=0.0))
        for name in ("sentiment.w_out", "embedding.table"):
            np.testing.assert_allclose(both[name],
                                       f1_only[name] + f2_only[name],
                                       atol=1e-10)
        # the statistics path is live: the classifier loss alone moves phi1
        assert np.abs(f2_only["sentiment.w_out"]).max() > 0.0

    def test_joint_equals_sum_on_real_forward(self):
        models = _toy_models()
        batch, sents, norm = _toy_batch(), _toy_sentiment(), _toy_norm()
        with Tape():
            l_f1, l_f2 = compute_losses(batch, sents, models, norm,
                                        _grad_cfg(), training=False)
            total = joint_loss(l_f1, l_f2, _grad_cfg())
        assert abs(total.item() - (l_f1.item() + l_f2.item())) <= 1e-12


class TestTrainStep:
    def test_no_labeled_tweets_still_moves_extractor(self):
        models = _toy_models()
        batch, norm = _toy_batch(), _toy_norm()
        cfg = _grad_cfg()
        grads = _analytic_grads(models, batch, [], norm, cfg)
        with Tape():
            l_f1, _ = compute_losses(batch, [], models, norm, cfg,
                                     training=False)
        assert l_f1.item() == 0.0
        assert np.abs(grads["sentiment.w_out"]).max() > 0.0

    def test_zero_weight_and_no_labels_freezes_everything(self):
        models = _toy_models()
        batch, norm = _toy_batch(), _toy_norm()
        cfg = _grad_cfg(lambda_f2=0.0)
        params = models.trainable()
        before = {name: p.data.copy() for name, p in params.items()}
        state = AdamState.create(params)
        losses = train_step(batch, [], models, state, cfg, norm,
                            np.random.default_rng(0))
        assert losses.l_joint == 0.0
        for name, p in params.items():
            np.testing.assert_array_equal(p.data, before[name])

    def test_empty_batch_rejected(self):
        models = _toy_models()
        with pytest.raises(ValueError, match="empty batch"):
            train_step([], [], models, AdamState.create(models.trainable()),
                       _grad_cfg(), _toy_norm(), np.random.default_rng(0))

    def test_overfit_single_batch_monotone(self):
        models = _toy_models()
        models.sentiment.dropout_rate = 0.0
        batch, sents, norm = _toy_batch(), _toy_sentiment(), _toy_norm()
        cfg = JointConfig(epochs=1, batch_size=4, learning_rate=1e-3,
                          warmup_epochs=0, oversample=False, seed=0)
        state = AdamState.create(models.trainable())
        rng = np.random.default_rng(0)
        losses = [train_step(batch, sents, models, state, cfg, norm, rng).l_joint
                  for _ in range(6)]
        for before, after in zip(losses, losses[1:]):
            assert after < before

    def test_standalone_mode_owns_no_extractor(self):
        models = JointModels.create("standalone_env_only", env_dim=5,
                                    head_kind="dnn", seed=2)
        assert models.sentiment is None and models.embedding is None
        names = set(models.trainable())
        assert names and all(n.startswith("classifier.") for n in names)
        batch = _toy_batch()[:3]  # feature width 5 in this mode
        cfg = _grad_cfg(mode="standalone_env_only")
        state = AdamState.create(models.trainable())
        losses = train_step(batch, [], models, state, cfg, _toy_norm(),
                            np.random.default_rng(0))
        assert losses.l_f1 == 0.0
        assert math.isfinite(losses.l_f2)

    def test_sentiment_sampling_respects_mode_and_budget(self):
        pool = [SentimentExample(np.zeros(3, dtype=np.intp), i % 2)
                for i in range(50)]
        batch = _toy_batch()
        rng = np.random.default_rng(0)
        sample = _sample_sentiment(pool, batch, _grad_cfg(sentiment_sample=2), rng)
        assert len(sample) == 2
        # batch carries 3 tweets; the sample never exceeds that
        sample = _sample_sentiment(pool, batch, _grad_cfg(), rng)
        assert len(sample) == 3
        standalone = _grad_cfg(mode="standalone_env_only")
        assert _sample_sentiment(pool, batch, standalone, rng) == []

    def test_hard_label_mode_runs(self):
        models = _toy_models()
        batch, sents, norm = _toy_batch(), _toy_sentiment(), _toy_norm()
        cfg = _grad_cfg(hard_labels=True)
        state = AdamState.create(models.trainable())
        losses = train_step(batch, sents, models, state, cfg, norm,
                            np.random.default_rng(1))
        assert math.isfinite(losses.l_joint)


def _class_envs(rng, label_index, count):
    vmax = {0: 25.0, 1: 55.0, 2: 95.0, 3: 140.0}[label_index]
    rows = np.column_stack([
        rng.normal(15.0, 1.0, count),
        rng.normal(130.0, 1.0, count),
        rng.normal(vmax, 2.0, count),
        rng.normal(30.0, 1.0, count),
        rng.normal(980.0, 1.0, count),
    ])
    return rows


def _toy_dataset(seed=0):
    rng = np.random.default_rng(seed)
    tokens = {0: [1, 2, 0], 1: [2, 1, 0], 2: [1, 3, 0], 3: [2, 3, 1]}
    train, test = [], []
    for label in range(4):
        for rows, count in ((train, 3), (test, 1)):
            for env in _class_envs(rng, label, count):
                idx = np.array([tokens[label]], dtype=np.intp)
                rows.append(TrainInstance(label, env, idx))
    pool = [SentimentExample(np.array([1, 3, 0], dtype=np.intp), 1),
            SentimentExample(np.array([2, 3, 0], dtype=np.intp), 0)] * 3
    norm = NormState.fit(np.stack([i.env for i in train]),
                         [1.0] * len(train))
    return JointDataset(train=train, test=test, pool_train=pool[:4],
                        pool_eval=pool[4:], norm=norm, seq_length=3)


class TestFit:
    def test_same_seed_same_report(self):
        cfg = JointConfig(epochs=2, batch_size=4, seed=7, warmup_epochs=1,
                          oversample=False, sentiment_sample=4)
        reports = []
        for _ in range(2):
            report = fit(_toy_dataset(), _toy_models(seed=5), cfg)
            reports.append(report)
        assert reports[0].rows == reports[1].rows
        assert reports[0].warmup_losses == reports[1].warmup_losses
        assert len(reports[0].rows) == 2
        assert len(reports[0].warmup_losses) == 1

    def test_empty_training_split_rejected(self):
        ds = _toy_dataset()
        empty = JointDataset(train=[], test=ds.test, pool_train=ds.pool_train,
                             pool_eval=ds.pool_eval, norm=ds.norm,
                             seq_length=3)
        with pytest.raises(ValueError, match="empty training split"):
            fit(empty, _toy_models(), JointConfig(epochs=1, oversample=False))

    def test_report_csv_roundtrip(self, tmp_path):
        report = TrainingReport(rows=[], warmup_losses=[])
        from stormsense.training import EpochRow

        report.rows = [EpochRow(1, 1 / 3, 2 / 7, 13 / 21, 0.5, 0.25),
                       EpochRow(2, 0.1, 0.2, 0.3, 1.0, 0.75)]
        path = tmp_path / "curve.csv"
        report.to_csv(path)
        back = TrainingReport.from_csv(path)
        assert back.rows == report.rows

    def test_standalone_fits_separable_environment(self):
        rng = np.random.default_rng(4)
        train = []
        for label in range(4):
            for env in _class_envs(rng, label, 10):
                train.append(TrainInstance(label, env,
                                           np.zeros((0, 1), dtype=np.intp)))
        test = train[::5]
        norm = NormState.fit(np.stack([i.env for i in train]),
                             [0.0] * len(train))
        ds = JointDataset(train=train, test=test, pool_train=[], pool_eval=[],
                          norm=norm, seq_length=1)
        models = JointModels.create("standalone_env_only", env_dim=5,
                                    head_kind="dnn", seed=3)
        cfg = JointConfig(mode="standalone_env_only", epochs=30, batch_size=8,
                          learning_rate=0.01, oversample=False, seed=1)
        report = fit(ds, models, cfg)
        assert report.final().train_acc >= 0.95
        assert all(r.l_f1 == 0.0 for r in report.rows)

    def test_extractor_only_learns_token_sentiment(self):
        rng = np.random.default_rng(9)
        pool = []
        for i in range(60):
            label = i % 2
            lead = 1 if label else 2
            pool.append(SentimentExample(
                np.array([lead, int(rng.integers(3, 5)), 0], dtype=np.intp),
                label))
        ds = JointDataset(train=[], test=[], pool_train=pool[:48],
                          pool_eval=pool[48:], norm=_toy_norm(), seq_length=3)
        models = _toy_models(mode="feature_extractor_only", seed=2)
        cfg = JointConfig(mode="feature_extractor_only", epochs=6,
                          batch_size=8, learning_rate=0.01, seed=0)
        report = fit(ds, models, cfg)
        assert report.final().train_acc >= 0.9
        assert report.final().test_acc >= 0.9
        assert all(r.l_f2 == 0.0 for r in report.rows)

    def test_extractor_only_empty_pool_rejected(self):
        ds = JointDataset(train=[], test=[], pool_train=[], pool_eval=[],
                          norm=_toy_norm(), seq_length=3)
        with pytest.raises(ValueError, match="empty training split"):
            fit(ds, _toy_models(mode="feature_extractor_only"),
                JointConfig(mode="feature_extractor_only", epochs=1))

    def test_minority_augmentation_appends_constant_rows(self):
        models = _toy_models()
        ds = _toy_dataset()
        ds.train = ds.train[:3] + ds.train[3:5]  # three of class 0, two of 1
        for inst in ds.train[3:]:
            inst.label_index = 1
        cfg = _grad_cfg(seed=3)
        augmented = _augment_minority(ds, models, cfg)
        assert len(augmented) == 6
        synth = [i for i in augmented if i.fixed_features is not None]
        assert len(synth) == 1
        assert synth[0].label_index == 1
        assert synth[0].fixed_features.shape == (8,)
        assert np.all(np.isfinite(synth[0].fixed_features))


class TestBuildJointDataset:
    def _paired(self):
        obs = [
            TyphoonObservation("A", 0.0, 10.0, 130.0, 30.0, 20.0, 1000.0, "TD"),
            TyphoonObservation("A", 21600.0, 11.0, 129.0, 55.0, 22.0, 990.0, "TS"),
            TyphoonObservation("B", 0.0, 12.0, 128.0, 95.0, 25.0, 960.0, "TY"),
            TyphoonObservation("B", 21600.0, 13.0, 127.0, 145.0, 28.0, 915.0, "ST"),
            TyphoonObservation("C", 0.0, 14.0, 126.0, 32.0, 21.0, 999.0, "TD"),
        ]
        texts = [
            ["good storm today", "bad bad storm"],
            ["help the red cross now"],
            [],
            ["good good good"],
            ["bad storm report"],
        ]
        paired = []
        for i, (o, tweets) in enumerate(zip(obs, texts)):
            raw = [RawTweet(id=f"t{i}_{j}", timestamp=o.timestamp + j,
                            text=text) for j, text in enumerate(tweets)]
            paired.append(PairedInstance(observation=o, tweets=raw))
        return paired

    def _sentiment_rows(self):
        return [
            (RawTweet(id="s0", timestamp=0.0, text="good storm"), 1),
            (RawTweet(id="s1", timestamp=1.0, text="bad storm"), 0),
            (RawTweet(id="s2", timestamp=2.0, text="good good"), 1),
            (RawTweet(id="s3", timestamp=3.0, text="bad bad"), 0),
            (RawTweet(id="s4", timestamp=4.0, text="good"), 1),
        ]

    def test_shapes_and_split(self):
        ds = build_joint_dataset(self._paired(), self._sentiment_rows(),
                                 _toy_table(), split_ratio=0.8, seed=0)
        assert len(ds.train) == 4 and len(ds.test) == 1
        assert ds.seq_length >= 1
        for inst in ds.train + ds.test:
            assert inst.token_indices.shape[1:] == (ds.seq_length,)
            assert inst.token_indices.size == 0 or \
                inst.token_indices.max() < 5
        assert len(ds.pool_eval) == 1 and len(ds.pool_train) == 4
        assert ds.norm.m == 5

    def test_entity_phrase_collapses_to_marked_row(self):
        ds = build_joint_dataset(self._paired(), [], _toy_table(),
                                 split_ratio=0.8, seed=0)
        rows = np.concatenate([i.token_indices.ravel()
                               for i in ds.train + ds.test])
        assert 4 in rows  # "red cross" resolved to its merged vector row

    def test_deterministic(self):
        a = build_joint_dataset(self._paired(), self._sentiment_rows(),
                                _toy_table(), seed=3)
        b = build_joint_dataset(self._paired(), self._sentiment_rows(),
                                _toy_table(), seed=3)
        assert [i.timestamp for i in a.train] == [i.timestamp for i in b.train]
        assert [i.label_index for i in a.test] == [i.label_index for i in b.test]
        assert [e.label for e in a.pool_train] == [e.label for e in b.pool_train]

    def test_empty_paired_rejected(self):
        with pytest.raises(ValueError, match="zero paired"):
            build_joint_dataset([], [], _toy_table())
