# tests/test_ssl_pipeline.py
import math

import numpy as np
import pytest
from unittest.mock import MagicMock, patch

from npmatch.config import TrainConfig
from npmatch.datagen import LabeledSet, split, two_moons
from npmatch.errors import EmptyContextError, InvalidParameterError, TrainingDivergedError
from npmatch.gaussian_core import SkewParameter
from npmatch.gradcheck import TOY_DIMS, compare_gradients
from npmatch.np_model import ContextMemory, ModelDims, NpModel, NpPrediction, NpPredictionBatch
from npmatch.ssl_pipeline import (
    ALPHA_MAX,
    ALPHA_MIN,
    METRIC_FIELDS,
    LossResult,
    PseudoLabelBatch,
    compare_runs,
    elbo_loss,
    evaluate,
    select_pseudo_labels,
    skew_from_uncertainty,
    split_labeled_batch,
    supervised_ablation,
    total_loss,
    train,
)

DIMS = ModelDims(input_dim=2, feature_dim=4, latent_dim=4, num_classes=2, hidden_dim=6)


def _batch(confidence, uncertainty, labels=None):
    confidence = np.asarray(confidence, dtype=np.float64)
    labels = np.zeros(confidence.size, dtype=np.int64) if labels is None else np.asarray(labels)
    mean_probs = np.zeros((confidence.size, 2))
    mean_probs[np.arange(confidence.size), labels] = confidence
    mean_probs[np.arange(confidence.size), 1 - labels] = 1.0 - confidence
    return NpPredictionBatch(
        probs=mean_probs[:, None, :],
        mean_probs=mean_probs,
        uncertainty=np.asarray(uncertainty, dtype=np.float64),
        confidence=confidence,
    )


def _labeled(seed=0, size=6, labels=None):
    rng = np.random.default_rng(seed)
    points = rng.standard_normal((size, 2))
    labels = rng.integers(0, 2, size) if labels is None else np.asarray(labels)
    return LabeledSet(points, labels)


def _small_config(**overrides):
    values = dict(
        total_iterations=20,
        log_interval=5,
        batch_size=4,
        unlabeled_ratio=2,
        feature_dim=8,
        latent_dim=8,
        hidden_dim=8,
        bank_capacity=16,
        num_samples=3,
        seed=0,
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture(scope="module")
def moons():
    return split(two_moons(200, 0.1, seed=0), labels_per_class=3, test_fraction=0.2, seed=0)


class TestPseudoLabelGate:
    """Dual confidence / uncertainty gate"""

    def test_examples(self):
        """Only confident and certain predictions pass"""
        cfg = TrainConfig(confidence_threshold=0.95, uncertainty_threshold=0.4)
        pseudo = select_pseudo_labels(_batch([0.97, 0.97, 0.90, 0.99], [0.2, 0.5, 0.1, 0.0], [1, 0, 0, 0]), cfg)
        np.testing.assert_array_equal(pseudo.indices, [0, 3])
        np.testing.assert_array_equal(pseudo.labels, [1, 0])

    def test_threshold_boundaries(self):
        """confidence == tau_c passes; uncertainty == tau_u does not"""
        cfg = TrainConfig(confidence_threshold=0.75, uncertainty_threshold=0.25)
        pseudo = select_pseudo_labels(_batch([0.75, 0.75], [0.1, 0.25]), cfg)
        np.testing.assert_array_equal(pseudo.indices, [0])

    def test_empty_batch(self):
        """No predictions, no pseudo-labels"""
        assert len(select_pseudo_labels([], TrainConfig())) == 0

    def test_accepts_prediction_lists(self):
        """A list of single predictions gates the same way as a batch"""
        batch = _batch([0.99, 0.5], [0.1, 0.1])
        cfg = TrainConfig()
        from_list = select_pseudo_labels(list(batch), cfg)
        assert isinstance(list(batch)[0], NpPrediction)
        np.testing.assert_array_equal(from_list.indices, select_pseudo_labels(batch, cfg).indices)

    def test_monotone_in_thresholds(self):
        """Raising tau_c or lowering tau_u never grows the selected set"""
        rng = np.random.default_rng(0)
        batch = _batch(rng.uniform(0.5, 1.0, 1000), rng.uniform(0.0, math.log(2), 1000))
        grid_c = np.linspace(0.5, 0.99, 11)
        grid_u = np.linspace(0.1, 1.0, 10)
        for tau_u in grid_u:
            previous = None
            for tau_c in grid_c:
                chosen = set(
                    select_pseudo_labels(
                        batch, TrainConfig(confidence_threshold=tau_c, uncertainty_threshold=tau_u)
                    ).indices.tolist()
                )
                if previous is not None:
                    assert chosen <= previous
                previous = chosen
        for tau_c in grid_c:
            previous = None
            for tau_u in grid_u[::-1]:
                chosen = set(
                    select_pseudo_labels(
                        batch, TrainConfig(confidence_threshold=tau_c, uncertainty_threshold=tau_u)
                    ).indices.tolist()
                )
                if previous is not None:
                    assert chosen <= previous
                previous = chosen

    def test_dense_view(self):
        """dense() scatters labels and a 0/1 mask over the batch"""
        pseudo = PseudoLabelBatch(np.array([1, 3]), np.array([1, 1]), np.ones(2), np.zeros(2))
        labels, mask = pseudo.dense(4)
        np.testing.assert_array_equal(labels, [0, 1, 0, 1])
        np.testing.assert_array_equal(mask, [0.0, 1.0, 0.0, 1.0])


class TestSkew:
    """Uncertainty-driven skew of the JS regularizer"""

    def test_entropy_normalization(self):
        """alpha = u / ln C clamped to [0.01, 0.99]"""
        cfg = TrainConfig(uncertainty_kind="entropy")
        assert skew_from_uncertainty(0.0, cfg, 3).alpha == ALPHA_MIN
        assert skew_from_uncertainty(math.log(3), cfg, 3).alpha == ALPHA_MAX
        assert skew_from_uncertainty(0.5 * math.log(3), cfg, 3).alpha == pytest.approx(0.5, rel=1e-12)

    def test_variance_normalization(self):
        """alpha = u / 0.25 for the variance score"""
        cfg = TrainConfig(uncertainty_kind="variance")
        assert skew_from_uncertainty(0.125, cfg, 2).alpha == pytest.approx(0.5, rel=1e-12)
        assert skew_from_uncertainty(1.0, cfg, 2).alpha == ALPHA_MAX

    @pytest.mark.parametrize("u", [-0.1, float("nan")])
    def test_rejects_invalid_uncertainty(self, u):
        """Negative or NaN uncertainty is an error"""
        with pytest.raises(InvalidParameterError):
            skew_from_uncertainty(u, TrainConfig(), 2)


class TestElboLoss:
    """Conditional ELBO on one labeled batch"""

    def test_identical_splits_have_zero_kl(self):
        """q_target equals q_context when both splits hold the same records"""
        model = NpModel.initialize(DIMS, 0)
        data = _labeled()
        result = elbo_loss(model, data, data, num_samples=5, seed=1)
        assert result.diagnostics["elbo_kl"] == pytest.approx(0.0, abs=1e-12)

    def test_perfect_predictions_leave_only_kl(self):
        """A decoder certain of the true class has zero reconstruction loss"""
        model = NpModel.initialize(DIMS, 0)
        model.decoder.parameters()["w2"][...] = 0.0
        model.decoder.parameters()["b2"][...] = [1000.0, -1000.0]
        target = _labeled(seed=1, size=4, labels=[0, 0, 0, 0])
        result = elbo_loss(model, _labeled(seed=2), target, num_samples=4, seed=0)
        assert result.diagnostics["elbo_reconstruction"] == 0.0
        assert result.value == result.diagnostics["elbo_kl"]

    def test_value_is_the_sum_of_its_terms(self):
        """loss = reconstruction + KL"""
        model = NpModel.initialize(DIMS, 1)
        result = elbo_loss(model, _labeled(seed=3), _labeled(seed=4), num_samples=5, seed=2)
        assert result.value == pytest.approx(
            result.diagnostics["elbo_reconstruction"] + result.diagnostics["elbo_kl"], rel=1e-12
        )
        assert set(result.posteriors) == {"context", "target", "all"}

    def test_same_seed_same_value(self):
        """The latent draws are seeded"""
        model = NpModel.initialize(DIMS, 1)
        a = elbo_loss(model, _labeled(seed=3), _labeled(seed=4), num_samples=5, seed=9)
        b = elbo_loss(model, _labeled(seed=3), _labeled(seed=4), num_samples=5, seed=9)
        assert a.value == b.value

    def test_empty_split(self):
        """An empty context or target is rejected"""
        model = NpModel.initialize(DIMS, 0)
        empty = LabeledSet(np.zeros((0, 2)), np.zeros(0))
        with pytest.raises(EmptyContextError):
            elbo_loss(model, empty, _labeled())

    def test_gradients_match_finite_differences(self):
        """Analytic ELBO gradients agree with central differences"""
        rng = np.random.default_rng(5)
        model = NpModel.initialize(TOY_DIMS, 5)
        points = rng.standard_normal((5, 2))
        labels = rng.integers(0, TOY_DIMS.num_classes, 5)
        context, target = LabeledSet(points[:2], labels[:2]), LabeledSet(points[2:], labels[2:])
        analytic = elbo_loss(model, context, target, 3, seed=7, with_grad=True).gradients
        errors = compare_gradients(
            lambda: elbo_loss(model, context, target, 3, seed=7).value, analytic, model.parameters()
        )
        assert max(errors.values()) < 1e-4


class TestTotalLoss:
    """ELBO plus pseudo-label CE plus the JS regularizer"""

    def _inputs(self):
        rng = np.random.default_rng(11)
        strong = rng.standard_normal((6, 2))
        pseudo = PseudoLabelBatch(np.array([0, 4]), np.array([1, 0]), np.ones(2), np.zeros(2))
        return strong, pseudo

    def test_no_pseudo_labels_means_no_unlabeled_loss(self):
        """An empty selection contributes exactly zero"""
        model = NpModel.initialize(DIMS, 0)
        strong, _ = self._inputs()
        result = total_loss(
            model, _labeled(1), _labeled(2), strong, PseudoLabelBatch.empty(), SkewParameter(0.3), TrainConfig()
        )
        assert result.diagnostics["unlabeled_ce"] == 0.0

    def test_zero_beta_drops_the_regularizer(self):
        """beta = 0 gives ELBO + CE exactly"""
        model = NpModel.initialize(DIMS, 0)
        strong, pseudo = self._inputs()
        cfg = TrainConfig(beta=0.0)
        result = total_loss(model, _labeled(1), _labeled(2), strong, pseudo, SkewParameter(0.3), cfg)
        d = result.diagnostics
        assert d["js_regularizer"] == 0.0
        assert result.value == d["elbo_reconstruction"] + d["elbo_kl"] + d["unlabeled_ce"]

    def test_decomposition(self):
        """The loss is the sum of its four reported terms, each non-negative"""
        model = NpModel.initialize(DIMS, 2)
        strong, pseudo = self._inputs()
        result = total_loss(
            model, _labeled(1), _labeled(2), strong, pseudo, SkewParameter(0.4), TrainConfig(beta=0.5)
        )
        assert set(result.diagnostics) == {"elbo_reconstruction", "elbo_kl", "unlabeled_ce", "js_regularizer"}
        assert result.value == pytest.approx(sum(result.diagnostics.values()), rel=1e-12)
        assert all(value >= 0.0 for value in result.diagnostics.values())
        assert result.diagnostics["unlabeled_ce"] > 0.0

    def test_gradients_match_finite_differences(self):
        """Analytic total-loss gradients agree with central differences"""
        rng = np.random.default_rng(6)
        model = NpModel.initialize(TOY_DIMS, 6)
        points = rng.standard_normal((5, 2))
        labels = rng.integers(0, TOY_DIMS.num_classes, 5)
        context, target = LabeledSet(points[:3], labels[:3]), LabeledSet(points[3:], labels[3:])
        strong = rng.standard_normal((4, 2))
        pseudo = PseudoLabelBatch(np.array([1, 2]), np.array([2, 0]), np.ones(2), np.zeros(2))
        memory = ContextMemory(rng.standard_normal((2, TOY_DIMS.feature_dim)), np.full((2, 3), 1 / 3))
        cfg = TrainConfig(num_samples=3, beta=0.5)
        alpha = SkewParameter(0.35)

        def value():
            return total_loss(model, context, target, strong, pseudo, alpha, cfg, 3, memory).value

        analytic = total_loss(model, context, target, strong, pseudo, alpha, cfg, 3, memory, with_grad=True).gradients
        errors = compare_gradients(value, analytic, model.parameters())
        assert max(errors.values()) < 1e-4

    def test_split_labeled_batch(self):
        """Both halves are non-empty and together cover the batch"""
        rng = np.random.default_rng(0)
        for size in (2, 3, 16):
            context, target = split_labeled_batch(size, rng)
            assert len(context) >= 1 and len(target) >= 1
            assert sorted(np.concatenate([context, target]).tolist()) == list(range(size))
        with pytest.raises(EmptyContextError):
            split_labeled_batch(1, rng)


class TestEvaluate:
    """Accuracy of the NP classifier"""

    def _constant_model(self):
        model = NpModel.initialize(DIMS, 0)
        model.decoder.parameters()["w2"][...] = 0.0
        model.decoder.parameters()["b2"][...] = [5.0, 0.0]
        return model

    def test_always_first_class_scores_half(self, moons):
        """A model that always answers class 0 gets 0.5 on a balanced test split"""
        report = evaluate(self._constant_model(), moons.test(), moons.labeled())
        assert report.accuracy == 0.5
        assert report.num_points == len(moons.test())

    def test_test_order_does_not_matter(self, moons):
        """Shuffling the test points leaves accuracy unchanged"""
        model = self._constant_model()
        test = moons.test()
        order = np.random.default_rng(0).permutation(len(test))
        shuffled = test.take(order)
        assert evaluate(model, shuffled, moons.labeled()).accuracy == evaluate(model, test, moons.labeled()).accuracy

    def test_empty_test_set(self, moons):
        """There is nothing to score on an empty set"""
        with pytest.raises(InvalidParameterError):
            evaluate(self._constant_model(), LabeledSet(np.zeros((0, 2)), np.zeros(0)), moons.labeled())


class TestTrain:
    """End-to-end training on two moons"""

    def test_metrics_rows(self, moons):
        """One row per log interval with every metric field"""
        report = train(_small_config(), moons)
        assert [row["iteration"] for row in report.metrics] == [5, 10, 15, 20]
        assert set(report.metrics[0]) == set(METRIC_FIELDS)
        assert report.optimizer.iteration == 20
        assert 0.0 <= report.final.accuracy <= 1.0

    def test_reproducible(self, moons):
        """Same seed, same metrics and parameters"""
        a = train(_small_config(), moons)
        b = train(_small_config(), moons)
        assert a.metrics == b.metrics
        for name, value in a.teacher.parameters().items():
            np.testing.assert_array_equal(value, b.teacher.parameters()[name])

    def test_banks_stay_bounded(self, moons):
        """The labeled bank fills up to capacity and evicts the rest"""
        report = train(_small_config(), moons)
        labeled = report.banks["labeled"]
        assert len(labeled) == 16
        assert labeled.pushes == 1 + 20 * 4
        assert labeled.pushes - labeled.evictions == len(labeled)

    def test_lenient_gate_fills_the_pseudo_bank(self, moons):
        """With every prediction admitted, pseudo records are pushed"""
        report = train(_small_config(confidence_threshold=0.01, uncertainty_threshold=10.0), moons)
        assert report.banks["pseudo"].pushes > 1
        assert all(row["selection_rate"] == 1.0 for row in report.metrics)

    def test_supervised_ablation_is_inert(self, moons):
        """lambda_u = beta = 0 selects nothing and never touches the pseudo bank"""
        report = train(supervised_ablation(_small_config(confidence_threshold=0.01, uncertainty_threshold=10.0)), moons)
        assert all(row["selected"] == 0.0 for row in report.metrics)
        assert all(row["unlabeled_ce"] == 0.0 for row in report.metrics)
        assert len(report.banks["pseudo"]) == 1

    def test_teacher_tracks_the_shadow(self, moons):
        """The returned teacher carries the EMA parameters"""
        report = train(_small_config(), moons)
        for name, value in report.shadow.params.items():
            np.testing.assert_array_equal(report.teacher.parameters()[name], value)

    def test_non_finite_loss_stops_training(self, moons):
        """A NaN loss raises TrainingDivergedError with the iteration in its details"""
        nan_result = LossResult(float("nan"), {"elbo_reconstruction": float("nan")}, None)
        with patch("npmatch.ssl_pipeline.total_loss", return_value=nan_result):
            with pytest.raises(TrainingDivergedError) as exc:
                train(_small_config(), moons)
        assert exc.value.details["iteration"] == 0

    def test_non_finite_teacher_predictions_stop_training(self, moons):
        """NaN weights surface as TrainingDivergedError from the teacher's predictions, with the dump"""
        real_initialize = NpModel.initialize

        def poisoned(dims, seed):
            model = real_initialize(dims, seed)
            model.encoder.parameters()["b2"][0] = np.nan
            return model

        with patch.object(NpModel, "initialize", side_effect=poisoned):
            with pytest.raises(TrainingDivergedError) as exc:
                train(_small_config(), moons)
        details = exc.value.details
        assert details["iteration"] == 0
        assert math.isnan(details["mean_uncertainty"])
        assert details["cause"]["type"] == "non_finite"

    def test_non_finite_posterior_stops_the_ablation(self, moons):
        """Without teacher predictions the NaN is caught in the student loss instead"""
        real_initialize = NpModel.initialize

        def poisoned(dims, seed):
            model = real_initialize(dims, seed)
            model.latent_head.parameters()["b2"][:] = np.nan
            return model

        with patch.object(NpModel, "initialize", side_effect=poisoned):
            with pytest.raises(TrainingDivergedError) as exc:
                train(supervised_ablation(_small_config()), moons)
        assert exc.value.details["iteration"] == 0
        assert "mean_uncertainty" not in exc.value.details

    def test_default_widths_and_learning_rate_stay_finite(self, moons):
        """Default dims, lr, batch sizes and T train for 50 iterations without blowing up"""
        cfg = TrainConfig(total_iterations=50, log_interval=10)
        report = train(cfg, moons)
        assert len(report.metrics) == 5
        for row in report.metrics:
            assert all(math.isfinite(value) for value in row.values()), row
        for value in report.student.parameters().values():
            assert np.all(np.isfinite(value))
        assert 0.0 <= report.final.accuracy <= 1.0

    def test_gradient_clipping_bounds_the_step(self, moons):
        """With clipping on, each step moves the student by at most lr * |momentum buffer|"""
        report = train(_small_config(grad_clip_norm=0.5), moons)
        assert all(row["grad_norm"] > 0.0 for row in report.metrics)
        buffer_norm = math.sqrt(sum(float(np.sum(b * b)) for b in report.optimizer.buffers.values()))
        # ||v|| <= sum_k 0.9^k (0.5 + wd ||theta||) stays small
        assert buffer_norm < 10.0

    def test_missing_labeled_class(self):
        """Every class needs at least one labeled sample"""
        data = split(two_moons(60, 0.1, seed=0), 1, 0.2, seed=0)
        data.labeled_mask[data.labels == 1] = False
        data.unlabeled_mask[data.labels == 1] |= ~data.test_mask[data.labels == 1]
        with pytest.raises(InvalidParameterError):
            train(_small_config(), data)

    def test_metrics_callback(self, moons):
        """on_metrics sees every logged row"""
        seen = []
        train(_small_config(), moons, on_metrics=seen.append)
        assert len(seen) == 4


class TestCompareRuns:
    """Full method against the supervised-only ablation"""

    def test_runs_both_arms_per_seed(self, moons):
        """Each seed trains the full config and then the ablation"""
        fake = MagicMock()
        fake.final.accuracy = 0.75
        with patch("npmatch.ssl_pipeline.train", return_value=fake) as mock_train:
            report = compare_runs(_small_config(), lambda seed: moons, [3, 4])
        assert mock_train.call_count == 4
        configs = [call.args[0] for call in mock_train.call_args_list]
        assert [c.seed for c in configs] == [3, 3, 4, 4]
        assert [c.lambda_u for c in configs] == [1.0, 0.0, 1.0, 0.0]
        assert [c.beta for c in configs] == [0.01, 0.0, 0.01, 0.0]
        assert report.median_gain == 0.0
        assert report.to_dict()["npmatch"]["accuracies"] == [0.75, 0.75]

    def test_needs_a_seed(self, moons):
        """An empty seed list is rejected"""
        with pytest.raises(InvalidParameterError):
            compare_runs(_small_config(), lambda seed: moons, [])
