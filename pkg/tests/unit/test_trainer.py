"""
Unit tests for the curriculum trainer, optimizer and count metrics
"""

import math

import numpy as np
import pytest

from tutor_curriculum.core.tensor import Tensor, no_grad
from tutor_curriculum.exceptions import DivergenceError
from tutor_curriculum.models.curriculum_models import CurriculumParams, WeightMap
from tutor_curriculum.models.network_models import NetworkParams
from tutor_curriculum.models.scene_models import AnnotatedScene, DensityMap
from tutor_curriculum.models.training_models import TELEMETRY_COLUMNS, OptimizerKind, TrainingMode
from tutor_curriculum.services.curriculum import error_map, main_loss, tutor_loss, unit_weight_map
from tutor_curriculum.services.networks import forward
from tutor_curriculum.services.trainer import CurriculumTrainer, SGDOptimizer, count_errors


def single_param(value, grad=None):
    params = NetworkParams({"w": Tensor(np.array(value, dtype=float), requires_grad=True)})
    return params, {"w": np.array(grad, dtype=float)} if grad is not None else None


def final_bias_key(params):
    return [key for key in params.keys() if key.endswith(".bias")][-1]


def constant_output_params(params, value):
    """Zero every kernel and bias except the last bias, so the network emits ``value`` everywhere"""
    constant = params.copy()
    for key, tensor in params.items():
        constant[key] = Tensor(np.zeros(tensor.shape), requires_grad=True)
    last = final_bias_key(params)
    constant[last] = Tensor(np.full(params[last].shape, value), requires_grad=True)
    return constant


@pytest.mark.unit
class TestSGDOptimizer:
    def test_plain_step(self):
        params, grads = single_param([1.0, 2.0], [2.0, -1.0])
        norm = SGDOptimizer(0.1).step(params, grads)
        assert norm == pytest.approx(math.sqrt(5.0))
        np.testing.assert_allclose(params["w"].data, [0.8, 2.1])

    def test_replaces_tensors(self):
        params, grads = single_param([1.0], [1.0])
        before = params["w"]
        SGDOptimizer(0.5).step(params, grads)
        assert params["w"] is not before
        assert before.data[0] == 1.0

    def test_clipping(self):
        params, grads = single_param([0.0, 0.0], [3.0, 4.0])
        norm = SGDOptimizer(1.0, max_grad_norm=1.0).step(params, grads)
        assert norm == 5.0
        np.testing.assert_allclose(params["w"].data, [-0.6, -0.8])

    def test_momentum_accumulates(self):
        params, grads = single_param([0.0], [1.0])
        optimizer = SGDOptimizer(1.0, momentum=0.5)
        optimizer.step(params, grads)
        optimizer.step(params, grads)
        np.testing.assert_allclose(params["w"].data, [-2.5])

    def test_zero_learning_rate_changes_nothing(self):
        params, grads = single_param([1.5], [7.0])
        SGDOptimizer(0.0).step(params, grads)
        assert params["w"].data[0] == 1.5

    def test_non_finite_gradient_skips_update(self):
        params, grads = single_param([1.0], [math.nan])
        assert math.isnan(SGDOptimizer(0.1).step(params, grads))
        assert params["w"].data[0] == 1.0

    def test_negative_learning_rate(self):
        with pytest.raises(ValueError, match="non-negative"):
            SGDOptimizer(-1.0)


@pytest.mark.unit
class TestCountErrors:
    def test_matches_direct_formulas(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 40))
            pred = rng.uniform(0, 100, size=n)
            gt = rng.integers(0, 100, size=n).astype(float)
            mae, mse = count_errors(pred, gt)
            assert mae == pytest.approx(np.abs(pred - gt).mean(), rel=1e-12)
            assert mse == pytest.approx(np.sqrt(((pred - gt) ** 2).mean()), rel=1e-12)
            assert mse >= mae - 1e-12

    def test_known_values(self):
        assert count_errors([1.0, 3.0], [2.0, 1.0]) == pytest.approx((1.5, math.sqrt(2.5)))

    def test_invalid_inputs(self):
        with pytest.raises(ValueError, match="empty"):
            count_errors([], [])
        with pytest.raises(ValueError, match="differ in length"):
            count_errors([1.0], [1.0, 2.0])


@pytest.mark.unit
class TestModeContract:
    def test_baseline_forces_unit_scale_and_drops_tutor(self, make_train_config):
        cfg = make_train_config(TrainingMode.BASELINE, curriculum=CurriculumParams(scale_factor=500.0))
        assert cfg.scale_factor == 1.0
        assert cfg.tutor_spec is None

    def test_sf_only_drops_tutor(self, make_train_config):
        sf_tn = make_train_config()
        cfg = sf_tn.with_updates(mode=TrainingMode.SF_ONLY)
        assert cfg.tutor_spec is None
        assert cfg.scale_factor == 100.0

    def test_tutor_required(self, make_train_config):
        cfg = make_train_config(TrainingMode.SF_ONLY)
        with pytest.raises(ValueError, match="requires a tutor_spec"):
            cfg.with_updates(mode=TrainingMode.SF_PLUS_TUTORNET)

    def test_floor_weight_must_equal_t(self, make_train_config):
        with pytest.raises(ValueError, match="floor weight"):
            make_train_config(curriculum=CurriculumParams(t=0.3, scale_factor=100.0)).with_updates(
                curriculum=CurriculumParams(t=0.4, scale_factor=100.0)
            )

    def test_parse_aliases(self):
        assert TrainingMode.parse("sf") is TrainingMode.SF_ONLY
        assert TrainingMode.parse("SF-TN") is TrainingMode.SF_PLUS_TUTORNET
        with pytest.raises(ValueError, match="Unknown mode"):
            TrainingMode.parse("tutor")

    def test_momentum_only_for_momentum_optimizer(self, make_train_config):
        assert make_train_config().effective_momentum == 0.0
        assert make_train_config(optimizer=OptimizerKind.SGD_MOMENTUM).effective_momentum == 0.9


@pytest.mark.unit
class TestTrainStep:
    """Simultaneous, isolated updates of the two networks"""

    def test_gradients_stay_isolated(self, make_train_config, tiny_scenes, performance_monitor):
        cfg = make_train_config()
        trainer = CurriculumTrainer(cfg, performance_monitor=performance_monitor)
        main_params, tutor_params = trainer.initialize()
        scene = tiny_scenes[0]
        gt = trainer.ground_truth(scene)

        # Reference gradients from separate graphs on copies
        main_ref, tutor_ref = main_params.copy(), tutor_params.copy()
        pred = forward(cfg.main_spec, main_ref, scene.image)
        with no_grad():
            fixed_weights = forward(cfg.tutor_spec, tutor_params, scene.image)
        main_loss(pred, gt, WeightMap(grid=fixed_weights)).backward()
        weights = forward(cfg.tutor_spec, tutor_ref, scene.image)
        tutor_loss(WeightMap(grid=weights), error_map(pred, gt), cfg.curriculum.M).backward()

        old_main = dict(main_params.items())
        old_tutor = dict(tutor_params.items())
        trainer.train_step(scene, gt, main_params, tutor_params)

        for key, tensor in old_main.items():
            np.testing.assert_allclose(tensor.grad, main_ref[key].grad, atol=1e-12)
        for key, tensor in old_tutor.items():
            np.testing.assert_allclose(tensor.grad, tutor_ref[key].grad, atol=1e-12)

    def test_zero_main_rate_moves_only_tutor(self, make_train_config, tiny_scenes, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(), performance_monitor=performance_monitor)
        trainer.main_optimizer = SGDOptimizer(0.0)
        main_params, tutor_params = trainer.initialize()
        main_before, tutor_before = main_params.copy(), tutor_params.copy()

        scene = tiny_scenes[1]
        trainer.train_step(scene, trainer.ground_truth(scene), main_params, tutor_params)

        assert main_params.equals(main_before)
        assert not tutor_params.equals(tutor_before)

    def test_sf_only_record_has_no_tutor_fields(self, make_train_config, tiny_scenes, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(TrainingMode.SF_ONLY), performance_monitor=performance_monitor)
        main_params, tutor_params = trainer.initialize()
        assert tutor_params is None
        scene = tiny_scenes[0]
        record = trainer.train_step(scene, trainer.ground_truth(scene), main_params)
        assert record.tutor_loss is None and record.mean_weight is None
        assert record.main_loss >= 0.0
        assert list(record.to_row()) == TELEMETRY_COLUMNS

    def test_weight_statistics_in_range(self, make_train_config, tiny_scenes, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(), performance_monitor=performance_monitor)
        main_params, tutor_params = trainer.initialize()
        scene = tiny_scenes[2]
        record = trainer.train_step(scene, trainer.ground_truth(scene), main_params, tutor_params)
        assert 0.5 <= record.min_weight <= record.mean_weight <= record.max_weight < 1.0

    def test_mismatched_ground_truth(self, make_train_config, small_scene, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(), performance_monitor=performance_monitor)
        main_params, tutor_params = trainer.initialize()
        gt = DensityMap(grid=Tensor(np.zeros((1, 1, 2, 2))), scale_factor=7.0, sigma=15.0, downsample=8)
        with pytest.raises(ValueError, match="does not match config"):
            trainer.train_step(small_scene, gt, main_params, tutor_params)

    def test_exploding_loss_leaves_parameters_untouched(self, make_train_config, small_scene, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(), performance_monitor=performance_monitor)
        main_params, tutor_params = trainer.initialize()
        main_before = main_params.copy()
        gt = DensityMap(grid=Tensor(np.full((1, 1, 2, 2), 1e7)), scale_factor=100.0, sigma=15.0, downsample=8)
        with pytest.raises(DivergenceError, match="main_loss") as info:
            trainer.train_step(small_scene, gt, main_params, tutor_params, epoch=2, step=5)
        assert (info.value.epoch, info.value.step) == (2, 5)
        assert main_params.equals(main_before)

    def test_large_error_does_not_lower_mean_weight(self, make_train_config, small_scene, performance_monitor):
        cfg = make_train_config()
        trainer = CurriculumTrainer(cfg, performance_monitor=performance_monitor)
        main_params, tutor_params = trainer.initialize()
        with no_grad():
            pred = forward(cfg.main_spec, main_params, small_scene.image)
            weights_before = forward(cfg.tutor_spec, tutor_params, small_scene.image).data.mean()
        # Offset of 10 gives e = 100 on every pixel, far above the margin
        gt = DensityMap(
            grid=Tensor(pred.data + 10.0), scale_factor=cfg.scale_factor, sigma=cfg.sigma, downsample=cfg.downsample
        )
        assert error_map(pred, gt).grid.data.min() > cfg.curriculum.M

        trainer.train_step(small_scene, gt, main_params, tutor_params)
        with no_grad():
            weights_after = forward(cfg.tutor_spec, tutor_params, small_scene.image).data.mean()
        assert weights_after >= weights_before

    def test_sf_only_loss_is_plain_mse(self, rng):
        shape = (1, 1, 3, 5)
        pred = rng.normal(size=shape)
        target = rng.uniform(0.0, 50.0, size=shape)
        gt = DensityMap(grid=Tensor(target), scale_factor=100.0, sigma=15.0, downsample=8)

        unit = main_loss(Tensor(pred), gt, unit_weight_map(shape)).item()
        ones = main_loss(Tensor(pred), gt, WeightMap(grid=Tensor(np.ones(shape)))).item()
        assert unit == ones == float(np.mean((pred - target) ** 2))


@pytest.mark.unit
class TestTrainLoop:
    def test_identical_runs_give_identical_telemetry(self, make_train_config, tiny_scenes, performance_monitor):
        cfg = make_train_config(epochs=2)
        first = CurriculumTrainer(cfg, performance_monitor=performance_monitor).train(tiny_scenes)
        second = CurriculumTrainer(cfg, performance_monitor=performance_monitor).train(tiny_scenes)
        assert first.records == second.records
        assert first.main_params.equals(second.main_params)
        assert first.tutor_params.equals(second.tutor_params)
        assert len(first.records) == 2 * len(tiny_scenes)

    def test_divergence_returns_diagnostic(self, make_train_config, tiny_scenes, performance_monitor):
        cfg = make_train_config(TrainingMode.SF_ONLY, curriculum=CurriculumParams(scale_factor=1e9))
        result = CurriculumTrainer(cfg, performance_monitor=performance_monitor).train(tiny_scenes)
        assert result.diverged
        assert "main_loss" in result.diagnostic
        assert result.records == []
        assert performance_monitor.metrics.get_counter("train_divergence_total", {"mode": "sf-only"}) == 1

    def test_periodic_checkpoints(self, make_train_config, tiny_scenes, tmp_path, performance_monitor):
        cfg = make_train_config(epochs=2, checkpoint_every=1, checkpoint_dir=tmp_path)
        CurriculumTrainer(cfg, performance_monitor=performance_monitor).train(tiny_scenes[:2])
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == [
            "main_epoch001.ckpt", "main_epoch002.ckpt", "tutor_epoch001.ckpt", "tutor_epoch002.ckpt",
        ]

    def test_empty_dataset(self, make_train_config, performance_monitor):
        with pytest.raises(ValueError, match="cannot be empty"):
            CurriculumTrainer(make_train_config(), performance_monitor=performance_monitor).train([])

    def test_ground_truth_is_cached(self, make_train_config, small_scene, fresh_cache, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(), cache=fresh_cache, performance_monitor=performance_monitor)
        assert trainer.ground_truth(small_scene) is trainer.ground_truth(small_scene)
        assert fresh_cache.get_stats()["hits"] == 1

    def test_scenes_sharing_an_id_get_their_own_ground_truth(
        self, make_train_config, small_scene, fresh_cache, performance_monitor
    ):
        trainer = CurriculumTrainer(make_train_config(), cache=fresh_cache, performance_monitor=performance_monitor)
        other = AnnotatedScene(image=small_scene.image, points=[(2.0, 3.0)], scene_id=small_scene.scene_id)
        first, second = trainer.ground_truth(small_scene), trainer.ground_truth(other)
        assert first is not second
        assert first.count == pytest.approx(3.0)
        assert second.count == pytest.approx(1.0)
        assert fresh_cache.get_stats()["hits"] == 0

    def test_main_loss_falls_over_epochs(self, make_train_config, tiny_scenes, performance_monitor, monkeypatch):
        cfg = make_train_config(TrainingMode.SF_ONLY, epochs=4)
        trainer = CurriculumTrainer(cfg, performance_monitor=performance_monitor)
        main_params, _ = trainer.initialize()
        # Positive output bias keeps the final relu live from the first step
        last = final_bias_key(main_params)
        main_params[last] = Tensor(np.full(main_params[last].shape, 5.0), requires_grad=True)
        monkeypatch.setattr(trainer, "initialize", lambda: (main_params, None))

        result = trainer.train(tiny_scenes)
        assert not result.diverged
        first = np.mean([r.main_loss for r in result.records if r.epoch == 0])
        last_epoch = np.mean([r.main_loss for r in result.records if r.epoch == cfg.epochs - 1])
        assert last_epoch < first


@pytest.mark.unit
class TestEvaluate:
    def test_counts_in_scene_order(self, make_train_config, tiny_scenes, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(TrainingMode.SF_ONLY), performance_monitor=performance_monitor)
        main_params, _ = trainer.initialize()
        result = trainer.evaluate(tiny_scenes, main_params, max_workers=4)
        assert [c.scene_id for c in result.counts] == [s.scene_id for s in tiny_scenes]
        assert [c.gt_count for c in result.counts] == [float(len(s.points)) for s in tiny_scenes]
        assert result.mae == pytest.approx(np.mean([c.absolute_error for c in result.counts]))

    def test_parallel_matches_serial(self, make_train_config, tiny_scenes, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(TrainingMode.SF_ONLY), performance_monitor=performance_monitor)
        main_params, _ = trainer.initialize()
        serial = trainer.evaluate(tiny_scenes, main_params, max_workers=1)
        parallel = trainer.evaluate(tiny_scenes, main_params, max_workers=4)
        assert serial.counts == parallel.counts

    def test_error_maps_kept_on_request(self, make_train_config, tiny_scenes, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(TrainingMode.SF_ONLY), performance_monitor=performance_monitor)
        main_params, _ = trainer.initialize()
        result = trainer.evaluate(tiny_scenes, main_params, keep_error_maps=True)
        assert len(result.error_maps) == len(tiny_scenes)
        assert trainer.evaluate(tiny_scenes, main_params).error_maps == []

    def test_prediction_equal_to_ground_truth_scores_zero(self, make_train_config, small_scene, performance_monitor):
        trainer = CurriculumTrainer(make_train_config(TrainingMode.SF_ONLY), performance_monitor=performance_monitor)
        main_params, _ = trainer.initialize()
        empty = AnnotatedScene(image=small_scene.image, points=[], scene_id="empty")
        silent = constant_output_params(main_params, 0.0)

        gt = trainer.ground_truth(empty)
        result = trainer.evaluate([empty], silent, keep_error_maps=True)
        assert result.mae == result.mse == 0.0
        assert result.counts[0].pred_count == float(gt.grid.data.sum()) / trainer.config.scale_factor
        assert not result.error_maps[0].grid.data.any()

    def test_exact_counts_score_zero(self, make_train_config, small_scene, performance_monitor):
        cfg = make_train_config(TrainingMode.SF_ONLY)
        trainer = CurriculumTrainer(cfg, performance_monitor=performance_monitor)
        main_params, _ = trainer.initialize()
        pixels = trainer.ground_truth(small_scene).grid.data.size
        exact = constant_output_params(main_params, small_scene.count * cfg.scale_factor / pixels)

        result = trainer.evaluate([small_scene], exact)
        assert result.counts[0].pred_count == pytest.approx(small_scene.count)
        assert result.mae == pytest.approx(0.0, abs=1e-9)
        assert result.mse == pytest.approx(0.0, abs=1e-9)
