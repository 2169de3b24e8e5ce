"""
Two-network curriculum trainer

Every step runs both networks on the same image once. The main network
descends the weighted loss with the weight map detached; TutorNet descends
the tutor loss with the error map detached. Both updates use the forward
results of that step, so neither update sees the other's new parameters
until the next step.

Training is single-threaded and deterministic for a fixed seed; evaluation
fans scenes out over a thread pool and merges results in scene order.
"""

import logging
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tutor_curriculum.core.cache import CacheKeyBuilder, MemoryCache
from tutor_curriculum.core.concurrent_processing import map_in_order
from tutor_curriculum.core.performance import PerformanceMonitor, get_performance_monitor
from tutor_curriculum.core.tensor import Tensor, no_grad
from tutor_curriculum.exceptions import DivergenceError, TutorCurriculumError
from tutor_curriculum.models.curriculum_models import WeightMap
from tutor_curriculum.models.network_models import NetworkParams
from tutor_curriculum.models.scene_models import AnnotatedScene, DensityMap
from tutor_curriculum.models.training_models import (
    EvaluationResult,
    SceneCount,
    StepRecord,
    TrainConfig,
    TrainingResult,
)
from tutor_curriculum.services.curriculum import (
    error_map,
    main_loss,
    tutor_loss,
    unit_weight_map,
    weight_statistics,
)
from tutor_curriculum.services.density_maps import make_density_map
from tutor_curriculum.services.file_formats import save_checkpoint
from tutor_curriculum.services.networks import forward, init_params


logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12


class SGDOptimizer:
    """
    Plain SGD with optional momentum and global gradient-norm clipping

    Velocity buffers are keyed by parameter name and persist across steps.
    Parameters are replaced, never written in place.
    """

    def __init__(self, learning_rate: float, momentum: float = 0.0, max_grad_norm: Optional[float] = None):
        if learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {learning_rate}")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.max_grad_norm = max_grad_norm
        self.velocity: Dict[str, np.ndarray] = {}

    @staticmethod
    def gradient_norm(grads: Dict[str, np.ndarray]) -> float:
        return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))

    def step(self, params: NetworkParams, grads: Optional[Dict[str, np.ndarray]] = None) -> float:
        """Apply one update; returns the pre-clipping gradient norm"""
        grads = params.gradients() if grads is None else grads
        norm = self.gradient_norm(grads)
        if not math.isfinite(norm):
            return norm
        factor = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            factor = self.max_grad_norm / norm

        for key, grad in grads.items():
            direction = grad * factor if factor != 1.0 else grad
            if self.momentum > 0.0:
                direction = self.momentum * self.velocity.get(key, 0.0) + direction
                self.velocity[key] = direction
            params[key] = Tensor(params[key].data - self.learning_rate * direction, requires_grad=True)
        return norm


def _check_finite(quantity: str, value: float, epoch: int, step: int) -> None:
    if not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
        raise DivergenceError(quantity, value, epoch=epoch, step=step)


def count_errors(pred_counts: Sequence[float], gt_counts: Sequence[float]) -> Tuple[float, float]:
    """
    (MAE, MSE) of count vectors, MSE being the root of the mean squared error

    Raises:
        ValueError: empty or mismatched inputs
    """
    if len(pred_counts) == 0:
        raise ValueError("count vectors cannot be empty")
    if len(pred_counts) != len(gt_counts):
        raise ValueError(f"count vectors differ in length: {len(pred_counts)} vs {len(gt_counts)}")
    diff = np.asarray(pred_counts, dtype=float) - np.asarray(gt_counts, dtype=float)
    return float(np.mean(np.abs(diff))), float(np.sqrt(np.mean(diff * diff)))


class CurriculumTrainer:
    """Trains a main network, optionally under TutorNet's curriculum"""

    def __init__(
        self,
        config: TrainConfig,
        cache: Optional[MemoryCache] = None,
        performance_monitor: Optional[PerformanceMonitor] = None,
    ):
        self.config = config
        self.cache = cache or MemoryCache()
        self.performance_monitor = performance_monitor or get_performance_monitor()
        self.main_optimizer = SGDOptimizer(
            config.curriculum.alpha_main, config.effective_momentum, config.max_grad_norm
        )
        self.tutor_optimizer = SGDOptimizer(
            config.curriculum.alpha_tutor, config.effective_momentum, config.max_grad_norm
        )

    @property
    def uses_tutor(self) -> bool:
        return self.config.tutor_spec is not None

    def ground_truth(self, scene: AnnotatedScene) -> DensityMap:
        """Scaled ground-truth map at the networks' output resolution (cached)"""
        cfg = self.config
        key = CacheKeyBuilder.density_map(
            scene.scene_id,
            cfg.sigma,
            cfg.downsample,
            cfg.scale_factor,
            digest=CacheKeyBuilder.scene_digest(scene.points, scene.image.shape),
        )
        return self.cache.get_or_compute(
            key, lambda: make_density_map(scene, cfg.sigma, cfg.downsample, cfg.scale_factor)
        )

    def initialize(self) -> Tuple[NetworkParams, Optional[NetworkParams]]:
        main_params = init_params(self.config.main_spec, self.config.seed)
        tutor_params = None
        if self.uses_tutor:
            tutor_params = init_params(self.config.tutor_spec, self.config.seed + 1)
        return main_params, tutor_params

    def train_step(
        self,
        scene: AnnotatedScene,
        gt: DensityMap,
        main_params: NetworkParams,
        tutor_params: Optional[NetworkParams] = None,
        epoch: int = 0,
        step: int = 0,
    ) -> StepRecord:
        """
        One simultaneous update of both networks

        Raises:
            ValueError: ground truth built with another scale factor or downsample
            DivergenceError: non-finite or exploding loss or gradient; parameters
                are left untouched
        """
        cfg = self.config
        if gt.downsample != cfg.downsample or gt.scale_factor != cfg.scale_factor:
            raise ValueError(
                f"ground truth (s={gt.scale_factor}, d={gt.downsample}) does not match "
                f"config (s={cfg.scale_factor}, d={cfg.downsample})"
            )
        if self.uses_tutor and tutor_params is None:
            raise ValueError("tutor_params are required in mode sf-plus-tutornet")

        main_params.zero_grad()
        if tutor_params is not None:
            tutor_params.zero_grad()
        started = time.perf_counter()

        with self.performance_monitor.time_operation("forward"):
            pred = forward(cfg.main_spec, main_params, scene.image)
            errors = error_map(pred, gt)
            if self.uses_tutor:
                weights = WeightMap(grid=forward(cfg.tutor_spec, tutor_params, scene.image))
            else:
                weights = unit_weight_map(pred.shape)
            weighted = main_loss(pred, gt, weights)
            tutoring = tutor_loss(weights, errors, cfg.curriculum.M) if self.uses_tutor else None

        _check_finite("main_loss", weighted.item(), epoch, step)
        if tutoring is not None:
            _check_finite("tutor_loss", tutoring.item(), epoch, step)

        with self.performance_monitor.time_operation("backward"):
            weighted.backward()
            if tutor_params is not None:
                self._assert_untouched(tutor_params, "main_loss", "TutorNet")
                main_grads = {key: tensor.grad for key, tensor in main_params.items()}
                tutoring.backward()
                if any(main_params[key].grad is not grad for key, grad in main_grads.items()):
                    raise TutorCurriculumError("tutor_loss produced gradients on the main network")

        with self.performance_monitor.time_operation("update"):
            # Both gradients are checked before either network moves
            main_grads = main_params.gradients()
            _check_finite("main_grad_norm", SGDOptimizer.gradient_norm(main_grads), epoch, step)
            tutor_grads = None
            if tutor_params is not None:
                tutor_grads = tutor_params.gradients()
                _check_finite("tutor_grad_norm", SGDOptimizer.gradient_norm(tutor_grads), epoch, step)
            self.main_optimizer.step(main_params, main_grads)
            if tutor_params is not None:
                self.tutor_optimizer.step(tutor_params, tutor_grads)

        self.performance_monitor.record_step(cfg.mode.value, time.perf_counter() - started, diverged=False)
        mean_w = min_w = max_w = None
        if self.uses_tutor:
            mean_w, min_w, max_w = weight_statistics(weights)
        record = StepRecord(
            epoch=epoch,
            step=step,
            main_loss=weighted.item(),
            tutor_loss=tutoring.item() if tutoring is not None else None,
            mean_weight=mean_w,
            min_weight=min_w,
            max_weight=max_w,
            mean_error=float(errors.grid.data.mean()),
        )
        logger.debug(f"epoch {epoch} step {step}: main_loss={record.main_loss:.6g} tutor_loss={record.tutor_loss}")
        return record

    @staticmethod
    def _assert_untouched(params: NetworkParams, source: str, owner: str) -> None:
        if any(tensor.grad is not None for _, tensor in params.items()):
            raise TutorCurriculumError(f"{source} produced gradients on {owner}")

    def train(self, scenes: Sequence[AnnotatedScene]) -> TrainingResult:
        """
        Train for ``config.epochs`` epochs with a seeded shuffle per epoch

        Divergence stops training and returns the records so far with a
        diagnostic instead of raising.
        """
        if len(scenes) == 0:
            raise ValueError("dataset cannot be empty")
        cfg = self.config
        main_params, tutor_params = self.initialize()
        records: List[StepRecord] = []
        logger.info(
            f"Training {cfg.main_spec.name} in mode {cfg.mode.value} on {len(scenes)} scenes "
            f"for {cfg.epochs} epochs (s={cfg.scale_factor}, seed={cfg.seed})"
        )

        step = 0
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(scenes))
            epoch_losses = []
            for index in order:
                scene = scenes[int(index)]
                try:
                    record = self.train_step(scene, self.ground_truth(scene), main_params, tutor_params, epoch, step)
                except DivergenceError as e:
                    logger.warning(f"Training diverged: {e}")
                    self.performance_monitor.record_step(cfg.mode.value, 0.0, diverged=True)
                    return TrainingResult(main_params, tutor_params, records, diagnostic=str(e))
                records.append(record)
                epoch_losses.append(record.main_loss)
                step += 1

            logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: mean main_loss {np.mean(epoch_losses):.6g}")
            if cfg.checkpoint_every and cfg.checkpoint_dir and (epoch + 1) % cfg.checkpoint_every == 0:
                self.save_checkpoints(main_params, tutor_params, epoch + 1)

        return TrainingResult(main_params, tutor_params, records)

    def checkpoint_metadata(self, role: str, epoch: Optional[int] = None) -> dict:
        cfg = self.config
        metadata = {
            "role": role,
            "mode": cfg.mode.value,
            "scale_factor": cfg.scale_factor,
            "sigma": cfg.sigma,
            "downsample": cfg.downsample,
        }
        if epoch is not None:
            metadata["epoch"] = epoch
        return metadata

    def save_checkpoints(self, main_params: NetworkParams, tutor_params: Optional[NetworkParams], epoch: int) -> None:
        cfg = self.config
        directory = cfg.checkpoint_dir
        save_checkpoint(
            directory / f"main_epoch{epoch:03d}.ckpt", cfg.main_spec, main_params, cfg.seed,
            self.checkpoint_metadata("main", epoch),
        )
        if tutor_params is not None:
            save_checkpoint(
                directory / f"tutor_epoch{epoch:03d}.ckpt", cfg.tutor_spec, tutor_params, cfg.seed + 1,
                self.checkpoint_metadata("tutor", epoch),
            )

    def evaluate(
        self,
        scenes: Sequence[AnnotatedScene],
        main_params: NetworkParams,
        max_workers: int = 4,
        keep_error_maps: bool = False,
    ) -> EvaluationResult:
        """
        Predicted counts sum(pred)/s against annotated counts

        Raises:
            ValueError: empty dataset
        """
        if len(scenes) == 0:
            raise ValueError("dataset cannot be empty")
        cfg = self.config
        started = time.perf_counter()

        def predict(scene: AnnotatedScene):
            with no_grad():
                pred = forward(cfg.main_spec, main_params, scene.image)
            count = SceneCount(scene.scene_id, float(pred.data.sum()) / cfg.scale_factor, float(scene.count))
            errors = error_map(pred, self.ground_truth(scene)) if keep_error_maps else None
            return count, errors

        outcomes = map_in_order(predict, list(scenes), max_workers=max_workers, label="evaluate")
        counts = [count for count, _ in outcomes]
        mae, mse = count_errors([c.pred_count for c in counts], [c.gt_count for c in counts])
        self.performance_monitor.record_evaluation(len(counts), time.perf_counter() - started)
        logger.info(f"Evaluated {len(counts)} scenes: MAE {mae:.4f}, MSE {mse:.4f}")
        return EvaluationResult(
            mae=mae,
            mse=mse,
            counts=counts,
            error_maps=[errors for _, errors in outcomes if errors is not None],
        )


def train_step(
    scene: AnnotatedScene,
    gt: DensityMap,
    cfg: TrainConfig,
    main_params: NetworkParams,
    tutor_params: Optional[NetworkParams] = None,
) -> StepRecord:
    """Single step with fresh optimizer state"""
    return CurriculumTrainer(cfg).train_step(scene, gt, main_params, tutor_params)


def train(scenes: Sequence[AnnotatedScene], cfg: TrainConfig) -> TrainingResult:
    return CurriculumTrainer(cfg).train(scenes)


def evaluate(scenes: Sequence[AnnotatedScene], main_params: NetworkParams, cfg: TrainConfig, max_workers: int = 4) -> EvaluationResult:
    return CurriculumTrainer(cfg).evaluate(scenes, main_params, max_workers=max_workers)
