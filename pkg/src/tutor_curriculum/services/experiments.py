"""
Experiment harness

- ``run_gradient_checks``: finite-difference suite over every differentiable
  operation, the curriculum losses and a small network.
- ``run_scale_sweep``: sf-only training once per scale factor.
- ``run_ablation``: baseline / sf-only / sf-plus-tutornet over main-network
  kinds and seeds, with median summaries and directional verdicts.
- ``run_tutor_depth_comparison``: sf-plus-tutornet with each TutorNet depth.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from tutor_curriculum.core.functional import concat, conv2d, maxpool2d, upsample_nearest
from tutor_curriculum.core.gradcheck import GradCheckResult, check_named
from tutor_curriculum.core.performance import performance_timer
from tutor_curriculum.core.tensor import Tensor
from tutor_curriculum.models.curriculum_models import ErrorMap, WeightMap
from tutor_curriculum.models.network_models import NetworkParams
from tutor_curriculum.models.scene_models import AnnotatedScene, DensityMap
from tutor_curriculum.models.training_models import TrainConfig, TrainingMode
from tutor_curriculum.services.curriculum import (
    main_loss,
    tutor_loss,
    tutor_loss_grad,
    weight_activation,
)
from tutor_curriculum.services.networks import (
    MAIN_NET_KINDS,
    TUTOR_DEPTHS,
    forward,
    init_params,
    main_net_spec,
    tutornet_spec,
)
from tutor_curriculum.services.trainer import CurriculumTrainer


logger = logging.getLogger(__name__)

DEFAULT_SCALE_FACTORS = (1.0, 10.0, 100.0, 1000.0, 2000.0)
ABLATION_MODES = (TrainingMode.BASELINE, TrainingMode.SF_ONLY, TrainingMode.SF_PLUS_TUTORNET)

OP_TOLERANCE = 1e-5
LOSS_TOLERANCE = 1e-6
NETWORK_TOLERANCE = 1e-4


# ----------------------------------------------------------------------
# Gradient checks

def _away_from(rng: np.random.Generator, shape, kink: float = 0.0, margin: float = 0.1) -> np.ndarray:
    """Random values at least ``margin`` away from a kink"""
    values = rng.uniform(margin, 2.0, size=shape)
    return kink + values * rng.choice([-1.0, 1.0], size=shape)


@performance_timer("gradient_checks")
def run_gradient_checks(seed: int = 0) -> List[GradCheckResult]:
    """
    Check every analytic gradient against central differences

    Includes a closed-form vs reverse-mode comparison of the tutor-loss
    gradient (reported as a max absolute difference).
    """
    rng = np.random.default_rng(seed)
    results: List[GradCheckResult] = []

    def add(name: str, f: Callable[[Tensor], Tensor], x: np.ndarray, tolerance: float = OP_TOLERANCE,
            coordinates: Optional[Sequence[int]] = None) -> None:
        results.append(check_named(name, f, Tensor(x), tolerance, coordinates=coordinates))

    other = Tensor(rng.normal(size=10))
    weights = Tensor(rng.normal(size=10))
    add("add", lambda x: ((x + other) * weights).sum(), rng.normal(size=10))
    add("sub", lambda x: ((x - other) * weights).sum(), rng.normal(size=10))
    add("mul", lambda x: (x * other).sum(), rng.normal(size=10))
    add("square", lambda x: x.square().sum(), rng.normal(size=10))
    add("relu", lambda x: (x.relu() * weights).sum(), _away_from(rng, 10))
    add("sigmoid", lambda x: (x.sigmoid() * weights).sum(), rng.normal(size=10))
    add("scale-by-constant", lambda x: (x.scale(-2.5) * weights).sum(), rng.normal(size=10))
    add("max-with-constant", lambda x: (x.maximum(0.3) * weights).sum(), _away_from(rng, 10, kink=0.3))
    add("sum", lambda x: x.sum(), rng.normal(size=10))
    add("mean", lambda x: x.mean(), rng.normal(size=10))

    image = rng.normal(size=(1, 1, 5, 5))
    kernel = rng.normal(size=(2, 1, 3, 3))
    bias = rng.normal(size=2)
    readout = Tensor(rng.normal(size=(1, 2, 3, 3)))
    add("conv2d.input", lambda x: (conv2d(x, Tensor(kernel), Tensor(bias)) * readout).sum(), image)
    add("conv2d.kernel", lambda k: (conv2d(Tensor(image), k, Tensor(bias)) * readout).sum(), kernel)
    add("conv2d.bias", lambda b: (conv2d(Tensor(image), Tensor(kernel), b) * readout).sum(), bias)
    strided_weights = Tensor(rng.normal(size=(1, 2, 3, 3)))
    add(
        "conv2d.stride2_pad1",
        lambda x: (conv2d(x, Tensor(kernel), Tensor(bias), stride=2, padding=1) * strided_weights).sum(),
        image,
    )

    pool_weights = Tensor(rng.normal(size=(1, 1, 3, 3)))
    add("maxpool2d", lambda x: (maxpool2d(x, 2, 2) * pool_weights).sum(), rng.normal(size=(1, 1, 6, 6)))
    side = Tensor(rng.normal(size=(1, 1, 2, 2)))
    concat_weights = Tensor(rng.normal(size=(1, 2, 2, 2)))
    add("concat", lambda x: (concat([x, side]) * concat_weights).sum(), rng.normal(size=(1, 1, 2, 2)))
    up_weights = Tensor(rng.normal(size=(1, 1, 4, 4)))
    add("upsample_nearest", lambda x: (upsample_nearest(x, 2) * up_weights).sum(), rng.normal(size=(1, 1, 2, 2)))

    act_weights = Tensor(rng.normal(size=10))
    add(
        "weight_activation",
        lambda x: (weight_activation(x, 0.5).grid * act_weights).sum(),
        _away_from(rng, 10),
    )

    M = 0.8
    errors = rng.uniform(0.0, 2.0 * M, size=(1, 1, 4, 4))
    errors[np.abs(errors - M) < 1e-3] += 2e-3
    error_map = ErrorMap(grid=Tensor(errors))
    add(
        "tutor_loss.w",
        lambda w: tutor_loss(WeightMap(grid=w), error_map, M),
        rng.uniform(0.5, 1.0, size=(1, 1, 4, 4)),
        tolerance=LOSS_TOLERANCE,
    )
    results.append(_closed_form_tutor_check(rng, M))

    gt = DensityMap(grid=Tensor(rng.uniform(0, 2, size=(1, 1, 4, 4))), scale_factor=1.0, sigma=15.0, downsample=8)
    fixed_weights = WeightMap(grid=Tensor(rng.uniform(0.5, 1.0, size=(1, 1, 4, 4))))
    add(
        "main_loss.pred",
        lambda p: main_loss(p, gt, fixed_weights),
        rng.uniform(0, 2, size=(1, 1, 4, 4)),
        tolerance=LOSS_TOLERANCE,
    )

    results.extend(_network_checks(rng))
    for result in results:
        level = logging.DEBUG if result.passed else logging.WARNING
        logger.log(level, f"gradient check {result.name}: max error {result.max_error:.3e} (tol {result.tolerance:g})")
    return results


def _closed_form_tutor_check(rng: np.random.Generator, M: float) -> GradCheckResult:
    errors = rng.uniform(0.0, 2.0 * M, size=(1, 1, 8, 8))
    errors[np.abs(errors - M) < 1e-6] += 1e-5
    w = Tensor(rng.uniform(0.5, 1.0, size=errors.shape), requires_grad=True)
    weights = WeightMap(grid=w)
    error_map = ErrorMap(grid=Tensor(errors))
    tutor_loss(weights, error_map, M).backward()
    difference = float(np.max(np.abs(w.grad - tutor_loss_grad(weights, error_map, M).data)))
    return GradCheckResult("tutor_loss_grad.closed_form", difference, 1e-9, errors.size)


def _network_checks(rng: np.random.Generator) -> List[GradCheckResult]:
    results = []
    x = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)))
    for spec in (tutornet_spec(15, Fraction(1, 8)), main_net_spec("dense-tiny", Fraction(1, 8))):
        params = init_params(spec, seed=int(rng.integers(0, 2**31)))
        key = params.keys()[0]

        def objective(p: Tensor, key=key, spec=spec, params=params) -> Tensor:
            swapped = NetworkParams(dict(params.items()))
            swapped[key] = p
            return forward(spec, swapped, x).sum()

        size = params[key].size
        coordinates = sorted(rng.choice(size, size=min(10, size), replace=False).tolist())
        results.append(
            check_named(f"forward.{spec.name}.{key}", objective, params[key], NETWORK_TOLERANCE,
                        coordinates=coordinates)
        )
    return results


# ----------------------------------------------------------------------
# Training experiments

def _train_and_evaluate(
    cfg: TrainConfig,
    train_scenes: Sequence[AnnotatedScene],
    test_scenes: Sequence[AnnotatedScene],
    max_workers: int,
) -> Dict[str, object]:
    trainer = CurriculumTrainer(cfg)
    result = trainer.train(train_scenes)
    if result.diverged:
        return {"mae": math.nan, "mse": math.nan, "diverged": True}
    evaluation = trainer.evaluate(test_scenes, result.main_params, max_workers=max_workers)
    return {"mae": evaluation.mae, "mse": evaluation.mse, "diverged": False}


def run_scale_sweep(
    train_scenes: Sequence[AnnotatedScene],
    test_scenes: Sequence[AnnotatedScene],
    base_cfg: TrainConfig,
    factors: Sequence[float] = DEFAULT_SCALE_FACTORS,
    max_workers: int = 4,
) -> pd.DataFrame:
    """Test MAE/MSE of sf-only training for each scale factor"""
    rows = []
    for factor in factors:
        cfg = base_cfg.with_updates(
            mode=TrainingMode.SF_ONLY,
            tutor_spec=None,
            curriculum=base_cfg.curriculum.model_copy(update={"scale_factor": float(factor)}),
        )
        logger.info(f"Scale sweep: s={factor}")
        rows.append({"scale_factor": float(factor), **_train_and_evaluate(cfg, train_scenes, test_scenes, max_workers)})
    return pd.DataFrame(rows, columns=["scale_factor", "mae", "mse", "diverged"])


@dataclass
class AblationResult:
    runs: pd.DataFrame
    summary: pd.DataFrame


def _mode_config(
    base_cfg: TrainConfig,
    kind: str,
    mode: TrainingMode,
    seed: int,
    tutor_depth: int,
) -> TrainConfig:
    width = base_cfg.main_spec.width_multiplier
    tutor_spec = tutornet_spec(tutor_depth, width, base_cfg.curriculum.T) if mode.uses_tutor else None
    return base_cfg.with_updates(
        mode=mode,
        seed=seed,
        main_spec=main_net_spec(kind, width),
        tutor_spec=tutor_spec,
        curriculum=base_cfg.curriculum,
    )


def run_ablation(
    train_scenes: Sequence[AnnotatedScene],
    test_scenes: Sequence[AnnotatedScene],
    base_cfg: TrainConfig,
    main_kinds: Sequence[str] = MAIN_NET_KINDS,
    modes: Sequence[TrainingMode] = ABLATION_MODES,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    tutor_depth: int = 15,
    max_workers: int = 4,
) -> AblationResult:
    """
    Train every (seed, main network, mode) combination and evaluate on the test set

    The summary holds, per (main network, mode), the median test MAE/MSE over
    seeds, plus per main network whether the sf-only median beats the baseline
    median and in how many seeds sf-plus-tutornet matched or beat sf-only.
    """
    rows = []
    for seed in seeds:
        for kind in main_kinds:
            for mode in modes:
                cfg = _mode_config(base_cfg, kind, mode, seed, tutor_depth)
                logger.info(f"Ablation: seed={seed} main={kind} mode={mode.value}")
                rows.append({
                    "seed": seed,
                    "main_net": kind,
                    "mode": mode.value,
                    "tutor_depth": tutor_depth if mode.uses_tutor else None,
                    **_train_and_evaluate(cfg, train_scenes, test_scenes, max_workers),
                })
    runs = pd.DataFrame(rows, columns=["seed", "main_net", "mode", "tutor_depth", "mae", "mse", "diverged"])
    return AblationResult(runs=runs, summary=summarize_ablation(runs))


def summarize_ablation(runs: pd.DataFrame) -> pd.DataFrame:
    summary = (
        runs.groupby(["main_net", "mode"], sort=False)
        .agg(runs=("mae", "size"), median_mae=("mae", "median"), median_mse=("mse", "median"))
        .reset_index()
    )
    verdicts = []
    for kind, group in runs.groupby("main_net", sort=False):
        medians = group.groupby("mode")["mae"].median()
        sf_beats = None
        if {TrainingMode.BASELINE.value, TrainingMode.SF_ONLY.value} <= set(medians.index):
            sf_beats = bool(medians[TrainingMode.SF_ONLY.value] <= medians[TrainingMode.BASELINE.value])
        per_seed = group.pivot_table(index="seed", columns="mode", values="mae", aggfunc="first")
        tutor_wins = None
        if {TrainingMode.SF_ONLY.value, TrainingMode.SF_PLUS_TUTORNET.value} <= set(per_seed.columns):
            tutor_wins = int(
                (per_seed[TrainingMode.SF_PLUS_TUTORNET.value] <= per_seed[TrainingMode.SF_ONLY.value]).sum()
            )
        verdicts.append({"main_net": kind, "sf_beats_baseline": sf_beats, "tutor_wins": tutor_wins,
                         "seeds": int(group["seed"].nunique())})
    return summary.merge(pd.DataFrame(verdicts), on="main_net", how="left")


def run_tutor_depth_comparison(
    train_scenes: Sequence[AnnotatedScene],
    test_scenes: Sequence[AnnotatedScene],
    base_cfg: TrainConfig,
    main_kind: str = "dense-tiny",
    depths: Sequence[int] = TUTOR_DEPTHS,
    seed: int = 0,
    max_workers: int = 4,
) -> pd.DataFrame:
    """sf-plus-tutornet test error for each TutorNet depth with a fixed main network"""
    rows = []
    for depth in depths:
        cfg = _mode_config(base_cfg, main_kind, TrainingMode.SF_PLUS_TUTORNET, seed, depth)
        tutor_values = init_params(cfg.tutor_spec, seed).parameter_count
        logger.info(f"Tutor depth comparison: depth={depth} ({tutor_values} parameters)")
        rows.append({
            "tutor_depth": depth,
            "tutor_parameters": tutor_values,
            **_train_and_evaluate(cfg, train_scenes, test_scenes, max_workers),
        })
    return pd.DataFrame(rows, columns=["tutor_depth", "tutor_parameters", "mae", "mse", "diverged"])
