"""
Command-line entry point for TutorNet curriculum experiments

Commands: gen-data, train, eval, analyze, check-grad, sweep-scale, ablate,
config-keys. Exit codes: 0 success, 2 configuration or input error,
3 numerical divergence or failed gradient check, 1 anything unexpected.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from tutor_curriculum.config import (
    describe_config_keys,
    configure_logging,
    get_config,
    load_run_settings,
)
from tutor_curriculum.core.cache import CacheConfig, MemoryCache
from tutor_curriculum.core.performance import get_performance_monitor
from tutor_curriculum.core.tensor import Tensor
from tutor_curriculum.exceptions import (
    AnnotationParseError,
    CheckpointError,
    ConfigurationError,
    DivergenceError,
    GradientCheckError,
    ShapeMismatchError,
)
from tutor_curriculum.models.curriculum_models import CurriculumParams
from tutor_curriculum.models.scene_models import DensityMap, SceneDataset
from tutor_curriculum.models.training_models import TrainConfig, TrainingMode
from tutor_curriculum.services.curriculum import pooled_error_histogram, tutor_loss_surface
from tutor_curriculum.services.density_maps import (
    cluster_distance_analysis,
    equal_width_histogram,
    imbalance_statistics,
    make_density_map,
)
from tutor_curriculum.services.experiments import (
    DEFAULT_SCALE_FACTORS,
    run_ablation,
    run_gradient_checks,
    run_scale_sweep,
    run_tutor_depth_comparison,
)
from tutor_curriculum.services.file_formats import (
    MANIFEST_NAME,
    load_checkpoint,
    save_checkpoint,
    write_density_pgm,
    write_dmap,
)
from tutor_curriculum.services.reports import (
    concat_frames,
    distance_frame,
    evaluation_frame,
    histogram_frame,
    telemetry_frame,
    write_frame_csv,
)
from tutor_curriculum.services.scene_synthesis import (
    generate_dataset,
    generate_splits,
    load_dataset,
    parse_split,
    write_dataset,
)
from tutor_curriculum.services.trainer import CurriculumTrainer


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class CommandFailed(Exception):
    """A command finished but must report a non-zero exit code"""

    def __init__(self, exit_code: int, message: str):
        self.exit_code = exit_code
        super().__init__(message)


# ----------------------------------------------------------------------
# Helpers

def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"expected a comma-separated list of numbers, got '{text}'") from None


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"expected a comma-separated list of integers, got '{text}'") from None


def _str_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _run_overrides(args: argparse.Namespace) -> Dict[str, object]:
    """Run-config keys set on the command line"""
    flags = {
        "mode": "mode",
        "t": "t",
        "margin": "margin",
        "scale_factor": "scale_factor",
        "alpha_main": "alpha_main",
        "alpha_tutor": "alpha_tutor",
        "epochs": "epochs",
        "seed": "seed",
        "main_net": "main_net",
        "tutor_depth": "tutor_depth",
        "width_multiplier": "width_multiplier",
        "max_grad_norm": "max_grad_norm",
        "checkpoint_every": "checkpoint_every",
        "preset": "recipe_preset",
        "recipe_seed": "recipe_seed",
    }
    return {key: getattr(args, flag) for flag, key in flags.items() if getattr(args, flag, None) is not None}


def _max_workers(args: argparse.Namespace) -> int:
    return args.workers if getattr(args, "workers", None) else get_config().performance.max_workers


def _cache() -> MemoryCache:
    performance = get_config().performance
    return MemoryCache(CacheConfig(enabled=performance.enable_caching, max_entries=performance.cache_max_entries))


def _load_splits(data: Path, test_data: Optional[Path], max_workers: int) -> Tuple[SceneDataset, SceneDataset]:
    """
    Resolve training and test sets

    ``data`` is either a dataset directory (then the test set is ``test_data``
    or the training set itself) or a directory holding ``train/`` and ``test/``.
    """
    if (data / MANIFEST_NAME).exists():
        train = load_dataset(data, max_workers, name="train")
        test = load_dataset(test_data, max_workers, name="test") if test_data else train
        return train, test
    if (data / "train" / MANIFEST_NAME).exists():
        train = load_dataset(data / "train", max_workers, name="train")
        if test_data:
            return train, load_dataset(test_data, max_workers, name="test")
        if (data / "test" / MANIFEST_NAME).exists():
            return train, load_dataset(data / "test", max_workers, name="test")
        return train, train
    raise FileNotFoundError(f"No {MANIFEST_NAME} in {data} or {data / 'train'}")


def _require_scenes(dataset: SceneDataset) -> None:
    if len(dataset) == 0:
        raise ConfigurationError(f"dataset '{dataset.name}' is empty")


# ----------------------------------------------------------------------
# Commands

def cmd_gen_data(args: argparse.Namespace) -> int:
    settings = load_run_settings(args.recipe, _run_overrides(args))
    recipe = settings.recipe.to_recipe()
    out = Path(args.out)
    workers = _max_workers(args)
    logger.info(f"Generating scenes {recipe.width}x{recipe.height} (seed {recipe.seed}) into {out}")

    if args.split:
        for name, count, manifest in generate_splits(recipe, parse_split(args.split), out, max_workers=workers):
            print(f"{name}: {count} scenes -> {manifest}")
        return EXIT_OK

    if args.count is None:
        raise ConfigurationError("gen-data needs --count or --split")
    if args.count < 0:
        raise ConfigurationError(f"--count must be non-negative, got {args.count}")
    dataset = generate_dataset(recipe, args.count, max_workers=workers, name=out.name)
    manifest = write_dataset(out, dataset, max_workers=workers)
    print(f"{len(dataset)} scenes -> {manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    settings = load_run_settings(args.config, _run_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = settings.train_config(checkpoint_dir=out / "checkpoints")
    workers = _max_workers(args)
    train_set, test_set = _load_splits(Path(args.data), Path(args.test_data) if args.test_data else None, workers)
    _require_scenes(train_set)
    _require_scenes(test_set)

    trainer = CurriculumTrainer(cfg, cache=_cache())
    result = trainer.train(train_set.scenes)
    write_frame_csv(out / "telemetry.csv", telemetry_frame(result.records))
    if result.diverged:
        raise CommandFailed(EXIT_NUMERICAL, f"training diverged: {result.diagnostic}")

    save_checkpoint(out / "main.ckpt", cfg.main_spec, result.main_params, cfg.seed,
                    trainer.checkpoint_metadata("main", cfg.epochs))
    if result.tutor_params is not None:
        save_checkpoint(out / "tutor.ckpt", cfg.tutor_spec, result.tutor_params, cfg.seed + 1,
                        trainer.checkpoint_metadata("tutor", cfg.epochs))

    evaluation = trainer.evaluate(test_set.scenes, result.main_params, max_workers=workers)
    write_frame_csv(out / "eval.csv", evaluation_frame(evaluation))
    print(f"MAE {evaluation.mae:.6f} MSE {evaluation.mse:.6f}")
    return EXIT_OK


def _eval_config(checkpoint) -> TrainConfig:
    spec = checkpoint.spec
    activation = spec.final_activation
    if activation is not None and activation.activation == "weight_activation":
        raise CheckpointError(f"{spec.name} is a TutorNet checkpoint; eval needs a main network")
    metadata = checkpoint.metadata
    return TrainConfig(
        curriculum=CurriculumParams(scale_factor=checkpoint.scale_factor),
        mode=TrainingMode.SF_ONLY,
        main_spec=spec,
        seed=checkpoint.seed,
        sigma=float(metadata.get("sigma", 15.0)),
        downsample=int(metadata.get("downsample", spec.downsampling)),
    )


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    cfg = _eval_config(checkpoint)
    workers = _max_workers(args)
    dataset = load_dataset(Path(args.data), workers)
    _require_scenes(dataset)

    trainer = CurriculumTrainer(cfg, cache=_cache())
    keep_errors = bool(args.error_bins)
    evaluation = trainer.evaluate(dataset.scenes, checkpoint.params, max_workers=workers, keep_error_maps=keep_errors)
    frame = evaluation_frame(evaluation)
    if args.out:
        out = Path(args.out)
        write_frame_csv(out / "eval.csv", frame)
        if keep_errors:
            bins = pooled_error_histogram(evaluation.error_maps, args.error_bins)
            write_frame_csv(out / "error_histogram.csv", histogram_frame(bins))
    else:
        sys.stdout.write(frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
        if keep_errors:
            logger.warning("--error-bins needs --out; error histogram not written")
    print(f"MAE {evaluation.mae:.6f} MSE {evaluation.mse:.6f}")
    return EXIT_OK


def _pooled_map(maps: Sequence[DensityMap], scale_factor: float, sigma: float, downsample: int) -> DensityMap:
    values = np.concatenate([m.grid.data.reshape(-1) for m in maps])
    return DensityMap(grid=Tensor(values.reshape(1, 1, 1, -1)), scale_factor=scale_factor,
                      sigma=sigma, downsample=downsample)


def cmd_analyze(args: argparse.Namespace) -> int:
    workers = _max_workers(args)
    dataset = load_dataset(Path(args.data), workers)
    _require_scenes(dataset)
    out = Path(args.out)
    factors = _float_list(args.scale_factors)
    if not factors:
        raise ConfigurationError("--scale-factors cannot be empty")
    if args.export_maps < 0:
        raise ConfigurationError(f"--export-maps must be non-negative, got {args.export_maps}")

    histograms, distances = [], []
    unit_maps: List[DensityMap] = []
    for factor in factors:
        maps = [make_density_map(scene, args.sigma, args.downsample, factor) for scene in dataset]
        for scene, dmap in list(zip(dataset, maps))[: args.export_maps]:
            stem = f"{scene.scene_id}_s{factor:g}"
            write_dmap(out / "maps" / f"{stem}.dmap", dmap)
            write_density_pgm(out / "maps" / f"{stem}.pgm", dmap)
        if factor == 1.0:
            unit_maps = maps
        pooled = _pooled_map(maps, factor, args.sigma, args.downsample)
        histograms.append(histogram_frame(equal_width_histogram(pooled.grid.data, args.bins), scale_factor=factor))
        distances.append(distance_frame(cluster_distance_analysis(pooled), factor))
    write_frame_csv(out / "value_histogram.csv", concat_frames(histograms))
    write_frame_csv(out / "cluster_distance.csv", concat_frames(distances))

    if not unit_maps:
        unit_maps = [make_density_map(scene, args.sigma, args.downsample, 1.0) for scene in dataset]
    stats = imbalance_statistics(_pooled_map(unit_maps, 1.0, args.sigma, args.downsample))
    logger.info(
        f"Unscaled maps: {stats['fraction_below_threshold']:.2%} of pixels below 1e-3, "
        f"{stats['fraction_above_half_peak']:.2%} above half the peak, peak {stats['peak']:.3g}"
    )
    write_frame_csv(out / "tutor_loss_surface.csv", tutor_loss_surface(M=1.0))
    print(f"Wrote value_histogram.csv, cluster_distance.csv, tutor_loss_surface.csv to {out}")
    return EXIT_OK


def cmd_check_grad(args: argparse.Namespace) -> int:
    results = run_gradient_checks(seed=args.seed or 0)
    failed = [r for r in results if not r.passed]
    for result in results:
        status = "ok" if result.passed else "FAIL"
        print(f"{result.name:<40} {result.max_error:.3e}  tol {result.tolerance:.0e}  {status}")
    print(f"max error {max(r.max_error for r in results):.3e} over {len(results)} checks")
    if failed:
        raise GradientCheckError(f"{len(failed)} gradient checks failed: {', '.join(r.name for r in failed)}")
    return EXIT_OK


def cmd_sweep_scale(args: argparse.Namespace) -> int:
    settings = load_run_settings(args.config, _run_overrides(args))
    cfg = settings.train_config(mode=TrainingMode.SF_ONLY)
    workers = _max_workers(args)
    train_set, test_set = _load_splits(Path(args.data), None, workers)
    _require_scenes(train_set)
    factors = _float_list(args.factors) if args.factors else list(DEFAULT_SCALE_FACTORS)
    frame = run_scale_sweep(train_set.scenes, test_set.scenes, cfg, factors, max_workers=workers)
    target = write_frame_csv(Path(args.out) / "scale_sweep.csv", frame)
    print(f"Scale sweep over {len(factors)} factors -> {target}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = load_run_settings(args.config, _run_overrides(args))
    cfg = settings.train_config(mode=TrainingMode.SF_ONLY)
    workers = _max_workers(args)
    train_set, test_set = _load_splits(Path(args.data), None, workers)
    _require_scenes(train_set)
    out = Path(args.out)

    seeds = _int_list(args.seeds)
    main_nets = _str_list(args.main_nets) if args.main_nets else [settings.training.main_net]
    depths = _int_list(args.tutor_depths) if args.tutor_depths else [settings.training.tutor_depth]
    ablation = run_ablation(train_set.scenes, test_set.scenes, cfg, main_kinds=main_nets, seeds=seeds,
                            tutor_depth=depths[0], max_workers=workers)
    write_frame_csv(out / "ablation.csv", ablation.runs)
    write_frame_csv(out / "ablation_summary.csv", ablation.summary)
    if len(depths) > 1:
        frame = run_tutor_depth_comparison(train_set.scenes, test_set.scenes, cfg, main_kind=main_nets[0],
                                           depths=depths, seed=seeds[0], max_workers=workers)
        write_frame_csv(out / "tutor_depth.csv", frame)
    print(ablation.summary.to_string(index=False))
    return EXIT_OK


def cmd_config_keys(args: argparse.Namespace) -> int:
    settings = load_run_settings(args.config) if args.config else None
    for key, value, description in describe_config_keys(settings):
        print(f"{key:<28} {value:<14} {description}")
    return EXIT_OK


# ----------------------------------------------------------------------
# Parser

def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run overrides (take precedence over --config)")
    group.add_argument("--mode", help="baseline | sf | sf-tn")
    group.add_argument("--t", type=float, help="floor weight T")
    group.add_argument("--margin", type=float, help="tutor-loss margin M")
    group.add_argument("--scale-factor", type=float, help="density-map scale factor s")
    group.add_argument("--alpha-main", type=float, help="main network learning rate")
    group.add_argument("--alpha-tutor", type=float, help="TutorNet learning rate")
    group.add_argument("--epochs", type=int)
    group.add_argument("--seed", type=int)
    group.add_argument("--main-net", help="mcnn-tiny | vggish-tiny | unet-tiny | dense-tiny")
    group.add_argument("--tutor-depth", type=int, help="15 | 29 | 43 | 94")
    group.add_argument("--width-multiplier", help="channel width multiplier, e.g. 1/8")
    group.add_argument("--max-grad-norm", help="gradient-norm clip, or 'none'")
    group.add_argument("--checkpoint-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tutornet",
        description="Error-driven curriculum training of density-map regressors with TutorNet",
        epilog="Run 'tutornet config-keys' for every run-config key and its current value.",
    )
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR (default from LOG_LOG_LEVEL)")
    parser.add_argument("--workers", type=int, help="worker threads for data loading and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate synthetic annotated scenes")
    gen.add_argument("--recipe", help="run-config file with recipe_* keys")
    gen.add_argument("--preset", choices=["desk", "sparse-1024"])
    gen.add_argument("--recipe-seed", type=int)
    gen.add_argument("--count", type=int)
    gen.add_argument("--split", help="name:count[,name:count...], e.g. train:200,test:50")
    gen.add_argument("--out", required=True)
    gen.set_defaults(handler=cmd_gen_data)

    train = sub.add_parser("train", help="train a main network (optionally with TutorNet)")
    train.add_argument("--config", help="run-config file")
    train.add_argument("--data", required=True, help="dataset directory, or one holding train/ and test/")
    train.add_argument("--test-data", help="evaluation dataset directory")
    train.add_argument("--out", required=True)
    _add_run_flags(train)
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="evaluate a main-network checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--out", help="directory for eval.csv (stdout when omitted)")
    evaluate.add_argument("--error-bins", type=int, default=0, help="also write error_histogram.csv")
    evaluate.set_defaults(handler=cmd_eval)

    analyze = sub.add_parser("analyze", help="density-map value histograms and cluster distances")
    analyze.add_argument("--data", required=True)
    analyze.add_argument("--out", required=True)
    analyze.add_argument("--scale-factors", default="1,10,100,1000")
    analyze.add_argument("--sigma", type=float, default=15.0)
    analyze.add_argument("--downsample", type=int, default=1, choices=[1, 2, 4, 8])
    analyze.add_argument("--bins", type=int, default=20)
    analyze.add_argument("--export-maps", type=int, default=0, metavar="N",
                         help="also write DMAP1 and PGM exports of the first N scenes per scale factor")
    analyze.set_defaults(handler=cmd_analyze)

    check = sub.add_parser("check-grad", help="finite-difference checks of every gradient")
    check.add_argument("--seed", type=int, default=0)
    check.set_defaults(handler=cmd_check_grad)

    sweep = sub.add_parser("sweep-scale", help="sf-only training once per scale factor")
    sweep.add_argument("--config")
    sweep.add_argument("--data", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--factors", help="comma-separated scale factors (default 1,10,100,1000,2000)")
    _add_run_flags(sweep)
    sweep.set_defaults(handler=cmd_sweep_scale)

    ablate = sub.add_parser("ablate", help="baseline / sf / sf-tn over main networks and seeds")
    ablate.add_argument("--config")
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--seeds", default="0,1,2,3,4")
    ablate.add_argument("--main-nets", help="comma-separated main network kinds")
    ablate.add_argument("--tutor-depths", help="comma-separated TutorNet depths; extra depths add tutor_depth.csv")
    _add_run_flags(ablate)
    ablate.set_defaults(handler=cmd_ablate)

    keys = sub.add_parser("config-keys", help="list run-config keys with current values")
    keys.add_argument("--config")
    keys.set_defaults(handler=cmd_config_keys)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(get_config().logging, args.log_level)
    logger.info(f"Starting tutornet {args.command}")

    try:
        code = args.handler(args)
    except (DivergenceError, GradientCheckError) as e:
        logger.error(str(e))
        code = EXIT_NUMERICAL
    except CommandFailed as e:
        logger.error(str(e))
        code = e.exit_code
    except (ConfigurationError, AnnotationParseError, CheckpointError, ShapeMismatchError,
            ValidationError, FileNotFoundError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        code = EXIT_INPUT
    except Exception as e:
        logger.error(f"Unexpected failure in {args.command}: {e}", exc_info=True)
        code = EXIT_UNEXPECTED

    if args.command in ("train", "sweep-scale", "ablate") and get_config().performance.log_summary:
        get_performance_monitor().log_summary()
    logger.info(f"tutornet {args.command} finished with exit code {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
