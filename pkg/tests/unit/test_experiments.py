"""
Unit tests for the experiment harness on tiny datasets
"""

import math

import pandas as pd
import pytest

from tutor_curriculum.models.curriculum_models import CurriculumParams
from tutor_curriculum.models.training_models import TrainingMode
from tutor_curriculum.services.experiments import (
    run_ablation,
    run_scale_sweep,
    run_tutor_depth_comparison,
    summarize_ablation,
)


@pytest.mark.unit
class TestScaleSweep:
    def test_one_row_per_factor(self, make_train_config, tiny_scenes):
        frame = run_scale_sweep(tiny_scenes[:2], tiny_scenes[2:], make_train_config(), factors=[1.0, 100.0],
                                max_workers=2)
        assert list(frame.columns) == ["scale_factor", "mae", "mse", "diverged"]
        assert frame["scale_factor"].tolist() == [1.0, 100.0]
        assert not frame["diverged"].any()
        assert (frame["mae"] >= 0).all()

    def test_divergent_factor_is_reported(self, make_train_config, tiny_scenes):
        frame = run_scale_sweep(tiny_scenes[:2], tiny_scenes[2:], make_train_config(), factors=[1e9])
        assert frame["diverged"].tolist() == [True]
        assert math.isnan(frame["mae"].iloc[0])


@pytest.mark.unit
class TestAblation:
    def test_runs_and_summary(self, make_train_config, tiny_scenes):
        result = run_ablation(
            tiny_scenes[:2], tiny_scenes[2:], make_train_config(),
            main_kinds=["vggish-tiny"], seeds=[0, 1], max_workers=2,
        )
        assert len(result.runs) == 2 * 3
        assert set(result.runs["mode"]) == {"baseline", "sf-only", "sf-plus-tutornet"}
        tutor_rows = result.runs[result.runs["mode"] == "sf-plus-tutornet"]
        assert tutor_rows["tutor_depth"].tolist() == [15, 15]
        assert result.summary["runs"].tolist() == [2, 2, 2]
        assert result.summary["seeds"].tolist() == [2, 2, 2]
        assert 0 <= int(result.summary["tutor_wins"].iloc[0]) <= 2

    def test_baseline_runs_at_unit_scale(self, make_train_config, tiny_scenes):
        # A scale factor that diverges sf-only leaves the baseline untouched
        cfg = make_train_config(curriculum=CurriculumParams(scale_factor=1e9))
        result = run_ablation(
            tiny_scenes[:2], tiny_scenes[2:], cfg, main_kinds=["vggish-tiny"],
            modes=[TrainingMode.BASELINE, TrainingMode.SF_ONLY], seeds=[0],
        )
        diverged = dict(zip(result.runs["mode"], result.runs["diverged"]))
        assert diverged == {"baseline": False, "sf-only": True}


@pytest.mark.unit
class TestSummarizeAblation:
    def test_verdicts(self):
        runs = pd.DataFrame(
            [
                (0, "m", "baseline", None, 5.0, 6.0, False),
                (0, "m", "sf-only", None, 3.0, 4.0, False),
                (0, "m", "sf-plus-tutornet", 15, 2.0, 3.0, False),
                (1, "m", "baseline", None, 7.0, 8.0, False),
                (1, "m", "sf-only", None, 4.0, 5.0, False),
                (1, "m", "sf-plus-tutornet", 15, 4.5, 5.0, False),
            ],
            columns=["seed", "main_net", "mode", "tutor_depth", "mae", "mse", "diverged"],
        )
        summary = summarize_ablation(runs).set_index("mode")
        assert summary.loc["sf-only", "median_mae"] == 3.5
        assert bool(summary.loc["baseline", "sf_beats_baseline"]) is True
        assert summary.loc["sf-plus-tutornet", "tutor_wins"] == 1

    def test_missing_modes_give_no_verdict(self):
        runs = pd.DataFrame(
            [(0, "m", "sf-only", None, 3.0, 4.0, False)],
            columns=["seed", "main_net", "mode", "tutor_depth", "mae", "mse", "diverged"],
        )
        summary = summarize_ablation(runs)
        assert summary["sf_beats_baseline"].isna().all()
        assert summary["tutor_wins"].isna().all()


@pytest.mark.unit
class TestTutorDepthComparison:
    def test_parameter_counts_grow_with_depth(self, make_train_config, tiny_scenes):
        frame = run_tutor_depth_comparison(
            tiny_scenes[:2], tiny_scenes[2:], make_train_config(), main_kind="vggish-tiny", depths=[15, 29],
        )
        assert frame["tutor_depth"].tolist() == [15, 29]
        assert frame["tutor_parameters"].iloc[0] < frame["tutor_parameters"].iloc[1]
        assert not frame["diverged"].any()
