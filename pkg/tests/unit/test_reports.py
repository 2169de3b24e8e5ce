"""
Unit tests for CSV report assembly
"""

import pandas as pd
import pytest

from tutor_curriculum.models.scene_models import GroupDistance, HistogramBin
from tutor_curriculum.models.training_models import TELEMETRY_COLUMNS, EvaluationResult, SceneCount, StepRecord
from tutor_curriculum.services.reports import (
    concat_frames,
    distance_frame,
    evaluation_frame,
    histogram_frame,
    telemetry_frame,
    write_frame_csv,
)


@pytest.mark.unit
class TestFrames:
    def test_telemetry_columns_and_blanks(self, tmp_path):
        records = [
            StepRecord(0, 0, 1.5, None, None, None, None, 0.25),
            StepRecord(0, 1, 1.25, 0.5, 0.7, 0.5, 0.9, 0.125),
        ]
        path = write_frame_csv(tmp_path / "telemetry.csv", telemetry_frame(records))
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(TELEMETRY_COLUMNS)
        assert lines[1] == "0,0,1.5,,,,,0.25"

    def test_empty_telemetry_keeps_header(self):
        assert list(telemetry_frame([]).columns) == TELEMETRY_COLUMNS

    def test_evaluation_frame(self):
        result = EvaluationResult(mae=1.0, mse=1.0, counts=[SceneCount("a", 2.0, 3.0)])
        frame = evaluation_frame(result)
        assert frame.to_dict("records") == [{"scene_id": "a", "pred_count": 2.0, "gt_count": 3.0}]

    def test_histogram_labels_come_first(self):
        frame = histogram_frame([HistogramBin(0.0, 1.0, 4)], scale_factor=10.0, kind="value")
        assert list(frame.columns) == ["scale_factor", "kind", "bin_lower", "bin_upper", "count"]

    def test_distance_frame(self):
        frame = distance_frame([GroupDistance(0.0, 0.5), GroupDistance(1.0, 0.5)], 100.0)
        assert frame["scale_factor"].tolist() == [100.0, 100.0]

    def test_concat(self):
        assert concat_frames([]).empty
        frame = concat_frames([pd.DataFrame({"a": [1]}), pd.DataFrame({"a": [2]})])
        assert frame["a"].tolist() == [1, 2]

    def test_full_precision_floats(self, tmp_path):
        path = write_frame_csv(tmp_path / "x.csv", pd.DataFrame({"v": [0.1 + 0.2]}))
        assert float(path.read_text().splitlines()[1]) == 0.1 + 0.2
