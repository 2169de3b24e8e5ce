"""
CSV products

Tables are assembled with pandas and written atomically. Floats are written
with 17 significant digits so identical runs produce byte-identical files.
"""

from pathlib import Path
from typing import Iterable, List, Sequence, Union

import pandas as pd

from tutor_curriculum.core.files import atomic_write_text
from tutor_curriculum.models.scene_models import GroupDistance, HistogramBin
from tutor_curriculum.models.training_models import TELEMETRY_COLUMNS, EvaluationResult, StepRecord


PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


def write_frame_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def telemetry_frame(records: Sequence[StepRecord]) -> pd.DataFrame:
    return pd.DataFrame([record.to_row() for record in records], columns=TELEMETRY_COLUMNS)


def evaluation_frame(result: EvaluationResult) -> pd.DataFrame:
    return pd.DataFrame(
        [(c.scene_id, c.pred_count, c.gt_count) for c in result.counts],
        columns=["scene_id", "pred_count", "gt_count"],
    )


def histogram_frame(bins: Iterable[HistogramBin], **labels) -> pd.DataFrame:
    frame = pd.DataFrame(
        [(b.lower, b.upper, b.count) for b in bins], columns=["bin_lower", "bin_upper", "count"]
    )
    for position, (name, value) in enumerate(labels.items()):
        frame.insert(position, name, value)
    return frame


def distance_frame(groups: Sequence[GroupDistance], scale_factor: float) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "scale_factor": [scale_factor] * len(groups),
            "group_value": [g.group_value for g in groups],
            "distance": [g.distance for g in groups],
        }
    )


def concat_frames(frames: List[pd.DataFrame]) -> pd.DataFrame:
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
