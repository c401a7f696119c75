"""Per-class mean and standard deviation of DSC, HD95 and MSD over cases."""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from src.errors import DimensionError, FormatError, UndefinedMetricError
from src.metrics.labelmap import LabelMap
from src.metrics.surface import dsc, hd95, msd

CSV_COLUMNS = [
    "class",
    "dsc_mean",
    "dsc_std",
    "hd95_mean",
    "hd95_std",
    "msd_mean",
    "msd_std",
    "n_valid",
    "n_undefined",
]


@dataclass
class ClassRow:
    class_name: str
    dsc_mean: float
    dsc_std: float
    hd95_mean: float
    hd95_std: float
    msd_mean: float
    msd_std: float
    n_valid: int
    n_undefined: int

    @property
    def flagged(self) -> bool:
        """No case had both regions present, so the distance metrics are missing."""
        return self.n_valid == 0


@dataclass
class MetricReport:
    rows: List[ClassRow] = field(default_factory=list)
    n_cases: int = 0

    def row(self, class_name: str) -> ClassRow:
        for row in self.rows:
            if row.class_name == class_name:
                return row
        raise KeyError(class_name)

    def mean_foreground_dsc(self) -> float:
        return float(np.mean([row.dsc_mean for row in self.rows])) if self.rows else float("nan")

    def to_frame(self) -> pd.DataFrame:
        records = [asdict(row) for row in self.rows]
        frame = pd.DataFrame.from_records(records, columns=[f.name for f in ClassRow.__dataclass_fields__.values()])
        return frame.rename(columns={"class_name": "class"})[CSV_COLUMNS]

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "MetricReport":
        try:
            frame = pd.read_csv(path, keep_default_na=True)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise FormatError(path, str(exc)) from None
        if list(frame.columns) != CSV_COLUMNS:
            raise FormatError(path, f"expected columns {CSV_COLUMNS}, got {list(frame.columns)}")
        rows = [
            ClassRow(
                class_name=str(record["class"]),
                dsc_mean=float(record["dsc_mean"]),
                dsc_std=float(record["dsc_std"]),
                hd95_mean=float(record["hd95_mean"]),
                hd95_std=float(record["hd95_std"]),
                msd_mean=float(record["msd_mean"]),
                msd_std=float(record["msd_std"]),
                n_valid=int(record["n_valid"]),
                n_undefined=int(record["n_undefined"]),
            )
            for record in frame.to_dict(orient="records")
        ]
        n_cases = rows[0].n_valid + rows[0].n_undefined if rows else 0
        return cls(rows=rows, n_cases=n_cases)

    def to_dict(self) -> Dict:
        def clean(value):
            return None if isinstance(value, float) and math.isnan(value) else value

        return {
            "n_cases": self.n_cases,
            "classes": [
                {**{k: clean(v) for k, v in asdict(row).items()}, "flagged": row.flagged}
                for row in self.rows
            ],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _mean_std(values: List[float]):
    if not values:
        return float("nan"), float("nan")
    array = np.asarray(values, dtype=np.float64)
    std = float(array.std(ddof=1)) if array.size > 1 else 0.0
    return float(array.mean()), std


def metric_report(
    truths: Sequence[LabelMap], preds: Sequence[LabelMap], class_names: Sequence[str]
) -> MetricReport:
    """Aggregate metrics over paired cases.

    ``class_names[0]`` names the background; one row is produced for every
    other class. Batched label maps contribute one case per slice. Cases
    where either region of a class is empty count as undefined for HD95 and
    MSD and are left out of their means.
    """
    truth_slices = [s for t in truths for s in t.slices()]
    pred_slices = [s for p in preds for s in p.slices()]
    if len(truth_slices) != len(pred_slices):
        raise DimensionError(f"{len(truth_slices)} truth cases paired with {len(pred_slices)} predictions")

    rows: List[ClassRow] = []
    for class_id, name in enumerate(class_names):
        if class_id == 0:
            continue
        dscs: List[float] = []
        hds: List[float] = []
        msds: List[float] = []
        undefined = 0
        for truth, pred in zip(truth_slices, pred_slices):
            dscs.append(dsc(truth, pred, class_id))
            try:
                hds.append(hd95(truth, pred, class_id))
                msds.append(msd(truth, pred, class_id))
            except UndefinedMetricError:
                undefined += 1
        dsc_mean, dsc_std = _mean_std(dscs)
        hd_mean, hd_std = _mean_std(hds)
        msd_mean, msd_std = _mean_std(msds)
        row = ClassRow(name, dsc_mean, dsc_std, hd_mean, hd_std, msd_mean, msd_std, len(hds), undefined)
        if row.flagged:
            logger.warning(f"class {name}: no case with both regions present; distance metrics missing")
        rows.append(row)
    return MetricReport(rows=rows, n_cases=len(truth_slices))


def format_value(mean: float, std: float, digits: int = 3) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"
