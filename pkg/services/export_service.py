"""
Export Service - run artifacts written to disk.

- summaries.txt     one decoded summary per line, in input order
- nbest.jsonl       {"id", "candidates": [{"tokens", "score", "norm_score"}]}
- rouge.csv         variant, precision, recall, f1 (percentages)
- metrics.csv       one row per epoch, preceded by a '# key=value' header

Every n-best record is validated against NBEST_SCHEMA before it is written.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import pandas as pd
from jsonschema import ValidationError, validate

from core.exceptions import DataError
from models.rouge_score import RougeScore
from services.rouge_service import report_frame

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "step", "strategy", "loss", "rouge1", "rouge2", "rougeL"]

NBEST_SCHEMA = {
    "type": "object",
    "required": ["id", "candidates"],
    "properties": {
        "id": {"type": "string"},
        "candidates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["tokens", "score", "norm_score"],
                "properties": {
                    "tokens": {"type": "array", "items": {"type": "string"}},
                    "score": {"type": "number"},
                    "norm_score": {"type": "number"},
                },
            },
        },
    },
}


def write_summaries(summaries: Iterable[Sequence[str]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [" ".join(tokens) for tokens in summaries]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    logger.info(f"Wrote {len(lines)} summaries to {path}")
    return path


def nbest_record(example_id: str, candidates: Sequence[Dict]) -> Dict:
    """Build and validate one n-best line."""
    record = {"id": example_id, "candidates": list(candidates)}
    try:
        validate(instance=record, schema=NBEST_SCHEMA)
    except ValidationError as e:
        raise DataError(f"invalid n-best record for {example_id!r}: {e.message}")
    return record


def write_nbest_jsonl(records: Iterable[Dict], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(nbest_record(record["id"], record["candidates"]), ensure_ascii=False) + "\n")
            count += 1
    logger.info(f"Wrote {count} n-best lists to {path}")
    return path


def write_rouge_csv(scores: Mapping[str, RougeScore], path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = report_frame(dict(scores))
    frame.to_csv(path, index=False)
    logger.info(f"Wrote ROUGE report to {path}")
    return frame


class MetricsLogger:
    """
    Appends per-epoch rows to a CSV whose first line records how the run
    was configured, e.g. '# strategy=dad dad_decay=linear dad_alpha=0.0001'.
    """

    def __init__(self, path: Union[str, Path], header: Optional[Mapping[str, object]] = None, append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if append and self.path.exists():
            return
        with self.path.open("w", encoding="utf-8") as handle:
            if header:
                handle.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
            handle.write(",".join(METRIC_COLUMNS) + "\n")

    def append(self, row: Mapping[str, object]) -> None:
        frame = pd.DataFrame([{column: row.get(column) for column in METRIC_COLUMNS}], columns=METRIC_COLUMNS)
        frame.to_csv(self.path, mode="a", header=False, index=False)

    def read(self) -> pd.DataFrame:
        return pd.read_csv(self.path, comment="#")


def read_metrics(path: Union[str, Path]) -> List[Dict]:
    """Epoch rows of a metrics CSV, skipping the header comment."""
    return pd.read_csv(Path(path), comment="#").to_dict(orient="records")
