import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

logger = logging.getLogger(__name__)


class MetricsLog:
    """
    Append-only JSONL metrics file.

    Each row holds ``wall_time``, ``step``, ``metric`` and ``value``. Steps must not
    decrease for any single metric. With ``path=None`` rows are only kept in memory.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = None if path is None else Path(path)
        self.rows: List[dict] = []
        self._last_step: Dict[str, int] = {}
        if self.path is not None and self.path.exists():
            for row in read_metrics(self.path):
                self.rows.append(row)
                self._last_step[row["metric"]] = row["step"]

    def log(self, step: int, metric: str, value: float) -> None:
        last = self._last_step.get(metric)
        if last is not None and step < last:
            raise ValueError(
                f"Step {step} for metric '{metric}' precedes the last logged step {last}"
            )
        row = {
            "wall_time": time.time(),
            "step": int(step),
            "metric": metric,
            "value": float(value),
        }
        self.rows.append(row)
        self._last_step[metric] = int(step)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as handle:
                handle.write(json.dumps(row) + "\n")

    def log_many(self, step: int, values: Dict[str, float], prefix: str = "") -> None:
        for metric, value in values.items():
            self.log(step, prefix + metric, value)

    def series(self, metric: str) -> List[float]:
        """Logged values of one metric in logging order."""
        return [row["value"] for row in self.rows if row["metric"] == metric]


def read_metrics(path: Union[str, Path]) -> List[dict]:
    rows = []
    with open(path) as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"Line {line_number} of {path} is not valid JSON") from e
    return rows
