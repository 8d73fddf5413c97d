"""Run one configured experiment and write its artifacts."""

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, config_hash, load_config
from .core.cache import EigenCache
from .core.execution import GridExecutor
from .core.results import jsonable
from .experiments import EXPERIMENT_MAP, ExperimentContext, Outcome, Table


@dataclass
class RunSummary:
    """What a run produced: verdicts, artifact paths and the JSON summary."""

    passed: bool
    outcome: Outcome
    paths: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def _csv_value(value: Any) -> Any:
    value = jsonable(value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else value


class ExperimentRunner:
    """Execute the experiment an ``ExperimentConfig`` names."""

    def __init__(
        self,
        config: ExperimentConfig,
        output_dir: Union[str, Path, None] = None,
        use_cache: bool = True,
        cache_dir: Union[str, Path, None] = None,
    ):
        self.config = config
        self.output_dir = Path(output_dir if output_dir is not None else config.output_dir)
        self.cache = EigenCache(cache_dir) if use_cache else None
        self.logger = logging.getLogger(__name__)

    @classmethod
    def from_file(cls, path: Union[str, Path], **kwargs: Any) -> "ExperimentRunner":
        return cls(load_config(path), **kwargs)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def run(self) -> RunSummary:
        func = EXPERIMENT_MAP.get(self.config.experiment)
        if func is None:
            raise ValueError(f"Unknown experiment: {self.config.experiment}")
        context = ExperimentContext(self.config, self.cache, GridExecutor(self.config.workers))
        self.logger.info(f"Running {self.config.experiment} (config {self.config_hash[:12]})")
        start = time.perf_counter()
        outcome = func(context)
        wall_time = time.perf_counter() - start

        self.output_dir.mkdir(parents=True, exist_ok=True)
        paths = [self._write_table(table) for table in outcome.tables]
        paths.append(self._write_table(self._verdicts(outcome)))
        summary = self._summary(outcome, wall_time)
        summary_path = self.output_dir / "summary.json"
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
        paths.append(summary_path)
        for check in outcome.checks:
            level = logging.INFO if check.passed else logging.WARNING
            self.logger.log(level, f"check {check.name}: {'passed' if check.passed else 'FAILED'}")
        return RunSummary(outcome.passed, outcome, paths, summary)

    def _header(self) -> List[str]:
        cfg = self.config
        return [
            f"# experiment={cfg.experiment}",
            f"# config_hash={self.config_hash}",
            f"# seed={cfg.seed}",
            f"# cutoff={cfg.cutoff}",
            f"# methods={','.join(cfg.methods) or 'default'}",
        ]

    def _write_table(self, table: Table) -> Path:
        path = self.output_dir / f"{table.name}.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            for line in self._header():
                f.write(line + "\n")
            writer = csv.writer(f)
            writer.writerow(table.columns)
            for row in table.rows:
                writer.writerow([_csv_value(v) for v in row])
        return path

    @staticmethod
    def _verdicts(outcome: Outcome) -> Table:
        table = Table("checks", ["check", "passed", "relative_error", "tolerance"])
        for check in outcome.checks:
            table.add(check.name, bool(check.passed), check.relative_error, check.tolerance)
        return table

    def _summary(self, outcome: Outcome, wall_time: float) -> Dict[str, Any]:
        return {
            "experiment": self.config.experiment,
            "config": self.config.model_dump(mode="json"),
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "cutoff": self.config.cutoff,
            "passed": outcome.passed,
            "checks": [check.to_dict() for check in outcome.checks],
            "results": jsonable(outcome.results),
            "versions": {
                "specdet": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "wall_time": wall_time,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "cache": {"hits": self.cache.hits, "misses": self.cache.misses} if self.cache else None,
        }
