"""Base stage class with common functionality."""
import json
import logging
import time
from abc import ABC, abstractmethod
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import numba

from .cache import ArtifactCache
from .config import PipelineConfig


class BaseStage(ABC):
    """Base class for all pipeline stages."""

    name: str = "stage"

    def __init__(self, config: PipelineConfig | None = None, output_dir: str | Path | None = None):
        self.config = config or PipelineConfig()
        self.cache = ArtifactCache(
            self.config.cache_dir if self.config.cache_enabled else None,
            ttl=self.config.cache_ttl,
        )
        self.logger = logging.getLogger(self.__class__.__name__)
        self._setup_logging()
        numba.set_num_threads(min(self.config.workers, numba.config.NUMBA_NUM_THREADS))

        self.timings: dict[str, float] = {}

        # Output directory
        self.output_dir = Path(output_dir or self.config.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _setup_logging(self) -> None:
        """Configure logging."""
        level = logging.DEBUG if self.config.verbose else logging.INFO
        logging.basicConfig(
            level=level,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

    @contextmanager
    def timed(self, label: str) -> Iterator[None]:
        """Record wall-clock seconds spent in the block under `label`."""
        start = time.perf_counter()
        self.logger.info(f"{label}: started")
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.timings[label] = self.timings.get(label, 0.0) + elapsed
            self.logger.info(f"{label}: {elapsed:.2f}s")

    @abstractmethod
    def run(self, **kwargs) -> Any:
        """Main entry point for the stage."""
        pass

    def artifact_path(self, *parts: str) -> Path:
        path = self.output_dir.joinpath(*parts)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def save_output(self, content: str, filename: str) -> Path:
        """Save output to file."""
        path = self.artifact_path(filename)
        path.write_text(content)
        self.logger.info(f"Saved: {path}")
        return path

    def save_json(self, data: Any, filename: str) -> Path:
        return self.save_output(json.dumps(data, indent=2, sort_keys=True) + "\n", filename)

    def save_config(self) -> Path:
        path = self.artifact_path("config.yaml")
        self.config.to_yaml(path)
        self.logger.info(f"Saved: {path}")
        return path

    def save_timings(self) -> Path:
        return self.save_json({k: round(v, 4) for k, v in self.timings.items()}, "timings.json")
