"""Run manifests written next to command outputs."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from ..errors import FileFormatError
from ..file_formats import write_json

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    seed: Optional[int] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            logger.debug("Phase %s took %.3fs", name, elapsed)

    def add_input(self, name: str, path: Optional[Path]) -> None:
        if path is not None:
            self.inputs[name] = str(path)

    def add_output(self, path: Path) -> Path:
        self.outputs.append(str(path))
        return path

    def missing_outputs(self) -> List[str]:
        return [item for item in self.outputs if not Path(item).exists()]

    def to_mapping(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "timings": self.timings,
        }

    def write(self, path: Path) -> Path:
        """Write the manifest; every listed output must already exist."""
        missing = self.missing_outputs()
        if missing:
            raise FileFormatError(f"outputs missing after run: {', '.join(missing)}")
        write_json(path, self.to_mapping())
        logger.info("Wrote manifest %s (%d outputs)", path, len(self.outputs))
        return path


__all__ = ["RunManifest"]
