"""
Run Manifests
Every CLI command records what it ran, on which inputs, with which
resolved configuration and seed, and what it wrote
"""
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from src import __version__

logger = logging.getLogger(__name__)


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(output: str) -> str:
    """Manifest sidecar for a command's primary output"""
    p = Path(output)
    return str(p.with_name(p.name + ".manifest.json"))


@dataclass
class RunManifest:
    command: str
    seed: Optional[int]
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    version: str = __version__
    wall_time_seconds: float = 0.0
    _started: float = field(default_factory=time.perf_counter, repr=False)

    def add_input(self, role: str, path: Optional[str]):
        if path:
            self.inputs[role] = f"sha256:{file_sha256(path)}"

    def add_output(self, path: str):
        self.outputs.append(str(path))

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("_started")
        return data

    def save(self, path: str) -> str:
        self.wall_time_seconds = round(time.perf_counter() - self._started, 6)
        with open(path, "w") as f:
            f.write(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        logger.debug("Wrote manifest %s", path)
        return path
