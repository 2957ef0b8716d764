import hashlib
import re
from pathlib import Path
from typing import Union
from pydantic import BaseModel
from src.config import settings
from src.utils.logger import logger

class ArtifactStore:
    """Output-directory layout for one run: scalers, models, graphs, manifests, reports."""

    KINDS = ("flows", "scalers", "models", "graphs", "manifests", "mitigation", "plans")

    def __init__(self, root: Union[str, Path, None] = None):
        self.root = Path(root or settings.OUTPUT_DIR)
        for kind in self.KINDS:
            (self.root / kind).mkdir(parents=True, exist_ok=True)

    @staticmethod
    def slug(name: str) -> str:
        return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") or "artifact"

    def path(self, kind: str, name: str, suffix: str = ".json") -> Path:
        if kind not in self.KINDS:
            raise KeyError(f"Unknown artifact kind {kind!r}")
        return self.root / kind / f"{self.slug(name)}{suffix}"

    def save_model(self, kind: str, name: str, model: BaseModel) -> Path:
        path = self.path(kind, name)
        path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
        logger.debug(f"Saved {kind}/{path.name}")
        return path

    def relative(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()

    @staticmethod
    def digest(path: Union[str, Path]) -> str:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
