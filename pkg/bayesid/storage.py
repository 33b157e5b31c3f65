from enum import Enum
from pathlib import Path

import pandas as pd
from pydantic import BaseModel

from bayesid.data import FLOAT_FORMAT, document_json
from bayesid.domain import ContractViolation

FAILED_ESS_MARKER = "FAILED_ESS"


class UpdateResult(Enum):
    UNCHANGED = 0
    NEW = 1
    MODIFIED = 2


class ArtifactStore:
    """
    Writes the artifacts of one run into an output directory. Every write is
    compared byte by byte with what is already on disk, so a repeated run
    with the same seed reports all its files as UNCHANGED.
    """

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: dict[str, UpdateResult] = {}

    def path(self, name: str) -> Path:
        """
        Resolves `name` inside the output directory; names escaping it are rejected.
        """
        target = (self.out_dir / name).resolve()
        if not target.is_relative_to(self.out_dir.resolve()):
            raise ContractViolation(f"artifact '{name}' lies outside {self.out_dir}")
        return target

    def write_text(self, name: str, content: str) -> UpdateResult:
        target = self.path(name)
        data = content.encode("utf-8")
        if not target.exists():
            result = UpdateResult.NEW
        elif target.read_bytes() == data:
            result = UpdateResult.UNCHANGED
        else:
            result = UpdateResult.MODIFIED
        if result != UpdateResult.UNCHANGED:
            target.write_bytes(data)
        self.written[name] = result
        return result

    def write_document(self, name: str, document: BaseModel) -> UpdateResult:
        return self.write_text(name, document_json(document))

    def write_frame(self, name: str, frame: pd.DataFrame) -> UpdateResult:
        return self.write_text(name, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))

    def mark_failed_ess(self, failed: list[str]) -> UpdateResult:
        return self.write_text(FAILED_ESS_MARKER, "\n".join(failed) + "\n")

    def clear_marker(self) -> None:
        """
        Removes a stale FAILED_ESS marker left by an earlier run.
        """
        marker = self.path(FAILED_ESS_MARKER)
        if marker.exists():
            marker.unlink()
