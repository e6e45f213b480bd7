import json
import logging
import traceback
from pathlib import Path
from typing import Dict, List, Optional

from copra.schemas import RunManifest, RunStatus

MANIFEST_NAME = "manifest.json"


class RunTracker:
    """Keeps ``manifest.json`` of an output directory in step with a CLI run."""

    def __init__(self, output_dir: Path, command: str, argv: List[str], seed: int, config_hash: str):
        self.path = Path(output_dir) / MANIFEST_NAME
        self.manifest = RunManifest(command=command, argv=list(argv), seed=seed, config_hash=config_hash)

    def _save(self) -> None:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(self.manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            raise RuntimeError(f"Failed to write run manifest {self.path}: {e}") from e

    def update_status(
        self,
        status: RunStatus,
        outputs: Optional[List[str]] = None,
        error_message: Optional[str] = None,
        extra: Optional[Dict[str, str]] = None,
    ) -> RunManifest:
        update = {"status": status}
        if outputs is not None:
            update["outputs"] = [str(p) for p in outputs]
        if error_message is not None:
            update["error_message"] = error_message
        if extra is not None:
            update["extra"] = {**self.manifest.extra, **extra}
        self.manifest = self.manifest.model_copy(update=update)
        self._save()
        return self.manifest

    def start_run(self) -> RunManifest:
        return self.update_status(RunStatus.STARTED)

    def mark_in_progress(self, **extra: str) -> RunManifest:
        return self.update_status(RunStatus.IN_PROGRESS, extra=extra or None)

    def mark_completed(self, outputs: List[Path]) -> RunManifest:
        return self.update_status(RunStatus.COMPLETED, outputs=[str(p) for p in outputs])

    def mark_failed(self, error_message: str) -> RunManifest:
        return self.update_status(RunStatus.FAILED, error_message=error_message)

    def __enter__(self):
        self.start_run()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if exc_type is not None:
                error_msg = f"{exc_type.__name__}: {exc_val}"
                if exc_tb:
                    error_msg += f"\n{''.join(traceback.format_tb(exc_tb))}"
                self.mark_failed(error_msg)
        except Exception as e:
            logger = logging.getLogger(__name__)
            logger.error(f"Error during run tracker cleanup: {e}")
        return False


def load_manifest(path: Path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return RunManifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
