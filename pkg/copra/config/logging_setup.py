import logging
from pathlib import Path
from typing import Optional

from .config import settings


def setup_logging(
    level: Optional[str] = None,
    log_file: Optional[str] = None,
    console_level: int = logging.INFO,
) -> logging.Logger:
    """Configure the root logger with a console and a file handler."""
    root_logger = logging.getLogger()
    root_logger.setLevel(level or settings.LOG_LEVEL)

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)  # console never shows per-iteration detail
    console_handler.setFormatter(formatter)

    log_path = Path(log_file or settings.LOG_FILE)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_path)
    file_handler.setLevel(level or settings.LOG_LEVEL)
    file_handler.setFormatter(formatter)

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    root_logger.addHandler(console_handler)
    root_logger.addHandler(file_handler)

    return logging.getLogger("copra")
