import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"


def build_logger(log_dir: Path | str = "logs", name: str = "misme") -> logging.Logger:
    """File logger shared by the pipeline layers.

    File handler only; console progress is printed by the caller.
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / f"{name}.log"
    logger = logging.getLogger(name)
    logger.setLevel(logging.INFO)
    for h in list(logger.handlers):
        # a new log_dir replaces the file handler of an earlier run in this process
        if isinstance(h, RotatingFileHandler) and h.baseFilename != os.path.abspath(log_path):
            logger.removeHandler(h)
            h.close()
    if not any(isinstance(h, RotatingFileHandler) for h in logger.handlers):
        handler = RotatingFileHandler(log_path, maxBytes=2_000_000, backupCount=3)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger.info("Initialized logger at %s", log_path)
    return logger


def get_logger(name: str = "misme") -> logging.Logger:
    """Logger for library code; emits nothing until build_logger attaches a handler."""
    logger = logging.getLogger(name)
    if not logger.handlers:
        logger.addHandler(logging.NullHandler())
    return logger
