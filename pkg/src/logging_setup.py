"""
Logging for CLI runs. stdout carries CSV/JSON only, so every handler here
writes to stderr or to a per-run file.
"""

import logging
import os
import sys
from datetime import datetime
from logging import FileHandler
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class RunFileHandler(FileHandler):
    """
    One log file per run, named after the subcommand and start time:
    crpa-rope.simulate.2026-02-09_14-30-25.log
    """

    def __init__(self, log_dir: str, base_name: str, run_name: Optional[str] = None, encoding: str = "utf-8"):
        stem = base_name[:-4] if base_name.endswith(".log") else base_name
        if run_name:
            stem = f"{stem}.{run_name}"
        stamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
        super().__init__(filename=os.path.join(log_dir, f"{stem}.{stamp}.log"), encoding=encoding)


def _level(logging_config: Optional[dict], verbose: bool) -> int:
    if verbose:
        return logging.DEBUG
    name = str((logging_config or {}).get("level", "WARNING")).upper()
    return getattr(logging, name, logging.WARNING)


def setup_logging(logging_config: Optional[dict] = None, verbose: bool = False, run_name: Optional[str] = None) -> None:
    """Reset the root logger to a stderr handler plus an optional run file."""
    root = logging.getLogger()
    level = _level(logging_config, verbose)
    root.setLevel(level)
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        if isinstance(handler, RunFileHandler):
            handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(formatter)
    root.addHandler(console)

    log_dir = (logging_config or {}).get("dir")
    filename = (logging_config or {}).get("filename")
    if not (log_dir and filename):
        return
    try:
        os.makedirs(log_dir, exist_ok=True)
        run_file = RunFileHandler(log_dir, filename, run_name)
    except OSError as e:
        logging.error(f"log file disabled: {e}")
        return
    run_file.setFormatter(formatter)
    root.addHandler(run_file)
    logging.debug(f"logging to {run_file.baseFilename} at {logging.getLevelName(level)}")
