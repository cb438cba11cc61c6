import logging

import pytest

from logging_setup import RunFileHandler, setup_logging


@pytest.fixture(autouse=True)
def restore_root():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for h in root.handlers[:]:
        root.removeHandler(h)
        if isinstance(h, RunFileHandler):
            h.close()
    for h in handlers:
        root.addHandler(h)
    root.setLevel(level)


def test_default_level_is_warning():
    setup_logging()
    assert logging.getLogger().level == logging.WARNING


def test_verbose_beats_configured_level():
    setup_logging({"level": "ERROR"}, verbose=True)
    assert logging.getLogger().level == logging.DEBUG


def test_unknown_level_falls_back():
    setup_logging({"level": "chatty"})
    assert logging.getLogger().level == logging.WARNING


def test_run_file_named_after_subcommand(tmp_path):
    setup_logging({"dir": str(tmp_path), "filename": "crpa-rope.log", "level": "INFO"}, run_name="sweep")
    logging.getLogger("sim").info("stage done")
    files = list(tmp_path.glob("crpa-rope.sweep.*.log"))
    assert len(files) == 1
    for h in logging.getLogger().handlers:
        h.flush()
    assert "sim - INFO - stage done" in files[0].read_text()


def test_no_file_without_dir(tmp_path):
    setup_logging({"filename": "crpa-rope.log"})
    assert not any(isinstance(h, RunFileHandler) for h in logging.getLogger().handlers)
