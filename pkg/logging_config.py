import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from logging.handlers import RotatingFileHandler
from pathlib import Path

DEFAULT_LOG_FILE = "csev.log"
SETTINGS_PATH = Path(__file__).parent / "settings.toml"


def _logging_settings() -> dict:
    # read directly; config.py imports this module
    try:
        with open(SETTINGS_PATH, "rb") as f:
            return tomllib.load(f).get("logging", {})
    except (FileNotFoundError, tomllib.TOMLDecodeError):
        return {}


def setup_logging(name="csev", log_file=None, level=None, max_bytes=5*1024*1024, backup_count=3,
                  stream_level=logging.WARNING):
    """Set up logging configuration with a rotating file handler and a stream handler.

    Args:
        name: The name of the logger.
        log_file: The name of the log file. Defaults to CSEV_LOG_FILE, then
            settings.toml [logging] file, then csev.log.
        level: The level of the logger. Defaults to CSEV_LOG_LEVEL, then
            settings.toml [logging] level, then INFO.
        max_bytes: The maximum size of the log file.
        backup_count: The number of backup log files.
        stream_level: Minimum level echoed to stderr. Kept above INFO so the
            CLI's machine-readable stdout stays clean.

    Returns:
        logger: The logger object.

    Example usage:
    from logging_config import setup_logging
    logger = setup_logging(__name__)
    """
    settings = _logging_settings() if log_file is None or level is None else {}
    if log_file is None:
        log_file = os.getenv("CSEV_LOG_FILE") or settings.get("file", DEFAULT_LOG_FILE)
    if level is None:
        level_name = os.getenv("CSEV_LOG_LEVEL") or settings.get("level", "INFO")
        level = logging.getLevelName(str(level_name).upper())
        if not isinstance(level, int):
            level = logging.INFO

    logger = logging.getLogger(name)
    # Clear existing handlers to avoid duplicate logs
    if logger.hasHandlers():
        logger.handlers.clear()

    formatter = logging.Formatter("%(asctime)s %(levelname)-8s "
                                    "[%(filename)s:%(lineno)d %(funcName)s()] "
                                    "%(message)s")

    file_handler = RotatingFileHandler(log_file, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8')
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    stream_handler.setLevel(stream_level)
    logger.addHandler(stream_handler)

    logger.setLevel(level)
    logger.propagate = False
    return logger
