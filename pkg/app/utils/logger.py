import logging
import sys
from config import CONFIG

LOG_FORMAT = "[%(levelname)s] - %(message)s"


def setup_logger(log_level=None, stream=None, log_file=None):
    """Setup logging for an entry point (file handler + stream handler)"""
    level = log_level or CONFIG["log_level"]
    handlers = [logging.StreamHandler(stream or sys.stdout)]
    log_file = CONFIG["log_file"] if log_file is None else log_file
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
