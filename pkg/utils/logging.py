import logging
import sys

from config import Config


def setup_logger(name: str) -> logging.Logger:
    """Create a logger configured from Config.LOG_LEVEL and Config.LOG_FORMAT"""
    log = logging.getLogger(name)
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(Config.LOG_FORMAT))
        log.addHandler(handler)
        log.propagate = False
    log.setLevel(Config.LOG_LEVEL.upper())
    return log


logger = setup_logger('caforge')
