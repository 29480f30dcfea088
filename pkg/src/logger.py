"""
Logging configuration for the radial inverse spectral toolkit
"""
import logging
import sys
from typing import Optional

from src.config import Config

ROOT_LOGGER = 'radial_spectral'

# Third-party loggers that chatter at DEBUG (font lookup, image plugins)
QUIET_LOGGERS = ('matplotlib', 'PIL')


def _level(name: Optional[str]) -> int:
    return getattr(logging, (name or Config.LOG_LEVEL).upper(), logging.INFO)


def setup_logging(console_level: Optional[str] = None):
    """
    Configure the root logger of the package.

    console_level overrides the INFO console default (the CLI's --log-level);
    the optional file handler always follows LOG_LEVEL.
    """
    logger = logging.getLogger(ROOT_LOGGER)
    file_level = _level(None)
    console = _level(console_level) if console_level else logging.INFO
    logger.setLevel(min(file_level, console))

    # Clear any existing handlers
    logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(console)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if Config.LOG_FILE:
        file_handler = logging.FileHandler(Config.LOG_FILE)
        file_handler.setLevel(file_level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    return logger


def get_logger(name=None):
    """Child logger of the package root, e.g. radial_spectral.traces"""
    if name:
        return logging.getLogger(f'{ROOT_LOGGER}.{name}')
    return logging.getLogger(ROOT_LOGGER)


logger = setup_logging()
