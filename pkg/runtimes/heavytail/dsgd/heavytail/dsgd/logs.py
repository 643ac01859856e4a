"""Logging setup shared by the CLI and pool workers."""

import logging
from logging import config
from typing import Any, Dict, Optional

FORMAT = (
    "[%(asctime)s +0000] [%(processName)s:%(process)d] [%(levelname)s] "
    "%(name)s: %(message)s"
)


def init_logging(debug: bool = False, loggers: Optional[Dict[str, Any]] = None):
    """Route records to stderr; stdout carries result tables.

    scipy/numpy warnings (IntegrationWarning, overflow in the divergence
    guard) go through the `py.warnings` logger.
    """
    level = "DEBUG" if debug else "INFO"
    config.dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {"std": {"format": FORMAT}},
            "handlers": {
                "stderr": {
                    "class": "logging.StreamHandler",
                    "stream": "ext://sys.stderr",
                    "formatter": "std",
                }
            },
            "loggers": {
                "": {"handlers": ["stderr"], "level": level},
                "py.warnings": {"level": "WARNING"},
                **(loggers or {}),
            },
        }
    )
    logging.captureWarnings(True)
