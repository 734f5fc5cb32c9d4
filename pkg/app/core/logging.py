import logging

from app.core.config import LOG_LEVEL

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_configured = False


def configure_logging(level: str = LOG_LEVEL) -> None:
    """
    Attaches a single stderr handler to the `app` logger tree.
    Calling it again only changes the level.
    """
    global _configured
    root = logging.getLogger("app")
    if not _configured:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    root.setLevel(level.upper())


def get_logger(name: str) -> logging.Logger:
    """Module logger living under the `app` tree."""
    if not name.startswith("app"):
        name = f"app.{name}"
    return logging.getLogger(name)
