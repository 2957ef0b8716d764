import logging
from typing import Optional
from rich.logging import RichHandler
from src.config import settings

# chatty client libraries used by the remote analyst
_QUIET = ("httpx", "openai", "urllib3")


def setup_logger(name: str = "nfbench", level: Optional[str] = None) -> logging.Logger:
    logging.basicConfig(
        level=level or settings.LOG_LEVEL,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)]
    )
    for lib in _QUIET:
        logging.getLogger(lib).setLevel(logging.WARNING)
    return logging.getLogger(name)


def set_level(level: str) -> None:
    """Apply a level to the nfbench logger and the root handler."""
    level = level.upper()
    logger.setLevel(level)
    logging.getLogger().setLevel(level)


logger = setup_logger()
