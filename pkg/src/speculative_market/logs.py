import logging
from typing import Iterable, Optional, TypeVar

from tqdm import tqdm


T = TypeVar("T")

LOG_FORMAT = "[%(name)s] %(message)s"


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def progress(iterable: Iterable[T], logger: logging.Logger, desc: str, total: Optional[int] = None) -> Iterable[T]:
    """tqdm bar that follows the caller's logger level."""
    return tqdm(iterable, desc=desc, total=total, leave=False, disable=not logger.isEnabledFor(logging.INFO))
