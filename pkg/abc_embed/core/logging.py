import logging

from abc_embed.core.config import settings

_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def configure_logging(level: str | None = None) -> None:
    """Configure the root logger from ABC_LOG.

    Args:
        level: Optional override of ``settings.LOG``
    """
    logging.basicConfig(
        level=_LEVELS[(level or settings.LOG).lower()],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
