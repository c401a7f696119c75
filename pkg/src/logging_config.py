import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from src.config.base_config import settings


def setup_logging(level: Optional[str] = None) -> None:
    """Configure loguru logging for the CLI."""
    level = (level or settings.log_level).upper()
    logger.remove()
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level:<8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level,
    )
    log_dir = Path(settings.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    logger.add(
        log_dir / settings.log_file,
        rotation="50 MB",
        retention="10 days",
        level=level,
    )
