import os
import logging
from pathlib import Path

from dotenv import load_dotenv

# Pick up a .env file in the working directory before reading settings
load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def cache_dir():
    """Profile cache root; NLS_CACHE_DIR overrides the default."""
    default = Path.home() / ".cache" / "nls_ground_states"
    return Path(os.environ.get("NLS_CACHE_DIR", default)).expanduser()


def default_workers():
    return int(os.environ.get("NLS_WORKERS", "1"))


def configure_logging(level=None, quiet=False):
    """Configure the root logger once; quiet runs only report errors."""
    level = level or os.environ.get("NLS_LOG_LEVEL", "WARNING")
    if quiet:
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.WARNING), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, str(level).upper(), logging.WARNING))
