import logging
from logging.config import fileConfig
from pathlib import Path
from typing import Optional, Union

LOGGING_INI = Path(__file__).resolve().parents[2] / "logging.ini"


def configure_logging(verbose: bool = False, config_file: Optional[Union[str, Path]] = None) -> None:
    path = Path(config_file) if config_file else LOGGING_INI
    if path.is_file():
        fileConfig(path, disable_existing_loggers=False)
    else:
        logging.basicConfig(level=logging.INFO, format="%(levelname)-5.5s [%(name)s] %(message)s")
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        logging.getLogger("app").setLevel(logging.DEBUG)
