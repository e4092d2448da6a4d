import logging
import os
from logging import getLogger

from rich.logging import RichHandler

LOG_LEVEL = os.environ.get("IRS_LOG_LEVEL", "INFO").upper()

# Configure with Rich
logging.basicConfig(
    level="INFO",
    format="%(message)s",
    handlers=[
        RichHandler(
            rich_tracebacks=True,
            show_time=False,
            markup=True,
        )
    ],
)

# Get the logger and configure it
logger = getLogger("irs_beamforming")
logger.setLevel(LOG_LEVEL)
logger.propagate = True

# Expose common logging functions directly
debug = logger.debug
info = logger.info
warning = logger.warning
error = logger.error
critical = logger.critical
