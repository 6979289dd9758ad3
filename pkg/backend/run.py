import logging
import sys

from varcalc.core.config import settings
from varcalc.main import main

if __name__ == "__main__":
    logging.basicConfig(level=settings.LOG_LEVEL)

    sys.exit(main())
