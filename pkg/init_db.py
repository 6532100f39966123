#!/usr/bin/env python3
"""Create the results tables ahead of the first ``hetfed run --store``."""
import logging

from hetfed.config import LOG_LEVEL
from hetfed.database import create_tables, engine

if __name__ == "__main__":
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    create_tables()
    logging.getLogger("init_db").info(f"Results tables ready at {engine.url!r}")
