from __future__ import annotations

import logging
import os
import sys

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"
DEFAULT_LEVEL = os.environ.get("SELFTRAIN_LOG_LEVEL", "INFO")


def configure_logging(level: str | int | None = None) -> None:
    """Keep exactly one of our stderr handlers on the root logger, bound to the current sys.stderr."""
    root = logging.getLogger()
    root.setLevel(level or DEFAULT_LEVEL)
    for h in [h for h in root.handlers if getattr(h, "_selftrain", False)]:
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._selftrain = True  # type: ignore[attr-defined]
    root.addHandler(handler)
