import logging

import pytest


@pytest.fixture(autouse=True)
def reset_crossmf_logger():
    """Undo handler changes made by cli.configure_logging."""
    yield
    logger = logging.getLogger("crossmf")
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)
    logger.propagate = True
