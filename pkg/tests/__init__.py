"""Test suite for fpalign package."""
# Direct the logs to null so warnings and errors don't appear in test output
import logging
logging.getLogger().addHandler(logging.NullHandler())
