"""Same-user evidence from paired cell-tower registration tracks."""

__version__ = "0.1.0"
