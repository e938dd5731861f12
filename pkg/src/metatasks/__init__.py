"""Build, curate and simulate ensemble benchmarks from OpenML prediction data."""

__version__ = "0.1.0"
