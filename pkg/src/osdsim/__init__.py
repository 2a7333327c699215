"""Online service with delay: simulators, algorithms and oracles."""

__version__ = "0.1.0"
