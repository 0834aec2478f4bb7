"""Stateless reference server for the scoring wire protocol."""

# must track the client's draw construction; bump together or not at all
RNG_VERSION = "splitmix64-boxmuller-1"

__version__ = "0.1.0"
