"""Synthesize, run and analyse end-to-end microservice benchmarks."""

__version__ = "0.1.0"
