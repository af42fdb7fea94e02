"""Benchmark harness: simulation, experiment drivers, I/O and the command-line interface."""
