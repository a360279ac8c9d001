"""Experiment harness: regret statistics, sweeps, scaling fits and the command line."""
