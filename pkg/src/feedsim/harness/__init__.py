"""Experiment orchestration: config, synthetic flow, runner, stats, CLI."""
