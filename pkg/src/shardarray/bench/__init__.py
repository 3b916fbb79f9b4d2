"""Scaling benchmark harness and analysis formulas."""
from .analysis import ScalingAnalysis, analyze_strong, estimated_performance, fit_strong, relative_speedup, scaling_quality
from .scenarios import CSV_HEADER, OPS, Measurement, Scenario, emit_csv, measure, read_csv, run_scenario
