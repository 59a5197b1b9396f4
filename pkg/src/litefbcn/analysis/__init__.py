"""Evaluation metrics, repeated-measures ANOVA, feature export and efficiency reports."""

from .anova import AnovaResult, betainc, f_sf, rm_anova
from .efficiency import (LatencyStats, benchmark_latency, efficiency_report, flops_reduction_holds,
                         format_report, write_report_csv)
from .export import export_features, export_manifest_features
from .metrics import MetricsReport, confusion, metrics
