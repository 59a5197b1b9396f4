"""Cost comparison across head configurations: parameter counts, FLOPs and latency."""

import csv
import os
import platform
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from ..heads import head_param_count, resolve_reduction
from ..model import build_model
from ..nn.accounting import count_params, estimate_flops

REPORT_COLUMNS = ["method", "gamma", "backbone", "trainable_params", "total_params", "head_params_closed_form",
                  "head_params_counted", "flops", "head_flops", "bilinear_length", "latency_ms_median"]


@dataclass
class LatencyStats:
    median: float
    mean: float
    std: float
    reps: int
    host: str


def host_descriptor():
    return f"{platform.node()} {platform.machine()} {platform.processor() or platform.system()} python{platform.python_version()} numpy{np.__version__}"


@contextmanager
def _single_thread():
    pinned = hasattr(os, "sched_getaffinity")
    if pinned:
        saved = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(saved)})
    try:
        with threadpool_limits(limits=1):
            yield
    finally:
        if pinned:
            os.sched_setaffinity(0, saved)


def benchmark_latency(model, input_shape=None, reps=100, warmup=10, seed=0):
    """Wall-clock milliseconds per single-image inference forward pass.

    Warmup passes are discarded; timing runs on one pinned thread.
    """
    shape = tuple(input_shape or model.backbone_spec.input_shape)
    x = np.random.default_rng(seed).standard_normal((1,) + shape).astype(model.dtype)
    times = []
    with _single_thread():
        for _ in range(warmup):
            model.forward(x, train=False)
        for _ in range(reps):
            t0 = time.perf_counter()
            model.forward(x, train=False)
            times.append((time.perf_counter() - t0) * 1e3)
    std = statistics.stdev(times) if len(times) > 1 else 0.0
    return LatencyStats(statistics.median(times), statistics.fmean(times), std, reps, host_descriptor())


def flops_reduction_holds(channels, gamma):
    """``K (C + K) < C^2`` with ``K = C / gamma``: the reducer plus reduced
    pooling costs less than pooling the full map."""
    k = resolve_reduction(channels, gamma)
    return k * (channels + k) < channels * channels


def _head_flops(flops):
    return sum(r["flops"] for r in flops["per_layer"] if r["layer"].startswith("head."))


def efficiency_report(configs, reps=100, warmup=10, measure_latency=True, backbone_name="micronet"):
    """One row per ``(backbone_spec, head_config)`` in ``configs``."""
    rows = []
    for backbone, head in configs:
        model = build_model(backbone, head)
        counts = count_params(model)
        head_counted = sum(v["trainable"] + v["running"] for k, v in counts["per_layer"].items()
                           if k.startswith("head."))
        c = backbone.out_channels
        closed = head_param_count(head.variant, c, head.gamma, head.num_classes,
                                  channels_b=c if head.variant == "BCNNDual" else None,
                                  reducer_bias=head.reducer_bias)
        flops = estimate_flops(model)
        latency = benchmark_latency(model, reps=reps, warmup=warmup).median if measure_latency else float("nan")
        rows.append({
            "method": head.variant,
            "gamma": "N/A" if head.gamma is None else head.gamma,
            "backbone": backbone_name if head.variant != "BCNNDual" else f"{backbone_name}+{backbone_name}",
            "trainable_params": counts["trainable"],
            "total_params": counts["total"],
            "head_params_closed_form": closed.total,
            "head_params_counted": head_counted,
            "flops": flops["total"],
            "head_flops": _head_flops(flops),
            "bilinear_length": model.head.feature_width if head.variant != "BaselineGAP" else 0,
            "latency_ms_median": latency,
        })
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.4f}"
    return str(v)


def write_report_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])


def format_report(rows):
    table = [REPORT_COLUMNS] + [[_fmt(r[c]) for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
