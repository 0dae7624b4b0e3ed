"""Artifact emission: delimited reports, JSON summaries, and the figure
files rendered next to each CSV.

CSV bodies are the reproducibility contract: all floats at 9 significant
digits, '.' decimal separator, no locale dependence, no timestamps (those
live in meta.json only).  Figures are a rendering of the same rows and
carry no additional data.
"""

import hashlib
import json
import math

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def fmt9(x):
    """Format a float at 9 significant digits, locale-independent."""
    v = float(x)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".9g")


def write_bound_report_csv(path, report):
    """One row per abscissa: check,t_or_theta,lhs,rhs,se,satisfied."""
    lines = ["check,t_or_theta,lhs,rhs,se,satisfied"]
    if report.inapplicable:
        lines.append(f"{report.name},,,,,inapplicable")
    else:
        for i in range(report.x.size):
            tag = (
                report.name
                if report.labels is None
                else f"{report.name}[{report.labels[i]}]"
            )
            ok = "true" if bool(report.satisfied[i]) else "false"
            lines.append(
                f"{tag},{fmt9(report.x[i])},{fmt9(report.lhs[i])},"
                f"{fmt9(report.rhs[i])},{fmt9(report.se[i])},{ok}"
            )
    _write_text(path, "\n".join(lines) + "\n")


def write_moments_csv(path, series):
    lines = ["t,msq,se"]
    times = series.grid.times
    for k in range(times.size):
        lines.append(f"{fmt9(times[k])},{fmt9(series.msq[k])},{fmt9(series.se[k])}")
    _write_text(path, "\n".join(lines) + "\n")


def write_paths_csv(path, paths):
    """Noise/solution paths in long format: replicate,t,value_1..value_d."""
    d = paths[0].dim
    header = "replicate,t," + ",".join(f"value_{c + 1}" for c in range(d))
    lines = [header]
    for r, sp in enumerate(paths):
        times = sp.grid.times
        for k in range(times.size):
            vals = ",".join(fmt9(sp.values[k, c]) for c in range(d))
            lines.append(f"{r},{fmt9(times[k])},{vals}")
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return str(obj)
    return obj


def write_json(path, obj):
    _write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def config_hash(semantic_fields: dict) -> str:
    """Stable hash of the semantic configuration (canonical key order)."""
    blob = json.dumps(_jsonable(semantic_fields), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# --- figures -----------------------------------------------------------


def _groups(report):
    if report.labels is None:
        yield None, np.arange(report.x.size)
        return
    seen = []
    for lab in report.labels:
        if lab not in seen:
            seen.append(lab)
    for lab in seen:
        yield lab, np.nonzero(report.labels == lab)[0]


def render_bound_figure(path, report, logx=False):
    """lhs curve with a 3-se band against the rhs bound, one panel."""
    if report.inapplicable or report.x.size == 0:
        return
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for lab, idx in _groups(report):
        x, lhs, rhs, se = (
            report.x[idx],
            report.lhs[idx],
            report.rhs[idx],
            report.se[idx],
        )
        label = report.name if lab is None else str(lab)
        (line,) = ax.plot(x, lhs, lw=1.2, label=f"lhs {label}")
        ax.fill_between(x, lhs - 3 * se, lhs + 3 * se, alpha=0.2, color=line.get_color())
        ax.plot(x, rhs, "--", lw=1.0, color=line.get_color(), label=f"rhs {label}")
    if logx:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("t or theta")
    ax.set_ylabel("second moment")
    ax.set_title(f"{report.name} ({'pass' if report.overall else 'FAIL'})")
    if report.labels is None or len(set(report.labels)) <= 6:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_moments_figure(path, series, rhs=None):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    t = series.grid.times
    ax.plot(t, series.msq, lw=1.2, label="E||x(t)||^2")
    ax.fill_between(
        t, series.msq - 3 * series.se, series.msq + 3 * series.se, alpha=0.25
    )
    if rhs is not None:
        ax.plot(t, rhs, "--", lw=1.0, label="bound")
    ax.set_xlabel("t")
    ax.set_ylabel("second moment")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_paths_figure(path, paths, max_shown=12):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for sp in paths[:max_shown]:
        ax.plot(sp.grid.times, sp.values[:, 0], lw=0.8, alpha=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("B(t)")
    ax.set_title(f"{min(len(paths), max_shown)} sampled noise paths")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_slope_figure(path, report):
    """log-log modulus data with the fitted and predicted slopes."""
    if report.inapplicable or report.x.size == 0:
        return
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for lab, idx in _groups(report):
        label = report.name if lab is None else str(lab)
        ax.loglog(report.x[idx], report.lhs[idx], "o-", ms=4, lw=1.0, label=label)
        ax.loglog(
            report.x[idx],
            report.rhs[idx],
            "--",
            lw=1.0,
            label=f"predicted exponent {report.constants.get('predicted_exponent', 0):.3g}",
        )
    slope = report.details.get("slope")
    if slope is None:
        slope = next(iter(report.details.get("slopes", {}).values()), None)
    title = f"{report.name}"
    if slope is not None:
        title += f": fitted slope {slope:.3f}"
    ax.set_title(title + f" ({'pass' if report.overall else 'FAIL'})")
    ax.set_xlabel("offset")
    ax.set_ylabel("E||difference||^2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
