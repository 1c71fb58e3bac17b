"""Average-regret curves with +-1 std bands from an aggregate CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from proofbandit.harness import AGGREGATE_COLUMNS


class SchemaError(ValueError):
    pass


def read_aggregate(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in AGGREGATE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"aggregate CSV is missing columns: {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise SchemaError("no data rows")
    series: dict = {}
    for r in rows:
        s = series.setdefault(r["policy"], {c: [] for c in AGGREGATE_COLUMNS if c != "policy"})
        for c in s:
            s[c].append(float(r[c]))
    return {p: {c: np.array(v) for c, v in s.items()} for p, s in series.items()}


def _band(ax, t, mean, std, label, **kw):
    line, = ax.plot(t, mean, label=label, **kw)
    ax.fill_between(t, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)


def plot(aggregate_csv, output_path, title: str | None = None) -> Path:
    """Render one chart per aggregate file; the format follows the file suffix (svg, pdf, ...)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = read_aggregate(aggregate_csv)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, s in series.items():
        t = s["t"]
        _band(ax, t, s["avg_regret_mean"], s["avg_regret_std"], f"{label} (total)")
        if label.startswith("proof"):
            _band(ax, t, s["opt_regret_mean"], s["opt_regret_std"], f"{label} (optimization)", linestyle="--")
            _band(ax, t, s["bandit_regret_mean"], s["bandit_regret_std"], f"{label} (bandit)", linestyle=":")
    ax.set_xlabel("round t")
    ax.set_ylabel("average regret per individual")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    out = Path(output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return out
