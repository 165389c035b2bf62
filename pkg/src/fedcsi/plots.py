"""Figure rendering from metrics files.

Plots are derived artifacts: they read JSON-lines metrics (never live state)
and write a PNG next to a CSV of exactly the plotted series, so results stay
inspectable without a display and CI never needs one.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def render_series(rows: list[dict], x_key: str, y_key: str, out_base: Path,
                  group_key: str | None = None,
                  title: str = "") -> tuple[Path, Path]:
    """Plot y(x) from metrics rows, one line per group value.

    Writes <out_base>.png and <out_base>.csv; returns both paths.
    """
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    png, csv_path = out_base.with_suffix(".png"), out_base.with_suffix(".csv")

    missing = [k for k in (x_key, y_key) if rows and k not in rows[0]]
    if missing:
        raise KeyError(f"metrics rows lack keys {missing}; have {sorted(rows[0])}")

    fig, ax = plt.subplots(figsize=(6, 4))
    csv_rows = []
    if group_key:
        groups = sorted({r[group_key] for r in rows}, key=str)
        for g in groups:
            pts = [(r[x_key], r[y_key]) for r in rows if r[group_key] == g]
            pts.sort(key=lambda p: p[0])
            ax.plot(*zip(*pts), marker="o", label=f"{group_key}={g}")
            csv_rows.extend((g, x, y) for x, y in pts)
        ax.legend()
        header = [group_key, x_key, y_key]
    else:
        pts = sorted((r[x_key], r[y_key]) for r in rows)
        ax.plot(*zip(*pts), marker="o")
        csv_rows = list(pts)
        header = [x_key, y_key]

    ax.set_xlabel(x_key)
    ax.set_ylabel(y_key)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)
    _write_csv(csv_path, header, csv_rows)
    return png, csv_path


def render_fl_vs_cl(fl_history: list[dict], cl_points: list[dict],
                    out_base: Path) -> tuple[Path, Path]:
    """Overlay the per-round FL curve and the budget-matched CL points."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    png, csv_path = out_base.with_suffix(".png"), out_base.with_suffix(".csv")

    fig, ax = plt.subplots(figsize=(6, 4))
    fl = [(h["uplink_reals_cum"], h["nmse_db"]) for h in fl_history]
    cl = [(p["uplink_reals_cum"], p["nmse_db"]) for p in cl_points]
    if fl:
        ax.plot(*zip(*fl), label="federated tuning", marker=".")
    if cl:
        ax.plot(*zip(*cl), label="centralized", marker="s", linestyle="--")
    ax.set_xlabel("cumulative uplink real numbers")
    ax.set_ylabel("NMSE (dB)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)

    rows = [("fl", x, y) for x, y in fl] + [("cl", x, y) for x, y in cl]
    _write_csv(csv_path, ["series", "uplink_reals_cum", "nmse_db"], rows)
    return png, csv_path
