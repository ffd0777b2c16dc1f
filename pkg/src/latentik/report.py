"""Report writing: delimited metric tables plus rendered figures.

Every evaluation/ablation run lands in one output directory containing
report.json, report.csv, per-frame traces (JSON lines) and PNG figures of the
per-frame error series, the per-scenario summary bars and the iteration
histogram.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport
from .optimizer import FrameTrace

CSV_COLUMNS = [
    "scenario", "sensors", "dof", "pos_mean", "pos_std", "rot_mean", "rot_std",
    "vel_mean", "vel_std", "ee_mean", "ee_std", "mean_iters",
]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_reports(
    out_dir: str | Path,
    reports: list[MetricsReport],
    traces: dict[str, list[FrameTrace]] | None = None,
    figures: bool = True,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / "report.json").write_text(
        canonical_json([r.to_dict() for r in reports]) + "\n"
    )

    with (out / "report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.scenario,
                    len(r.extras.get("roles", [])),
                    r.extras.get("dof", ""),
                    f"{r.pos_cm:.4f}", f"{r.pos_std:.4f}",
                    f"{r.rot_deg:.4f}", f"{r.rot_std:.4f}",
                    f"{r.vel_cm_s:.4f}", f"{r.vel_std:.4f}",
                    f"{r.ee_cm:.4f}", f"{r.ee_std:.4f}",
                    f"{r.mean_iterations:.2f}",
                ]
            )

    if traces:
        for name, frame_traces in traces.items():
            path = out / f"trace_{name}.jsonl"
            with path.open("w") as fh:
                for t in frame_traces:
                    fh.write(canonical_json(t.to_dict()) + "\n")

    if figures:
        render_figures(out, reports, traces)
    return out


def render_figures(
    out: Path,
    reports: list[MetricsReport],
    traces: dict[str, list[FrameTrace]] | None = None,
) -> list[Path]:
    paths = []

    series = [r for r in reports if r.per_frame_pos_cm]
    if series:
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
        for r in series:
            ax1.plot(r.per_frame_pos_cm, label=r.scenario, linewidth=0.9)
            ax2.plot(r.per_frame_ee_cm, label=r.scenario, linewidth=0.9)
        ax1.set_ylabel("joint position error (cm)")
        ax2.set_ylabel("end-effector error (cm)")
        ax2.set_xlabel("frame")
        ax1.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        p = out / "per_frame_errors.png"
        fig.savefig(p, dpi=120, metadata={"Date": None})
        plt.close(fig)
        paths.append(p)

    if reports:
        labels = [r.scenario for r in reports]
        x = np.arange(len(labels))
        fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(labels)), 4))
        width = 0.35
        ax.bar(x - width / 2, [r.pos_cm for r in reports], width, label="pos (cm)")
        ax.bar(x + width / 2, [r.ee_cm for r in reports], width, label="ee (cm)")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel("error (cm)")
        ax.legend()
        fig.tight_layout()
        p = out / "scenario_summary.png"
        fig.savefig(p, dpi=120, metadata={"Date": None})
        plt.close(fig)
        paths.append(p)

    if traces:
        fig, ax = plt.subplots(figsize=(7, 4))
        for name, frame_traces in traces.items():
            ax.hist(
                [t.iterations for t in frame_traces],
                bins=np.arange(0, max(t.iterations for t in frame_traces) + 2) - 0.5,
                histtype="step", label=name,
            )
        ax.set_xlabel("iterations per frame")
        ax.set_ylabel("frames")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = out / "iterations_hist.png"
        fig.savefig(p, dpi=120, metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths
