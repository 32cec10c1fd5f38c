"""Report rendering: delimited trace dumps plus matplotlib figures.

Every CLI report path writes machine-readable CSV next to the rendered
PNGs so results stay scriptable.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .demo_harness import DemoReport, FRAME_HEIGHT, FRAME_WIDTH
from .hdl_emitter import CostModel, ResourceEstimate
from .soc_simulator import STAGE_NAMES, TRACE_SIGNALS, TraceEvent


def write_trace_csv(trace: list[TraceEvent], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("cycle",) + TRACE_SIGNALS)
        for ev in trace:
            writer.writerow([ev.cycle] + [getattr(ev, name) for name in TRACE_SIGNALS])


def render_waveform(trace: list[TraceEvent], path, title: str = "bus activity") -> None:
    """Stacked per-signal step plot of a trace, one row per signal.

    One-bit signals plot as logic levels; buses plot their transitions with
    hex annotations at each change (capped to keep the figure legible).
    """
    signals = [name for name in TRACE_SIGNALS]
    cycles = [ev.cycle for ev in trace]
    fig, axes = plt.subplots(len(signals), 1, sharex=True,
                             figsize=(10, 1.1 * len(signals)))
    if len(signals) == 1:
        axes = [axes]
    for ax, name in zip(axes, signals):
        values = [getattr(ev, name) for ev in trace]
        if name == "stage":
            ax.step(cycles, values, where="post", linewidth=1.2)
            ax.set_yticks(range(len(STAGE_NAMES)))
            ax.set_yticklabels([s[0].upper() for s in STAGE_NAMES], fontsize=7)
        elif name in ("m_rw", "m_en", "irq"):
            ax.step(cycles, values, where="post", linewidth=1.2)
            ax.set_ylim(-0.2, 1.2)
            ax.set_yticks((0, 1))
        else:
            changed = [bool(values[i] != values[i - 1]) or i == 0
                       for i in range(len(values))]
            ax.step(cycles, changed, where="post", linewidth=0.8, color="0.6")
            ax.set_ylim(-0.2, 1.6)
            ax.set_yticks(())
            shown = 0
            for i, (cyc, val) in enumerate(zip(cycles, values)):
                if changed[i] and shown < 40:
                    ax.annotate(f"{val:X}", (cyc, 1.05), fontsize=6, rotation=45)
                    shown += 1
        ax.set_ylabel(name, rotation=0, ha="right", va="center", fontsize=8)
        ax.grid(True, axis="x", linewidth=0.3, alpha=0.4)
    axes[-1].set_xlabel("clock cycle")
    axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_estimate_csv(rows: list[tuple[str, ResourceEstimate]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("config", "luts", "dsps", "units"))
        for label, est in rows:
            writer.writerow((label, est.luts, est.dsps, " ".join(sorted(est.units))))


def render_estimate_chart(rows: list[tuple[str, ResourceEstimate]],
                          model: CostModel, path) -> None:
    """Stacked LUT bars (base + per-unit increments) with DSP annotations."""
    labels = [label for label, _ in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(rows), 4.2))
    base = np.array([model.base_luts] * len(rows))
    ax.bar(x, base, width=0.6, label="base (core)")
    bottom = base.astype(float)
    units = sorted({u for _, est in rows for u in est.units if u != "CORE"})
    for unit in units:
        inc = np.array([model.unit_luts.get(unit, 0) if unit in est.units else 0
                        for _, est in rows], dtype=float)
        ax.bar(x, inc, width=0.6, bottom=bottom, label=unit)
        bottom += inc
    for i, (_, est) in enumerate(rows):
        ax.annotate(f"{est.luts} LUT\n{est.dsps} DSP", (i, bottom[i]),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("LUTs")
    ax.set_title("estimated FPGA resources")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_frame(frame: bytes, path, width: int = FRAME_WIDTH,
                 height: int = FRAME_HEIGHT) -> None:
    """Render one committed RGB frame as an image."""
    pixels = np.frombuffer(frame, dtype=np.uint8).reshape(height, width, 3)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.imshow(pixels, interpolation="nearest")
    ax.set_xticks(())
    ax.set_yticks(())
    ax.set_title("last committed frame")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_demo_csv(report: DemoReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("frame", "commit_cycle", "delta_cycles"))
        prev = None
        for i, cyc in enumerate(report.commit_cycles):
            writer.writerow((i, cyc, "" if prev is None else cyc - prev))
            prev = cyc


def render_demo_timeline(report: DemoReport, clock_hz: int, path) -> None:
    """Per-frame achieved rate against the wire ceiling."""
    commits = report.commit_cycles
    fig, ax = plt.subplots(figsize=(6, 3.6))
    if len(commits) >= 2:
        deltas = np.diff(np.array(commits))
        rates = clock_hz / deltas
        ax.plot(range(1, len(commits)), rates, marker="o", label="measured")
    ax.axhline(report.wire_ceiling_fps, color="tab:red", linestyle="--",
               label=f"wire ceiling {report.wire_ceiling_fps:.1f}")
    ax.set_xlabel("frame interval")
    ax.set_ylabel("frames per second")
    ax.set_title(f"sustained rate: {report.fps:.1f} fps")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
