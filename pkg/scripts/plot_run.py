#!/usr/bin/env python3
"""Plot a finished run directory: track map, altitude strip, metrics.

Usage: python3 scripts/plot_run.py <run_dir> [out.png]

The altitude strip is colored by FSM state (Hold yellow, Navigate green,
Mapping blue, Abort red, Return cyan) with the distance band shown as a
ribbon around the terrain height under the vehicle.
"""

import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

STATE_COLORS = {"Hold": "gold", "Navigate": "green", "Mapping": "blue",
                "Abort": "red", "Return": "cyan"}


def main() -> None:
    run_dir = Path(sys.argv[1])
    out_png = Path(sys.argv[2]) if len(sys.argv) > 2 else run_dir / "run.png"
    rows = list(csv.DictReader((run_dir / "track.csv").open()))
    report = json.loads((run_dir / "report.json").read_text())

    t = [float(r["t"]) for r in rows]
    x = [float(r["x"]) for r in rows]
    y = [float(r["y"]) for r in rows]
    z = [float(r["z"]) for r in rows]
    dist = [float(r["dist_to_terrain"]) for r in rows]
    states = [r["fsm_state"] for r in rows]

    fig, axes = plt.subplots(3, 1, figsize=(11, 12))
    ax = axes[0]
    for state, color in STATE_COLORS.items():
        xs = [xi for xi, s in zip(x, states) if s == state]
        ys = [yi for yi, s in zip(y, states) if s == state]
        if xs:
            ax.scatter(xs, ys, s=1, color=color, label=state)
    ax.set_aspect("equal")
    ax.legend(markerscale=8, fontsize=8)
    ax.set_title("ground track")

    ax = axes[1]
    terrain = [zi - di for zi, di in zip(z, dist)]
    ax.fill_between(t, [ti + 50 for ti in terrain], [ti + 120 for ti in terrain],
                    color="lightblue", alpha=0.5, label="distance band")
    ax.plot(t, terrain, color="saddlebrown", lw=1, label="terrain under vehicle")
    for state, color in STATE_COLORS.items():
        ts = [ti for ti, s in zip(t, states) if s == state]
        zs = [zi for zi, s in zip(z, states) if s == state]
        if ts:
            ax.scatter(ts, zs, s=1, color=color)
    ax.set_title("altitude vs time (state-colored)")
    ax.legend(fontsize=8)

    ax = axes[2]
    q = report.get("q_series") or []
    c = report.get("coverage_series") or []
    if q:
        ax.semilogy([p[0] for p in q], [max(p[1], 1e-9) for p in q], label="mean CRB")
    if c:
        ax2 = ax.twinx()
        ax2.plot([p[0] for p in c], [p[1] for p in c], color="green", label="coverage")
        ax2.set_ylim(0, 1.05)
    ax.set_title("map quality / coverage")
    ax.set_xlabel("t [s]")

    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    print(f"wrote {out_png}")


if __name__ == "__main__":
    main()
