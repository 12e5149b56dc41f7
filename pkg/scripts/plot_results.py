#!/usr/bin/env python3
"""Optional plots from the CSV artifacts (requires matplotlib).

    python scripts/plot_results.py results/

Produces convergence, spectrum, and energy-trace figures next to the
CSVs. Purely cosmetic; all quantitative checks live in the test suite.
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_convergence(paths, out):
    fig, ax = plt.subplots(figsize=(5, 4))
    for path in paths:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        dofs = [int(r["dofs"]) for r in rows]
        errs = [float(r["l2"]) for r in rows]
        ax.loglog(dofs, errs, "o-", label=path.stem.replace("_", " "))
    ax.set_xlabel("degrees of freedom")
    ax.set_ylabel("weighted L2 error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


def plot_spectrum(path, out):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    re = [float(r["re"]) for r in rows]
    im = [float(r["im"]) for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(re, im, ".", markersize=3)
    ax.axvline(0.0, color="k", linewidth=0.5)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_title(path.stem.replace("_", " "), fontsize=9)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


def plot_traces(paths, out):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    for path in paths:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        t = [float(r["t"]) for r in rows]
        e = [float(r["energy"]) for r in rows]
        m0 = float(rows[0]["mass"])
        dm = [abs(float(r["mass"]) - m0) for r in rows]
        label = path.stem.replace("_trace", "").replace("_", " ")
        ax1.semilogy(t, [max(v, 1e-18) for v in dm], label=label)
        ax2.plot(t, e, label=label)
    ax1.set_xlabel("t")
    ax1.set_ylabel("|mass(t) - mass(0)|")
    ax2.set_xlabel("t")
    ax2.set_ylabel("energy")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


def main() -> int:
    results = Path(sys.argv[1] if len(sys.argv) > 1 else "results")
    if not results.is_dir():
        print(f"no such directory: {results}", file=sys.stderr)
        return 2
    conv = sorted(p for p in results.glob("table*.csv"))
    if conv:
        plot_convergence(conv, results / "convergence.png")
    for spec in results.glob("*_spectrum.csv"):
        plot_spectrum(spec, spec.with_suffix(".png"))
    traces = sorted(results.glob("*_trace.csv"))
    if traces:
        plot_traces(traces, results / "conservation_energy.png")
    return 0


if __name__ == "__main__":
    sys.exit(main())
