#!/usr/bin/env python3
"""Render PNG plots from figure CSV tables produced by `qfeedback figure`.

Usage: plot_figures.py <runs-root> [--out DIR]

Scans <runs-root> for fig*-<hash>/fig*.csv directories and writes one PNG
per table.  Plotting is intentionally minimal; the CSV tables are the
deliverable and this script only exists for quick visual checks.
"""

import argparse
import csv
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {name: [] for name in header}
    for row in body:
        for name, cell in zip(header, row):
            cols[name].append(float(cell) if cell else float("nan"))
    return cols


def groups(cols, key):
    seen = []
    for v in cols[key]:
        if v not in seen:
            seen.append(v)
    return seen


def plot_grouped(ax, cols, xkey, ykey, gkey, logx=False):
    for g in groups(cols, gkey):
        xs = [x for x, gg in zip(cols[xkey], cols[gkey]) if gg == g]
        ys = [y for y, gg in zip(cols[ykey], cols[gkey]) if gg == g]
        ax.plot(xs, ys, marker=".", label=f"{gkey}={g:g}")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xkey)
    ax.set_ylabel(ykey)
    ax.legend(fontsize=7)


def render(fig_id, cols, out_png):
    fig, ax = plt.subplots(figsize=(5, 3.4), dpi=150)
    if fig_id == "fig2":
        plot_grouped(ax, cols, "gamma_over_lambda", "P_ss_minus1",
                     "tau0_in_1_over_lambda", logx=True)
    elif fig_id == "fig3":
        plot_grouped(ax, cols, "gamma_over_lambda", "cov_k_sigma_z",
                     "tau0_in_1_over_lambda")
        plot_grouped(ax, cols, "gamma_over_lambda", "cov_k_sigma_y",
                     "tau0_in_1_over_lambda")
    elif fig_id == "fig4":
        plot_grouped(ax, cols, "lambda_tau0", "mutual_information", "nbar")
    elif fig_id == "fig5":
        ax.plot(cols["time_us"], cols["sz_feedback"], label="feedback")
        ax.plot(cols["time_us"], cols["sz_free_decay"], label="free decay")
        ax.set_xlabel("time_us")
        ax.set_ylabel("sigma_z")
        ax.legend(fontsize=7)
    elif fig_id == "fig6":
        plot_grouped(ax, cols, "gamma_over_lambda", "p_minus_feedback",
                     "lambda_dt")
        plot_grouped(ax, cols, "gamma_over_lambda", "p_minus_no_feedback",
                     "lambda_dt")
    elif fig_id == "fig7":
        ax.plot(cols["lambda_dt"], cols["F_ss_dt"], label="lag 1")
        ax.plot(cols["lambda_dt"], cols["F_ss_2dt"], label="lag 2")
        ax.set_xscale("log")
        ax.set_xlabel("lambda_dt")
        ax.set_ylabel("stationary correlation")
        ax.legend(fontsize=7)
    else:
        # generic fallback: first column on x, the rest on y
        keys = list(cols)
        for ykey in keys[1:]:
            ax.plot(cols[keys[0]], cols[ykey], marker=".", label=ykey)
        ax.set_xlabel(keys[0])
        ax.legend(fontsize=7)
    ax.set_title(fig_id)
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", help="directory containing fig*-<hash>/ runs")
    parser.add_argument("--out", default=None,
                        help="PNG output directory (default: alongside CSVs)")
    args = parser.parse_args(argv)

    root = Path(args.root)
    tables = sorted(root.glob("fig*/fig*.csv"))
    if not tables:
        print(f"no figure tables under {root}", file=sys.stderr)
        return 1
    for path in tables:
        fig_id = path.stem
        out_dir = Path(args.out) if args.out else path.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        out_png = out_dir / f"{fig_id}.png"
        render(fig_id, read_table(path), out_png)
        print(out_png)
    return 0


if __name__ == "__main__":
    sys.exit(main())
