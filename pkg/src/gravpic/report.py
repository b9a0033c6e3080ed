"""Delimited output and companion figures.

CSV files are the contract; every figure is rendered next to the CSV it
summarizes.  Floats are written with ``repr`` so that re-running a config
reproduces the files byte for byte.
"""

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fields import field_profile

FIELD_COLUMNS = ("r", "rho", "p", "j", "m", "lam", "mu", "mu'", "lam'", "lam_dot")

DIAG_COLUMNS = (
    "index",
    "time",
    "adm_mass",
    "particle_number",
    "min_one_minus",
    "max_rho",
    "min_lam",
    "max_mu",
    "max_lam_plus_mu",
    "max_abs_rdot",
    "min_weight",
    "min_radius",
    "max_abs_w",
    "note",
)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_diagnostics(path, records):
    rows = []
    for rec in records:
        d = rec.diagnostics
        rows.append(
            [rec.index, rec.time]
            + [d.get(k, "") for k in DIAG_COLUMNS[2:-1]]
            + [rec.note]
        )
    _write_rows(path, DIAG_COLUMNS, rows)


def write_snapshot(path, ensemble):
    rows = [
        (n, ensemble.R[n], ensemble.W[n], ensemble.L[n], ensemble.M[n])
        for n in range(len(ensemble))
    ]
    _write_rows(path, ("n", "R", "W", "L", "M"), rows)


def write_field_profile(path, view, grid):
    prof = field_profile(view, grid)
    cols = [grid, prof.rho, prof.p, prof.j, prof.m, prof.lam, prof.mu,
            prof.mu_prime, prof.lam_prime, prof.lam_dot]
    _write_rows(path, FIELD_COLUMNS, zip(*cols))


def write_order_table(path, param_name, params, columns):
    header = [param_name] + list(columns)
    rows = []
    for k, p in enumerate(params):
        rows.append([p] + [columns[name][k] for name in columns])
    _write_rows(path, header, rows)


def write_scan_table(path, runs, bracket):
    rows = [
        (run.amplitude, run.label, run.steps, run.peak_compactness, run.detail)
        for run in runs
    ]
    rows.append((bracket[0], "BRACKET_LO", "", "", ""))
    rows.append((bracket[1], "BRACKET_HI", "", "", ""))
    _write_rows(path, ("amplitude", "label", "steps", "peak_2m_over_r", "detail"), rows)


# ---------------------------------------------------------------------------
# figures


def render_profile(path, view, grid):
    prof = field_profile(view, grid)
    fig, axes = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(grid, prof.rho, label="rho")
    axes[0].plot(grid, prof.p, label="p")
    axes[0].plot(grid, prof.j, label="j")
    axes[0].set_ylabel("sources")
    axes[0].legend(loc="best", fontsize=8)
    axes[1].plot(grid, prof.m, label="m")
    axes[1].plot(grid, prof.lam, label="lam")
    axes[1].plot(grid, prof.mu, label="mu")
    axes[1].set_xlabel("r")
    axes[1].set_ylabel("metric")
    axes[1].legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_diagnostics(path, records):
    t = [rec.time for rec in records]
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    axes[0].plot(t, [r.diagnostics["adm_mass"] for r in records], label="total mass")
    axes[0].plot(
        t, [r.diagnostics["particle_number"] for r in records], label="particle number"
    )
    axes[0].set_ylabel("conserved quantities")
    axes[0].legend(loc="best", fontsize=8)
    axes[1].plot(
        t, [1.0 - r.diagnostics["min_one_minus"] for r in records], label="max 2m/r"
    )
    axes[1].axhline(1.0, color="k", lw=0.8, ls="--")
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("compactness")
    axes[1].legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_order(path, xlabel, params, series, slope):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, values in series.items():
        ax.loglog(params, values, "o-", label=name)
    if slope is not None and len(params) >= 2:
        p = np.asarray(params, dtype=float)
        anchor = list(series.values())[0][0]
        ax.loglog(
            p,
            anchor * (p / p[0]) ** slope,
            "k--",
            lw=0.8,
            label=f"slope {slope:.2f}",
        )
    ax.set_xlabel(xlabel)
    ax.set_ylabel("error")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_scan(path, runs, bracket):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for run in runs:
        collapse = run.label == "COLLAPSE"
        ax.semilogx(
            [run.amplitude],
            [1.0 if collapse else 0.0],
            "rx" if collapse else "go",
        )
    ax.axvspan(bracket[0], bracket[1], color="0.85")
    ax.set_yticks([0, 1], labels=["disperse", "collapse"])
    ax.set_xlabel("amplitude")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
