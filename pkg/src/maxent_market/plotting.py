"""Plot-ready CSVs and the figures drawn from them."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .density import GammaLaw
from .reporting import write_csv

FIGURE_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


class MissingReport(KeyError):
    pass


def _need(artifacts: dict, key: str):
    if key not in artifacts:
        raise MissingReport(f"upstream report {key!r} is missing")
    return artifacts[key]


def density_overlay_rows(y, y_bar: float, bins: int = 120, y_max: float = 8.0):
    counts, edges = np.histogram(y, bins=bins, range=(0.0, y_max))
    width = np.diff(edges)
    empirical = counts / (len(y) * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    analytic = GammaLaw(2.0, 2.0 / y_bar).pdf(centers)
    return zip(centers, empirical, analytic)


def emit_plot_data(artifacts: dict, out_dir, keys=None) -> list[Path]:
    """Write plot-ready CSVs for the artifacts a verification run collected.

    ``keys`` restricts the output; requesting a key whose upstream report is
    absent raises ``MissingReport``.
    """
    out = Path(out_dir)
    wanted = keys if keys is not None else [k for k in ("density_overlay", "defect_curve", "relative_entropy", "tfit", "phi_trace") if k in artifacts]
    written = []
    for key in wanted:
        art = _need(artifacts, key)
        if key == "density_overlay":
            written.append(write_csv(out / "density_overlay.csv", ["y", "empirical", "analytic"], density_overlay_rows(art["y"], art["y_bar"])))
        elif key == "defect_curve":
            c = art["curve"]
            rows = zip(c.times, c.mean, c.ci_low, c.ci_high, c.defect, 1.0 - np.asarray(art["analytic"]))
            written.append(write_csv(out / "defect_curve.csv", ["t", "mean_b_hat", "ci_low", "ci_high", "defect", "analytic_defect"], rows))
        elif key == "relative_entropy":
            reps = art["reports"]
            t = np.array([r.t for r in reps])
            mc = np.array([r.mc_value for r in reps])
            # least-squares slope through the origin
            slope = float(t @ mc / (t @ t)) if np.any(t > 0) else float("nan")
            rows = [(r.t, r.mc_value, r.mc_se, r.analytic_value, slope, -art["n"] * art["a"]) for r in reps]
            written.append(write_csv(out / "relative_entropy.csv", ["t", "mc", "se", "analytic", "slope", "analytic_slope"], rows))
        elif key == "tfit":
            probs, theo, emp = art["qq"]
            written.append(write_csv(out / "tfit_qq.csv", ["p", "theoretical", "empirical"], zip(probs, theo, emp)))
        elif key == "phi_trace":
            rows = [(s, stage, f, *c) for s, stage, c, f in art]
            width = max((len(c) for _, _, c, _ in art), default=0)
            header = ["start", "stage", "objective"] + [f"c{i}" for i in range(width)]
            written.append(write_csv(out / "phi_trace.csv", header, rows))
        else:
            raise MissingReport(f"no plot data defined for {key!r}")
    return written


def _read(path: Path):
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for i, h in enumerate(header):
        try:
            cols[h] = np.array([float(r[i]) for r in body])
        except ValueError:
            cols[h] = np.array([r[i] for r in body])
    return cols


def render_figures(out_dir) -> list[Path]:
    """Draw one PNG per plot-data CSV present in ``out_dir``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    written = []
    with plt.rc_context(FIGURE_STYLE):
        p = out / "density_overlay.csv"
        if p.exists():
            d = _read(p)
            fig, ax = plt.subplots()
            ax.bar(d["y"], d["empirical"], width=d["y"][1] - d["y"][0], alpha=0.4, label="simulated")
            ax.plot(d["y"], d["analytic"], "k-", lw=1.5, label="gamma, 4 dof")
            ax.set_xlabel("Y")
            ax.set_ylabel("density")
            ax.legend()
            written.append(_save(fig, out / "density_overlay.png"))
        p = out / "defect_curve.csv"
        if p.exists():
            d = _read(p)
            fig, ax = plt.subplots()
            ax.errorbar(d["t"], d["defect"], yerr=[d["ci_high"] - d["mean_b_hat"], d["mean_b_hat"] - d["ci_low"]], fmt="o", capsize=3, label="Monte Carlo, 99% CI")
            ax.plot(d["t"], d["analytic_defect"], "k--", lw=1, label="quadrature")
            ax.set_xlabel("t")
            ax.set_ylabel(r"$1 - E[\hat B_t]$")
            ax.legend()
            written.append(_save(fig, out / "defect_curve.png"))
        p = out / "relative_entropy.csv"
        if p.exists():
            d = _read(p)
            fig, ax = plt.subplots()
            ax.errorbar(d["t"], d["mc"], yerr=3 * d["se"], fmt="o", capsize=3, label="Monte Carlo, 3 SE")
            ax.plot(d["t"], d["analytic"], "k-", lw=1, label="analytic")
            ax.annotate(f"slope {d['slope'][0]:.4f} (analytic {d['analytic_slope'][0]:.4f})", xy=(0.05, 0.08), xycoords="axes fraction")
            ax.set_xlabel("t")
            ax.set_ylabel(r"$E[\ln \Lambda_t]$")
            ax.legend()
            written.append(_save(fig, out / "relative_entropy.png"))
        p = out / "tfit_qq.csv"
        if p.exists():
            d = _read(p)
            fig, ax = plt.subplots()
            ax.plot(d["theoretical"], d["empirical"], ".", ms=3)
            lim = [min(d["theoretical"].min(), d["empirical"].min()), max(d["theoretical"].max(), d["empirical"].max())]
            ax.plot(lim, lim, "k-", lw=0.8)
            ax.set_xlabel("Student-t quantile")
            ax.set_ylabel("empirical quantile")
            written.append(_save(fig, out / "tfit_qq.png"))
    return written


def _save(fig, path: Path) -> Path:
    import matplotlib.pyplot as plt

    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
