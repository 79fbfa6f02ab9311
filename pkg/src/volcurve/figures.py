"""Matplotlib renderings of the report outputs.

Every figure mirrors one of the delimited outputs: the volume-effect curve
on the log-odds and probability scales (band, +/- tau lines, volume
histogram), per-config study panels, and the provider volume mean-vs-sd
scatter. Files are written headlessly (Agg backend).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

BAND_COLOR = "#9ecae1"
CURVE_COLOR = "#08519c"
TAU_COLOR = "#666666"
HIST_COLOR = "#cccccc"
TRUTH_COLOR = "#d62728"


def _hist_axis(ax, volume_hist):
    values, counts = volume_hist
    if not len(values):
        return
    twin = ax.twinx()
    width = 0.9 * (np.min(np.diff(np.unique(values))) if len(values) > 1 else 1.0)
    twin.bar(values, counts, width=width, color=HIST_COLOR, zorder=0)
    twin.set_ylabel("providers", color="#888888")
    twin.tick_params(axis="y", colors="#888888")
    twin.set_ylim(0, max(counts) * 3.0)
    twin.set_zorder(ax.get_zorder() - 1)
    ax.patch.set_visible(False)


def render_curve_figure(curve, volume_hist, path):
    """Log-odds volume effect with simultaneous band and +/- tau lines."""
    fig, ax = plt.subplots(figsize=(8, 5))
    _hist_axis(ax, volume_hist)
    ax.fill_between(
        curve.grid,
        curve.band_lower,
        curve.band_upper,
        color=BAND_COLOR,
        alpha=0.6,
        label=f"{100 * (1 - curve.alpha):g}% simultaneous band",
    )
    ax.plot(curve.grid, curve.f_hat, color=CURVE_COLOR, lw=2, label="volume effect")
    if curve.tau_hat is not None:
        tau = curve.tau_hat
        ax.plot(curve.grid, curve.f_hat + tau, "--", color=TAU_COLOR, lw=1,
                label="effect +/- tau")
        ax.plot(curve.grid, curve.f_hat - tau, "--", color=TAU_COLOR, lw=1)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel("provider volume")
    ax.set_ylabel("effect on log-odds")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_probability_figure(prob, volume_hist, path):
    """Outcome probability for an average patient across provider volumes."""
    fig, ax = plt.subplots(figsize=(8, 5))
    _hist_axis(ax, volume_hist)
    ax.fill_between(
        prob.grid,
        prob.band_lower,
        prob.band_upper,
        color=BAND_COLOR,
        alpha=0.6,
        label=f"{100 * (1 - prob.alpha):g}% simultaneous band",
    )
    ax.plot(prob.grid, prob.pi_star, color=CURVE_COLOR, lw=2, label="probability")
    ax.plot(prob.grid, prob.plus_tau, "--", color=TAU_COLOR, lw=1,
            label="probability at +/- tau")
    ax.plot(prob.grid, prob.minus_tau, "--", color=TAU_COLOR, lw=1)
    ax.set_xlabel("provider volume")
    ax.set_ylabel("outcome probability (average patient)")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _jitter(rng, n, scale):
    return (rng.random(n) - 0.5) * scale


def render_study_figures(results, outdir, truth_or=None):
    """Per-config panels: odds-ratio spread, tau estimates, smooth-test p-values."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir_paths = []
    ok = [r for r in results if r.status == "ok"]
    if not ok:
        return outdir_paths
    configs = sorted({r.config_index for r in ok})
    labels = [f"{next(r.shape for r in ok if r.config_index == c)}\nI={next(r.I for r in ok if r.config_index == c)}" for c in configs]
    positions = np.arange(len(configs), dtype=float)
    rng = np.random.default_rng(0)

    def by_config(attr):
        return [
            np.array([getattr(r, attr) for r in ok if r.config_index == c])
            for c in configs
        ]

    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(configs)), 5))
    ax.boxplot(by_config("or_hat"), positions=positions, widths=0.6)
    if truth_or is not None:
        ax.axhline(truth_or, color=TRUTH_COLOR, lw=1.2, label="true value")
        ax.legend(fontsize=9)
    ax.set_xticks(positions, labels, fontsize=8)
    ax.set_ylabel("odds ratio estimate")
    fig.tight_layout()
    p = str(outdir / "study_or.png")
    fig.savefig(p, dpi=150)
    plt.close(fig)
    outdir_paths.append(p)

    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(configs)), 5))
    for pos, vals, tau_true in zip(
        positions, by_config("tau_hat"), by_config("tau_true")
    ):
        ax.plot(pos + _jitter(rng, len(vals), 0.4), vals, ".", color=CURVE_COLOR, ms=4)
        ax.hlines(tau_true[0], pos - 0.3, pos + 0.3, color=TRUTH_COLOR, lw=1.2)
    ax.set_xticks(positions, labels, fontsize=8)
    ax.set_ylabel("tau estimate")
    fig.tight_layout()
    p = str(outdir / "study_tau.png")
    fig.savefig(p, dpi=150)
    plt.close(fig)
    outdir_paths.append(p)

    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(configs)), 5))
    for pos, vals in zip(positions, by_config("p_smooth")):
        shown = np.maximum(vals, 1e-16)
        ax.semilogy(
            pos + _jitter(rng, len(vals), 0.4), shown, ".", color=CURVE_COLOR, ms=4
        )
    ax.axhline(0.05, ls="--", color="black", lw=0.8)
    ax.axhline(0.005, ls=":", color="black", lw=0.8)
    ax.set_xticks(positions, labels, fontsize=8)
    ax.set_ylabel("p-value of the volume-effect test")
    fig.tight_layout()
    p = str(outdir / "study_p.png")
    fig.savefig(p, dpi=150)
    plt.close(fig)
    outdir_paths.append(p)
    return outdir_paths


def render_variability_figure(stats, path):
    """Provider volume mean vs. standard deviation scatter."""
    fig, ax = plt.subplots(figsize=(7, 5))
    means = [s.mean for s in stats]
    sds = [s.sd for s in stats]
    ax.plot(means, sds, "o", ms=4, color=CURVE_COLOR, alpha=0.7)
    ax.set_xlabel("mean yearly volume")
    ax.set_ylabel("standard deviation of yearly volume")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
