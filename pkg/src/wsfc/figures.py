"""Figure rendering for the command-line report paths.

Every function takes already computed data and writes one PNG; nothing
here feeds back into metrics or CSV content.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trainer import TrainHistory

_RC = {
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _sample_axis(n_units: int) -> np.ndarray:
    """x positions of the three pitch samples of each unit."""
    base = np.repeat(np.arange(n_units, dtype=float), 3)
    return base + np.tile([-0.2, 0.0, 0.2], n_units)


def decomposition_figure(rows: list[dict], utt_id: str, path: str) -> None:
    """Observed vs reconstructed pitch plus each instance contribution."""
    units = sorted({r["unit"] for r in rows})
    n = len(units)
    x = _sample_axis(n)
    observed = np.full((n, 3), np.nan)
    recon = np.full((n, 3), np.nan)
    dur_obs = np.full(n, np.nan)
    dur_rec = np.full(n, np.nan)
    comps: dict[str, np.ndarray] = {}
    for r in rows:
        i = r["unit"]
        observed[i] = [r["observed_p1"], r["observed_p2"], r["observed_p3"]]
        recon[i] = [r["reconstruction_p1"], r["reconstruction_p2"],
                    r["reconstruction_p3"]]
        dur_obs[i] = r["observed_dur"]
        dur_rec[i] = r["reconstruction_dur"]
        if r["component"]:
            track = comps.setdefault(r["component"], np.full((n, 3), np.nan))
            track[i] = [r["contrib_p1"], r["contrib_p2"], r["contrib_p3"]]
    with plt.rc_context(_RC):
        fig, (ax_p, ax_d) = plt.subplots(
            2, 1, figsize=(max(6.0, 0.9 * n), 6.0), sharex=True,
            gridspec_kw={"height_ratios": [3, 1]})
        for name, track in comps.items():
            ax_p.plot(x, track.reshape(-1), lw=1.0, alpha=0.7, label=name)
        ax_p.plot(x, observed.reshape(-1), "k.", ms=5, label="observed")
        ax_p.plot(x, recon.reshape(-1), "r-", lw=1.6, label="reconstruction")
        ax_p.set_ylabel("pitch (semitones)")
        ax_p.set_title(f"decomposition of {utt_id}")
        ax_p.legend(ncol=2)
        ax_d.step(np.arange(n), dur_obs, where="mid", color="k",
                  label="observed")
        ax_d.step(np.arange(n), dur_rec, where="mid", color="r",
                  label="reconstruction")
        ax_d.set_ylabel("duration coeff")
        ax_d.set_xlabel("rhythmic unit")
        ax_d.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def weight_distribution_figure(groups: dict[tuple[str, str], np.ndarray],
                               path: str, title: str = "gate distributions"
                               ) -> None:
    """One panel per function: boxplots of gate values across cells."""
    functions = sorted({f for f, _ in groups})
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, max(len(functions), 1),
                                 figsize=(2.2 * max(len(functions), 1) + 1, 3.4),
                                 squeeze=False, sharey=True)
        for ax, f in zip(axes[0], functions):
            cells = [c for g, c in groups if g == f]
            data = [groups[(f, c)] for c in cells]
            ax.boxplot(data, tick_labels=cells)
            ax.axhline(1.0, color="grey", lw=0.8, ls="--")
            ax.set_title(f)
            ax.tick_params(axis="x", rotation=45)
        axes[0][0].set_ylabel("gate value")
        fig.suptitle(title, fontsize=10)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def history_figure(history: TrainHistory, path: str) -> None:
    """Train and validation pitch RMSE across outer iterations."""
    train = [r.train_rmse for r in history.records]
    val = [r.val_rmse for r in history.records]
    phases = [r.phase for r in history.records]
    x = np.arange(len(train))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        ax.plot(x, train, "o-", label="train")
        if not all(np.isnan(v) for v in val):
            ax.plot(x, val, "s-", label="validation")
        for i in range(1, len(phases)):
            if phases[i] != phases[i - 1]:
                ax.axvline(i - 0.5, color="grey", lw=0.8, ls=":")
                ax.text(i - 0.4, ax.get_ylim()[1], phases[i], fontsize=7,
                        va="top", color="grey")
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("pitch RMSE (semitones)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def rmse_histogram_figure(reports: dict[str, np.ndarray], path: str) -> None:
    """Overlayed per-utterance RMSE histograms, one entry per label."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.6, 3.6))
        for label, values in reports.items():
            ax.hist(values, bins=30, alpha=0.55, label=label)
        ax.set_xlabel("per-utterance pitch RMSE (semitones)")
        ax.set_ylabel("utterances")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def sweep_figure(tables: dict[tuple[int, float], dict], path: str) -> None:
    """Mean gate per cell across the (batch size, regularization) grid.

    tables maps grid points to {(function, cell): (mean, std)}.
    """
    keys = sorted(tables)
    cells = sorted({fc for tab in tables.values() for fc in tab})
    x = np.arange(len(keys))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(keys)), 3.8))
        for f, c in cells:
            means = [tables[k].get((f, c), (np.nan, np.nan))[0] for k in keys]
            stds = [tables[k].get((f, c), (np.nan, np.nan))[1] for k in keys]
            ax.errorbar(x, means, yerr=stds, marker="o", capsize=3,
                        lw=1.0, label=f"{f}/{c}")
        ax.axhline(1.0, color="grey", lw=0.8, ls="--")
        ax.set_xticks(x, [f"B={b}\nreg={r:g}" for b, r in keys])
        ax.set_ylabel("gate value")
        ax.legend(ncol=2, fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
