"""PNG figures written next to CLI outputs (non-interactive backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trace(trace, path, max_vehicles=10):
    """Spacing errors per vehicle and the platoon error sum."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    e = trace.e
    for i in range(min(trace.config.N, max_vehicles)):
        ax1.plot(trace.t, e[:, i], lw=0.8, label=f"e{i + 1}")
    ax1.set_ylabel("spacing error [m]")
    ax1.legend(ncol=5, fontsize=7)
    ax2.plot(trace.t, e.sum(axis=1), color="k", lw=0.9)
    ax2.set_ylabel("sum of errors [m]")
    ax2.set_xlabel("t [s]")
    return _save(fig, path)


def plot_sweep(sweep, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.loglog(sweep.w, np.maximum(sweep.magnitude, 1e-300))
    ax.axhline(1.0, color="grey", ls="--", lw=0.8)
    if sweep.supremum > 0:
        ax.plot([sweep.w_at_supremum], [sweep.supremum], "ro", ms=4)
    ax.set_xlabel("w [rad/s]")
    ax.set_ylabel("|Gamma(jw)|")
    return _save(fig, path)


def plot_growth(growth, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    sizes = [row.N for row in growth.table]
    ax.semilogy(sizes, [row.max_signed_sum for row in growth.table], "o-", label="max |sum e_i|")
    ax.semilogy(sizes, [row.max_abs_sum for row in growth.table], "s--", label="max sum |e_i|")
    ax.set_xlabel("platoon size N")
    ax.legend()
    return _save(fig, path)


def plot_probe(result, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ns = np.array([s.n for s in result.samples])
    mags = result.magnitudes
    finite = np.isfinite(mags) & (mags > 0)
    ax.loglog(ns[finite], mags[finite])
    ax.axhline(result.bound, color="grey", ls="--", lw=0.8)
    if result.divergence_threshold_n is not None:
        ax.axvline(result.divergence_threshold_n, color="r", lw=0.8)
    ax.set_xlabel("n")
    ax.set_ylabel("|bracket|")
    ax.set_title(f"{result.path_label}: {result.verdict}")
    return _save(fig, path)
