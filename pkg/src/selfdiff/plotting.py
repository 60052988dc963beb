"""Figures written next to the CSV outputs of an experiment run.

Rendering goes through the non-interactive Agg backend; every function takes
plain arrays and a target path so it can be reused outside the runner.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def sample_paths(times, X, Y, mu_bar, path):
    """X, Y and the running mean for a handful of paths (first coordinate)."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    for k in range(X.shape[0]):
        axes[0].plot(times, X[k, :, 0], lw=0.8)
        axes[1].plot(times, Y[k, :, 0], lw=0.8)
        axes[2].plot(times, mu_bar[k, :, 0], lw=0.8)
    for ax, lab in zip(axes, ("X", "Y = X - mubar", "mubar")):
        ax.set_ylabel(lab)
    axes[-1].set_xlabel("t")
    if times[-1] / max(times[1], 1e-12) > 1e3:
        axes[-1].set_xscale("symlog", linthresh=1.0)
    _save(fig, path)


def moments_vs_oracle(times, emp_mean, emp_var, orc_mean, orc_var, label, path):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(times, emp_mean, "o", ms=3, label="ensemble")
    a1.plot(times, orc_mean, "-", label="oracle")
    a1.set_title(f"mean of {label}")
    a2.plot(times, emp_var, "o", ms=3, label="ensemble")
    a2.plot(times, orc_var, "-", label="oracle")
    a2.set_title(f"variance of {label}")
    for ax in (a1, a2):
        ax.set_xlabel("t")
        ax.legend()
    _save(fig, path)


def histogram(centers, mass, path, reference=None, markers=(), title=""):
    """Bar histogram of probability mass; ``reference`` is a density on the centers."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = centers[1] - centers[0] if len(centers) > 1 else 1.0
    ax.bar(centers, mass / width, width=width, alpha=0.6, label="occupation")
    if reference is not None:
        ax.plot(centers, reference, "k-", lw=1.2, label="limit")
    for m in markers:
        ax.axvline(m, color="r", lw=0.8, ls="--")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def log_rate(times, X, slopes, path):
    """X against log t for a few paths plus the histogram of fitted slopes."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 3.5))
    mask = times > 0
    for k in range(min(10, X.shape[0])):
        a1.plot(np.log(times[mask]), X[k, mask, 0], lw=0.8)
    a1.set_xlabel("log t")
    a1.set_ylabel("X")
    finite = slopes[np.isfinite(slopes)]
    if finite.size:
        a2.hist(finite, bins=60)
    a2.set_xlabel("slope of X on log t")
    _save(fig, path)


def envelope(times, scaled, c_env, path):
    """|Y_t - m| sqrt(g / log G) for a few paths against the constant band."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for k in range(min(20, scaled.shape[0])):
        ax.plot(times, scaled[k], lw=0.5)
    ax.axhline(c_env, color="k", ls="--")
    ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("scaled deviation")
    _save(fig, path)


def trend(x, y, xlabel, ylabel, path, logx=False, logy=False, reference=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(x, y, "o-")
    if reference is not None:
        ax.plot(x, reference, "k--", lw=0.8)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    _save(fig, path)


def gaussian_density(x, variance):
    return np.exp(-0.5 * x * x / variance) / math.sqrt(2 * math.pi * variance)
