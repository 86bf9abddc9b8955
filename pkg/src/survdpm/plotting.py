"""Figure rendering for run reports.

Every CLI report path writes PNG figures next to its CSV/JSON outputs:
training loss curves, per-time AUC/Brier series, generated-vs-analytic
survival curves, and sweep summaries. Uses the Agg backend so runs work
headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def loss_history(history: dict, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(history["train_loss"], label="train", lw=1.0)
    if history.get("val_loss"):
        ax.plot(history["val_loss"], label="validation", lw=1.0)
    if history.get("best_epoch") is not None:
        ax.axvline(history["best_epoch"], color="grey", ls="--", lw=0.8, label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("noise-prediction MSE")
    ax.legend()
    _save(fig, path)


def metric_series(times, auc_values, bs_times, bs_values, path):
    """Per-time AUC(t) and Brier(t) panels."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(times, auc_values, marker=".", ms=3, lw=0.8)
    ax1.set_xlabel("time")
    ax1.set_ylabel("AUC(t)")
    ax1.set_ylim(0, 1)
    ax2.plot(bs_times, bs_values, marker=".", ms=3, lw=0.8, color="tab:red")
    ax2.set_xlabel("time")
    ax2.set_ylabel("Brier(t)")
    _save(fig, path)


def survival_overlay(grid, curve_sets: dict[str, np.ndarray], path, title: str = ""):
    """Overlay of survival curves on a common grid; one label per series."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curve_sets.items():
        ax.plot(grid, values, lw=1.2, label=label)
    ax.set_xlabel("time")
    ax.set_ylabel("S(t)")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def ks_table_figure(k_values, regimes: dict[str, list[float]], path):
    """Mean KS distance against the number of generated samples, per regime."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in regimes.items():
        ax.plot(k_values, values, marker="o", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("generated samples per subject (K)")
    ax.set_ylabel("mean KS distance to analytic curve")
    ax.legend()
    _save(fig, path)


def ablation_bars(datasets: list[str], series: dict[str, list[float]], ylabel: str, path):
    fig, ax = plt.subplots(figsize=(max(6, len(datasets) * 1.2), 4))
    width = 0.8 / max(len(series), 1)
    xs = np.arange(len(datasets))
    for j, (label, values) in enumerate(series.items()):
        ax.bar(xs + j * width, values, width=width, label=label)
    ax.set_xticks(xs + width * (len(series) - 1) / 2)
    ax.set_xticklabels(datasets, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path)
