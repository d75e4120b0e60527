"""SVG reports: log-log box-count and L^q fits, exact spectra"""

from pathlib import Path
from typing import Optional, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .estimators import BoxCountResult, LqSpectrum

# fixed metadata keeps the SVG bytes stable between runs
SVG_METADATA = {"Date": None, "Creator": "cascade_lab"}

plt.rcParams["svg.hashsalt"] = "cascade_lab"


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def plot_box_count(result: BoxCountResult, path: Union[str, Path], b: int = 2,
                   theory_slope: Optional[float] = None) -> Path:
    """log_b N_j against j with the fitted line and, if given, the predicted slope"""
    j = np.arange(result.counts.size)
    with np.errstate(divide="ignore"):
        log_n = np.log(result.counts) / np.log(b)

    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(j, log_n, "o", ms=4, label=f"{result.target} counts")
    lo, hi = result.fit.window
    xx = np.linspace(lo, hi, 50)
    ax.plot(xx, result.fit.slope * xx + result.fit.intercept, "-",
            label=f"fit: D={result.fit.slope:.4f}, R²={result.fit.r2:.4f}")
    if theory_slope is not None:
        anchor = result.fit.slope * lo + result.fit.intercept
        ax.plot(xx, anchor + theory_slope * (xx - lo), "--", label=f"predicted: {theory_slope:.4f}")
    ax.axvspan(lo, hi, color="0.9", zorder=0)
    ax.set_xlabel("level j (box size b^-j)")
    ax.set_ylabel("log_b N_j")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return _save(fig, path)


def plot_lq(spectrum: LqSpectrum, path: Union[str, Path], exact: Optional[np.ndarray] = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(spectrum.qs, spectrum.tau_hat, "o", ms=4, label="estimated τ(q)")
    if exact is not None:
        ax.plot(spectrum.qs, exact, "-", label="exact τ(q)")
    ax.set_xlabel("q")
    ax.set_ylabel("τ(q)")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return _save(fig, path)


def spectrum_curves(table: pd.DataFrame) -> pd.DataFrame:
    """Rows of J indexed by h = tau'(q): tau*, graph, range and level-set spectra"""
    inside = table[table["inJ"]]
    level = inside["tau_star"] - inside["tau_prime"]
    return pd.DataFrame({
        "h": inside["tau_prime"].to_numpy(),
        "tau_star": inside["tau_star"].to_numpy(),
        "graph": inside["gammaG"].to_numpy(),
        "range": inside["gammaR"].to_numpy(),
        "level": level.where(level > 0.0).to_numpy(),
    })


def plot_spectrum(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    """tau(q) on the left; tau* with the graph, range and level-set spectra on the right"""
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4.2))
    left.plot(table["q"], table["tau"], "-")
    left.set_xlabel("q")
    left.set_ylabel("τ(q)")

    curves = spectrum_curves(table)
    right.plot(curves["h"], curves["tau_star"], "-", label="τ*")
    right.plot(curves["h"], curves["graph"], "--", label="graph")
    right.plot(curves["h"], curves["range"], ":", label="range")
    right.plot(curves["h"], curves["level"], "-.", label="level set")
    right.set_xlabel("h")
    right.set_ylabel("dimension")
    right.legend(loc="lower right")
    fig.tight_layout()
    return _save(fig, path)
