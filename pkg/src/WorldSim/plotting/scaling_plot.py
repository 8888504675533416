import logging
import warnings
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import plotly.graph_objects as go

from WorldSim.scaling.power_law import PowerLawFit, ema_smooth
from WorldSim.scaling.study import RunRecord, fit_curve

logger = logging.getLogger(__name__)


def plot_scaling_fit(
    records: Sequence[RunRecord],
    fit: PowerLawFit,
    ema_decay: float = 0.0,
    held_out: Optional[str] = None,
    fig=None,
) -> go.Figure:
    """
    Plots the final validation loss of every successful run against its compute,
    together with the fitted law.
    """
    if fig is None:
        fig = go.Figure()
    runs = [r for r in records if not r.failed]
    if not runs:
        raise ValueError("No successful run to plot")
    fitted = [r for r in runs if r.name != held_out]
    fig.add_trace(
        go.Scatter(
            x=[r.compute for r in fitted],
            y=[r.final_loss(ema_decay) for r in fitted],
            mode="markers",
            name="Fitted runs",
            text=[r.name for r in fitted],
        )
    )
    extra = [r for r in runs if r.name == held_out]
    if extra:
        fig.add_trace(
            go.Scatter(
                x=[r.compute for r in extra],
                y=[r.final_loss(ema_decay) for r in extra],
                mode="markers",
                marker_symbol="star",
                marker_size=12,
                name="Held-out run",
                text=[r.name for r in extra],
            )
        )
    compute = [r.compute for r in runs]
    curve = fit_curve(fit, min(compute) / 2, max(compute) * 2)
    fig.add_trace(
        go.Scatter(
            x=curve[:, 0],
            y=curve[:, 1],
            mode="lines",
            name=f"{fit.c:.3f} + (C / {fit.a:.3g})^{fit.b:.3f}",
        )
    )
    fig.update_xaxes(type="log", title_text="Compute (FLOPs)")
    fig.update_yaxes(title_text="Validation loss (nats/token)")
    return fig


def plot_loss_curves(records: Sequence[RunRecord], ema_decay: float = 0.0, fig=None) -> go.Figure:
    """Plots the validation curve of every successful run."""
    if fig is None:
        fig = go.Figure()
    for record in records:
        if record.failed:
            continue
        steps = [step for step, _ in record.loss_curve]
        losses = ema_smooth([loss for _, loss in record.loss_curve], ema_decay)
        fig.add_trace(go.Scatter(x=steps, y=losses, mode="lines", name=record.name))
    fig.update_xaxes(title_text="Step")
    fig.update_yaxes(title_text="Validation loss (nats/token)")
    return fig


def plot_perplexity_profiles(profiles: Mapping[str, Sequence[float]], fig=None) -> go.Figure:
    """Plots per-token perplexity against the token index, one line per profile."""
    if fig is None:
        fig = go.Figure()
    for name, values in profiles.items():
        values = np.asarray(values, dtype=float)
        fig.add_trace(
            go.Scatter(x=np.arange(len(values)), y=values, mode="lines", name=name)
        )
    fig.update_xaxes(title_text="Token index")
    fig.update_yaxes(type="log", title_text="Perplexity")
    return fig


def save_figure(fig: go.Figure, path: Union[str, Path]) -> Path:
    """
    Writes the figure as an image, or as HTML for a ``.html`` path.

    Image export needs kaleido; without it the figure is written as HTML next to the
    requested path and a warning is issued.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".html":
        fig.write_html(path)
        return path
    try:
        fig.write_image(path)
    except (ValueError, ImportError, RuntimeError) as e:
        fallback = path.with_suffix(".html")
        warnings.warn(f"Could not export {path.name} ({e}); writing {fallback.name} instead")
        fig.write_html(fallback)
        return fallback
    logger.info("Wrote figure %s", path)
    return path
