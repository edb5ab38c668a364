import io
import logging

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

logger = logging.getLogger(__name__)


def loglog_svg(
    points, fit=None, predicted=None, xlabel="eps", title="", salt="sle-armlab"
):
    """
    Static SVG of a log-log scatter with the fitted line and a guide line of the
    predicted slope through the weighted centre of the data

    The output is byte-stable for equal inputs and salt.

    :param points: (list of GridPoint) estimates; zero estimates are not drawn
    :param fit: (ExponentFit) optional
    :param predicted: (float) optional: slope of the guide line
    :return: (str) SVG document
    """
    usable = [p for p in points if p.p_hat > 0]
    fig = Figure(figsize=(5.0, 4.0))
    ax = fig.add_subplot(1, 1, 1)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("estimate")
    if title:
        ax.set_title(title)

    if usable:
        xs = np.array([p.grid_value for p in usable])
        ys = np.array([p.p_hat for p in usable])
        errs = np.array([p.stderr for p in usable])
        lower = np.minimum(errs, ys * 0.999)
        ax.errorbar(
            xs, ys, yerr=[lower, errs], fmt="o", color="black", label="estimate"
        )
        span = np.geomspace(xs.min(), xs.max(), 50)
        if fit is not None:
            ax.plot(
                span,
                np.exp(fit.intercept) * span**fit.slope,
                color="tab:blue",
                label=f"fit {fit.slope:.3f} ± {fit.stderr_slope:.3f}",
            )
        if predicted is not None:
            centre_x = np.exp(np.mean(np.log(xs)))
            centre_y = np.exp(np.mean(np.log(ys)))
            ax.plot(
                span,
                centre_y * (span / centre_x) ** predicted,
                color="tab:red",
                linestyle="--",
                label=f"predicted {predicted:.3f}",
            )
        ax.legend(loc="best")
    else:
        logger.warning("loglog_svg: no positive estimates to draw")

    buffer = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": salt, "svg.fonttype": "path"}):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()
