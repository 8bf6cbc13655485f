"""Log-log figure of W1 against the step size."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PARAMS = {
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 5,
    "figure.figsize": (4.8, 3.6),
    "svg.hashsalt": "zvonkin-em",  # stable element ids
    "svg.fonttype": "none",
}
COLORS = {"transformed": "#08589e", "naive": "#d95f0e"}


def plot_rates(result, path):
    """Markers for measured W1 (with CI bars), one fitted line per scheme.

    Artists carry gids ``data-<scheme>`` and ``fit-<scheme>`` so the SVG can be
    inspected programmatically.
    """
    from .harness import primary_model

    model = primary_model(result.config.problem)
    with plt.rc_context(PARAMS):
        fig, ax = plt.subplots()
        for scheme, color in COLORS.items():
            rows = [r for r in result.rows if r.scheme == scheme and np.isfinite(r.w1)]
            if not rows:
                continue
            eta = np.array([r.eta for r in rows])
            w1 = np.array([r.w1 for r in rows])
            ci = np.array([r.w1_ci if np.isfinite(r.w1_ci) else 0.0 for r in rows])
            ax.errorbar(eta, w1, yerr=ci, fmt="none", ecolor=color, alpha=0.5, capsize=2)
            ax.plot(eta, w1, "o", color=color, label=f"{scheme} W1", gid=f"data-{scheme}")
            floor = np.array([r.floor for r in rows])
            ax.plot(eta, 2 * floor, ":", color=color, alpha=0.6, label=f"{scheme} 2 x floor")
            fit = result.fits.get(f"{scheme}/{model}")
            if fit is not None:
                grid = np.geomspace(eta.min(), eta.max(), 50)
                line = np.exp(fit.log_constant) * grid ** fit.exponent
                if model == "PowerLog":
                    line = line * np.abs(np.log(grid))
                ax.plot(grid, line, "-", color=color, gid=f"fit-{scheme}",
                        label=f"{model} p = {fit.exponent:.3f}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(r"step size $\eta$")
        ax.set_ylabel(r"$W_1$ to reference")
        ax.set_title(result.config.problem.name)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
