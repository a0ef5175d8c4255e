"""
Figures for the experiment commands: PE ablation bars, the robustness
accuracy-drop heatmap and bench timing curves.
"""

import logging

import numpy as np
from matplotlib.figure import Figure

from views import styles

log = logging.getLogger(__name__)


class MetricsView:
    def __init__(self, figsize=styles.FIGSIZE, dpi=styles.DPI):
        self.figure = Figure(figsize=figsize, dpi=dpi)
        self.figure.patch.set_facecolor(styles.COLOR_BG)

    def plot_pe_ablation(self, rows):
        """Grouped bars: one group per ordering, PE on / off side by side."""
        self.figure.clear()
        ax = self.figure.add_subplot(111)
        orderings = list(dict.fromkeys(row.ordering for row in rows))
        x = np.arange(len(orderings))
        width = 0.38
        for offset, pe in ((-width / 2, True), (width / 2, False)):
            by_ordering = {row.ordering: row for row in rows if row.pe == pe}
            accs = [by_ordering[o].acc for o in orderings]
            errs = [by_ordering[o].std for o in orderings]
            ax.bar(x + offset, accs, width, yerr=errs, capsize=3,
                   color=[styles.ORDERING_COLORS.get(o, styles.COLOR_PATH) for o in orderings],
                   alpha=1.0 if pe else 0.45, label="PE on" if pe else "PE off")
        for i, ordering in enumerate(orderings):
            gap = next(row.gap for row in rows if row.ordering == ordering)
            ax.annotate(f"gap {gap * 100:+.1f}%", (x[i], 1.02), ha="center", color=styles.COLOR_FG)
        ax.set_xticks(x)
        ax.set_xticklabels(orderings)
        ax.set_ylim(0, 1.1)
        ax.set_ylabel("test accuracy")
        ax.set_title("Effect of the positional embedding")
        ax.legend(frameon=False)
        styles.apply_axes_style(ax)
        return self.figure

    def plot_robustness(self, cells, kinds, apply_to, orderings):
        """Accuracy drop per (noise, applied-to) cell, one panel per ordering."""
        self.figure.clear()
        lookup = {(c.kind, c.apply_to, c.ordering): c.drop for c in cells}
        drops = np.array([[[lookup[(k, a, o)] for a in apply_to] for k in kinds] for o in orderings])
        vmax = max(float(np.abs(drops).max()), 1e-3)
        axes = self.figure.subplots(1, len(orderings), squeeze=False)[0]
        for ax, ordering, grid in zip(axes, orderings, drops):
            image = ax.imshow(grid, cmap=styles.HEATMAP_CMAP, vmin=-vmax, vmax=vmax)
            for (i, j), value in np.ndenumerate(grid):
                ax.text(j, i, f"{value * 100:.1f}", ha="center", va="center", fontsize=8)
            ax.set_xticks(range(len(apply_to)))
            ax.set_xticklabels(apply_to)
            ax.set_yticks(range(len(kinds)))
            ax.set_yticklabels(kinds)
            ax.set_title(ordering)
            styles.apply_axes_style(ax)
        self.figure.colorbar(image, ax=list(axes), label="accuracy drop")
        return self.figure

    def plot_bench(self, records):
        """Median time against sequence length per mixer (log-log), IQR as error bars."""
        self.figure.clear()
        ax = self.figure.add_subplot(111)
        mixing = [r for r in records if r.part == "mixer"]
        for mixer in dict.fromkeys(r.mixer for r in mixing):
            rows = sorted((r for r in mixing if r.mixer == mixer), key=lambda r: r.length)
            ax.errorbar([r.length for r in rows], [r.median for r in rows],
                        yerr=[r.iqr / 2 for r in rows], marker="o", capsize=3,
                        color=styles.MIXER_COLORS.get(mixer), label=mixer)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("sequence length")
        ax.set_ylabel("median forward time [s]")
        ax.set_title("Mixer cost against sequence length")
        ax.legend(frameon=False)
        styles.apply_axes_style(ax)
        return self.figure

    def save(self, path):
        self.figure.savefig(path, facecolor=self.figure.get_facecolor())
        log.info("figure saved to %s", path)
