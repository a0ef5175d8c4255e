"""3D processing path of patch centers under a serialization."""

import logging

import numpy as np
from matplotlib.figure import Figure

from views import styles

log = logging.getLogger(__name__)


class OrderingView:
    def __init__(self, figsize=styles.FIGSIZE, dpi=styles.DPI):
        self.figure = Figure(figsize=figsize, dpi=dpi)
        self.figure.patch.set_facecolor(styles.COLOR_BG)

    def plot_path(self, centers, serialization, title=None):
        """Centers coloured by position in the sequence, joined in processing order.

        Axis-triple serializations are drawn as three panels, one per sorted copy.
        """
        self.figure.clear()
        centers = np.asarray(centers)
        order = np.asarray(serialization.order)
        segments = np.split(order, serialization.replication)
        for k, segment in enumerate(segments, start=1):
            ax = self.figure.add_subplot(1, len(segments), k, projection="3d")
            path = centers[segment]
            ax.plot(path[:, 0], path[:, 1], path[:, 2], color=styles.COLOR_PATH, linewidth=0.8)
            ax.scatter(path[:, 0], path[:, 1], path[:, 2], c=np.arange(len(segment)),
                       cmap=styles.PATH_CMAP, s=18, depthshade=False)
            ax.set_xlabel("x")
            ax.set_ylabel("y")
            ax.set_zlabel("z")
            if len(segments) > 1:
                ax.set_title("xyz"[k - 1] + "-sorted copy", color=styles.COLOR_FG)
        label = serialization.strategy.value
        if serialization.r is not None:
            label += f" (r={serialization.r:g}, {serialization.moves} moves)"
        self.figure.suptitle(title or label, color=styles.COLOR_FG)
        return self.figure

    def save(self, path):
        self.figure.savefig(path, facecolor=self.figure.get_facecolor())
        log.info("figure saved to %s", path)
