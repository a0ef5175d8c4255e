# Light figure theme shared by every view
COLOR_BG = "#F4F6F8"        # Light Gray Background
COLOR_AXES = "#FFFFFF"
COLOR_FG = "#333333"        # Text, ticks, spines
COLOR_GRID = "#D0D0D0"
COLOR_PATH = "#000000"      # Processing path line

# One colour per ordering strategy, reused across figures
ORDERING_COLORS = {
    "nimba": "#1F77B4",
    "axis-triple": "#D62728",
    "ysort": "#7F7F7F",
    "identity": "#2CA02C",
}

MIXER_COLORS = {
    "s6": "#1F77B4",
    "attention": "#FF7F0E",
}

HEATMAP_CMAP = "RdYlGn_r"   # Accuracy drops: green small, red large
PATH_CMAP = "viridis"       # Early tokens dark, late tokens bright

FIGSIZE = (6, 4.5)
DPI = 120


def apply_axes_style(ax):
    """Minimalist spines and the shared palette on one Axes."""
    ax.set_facecolor(COLOR_AXES)
    ax.tick_params(colors=COLOR_FG)
    for side in ("top", "right"):
        if side in ax.spines:
            ax.spines[side].set_visible(False)
    for side in ("bottom", "left"):
        if side in ax.spines:
            ax.spines[side].set_color(COLOR_FG)
    ax.title.set_color(COLOR_FG)
    ax.xaxis.label.set_color(COLOR_FG)
    ax.yaxis.label.set_color(COLOR_FG)
