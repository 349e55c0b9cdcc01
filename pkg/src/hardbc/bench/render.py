"""PNG heatmaps of grid fields."""

from __future__ import annotations

import numpy as np


def heatmap(grid, values, path, title: str = "", cmap: str = "viridis") -> None:
    """Save ``values`` (one per grid node) as an image; nodes outside the domain are blank."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    v = np.array(values, dtype=float)
    v[~grid.domain_mask] = np.nan
    img = v.reshape(grid.nx, grid.ny).T
    x0, x1, y0, y1 = grid.domain.box
    aspect = (x1 - x0) / (y1 - y0)
    fig, ax = plt.subplots(figsize=(min(3.5 * aspect, 12) + 1.2, 3.5))
    im = ax.imshow(img, origin="lower", extent=(x0, x1, y0, y1), cmap=cmap, aspect="equal")
    fig.colorbar(im, ax=ax, shrink=0.8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
