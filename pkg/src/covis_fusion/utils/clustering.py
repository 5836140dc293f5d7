import numpy as np
from numpy.typing import NDArray
from sklearn.cluster import DBSCAN

from .logger import logger

NOISE = -1

def density_labels(features: NDArray, eps: float, min_pts: int) -> NDArray[np.int64]:
    """DBSCAN labels for an (N, D) feature array; noise is -1. Empty input gives an empty label array."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(features)
    return labels.astype(np.int64)

def clustered_mask(features: NDArray, eps: float, min_pts: int) -> NDArray[np.bool_]:
    """Mask of points that belong to any density cluster."""
    return density_labels(features, eps, min_pts) != NOISE

def largest_cluster_mask(features: NDArray, eps: float, min_pts: int) -> NDArray[np.bool_]:
    """
    Mask of the largest density cluster, re-clustered until stable.

    Dropping the other clusters can strip border neighbours from a core point, so
    the surviving set is clustered again until it maps onto itself. The result is a
    fixed point: running this on the kept points keeps all of them.
    """
    features = np.asarray(features, dtype=np.float64)
    keep = np.arange(features.shape[0])
    while keep.size:
        labels = density_labels(features[keep], eps, min_pts)
        valid = labels[labels != NOISE]
        if valid.size == 0:
            keep = keep[:0]
            break
        counts = np.bincount(valid)
        best = int(np.argmax(counts))  # lowest label wins ties
        selected = labels == best
        if selected.all():
            break
        logger.trace(f"largest_cluster_mask: {keep.size} -> {int(selected.sum())} points")
        keep = keep[selected]

    mask = np.zeros(features.shape[0], dtype=bool)
    mask[keep] = True
    return mask
