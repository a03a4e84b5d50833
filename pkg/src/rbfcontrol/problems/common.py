"""Shared pieces of the benchmark problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ControlProfile:
    """Discretized boundary control: one value per controlled node."""

    values: np.ndarray
    node_indices: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.node_indices = np.asarray(self.node_indices, dtype=int)
        if len(self.values) != len(self.node_indices):
            raise ValueError("control length != controlled node count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")


def trapezoid_weights(positions):
    """Composite-trapezoid weights for samples at arbitrary 1-D positions.

    Returned weights align with the input order, not the sorted order.
    """
    positions = np.asarray(positions, dtype=float)
    order = np.argsort(positions)
    p = positions[order]
    w = np.zeros_like(p)
    if len(p) == 1:
        w[0] = 1.0
    else:
        w[0] = 0.5 * (p[1] - p[0])
        w[-1] = 0.5 * (p[-1] - p[-2])
        if len(p) > 2:
            w[1:-1] = 0.5 * (p[2:] - p[:-2])
    out = np.zeros_like(w)
    out[order] = w
    return out


def cell_weights(positions, lo, hi):
    """Cell-ownership weights covering the whole interval [lo, hi].

    Each sample owns the span between the midpoints to its neighbours,
    clipped to the interval, so the weights sum to hi - lo even when no
    sample sits exactly on an endpoint.
    """
    positions = np.asarray(positions, dtype=float)
    order = np.argsort(positions)
    p = positions[order]
    edges = np.empty(len(p) + 1)
    edges[0] = lo
    edges[-1] = hi
    edges[1:-1] = 0.5 * (p[1:] + p[:-1])
    w = np.diff(edges)
    out = np.zeros_like(w)
    out[order] = w
    return out
