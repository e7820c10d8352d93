"""Shared fixtures-in-spirit: small synthetic graph builders for tests."""

import numpy as np


def block_adjacency(sizes, coupling=0.0):
    """Disjoint cliques (with self-loops) plus optional coupling between
    consecutive blocks' border nodes."""
    n = sum(sizes)
    W = np.zeros((n, n))
    start = 0
    borders = []
    for size in sizes:
        W[start:start + size, start:start + size] = 1.0
        borders.append((start, start + size - 1))
        start += size
    for (_, right), (left, _) in zip(borders, borders[1:]):
        W[right, left] = W[left, right] = coupling
    return W
