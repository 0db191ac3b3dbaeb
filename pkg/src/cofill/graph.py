"""Adjacency handling, graph normalization, and the shared graph convolution."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ContractError, ParseError, ShapeError
from .layers import channel_mix
from .tensor import Tensor


@dataclass
class Graph:
    """Nonnegative adjacency over ``node_count`` nodes, optionally with coordinates."""

    adjacency: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"adjacency must be square, got {a.shape}")
        if (a < 0).any():
            raise ContractError("adjacency entries must be nonnegative")
        self.adjacency = a

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class NormalizedGraph:
    """Symmetric-normalized adjacency with self-loops; spectrum lies in [-1, 1]."""

    a_gcn: np.ndarray = field(repr=False)

    @property
    def node_count(self) -> int:
        return self.a_gcn.shape[0]


def normalize_adjacency(g: Graph) -> NormalizedGraph:
    """D^{-1/2} (A + I) D^{-1/2} with D_ii the row sums of A + I.

    The self-loop keeps every degree >= 1, so isolated nodes are fine.
    """
    a_hat = g.adjacency + np.eye(g.node_count)
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    a_gcn = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return NormalizedGraph(a_gcn=a_gcn)


def node_mix(h: Tensor, a_gcn: np.ndarray) -> Tensor:
    """Right-multiply the node axis of (B, C, N, L) features by a_gcn."""
    if h.shape[2] != a_gcn.shape[0]:
        raise ShapeError(
            f"node axis {h.shape[2]} does not match graph of {a_gcn.shape[0]} nodes"
        )
    ht = T.transpose(h, (0, 1, 3, 2))          # (B, C, L, N)
    mixed = T.matmul(ht, Tensor(a_gcn))        # sum_m h[..., m] a[m, n]
    return T.transpose(mixed, (0, 1, 3, 2))


def graph_conv(h: Tensor, a_gcn: np.ndarray, order: int, w: Tensor,
               b: Tensor | None = None) -> Tensor:
    """Concatenate ``h`` with its ``order`` successive graph mixes, fuse, ReLU.

    ``h`` is (B, C, N, L); ``w`` maps the (order+1)*C concatenated channels
    back down via a 1x1 convolution; output is (B, C_out, N, L).
    """
    if order < 1:
        raise ContractError(f"graph convolution order must be >= 1, got {order}")
    hops = [h]
    cur = h
    for _ in range(order):
        cur = node_mix(cur, a_gcn)
        hops.append(cur)
    stacked = T.concat(hops, axis=1)
    return T.relu(channel_mix(stacked, w, b))


def build_adjacency_from_coords(coords: np.ndarray, threshold: float = 0.1) -> Graph:
    """Thresholded Gaussian-kernel adjacency from node coordinates.

    A_ij = exp(-dist_ij^2 / s^2) when that weight exceeds ``threshold``, else 0,
    with s the standard deviation of all pairwise distances; zero diagonal.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] < 1:
        raise ContractError(f"need at least one 2-D coordinate row, got {coords.shape}")
    n = coords.shape[0]
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    if n == 1:
        return Graph(adjacency=np.zeros((1, 1)), coords=coords)
    off = dist[~np.eye(n, dtype=bool)]
    s = off.std()
    if s == 0.0:
        # all nodes coincide: fully connected with unit weights
        a = np.ones((n, n)) - np.eye(n)
        return Graph(adjacency=a, coords=coords)
    a = np.exp(-(dist ** 2) / (s ** 2))
    a[a <= threshold] = 0.0
    np.fill_diagonal(a, 0.0)
    return Graph(adjacency=a, coords=coords)


def load_edge_list(path: str | Path, n_nodes: int) -> Graph:
    """Read ``src,dst[,weight]`` CSV (0-based indices) into a symmetric Graph."""
    path = Path(path)
    a = np.zeros((n_nodes, n_nodes))
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty edge file")
        if len(header) not in (2, 3) or header[0].strip() != "src":
            raise ParseError(f"{path}: expected header 'src,dst[,weight]', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                src, dst = int(row[0]), int(row[1])
                w = float(row[2]) if len(row) > 2 and row[2].strip() else 1.0
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{row_no}: bad edge row {row}") from exc
            if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
                raise ParseError(
                    f"{path}:{row_no}: node index out of range for {n_nodes} nodes"
                )
            a[src, dst] = w
            a[dst, src] = w
    return Graph(adjacency=a)


def save_edge_list(g: Graph, path: str | Path) -> None:
    """Write the upper triangle of the adjacency as ``src,dst,weight`` rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "weight"])
        n = g.node_count
        for i in range(n):
            for j in range(i + 1, n):
                if g.adjacency[i, j] != 0.0:
                    writer.writerow([i, j, repr(float(g.adjacency[i, j]))])


def load_coords(path: str | Path) -> np.ndarray:
    """Read a ``node,x,y`` CSV into an (N, 2) coordinate array."""
    path = Path(path)
    rows: dict[int, tuple[float, float]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "node":
            raise ParseError(f"{path}: expected header 'node,x,y'")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows[int(row[0])] = (float(row[1]), float(row[2]))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{row_no}: bad coordinate row {row}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    n = max(rows) + 1
    if set(rows) != set(range(n)):
        raise ParseError(f"{path}: node ids must cover 0..{n - 1}")
    return np.array([rows[i] for i in range(n)])
