"""Structured quadrilateral meshes on a rectangle.

Node ``(i, j)`` with ``0 <= i <= nx`` and ``0 <= j <= ny`` has id
``j * (nx + 1) + i``; element ``(i, j)`` has id ``j * nx + i`` and
counter-clockwise connectivity ``(i, j), (i+1, j), (i+1, j+1), (i, j+1)``.
Degree of freedom ``2 * node + c`` carries displacement component ``c``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Mesh:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("need at least one element in each direction")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain extents must be positive")

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self):
        return self.nx * self.ny

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    def node_id(self, i, j):
        return j * (self.nx + 1) + i

    @cached_property
    def coords(self):
        x = np.linspace(0.0, self.lx, self.nx + 1)
        y = np.linspace(0.0, self.ly, self.ny + 1)
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def elements(self):
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        i, j = i.ravel(), j.ravel()
        n0 = self.node_id(i, j)
        return np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])

    @cached_property
    def centroids(self):
        return self.coords[self.elements].mean(axis=1)

    @cached_property
    def element_areas(self):
        xy = self.coords[self.elements]
        x, y = xy[..., 0], xy[..., 1]
        # shoelace formula
        return 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1))

    @cached_property
    def bottom_nodes(self):
        return np.arange(self.nx + 1)

    @cached_property
    def top_nodes(self):
        return self.node_id(np.arange(self.nx + 1), self.ny)

    @cached_property
    def top_edges(self):
        top = self.top_nodes
        return np.column_stack([top[:-1], top[1:]])

    def mirror_elements(self):
        """Element permutation for the reflection ``x -> lx - x``."""
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return (j * self.nx + (self.nx - 1 - i)).ravel()

    def mirror_nodes(self):
        """Node permutation for the reflection ``x -> lx - x``."""
        i, j = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        return self.node_id(self.nx - i, j).ravel()

    def refine(self, rx, ry):
        """Uniformly refined mesh with ``rx`` and ``ry`` subdivisions per element."""
        return Mesh(self.nx * rx, self.ny * ry, self.lx, self.ly)

    def coincident_nodes(self, coarse):
        """Ids of nodes of ``self`` lying on the nodes of a coarser mesh.

        ``self`` must be an integer refinement of ``coarse`` on the same domain.
        """
        if not (np.isclose(self.lx, coarse.lx) and np.isclose(self.ly, coarse.ly)):
            raise ValueError("meshes cover different domains")
        if self.nx % coarse.nx or self.ny % coarse.ny:
            raise ValueError("fine mesh is not an integer refinement of the coarse mesh")
        rx, ry = self.nx // coarse.nx, self.ny // coarse.ny
        i, j = np.meshgrid(np.arange(coarse.nx + 1) * rx, np.arange(coarse.ny + 1) * ry)
        return self.node_id(i, j).ravel()

    def parent_elements(self, coarse):
        """For every element of ``self``, the id of the coarse element containing it."""
        if self.nx % coarse.nx or self.ny % coarse.ny:
            raise ValueError("fine mesh is not an integer refinement of the coarse mesh")
        rx, ry = self.nx // coarse.nx, self.ny // coarse.ny
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return ((j // ry) * coarse.nx + i // rx).ravel()


def adjacency_pairs(nx, ny):
    """Index pairs ``(k, l)`` of elements sharing an edge, horizontal pairs first."""
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny))
    h = np.column_stack([(j * nx + i).ravel(), (j * nx + i + 1).ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny - 1))
    v = np.column_stack([(j * nx + i).ravel(), ((j + 1) * nx + i).ravel()])
    return np.vstack([h, v]).astype(int)


def incidence_matrix(nx, ny):
    """Sparse ``d_L x (nx*ny)`` matrix with one ``+1`` and one ``-1`` per row."""
    pairs = adjacency_pairs(nx, ny)
    m = pairs.shape[0]
    rows = np.repeat(np.arange(m), 2)
    cols = pairs.ravel()
    vals = np.tile([1.0, -1.0], m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, nx * ny))
