"""Triangulations of the square domain (-1,1)^2.

The reconstruction pipeline runs on a fixed conforming triangular mesh:
shapes evolve through a level-set field living on the mesh vertices, the
mesh itself never moves.  This module provides a structured crisscross
triangulation (grid vertices plus cell centers, four triangles per cell),
exact P1 element geometry, and point location with barycentric output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MeshError",
    "OutOfDomainError",
    "TriMesh",
    "ElementGeometry",
    "generate_square_mesh",
    "element_geometry",
    "locate_point",
    "locate_points",
    "interpolate_p1",
]

DOMAIN_LO = -1.0
DOMAIN_HI = 1.0

_BARY_TOL = 1e-12


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class OutOfDomainError(MeshError):
    """Query point lies outside the square domain."""


@dataclass
class ElementGeometry:
    """Area and constant P1 basis gradients of one affine triangle."""

    area: float
    grad_basis: np.ndarray  # (3, 2), rows sum to zero


class TriMesh:
    """Conforming triangulation of [-1,1]^2 with boundary-edge structure.

    Parameters
    ----------
    vertices : (N, 2) array
        Vertex coordinates.
    elements : (M, 3) int array
        Vertex indices per triangle, counterclockwise.

    Attributes
    ----------
    areas : (M,) array of element areas (strictly positive).
    grad_basis : (M, 3, 2) array of P1 basis gradients per element.
    boundary_edges : (B, 2) int array, directed edges (ccw in owner).
    boundary_owner : (B,) int array, owning element per boundary edge.
    boundary_normals : (B, 2) array, outward unit normals.
    boundary_vertices : sorted int array of vertices on the boundary.
    edges : (E, 2) int array of unique undirected edges.
    h_min, h_mean : min / mean edge length.
    """

    def __init__(self, vertices: np.ndarray, elements: np.ndarray):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.elements = np.ascontiguousarray(elements, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be (N, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be (M, 3)")
        self.vertex_count = self.vertices.shape[0]
        self.element_count = self.elements.shape[0]

        p = self.vertices[self.elements]  # (M, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        twice_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(twice_area <= 0):
            bad = int(np.argmin(twice_area))
            raise MeshError(
                f"element {bad} has non-positive signed area {twice_area[bad] / 2:.3e}"
            )
        self.areas = 0.5 * twice_area

        # grad(lambda_i) = rot90(p_k - p_j) / (2A) with (i, j, k) cyclic,
        # rot90(v) = (-v_y, v_x).
        g = np.empty((self.element_count, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            e = p[:, k] - p[:, j]
            g[:, i, 0] = -e[:, 1]
            g[:, i, 1] = e[:, 0]
        self.grad_basis = g / twice_area[:, None, None]

        self._build_edges()
        self._build_locator()

    # -- construction helpers -------------------------------------------------

    def _build_edges(self) -> None:
        m = self.element_count
        ev = self.elements
        # directed edges, 3 per element, in ccw order
        tails = np.concatenate([ev[:, 0], ev[:, 1], ev[:, 2]])
        heads = np.concatenate([ev[:, 1], ev[:, 2], ev[:, 0]])
        owners = np.concatenate([np.arange(m)] * 3)

        lo = np.minimum(tails, heads)
        hi = np.maximum(tails, heads)
        key = lo.astype(np.int64) * self.vertex_count + hi
        order = np.argsort(key, kind="stable")
        key_sorted = key[order]
        uniq, first, counts = np.unique(key_sorted, return_index=True, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-manifold edge: shared by more than two elements")

        self.edges = np.column_stack([uniq // self.vertex_count, uniq % self.vertex_count]).astype(np.int32)
        ecoords = self.vertices[self.edges]
        self.edge_lengths = np.linalg.norm(ecoords[:, 1] - ecoords[:, 0], axis=1)
        self.h_min = float(self.edge_lengths.min())
        self.h_mean = float(self.edge_lengths.mean())

        bmask = counts == 1
        bidx = order[first[bmask]]
        self.boundary_edges = np.column_stack([tails[bidx], heads[bidx]]).astype(np.int32)
        self.boundary_owner = owners[bidx].astype(np.int32)
        t = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        tlen = np.linalg.norm(t, axis=1)
        if np.any(tlen <= 0):
            raise MeshError("degenerate boundary edge")
        # outward normal of a ccw-directed boundary edge is its right-hand perp
        self.boundary_normals = np.column_stack([t[:, 1], -t[:, 0]]) / tlen[:, None]
        self.boundary_lengths = tlen
        self.boundary_vertices = np.unique(self.boundary_edges)

        # element adjacency across interior edges (for component counting)
        imask = counts == 2
        second = first[imask] + 1
        ia = owners[order[first[imask]]]
        ib = owners[order[second]]
        self.element_neighbors = np.column_stack([ia, ib]).astype(np.int32)

    def _build_locator(self) -> None:
        # uniform background bins over the mesh bounding box; each bin lists
        # the elements whose (slightly inflated) bbox overlaps it, ascending
        nb = max(1, int(np.sqrt(self.element_count / 4.0)))
        self._nbins = nb
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        span = np.maximum(hi - lo, 1e-300)
        self._bin_lo = lo
        self._bin_scale = nb / span

        p = self.vertices[self.elements]
        eps = 1e-9
        bb_lo = ((p.min(axis=1) - lo) * self._bin_scale - eps).astype(np.int64)
        bb_hi = ((p.max(axis=1) - lo) * self._bin_scale + eps).astype(np.int64)
        np.clip(bb_lo, 0, nb - 1, out=bb_lo)
        np.clip(bb_hi, 0, nb - 1, out=bb_hi)

        bins: list[list[int]] = [[] for _ in range(nb * nb)]
        for e in range(self.element_count):
            for bx in range(bb_lo[e, 0], bb_hi[e, 0] + 1):
                for by in range(bb_lo[e, 1], bb_hi[e, 1] + 1):
                    bins[by * nb + bx].append(e)

        width = max(len(b) for b in bins)
        table = np.full((nb * nb, width), -1, dtype=np.int32)
        for i, b in enumerate(bins):
            table[i, : len(b)] = sorted(b)
        self._bin_table = table

    # -- queries ---------------------------------------------------------------

    def contains(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= DOMAIN_LO - tol) & (pts <= DOMAIN_HI + tol), axis=1)


def generate_square_mesh(n: int) -> TriMesh:
    """Structured crisscross triangulation of [-1,1]^2.

    Each of the n x n grid cells is split into four triangles meeting at
    the cell center: (n+1)^2 + n^2 vertices and 4 n^2 elements in total.

    Parameters
    ----------
    n : int
        Subdivisions per axis, at least 2.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 subdivisions, got {n}")
    h = (DOMAIN_HI - DOMAIN_LO) / n
    coords = DOMAIN_LO + h * np.arange(n + 1)
    gx, gy = np.meshgrid(coords, coords, indexing="xy")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(coords[:-1] + h / 2, coords[:-1] + h / 2, indexing="xy")
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([grid, centers])

    ngrid = (n + 1) * (n + 1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i = i.ravel()
    j = j.ravel()
    v00 = j * (n + 1) + i
    v10 = j * (n + 1) + i + 1
    v01 = (j + 1) * (n + 1) + i
    v11 = (j + 1) * (n + 1) + i + 1
    vc = ngrid + j * n + i

    elements = np.empty((4 * n * n, 3), dtype=np.int64)
    elements[0::4] = np.column_stack([v00, v10, vc])
    elements[1::4] = np.column_stack([v10, v11, vc])
    elements[2::4] = np.column_stack([v11, v01, vc])
    elements[3::4] = np.column_stack([v01, v00, vc])
    return TriMesh(vertices, elements)


def element_geometry(mesh: TriMesh, e: int) -> ElementGeometry:
    """Area and P1 basis gradients of element ``e`` (exact for affine triangles)."""
    if not 0 <= e < mesh.element_count:
        raise IndexError(f"element index {e} out of range [0, {mesh.element_count})")
    return ElementGeometry(float(mesh.areas[e]), mesh.grad_basis[e].copy())


def locate_points(mesh: TriMesh, pts: np.ndarray, chunk: int = 1 << 18):
    """Vectorized point location.

    Returns ``(elem, bary)`` with ``elem`` (P,) element indices and ``bary``
    (P, 3) barycentric coordinates in [0, 1] summing to one.  Points on
    shared edges resolve to the lowest containing element index.  Raises
    :class:`OutOfDomainError` for points outside [-1,1]^2.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if not np.all(mesh.contains(pts)):
        bad = pts[~mesh.contains(pts)][0]
        raise OutOfDomainError(f"point {tuple(bad)} outside [-1,1]^2; clamp first")

    npts = pts.shape[0]
    elem = np.empty(npts, dtype=np.int64)
    bary = np.empty((npts, 3))
    for s in range(0, npts, chunk):
        _locate_chunk(mesh, pts[s : s + chunk], elem[s : s + chunk], bary[s : s + chunk])
    return elem, bary


def _locate_chunk(mesh: TriMesh, pts, elem_out, bary_out) -> None:
    nb = mesh._nbins
    b = ((pts - mesh._bin_lo) * mesh._bin_scale).astype(np.int64)
    np.clip(b, 0, nb - 1, out=b)
    cand = mesh._bin_table[b[:, 1] * nb + b[:, 0]]  # (P, W), -1 padded

    safe = np.maximum(cand, 0)
    tri = mesh.vertices[mesh.elements[safe]]  # (P, W, 3, 2)
    d = pts[:, None, None, :] - tri[:, :, 0:1, :]  # (P, W, 1, 2)
    e1 = tri[:, :, 1] - tri[:, :, 0]
    e2 = tri[:, :, 2] - tri[:, :, 0]
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    dx = d[:, :, 0, 0]
    dy = d[:, :, 0, 1]
    l1 = (dx * e2[..., 1] - dy * e2[..., 0]) / det
    l2 = (e1[..., 0] * dy - e1[..., 1] * dx) / det
    l0 = 1.0 - l1 - l2
    minb = np.minimum(np.minimum(l0, l1), l2)
    minb = np.where(cand >= 0, minb, -np.inf)

    # candidates are sorted ascending per bin: first admissible hit wins
    ok = minb >= -_BARY_TOL
    first = np.argmax(ok, axis=1)
    found = ok[np.arange(len(pts)), first]
    # roundoff fallback: most-interior candidate
    best = np.argmax(minb, axis=1)
    pick = np.where(found, first, best)
    rows = np.arange(len(pts))
    if not np.all(minb[rows, pick] > -1e-9):
        raise OutOfDomainError("point not covered by any candidate element")

    elem_out[:] = cand[rows, pick]
    lam = np.stack([l0[rows, pick], l1[rows, pick], l2[rows, pick]], axis=1)
    np.clip(lam, 0.0, 1.0, out=lam)
    lam /= lam.sum(axis=1, keepdims=True)
    bary_out[:] = lam


def locate_point(mesh: TriMesh, x) -> tuple[int, np.ndarray]:
    """Containing element and barycentric coordinates of one point."""
    elem, bary = locate_points(mesh, np.asarray(x, dtype=np.float64).reshape(1, 2))
    return int(elem[0]), bary[0]


def interpolate_p1(mesh: TriMesh, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate the P1 interpolant of nodal ``values`` at points inside the square."""
    elem, bary = locate_points(mesh, pts)
    return np.einsum("pk,pk->p", values[mesh.elements[elem]], bary)
