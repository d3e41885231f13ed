"""P1 finite element assembly and sparse direct solution.

All weak forms of the coupled state/adjoint systems reduce to four
building blocks on a fixed triangulation: the bilinear form
(D grad u, grad v) + (mu_a u, v), the boundary mass (u, v)_Gamma, the
full mass (u, v)_Omega, and the region mass (u, v)_{Omega_0} where
Omega_0 is the negative set of a P1 level-set field.  Region masses are
integrated exactly on cut elements by clipping the linear interpolant,
never by fractional scaling: staircase errors there would feed straight
into the shape gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .mesh import TriMesh

__all__ = [
    "SolverError",
    "ConsistencyError",
    "ScalarField",
    "MediumParams",
    "SparseSystem",
    "RegionWeights",
    "assemble_bilinear_a",
    "assemble_mass",
    "assemble_boundary_mass",
    "assemble_region_mass",
    "region_product_integrals",
    "solve_sparse",
    "factorized",
    "l2_norm",
]

_RESID_TOL = 1e-10


class SolverError(Exception):
    """Sparse factorization or solve failed."""


class ConsistencyError(Exception):
    """Internal data structures disagree (e.g. weights vs classification)."""


@dataclass
class ScalarField:
    """Per-vertex real values on a mesh."""

    values: np.ndarray
    mesh: TriMesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.mesh.vertex_count,):
            raise ValueError("field length must equal vertex count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")


@dataclass
class MediumParams:
    """Optical coefficients: per-element diffusion D and absorption mu_a,
    plus the boundary impedance constant A."""

    D: np.ndarray
    mu_a: np.ndarray
    A: float = 0.5

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=np.float64)
        self.mu_a = np.asarray(self.mu_a, dtype=np.float64)
        if np.any(self.D <= 0):
            raise ValueError("diffusion coefficient must be strictly positive")
        if np.any(self.mu_a < 0):
            raise ValueError("absorption coefficient must be nonnegative")
        if not self.A > 0:
            raise ValueError("boundary impedance must be positive")

    @classmethod
    def uniform(cls, mesh: TriMesh, D: float = 1.0, mu_a: float = 1.0, A: float = 0.5):
        m = mesh.element_count
        return cls(np.full(m, float(D)), np.full(m, float(mu_a)), A)


@dataclass
class SparseSystem:
    """Square sparse matrix plus right-hand side(s)."""

    matrix: sparse.spmatrix
    rhs: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m:
            raise ValueError("matrix must be square")
        self.rhs = np.asarray(self.rhs, dtype=np.float64)
        if self.rhs.shape[0] != n:
            raise ValueError("rhs length mismatch")


@dataclass
class RegionWeights:
    """Per-element inside-area fractions of the current source support.

    For exact cut-element quadrature the weights carry the element
    classification they were derived from; weights with strictly
    fractional entries but no classification cannot be integrated.
    """

    fractions: np.ndarray
    mesh: TriMesh
    classification: object | None = field(default=None, repr=False)

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        if self.fractions.shape != (self.mesh.element_count,):
            raise ValueError("fractions length must equal element count")
        if np.any(self.fractions < -1e-12) or np.any(self.fractions > 1 + 1e-12):
            raise ValueError("fractions must lie in [0, 1]")

    @classmethod
    def full(cls, mesh: TriMesh):
        return cls(np.ones(mesh.element_count), mesh)

    @classmethod
    def empty(cls, mesh: TriMesh):
        return cls(np.zeros(mesh.element_count), mesh)


# -- assembly -----------------------------------------------------------------

_MASS_LOCAL = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _scatter(mesh: TriMesh, local: np.ndarray) -> sparse.csr_matrix:
    """Sum (M, 3, 3) element matrices into a global CSR matrix.

    Scatter-add is commutative: the result is independent of element order.
    """
    ev = mesh.elements
    rows = np.repeat(ev, 3, axis=1).ravel()
    cols = np.tile(ev, (1, 3)).ravel()
    n = mesh.vertex_count
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_bilinear_a(mesh: TriMesh, medium: MediumParams) -> sparse.csr_matrix:
    """Matrix of (D grad u, grad v)_Omega + (mu_a u, v)_Omega with exact P1
    stiffness and consistent mass."""
    g = mesh.grad_basis  # (M, 3, 2)
    stiff = np.einsum("mik,mjk->mij", g, g) * (medium.D * mesh.areas)[:, None, None]
    massc = _MASS_LOCAL[None] * (medium.mu_a * mesh.areas)[:, None, None]
    return _scatter(mesh, stiff + massc)


def assemble_mass(mesh: TriMesh, coeff: np.ndarray | None = None) -> sparse.csr_matrix:
    """Consistent mass matrix (u, v)_Omega, optionally with a per-element coefficient."""
    scale = mesh.areas if coeff is None else mesh.areas * np.asarray(coeff)
    return _scatter(mesh, _MASS_LOCAL[None] * scale[:, None, None])


def assemble_boundary_mass(mesh: TriMesh) -> sparse.csr_matrix:
    """Matrix of (u, v)_Gamma from exact edge-wise P1 mass; interior rows are zero."""
    be = mesh.boundary_edges
    if len(be) == 0:
        raise ValueError("mesh has no boundary edges")
    L = mesh.boundary_lengths
    local = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])[None] * L[:, None, None]
    rows = np.repeat(be, 2, axis=1).ravel()
    cols = np.tile(be, (1, 2)).ravel()
    n = mesh.vertex_count
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _cut_quadrature(mesh: TriMesh, cls) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Midpoint quadrature (exact for P1 products) on the clipped sub-polygons
    of cut elements: (element ids, parent barycentric coords, weights)."""
    cached = getattr(cls, "_cut_quad", None)
    if cached is not None:
        return cached
    elems = []
    lams = []
    wts = []
    for e, poly in zip(cls.cut_elements, cls.cut_polygons):
        k = len(poly)
        if k < 3:
            continue
        pe = mesh.vertices[mesh.elements[e]]
        centroid = pe.mean(axis=0)
        g = mesh.grad_basis[e]  # (3, 2)
        for i in range(1, k - 1):
            a, b, c = poly[0], poly[i], poly[i + 1]
            sub2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            subarea = 0.5 * sub2
            if subarea <= 0:
                continue
            mids = 0.5 * np.array([a + b, b + c, c + a])
            lam = 1.0 / 3.0 + (mids - centroid) @ g.T  # (3 pts, 3 basis)
            elems.extend([e] * 3)
            lams.append(lam)
            wts.extend([subarea / 3.0] * 3)
    if elems:
        quad = (np.asarray(elems), np.vstack(lams), np.asarray(wts))
    else:
        quad = (np.zeros(0, dtype=int), np.zeros((0, 3)), np.zeros(0))
    cls._cut_quad = quad
    return quad


def _require_classification(weights: RegionWeights):
    cls = weights.classification
    frac = weights.fractions
    fractional = (frac > 1e-12) & (frac < 1 - 1e-12)
    if cls is None:
        if np.any(fractional):
            raise ConsistencyError(
                "weights contain cut-element fractions but carry no classification"
            )
        return None
    if np.max(np.abs(frac - cls.fractions)) > 1e-12:
        raise ConsistencyError("weights do not match their classification")
    return cls


def assemble_region_mass(mesh: TriMesh, weights: RegionWeights) -> sparse.csr_matrix:
    """Matrix of (u, v)_{Omega_0}: full P1 mass on inside elements, exact
    clipped-polygon quadrature on cut elements, zero elsewhere."""
    cls = _require_classification(weights)
    full = weights.fractions >= 1 - 1e-12
    local = np.where(full[:, None, None], _MASS_LOCAL[None] * mesh.areas[:, None, None], 0.0)
    R = _scatter(mesh, local)
    if cls is not None and len(cls.cut_elements):
        elems, lam, wq = _cut_quadrature(mesh, cls)
        if len(elems):
            local_cut = np.einsum("q,qi,qj->qij", wq, lam, lam)
            ev = mesh.elements[elems]
            rows = np.repeat(ev, 3, axis=1).ravel()
            cols = np.tile(ev, (1, 3)).ravel()
            n = mesh.vertex_count
            R = R + sparse.coo_matrix(
                (local_cut.ravel(), (rows, cols)), shape=(n, n)
            ).tocsr()
    return R


def region_product_integrals(
    mesh: TriMesh, weights: RegionWeights, f: np.ndarray, g: np.ndarray
) -> np.ndarray:
    """Per-element integrals of the product of two P1 fields over Omega_0."""
    cls = _require_classification(weights)
    fe = f[mesh.elements]
    ge = g[mesh.elements]
    full_val = mesh.areas / 12.0 * (fe.sum(axis=1) * ge.sum(axis=1) + (fe * ge).sum(axis=1))
    out = np.where(weights.fractions >= 1 - 1e-12, full_val, 0.0)
    if cls is not None and len(cls.cut_elements):
        elems, lam, wq = _cut_quadrature(mesh, cls)
        if len(elems):
            fq = np.einsum("qi,qi->q", f[mesh.elements[elems]], lam)
            gq = np.einsum("qi,qi->q", g[mesh.elements[elems]], lam)
            np.add.at(out, elems, wq * fq * gq)
    return out


# -- linear solves ------------------------------------------------------------


class _LU:
    """Factorized sparse operator with a residual-checked solve."""

    def __init__(self, matrix: sparse.spmatrix, permc_spec: str | None = None):
        self._A = matrix.tocsc()
        self._norm = np.abs(self._A).sum(axis=1).max()
        try:
            self._lu = splu(self._A, permc_spec=permc_spec)
        except (RuntimeError, ValueError) as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("factorization produced non-finite solution (singular pivot)")
        resid = np.abs(self._A @ x - b).max()
        bound = _RESID_TOL * (
            self._norm * np.abs(x).max() + np.abs(b).max()
        )
        if resid > max(bound, 1e-300):
            raise SolverError(
                f"solve residual {resid:.3e} exceeds tolerance {bound:.3e} "
                "(near-singular factorization)"
            )
        return x


def factorized(matrix: sparse.spmatrix, permc_spec: str | None = None) -> _LU:
    """Factorize once, solve many right-hand sides (fixed sparsity pattern)."""
    return _LU(matrix, permc_spec)


def solve_sparse(system: SparseSystem, permc_spec: str | None = None) -> np.ndarray:
    """Direct sparse solve of ``system.matrix @ x = system.rhs``."""
    lu = _LU(system.matrix, permc_spec)
    rhs = system.rhs
    if rhs.ndim == 1:
        return lu.solve(rhs)
    return np.column_stack([lu.solve(rhs[:, j]) for j in range(rhs.shape[1])])


def l2_norm(field: ScalarField, weights: RegionWeights | None = None) -> float:
    """L2 norm of a P1 field over Omega (weights absent) or over Omega_0."""
    x = field.values
    if weights is None:
        M = assemble_mass(field.mesh)
    else:
        M = assemble_region_mass(field.mesh, weights)
    return float(np.sqrt(max(x @ (M @ x), 0.0)))
