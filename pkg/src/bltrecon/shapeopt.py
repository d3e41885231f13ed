"""Shape objective, distributed shape gradient, and the descent loop.

The reduced objective

    J(O0) = 1/2 |u2|^2_Omega + 1/(2 eps) |w1|^2_O0
            + lambda Per(O0) + beta (|O0| - gamma0)^2

is differentiated in the distributed (volume) form: for a boundary-vanishing
velocity V the derivative is a sum of element integrals that are linear in
the per-element constants div V and DV.  Assembly therefore produces one
2x2 matrix C_e per element with dJ(O; V) = sum_e C_e : DV_e, which serves
both the scalar directional derivative and the nodal gradient covector
(they agree to roundoff by construction).  A vector H1 solve with zero
boundary values turns the covector into a smooth descent velocity, and the
level set is advected with a CFL-limited, backtracked pseudo-time step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .ccbm import CauchyData, CcbmParams, CcbmSolver, StateFields, AdjointFields
from .fem import MediumParams, assemble_bilinear_a, assemble_mass
from .levelset import LevelSetField, advect, perimeter, reinitialize, volume
from .mesh import TriMesh

__all__ = [
    "VelocityField",
    "OptParams",
    "IterationRecord",
    "OptimizeResult",
    "eval_objective",
    "shape_derivative",
    "assemble_gradient_functional",
    "hilbertian_descent",
    "optimize",
]


@dataclass
class VelocityField:
    """Per-vertex velocity vectors, identically zero on the boundary."""

    vectors: np.ndarray
    mesh: TriMesh

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (self.mesh.vertex_count, 2):
            raise ValueError("velocity must be (vertex_count, 2)")
        bnd = self.vectors[self.mesh.boundary_vertices]
        scale = np.abs(self.vectors).max() + 1e-300
        if np.abs(bnd).max() > 1e-12 * scale:
            raise ValueError("velocity must vanish at boundary vertices")
        self.vectors[self.mesh.boundary_vertices] = 0.0

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.vectors, axis=1).max())

    def scaled(self, c: float) -> "VelocityField":
        return VelocityField(c * self.vectors, self.mesh)


@dataclass
class OptParams:
    """Regularization, penalty, and schedule parameters of the descent."""

    gamma0: float
    epsilon0: float = 1e-4
    lambda0: float = 1e-4
    beta0: float = 1.0
    decay: float = 0.9
    warmup_iters: int = 20
    c_alpha: float = 100.0
    cfl: float = 0.5
    stop_tol: float = 1e-6
    max_iters: int = 300
    reinit_every: int = 5
    backtrack_max: int = 8

    def __post_init__(self):
        if not (0 < self.decay < 1):
            raise ValueError("decay must lie in (0, 1)")
        for name in ("gamma0", "epsilon0", "lambda0", "cfl", "stop_tol", "c_alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta0 < 0:
            raise ValueError("beta0 must be nonnegative")
        if not 0 < self.gamma0 < 4.0:
            raise ValueError("gamma0 must lie in (0, |Omega|)")


@dataclass
class IterationRecord:
    """Run log entry for one accepted descent step."""

    iteration: int
    J: float
    misfit: float
    intensity: float
    perimeter_term: float
    volume_term: float
    volume: float
    perimeter: float
    step_size: float
    backtracks: int
    epsilon: float
    alpha: float
    lam: float
    beta: float
    adjoint_residual: float

    CSV_HEADER = (
        "iteration,J,misfit,intensity,perimeter_term,volume_term,"
        "volume,perimeter,step_size,backtracks,epsilon,alpha,lambda,beta,"
        "adjoint_residual"
    )

    def csv_row(self) -> str:
        return (
            f"{self.iteration},{self.J:.12g},{self.misfit:.12g},{self.intensity:.12g},"
            f"{self.perimeter_term:.12g},{self.volume_term:.12g},{self.volume:.12g},"
            f"{self.perimeter:.12g},{self.step_size:.12g},{self.backtracks},"
            f"{self.epsilon:.12g},{self.alpha:.12g},{self.lam:.12g},{self.beta:.12g},"
            f"{self.adjoint_residual:.3e}"
        )


@dataclass
class OptimizeResult:
    levelset: LevelSetField
    history: list
    status: str  # converged | max_iters | stalled | collapsed


# -- objective ------------------------------------------------------------------


def _objective_terms(state: StateFields, ls: LevelSetField, p: OptParams,
                     ccbm: CcbmParams, M) -> tuple[float, dict]:
    u2 = state.u2.values
    w1 = state.w1.values
    w = ls.weights()
    misfit = 0.5 * float(u2 @ (M @ u2))
    intensity = 0.5 / ccbm.epsilon * float(
        fem.region_product_integrals(ls.mesh, w, w1, w1).sum()
    )
    per = perimeter(ls)
    vol = volume(ls)
    per_term = p.lambda0 * per
    vol_term = p.beta0 * (vol - p.gamma0) ** 2
    J = misfit + intensity + per_term + vol_term
    comps = {
        "misfit": misfit,
        "intensity": intensity,
        "perimeter_term": per_term,
        "volume_term": vol_term,
        "volume": vol,
        "perimeter": per,
    }
    return J, comps


def eval_objective(state: StateFields, ls: LevelSetField, p: OptParams,
                   ccbm: CcbmParams) -> tuple[float, dict]:
    """Objective value and its four components for the current level set.

    Uses lambda0/beta0 from ``p`` as the regularization weights in force
    (the descent loop passes per-iteration decayed copies).
    """
    return _objective_terms(state, ls, p, ccbm, assemble_mass(ls.mesh))


# -- distributed shape gradient ---------------------------------------------------


def _pair_integrals(mesh: TriMesh, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Per-element exact integrals of the product of two P1 fields."""
    fe = f[mesh.elements]
    ge = g[mesh.elements]
    return mesh.areas / 12.0 * (fe.sum(axis=1) * ge.sum(axis=1) + (fe * ge).sum(axis=1))


def _element_cov(mesh: TriMesh, medium: MediumParams, state: StateFields,
                 adjoint: AdjointFields, ls: LevelSetField, p: OptParams,
                 ccbm: CcbmParams) -> np.ndarray:
    """Per-element 2x2 matrices C_e with dJ(O; V) = sum_e C_e : DV_e."""
    cls = ls.classification()
    w = ls.weights()
    inv_eps = 1.0 / ccbm.epsilon
    u1, u2 = state.u1.values, state.u2.values
    w1, w2 = state.w1.values, state.w2.values
    v1, v2 = adjoint.v1.values, adjoint.v2.values
    s1, s2 = adjoint.s1.values, adjoint.s2.values

    # terms proportional to div V (full-domain P1-product integrals)
    scal = 0.5 * _pair_integrals(mesh, u2, u2)
    scal += medium.mu_a * (
        _pair_integrals(mesh, u1, v1)
        + _pair_integrals(mesh, u2, v2)
        + _pair_integrals(mesh, w1, s1)
        + _pair_integrals(mesh, w2, s2)
    )
    scal += _pair_integrals(mesh, u2, s2)

    # terms proportional to div V over the clipped region
    scal += 0.5 * inv_eps * fem.region_product_integrals(mesh, w, w1, w1)
    scal -= inv_eps * fem.region_product_integrals(mesh, w, w1, v1)
    vol = float(np.dot(cls.fractions, mesh.areas))
    scal += 2.0 * p.beta0 * (vol - p.gamma0) * cls.fractions * mesh.areas

    C = np.zeros((mesh.element_count, 2, 2))
    C[:, 0, 0] = scal
    C[:, 1, 1] = scal

    # E(V) = (div V) I - DV^T - DV against each state/adjoint gradient pair
    ev = mesh.elements
    G = mesh.grad_basis
    coeff = medium.D * mesh.areas
    for a, b in ((u1, v1), (u2, v2), (w1, s1), (w2, s2)):
        ga = np.einsum("mk,mkd->md", a[ev], G)
        gb = np.einsum("mk,mkd->md", b[ev], G)
        dot = coeff * (ga * gb).sum(axis=1)
        C[:, 0, 0] += dot
        C[:, 1, 1] += dot
        outer = ga[:, :, None] * gb[:, None, :] + gb[:, :, None] * ga[:, None, :]
        C -= coeff[:, None, None] * outer

    # perimeter variation along the interface chords
    if len(cls.seg_elements):
        n = cls.seg_normals
        nn = n[:, :, None] * n[:, None, :]
        eye = np.eye(2)[None]
        contrib = p.lambda0 * cls.seg_lengths[:, None, None] * (eye - nn)
        np.add.at(C, cls.seg_elements, contrib)
    return C


def _velocity_jacobians(mesh: TriMesh, V: VelocityField) -> np.ndarray:
    return np.einsum("mki,mkj->mij", V.vectors[mesh.elements], mesh.grad_basis)


def shape_derivative(state: StateFields, adjoint: AdjointFields, ls: LevelSetField,
                     V: VelocityField, p: OptParams, ccbm: CcbmParams,
                     medium: MediumParams) -> float:
    """Distributed shape derivative dJ(O; V) for one velocity field."""
    C = _element_cov(ls.mesh, medium, state, adjoint, ls, p, ccbm)
    DV = _velocity_jacobians(ls.mesh, V)
    return float(np.einsum("mij,mij->", C, DV))


def assemble_gradient_functional(state: StateFields, adjoint: AdjointFields,
                                 ls: LevelSetField, p: OptParams, ccbm: CcbmParams,
                                 medium: MediumParams) -> np.ndarray:
    """Nodal covector G with G . V = dJ(O; V) for every discrete velocity.

    Assembled element by element from the same integrals as
    :func:`shape_derivative`, so the agreement is exact.  Boundary entries
    are masked to zero (velocities vanish there by contract).
    """
    mesh = ls.mesh
    C = _element_cov(mesh, medium, state, adjoint, ls, p, ccbm)
    contrib = np.einsum("mij,mkj->mki", C, mesh.grad_basis)  # (M, 3, 2)
    G = np.zeros((mesh.vertex_count, 2))
    np.add.at(G, mesh.elements.ravel(), contrib.reshape(-1, 2))
    G[mesh.boundary_vertices] = 0.0
    return G


# -- Hilbertian descent direction --------------------------------------------------


class _HilbertSolver:
    """Factorized componentwise H1 solve with zero boundary values."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        K = assemble_bilinear_a(mesh, MediumParams.uniform(mesh, D=1.0, mu_a=1.0, A=1.0))
        self.interior = np.setdiff1d(
            np.arange(mesh.vertex_count), mesh.boundary_vertices
        )
        self.lu = fem.factorized(K[self.interior][:, self.interior])

    def descent(self, G: np.ndarray) -> VelocityField:
        V = np.zeros((self.mesh.vertex_count, 2))
        for c in (0, 1):
            V[self.interior, c] = self.lu.solve(-G[self.interior, c])
        return VelocityField(V, self.mesh)


def hilbertian_descent(mesh: TriMesh, G: np.ndarray) -> VelocityField:
    """Descent velocity from (grad V, grad W) + (V, W) = -G . W on H0^1.

    The returned field satisfies dJ(O; V) = -(|grad V|^2 + |V|^2) <= 0,
    so it is a descent direction whenever G is nonzero.
    """
    return _HilbertSolver(mesh).descent(G)


# -- descent loop -------------------------------------------------------------------


def optimize(mesh: TriMesh, medium: MediumParams, data: CauchyData,
             init_ls: LevelSetField, p: OptParams,
             on_iteration=None) -> OptimizeResult:
    """Shape steepest descent on the level-set representation.

    Per iteration: solve the state system on the current region, take the
    adjoint from the verified identity, assemble the nodal shape gradient,
    smooth it into a velocity, and advect the level set with
    dt = cfl h_min / max|V|, halving dt until the objective decreases
    (up to ``backtrack_max`` times).  Redistancing is folded into the trial
    every ``reinit_every``-th accepted step.  After ``warmup_iters``
    iterations the regularization parameters decay multiplicatively and
    alpha = c_alpha sqrt(eps) follows.  Terminates when the relative
    objective change drops below ``stop_tol``, the step budget runs out, or
    backtracking stalls (best iterate returned).
    """
    solver = CcbmSolver(mesh, medium)
    hilbert = _HilbertSolver(mesh)
    ls = init_ls
    eps, lam, beta = p.epsilon0, p.lambda0, p.beta0
    history: list[IterationRecord] = []
    status = "max_iters"
    cached = None
    best_J = np.inf
    best_ls = ls
    accepted = 0
    reinit_pending = False

    for k in range(p.max_iters):
        pk = replace(p, epsilon0=eps, lambda0=lam, beta0=beta)
        cp = CcbmParams(eps, p.c_alpha)
        if volume(ls) <= 0:
            status = "collapsed"
            break
        weights = ls.weights()
        if cached is None:
            state = solver.state(weights, data, cp)
            J_k, _ = _objective_terms(state, ls, pk, cp, solver.M)
        else:
            state, J_k = cached

        adjoint = solver.adjoint(weights, state, cp)
        G = assemble_gradient_functional(state, adjoint, ls, pk, cp, medium)
        V = hilbert.descent(G)
        vmax = V.max_norm()
        if vmax < 1e-14:
            status = "converged"
            break

        dt0 = p.cfl * mesh.h_min / vmax
        reinit_due = reinit_pending or (accepted + 1) % p.reinit_every == 0
        accepted_step = False
        backtracks = 0
        # redistancing is folded into the trial so accepted objective values
        # stay strictly monotone; if its O(h) interface shift blocks the line
        # search, the step is retried without it and the reinit is deferred
        for with_reinit in ((True, False) if reinit_due else (False,)):
            dt = dt0
            for bt in range(p.backtrack_max + 1):
                trial = advect(ls, V, dt)
                if with_reinit and not (trial.phi.min() > 0 or trial.phi.max() < 0):
                    trial = reinitialize(trial)
                if volume(trial) > 0:
                    state_t = solver.state(trial.weights(), data, cp)
                    J_t, comps_t = _objective_terms(state_t, trial, pk, cp, solver.M)
                    if J_t < J_k:
                        accepted_step = True
                        backtracks = bt
                        break
                dt *= 0.5
            if accepted_step:
                reinit_pending = reinit_due and not with_reinit
                break
        if not accepted_step:
            status = "stalled"
            break

        accepted += 1
        rec = IterationRecord(
            iteration=k,
            J=J_t,
            misfit=comps_t["misfit"],
            intensity=comps_t["intensity"],
            perimeter_term=comps_t["perimeter_term"],
            volume_term=comps_t["volume_term"],
            volume=comps_t["volume"],
            perimeter=comps_t["perimeter"],
            step_size=dt,
            backtracks=backtracks,
            epsilon=eps,
            alpha=cp.alpha,
            lam=lam,
            beta=beta,
            adjoint_residual=adjoint.residual,
        )
        history.append(rec)
        if on_iteration is not None:
            on_iteration(k, trial, rec)
        ls = trial
        cached = (state_t, J_t)
        if J_t < best_J:
            best_J = J_t
            best_ls = ls
        if abs(J_t - J_k) <= p.stop_tol * abs(J_k):
            status = "converged"
            break
        if k + 1 >= p.warmup_iters:
            eps *= p.decay
            lam *= p.decay
            beta *= p.decay
            cached = None

    final = best_ls if status == "stalled" else ls
    return OptimizeResult(final, history, status)
