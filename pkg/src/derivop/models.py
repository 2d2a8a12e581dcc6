"""Desk-scale parametric forward models with adjoint-exact Jacobian actions.

A nonlinear reaction-diffusion problem on the unit square, discretized with
a conservative 5-point finite-difference stencil, plus a Matern-type
Gaussian prior sampler and a closed-form tanh toy map used as an oracle.

The PDE is -div(e^m grad u) + c_nl * u^3 = s with u = 1 on the top edge,
u = 0 on the bottom edge, and zero flux on the sides.  Face diffusivities
average e^m arithmetically from the two adjacent nodal values.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linalg import LinearOperator


class NewtonConvergenceError(RuntimeError):
    """Newton failed to converge; carries the residual-norm history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class Grid:
    """Uniform n x n node grid on the unit square, row-major, bottom row first."""

    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs n >= 3, got {self.n}")

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    @property
    def num_nodes(self):
        return self.n * self.n

    def node(self, i, j):
        """Flat index of node at row i (y) and column j (x)."""
        return i * self.n + j

    def coords(self):
        """(num_nodes, 2) array of (x, y) node coordinates."""
        t = np.linspace(0.0, 1.0, self.n)
        x, y = np.meshgrid(t, t)  # rows indexed by y
        return np.column_stack([x.ravel(), y.ravel()])


@dataclass(frozen=True)
class PriorConfig:
    """Gaussian random field N(0, A^{-2}) with A = delta*I - gamma*Lap_h."""

    delta: float
    gamma: float
    grid: Grid

    def __post_init__(self):
        if self.delta <= 0 or self.gamma < 0:
            raise ValueError("delta must be > 0 and gamma >= 0")


def _neighbors(grid, i, j):
    if i > 0:
        yield i - 1, j
    if i < grid.n - 1:
        yield i + 1, j
    if j > 0:
        yield i, j - 1
    if j < grid.n - 1:
        yield i, j + 1


@lru_cache(maxsize=8)
def prior_operator(cfg):
    """Sparse A = delta*I - gamma*Lap_h with the zero-flux boundary closure."""
    grid = cfg.grid
    h2 = grid.h**2
    rows, cols, vals = [], [], []
    for i in range(grid.n):
        for j in range(grid.n):
            p = grid.node(i, j)
            diag = cfg.delta
            for ii, jj in _neighbors(grid, i, j):
                q = grid.node(ii, jj)
                diag += cfg.gamma / h2
                rows.append(p)
                cols.append(q)
                vals.append(-cfg.gamma / h2)
            rows.append(p)
            cols.append(p)
            vals.append(diag)
    d = grid.num_nodes
    return sp.csc_matrix((vals, (rows, cols)), shape=(d, d))


@lru_cache(maxsize=8)
def _prior_factor(cfg):
    return spla.splu(prior_operator(cfg))


def sample_prior(cfg, rng):
    """Draw m = A^{-1} xi with xi ~ N(0, I) in nodal coordinates."""
    xi = rng.standard_normal(cfg.grid.num_nodes)
    return _prior_factor(cfg).solve(xi)


def gaussian_bump_source(grid, centers, width=0.05, amplitude=1.0):
    """Sum of isotropic Gaussian bumps evaluated at the grid nodes."""
    xy = grid.coords()
    s = np.zeros(grid.num_nodes)
    for cx, cy in centers:
        d2 = (xy[:, 0] - cx) ** 2 + (xy[:, 1] - cy) ** 2
        s += amplitude * np.exp(-d2 / (2.0 * width**2))
    return s


def default_source(grid, n_side=5, width=0.05, amplitude=1.0):
    """25 bumps on a centered n_side x n_side Cartesian grid."""
    ticks = np.linspace(0.2, 0.8, n_side)
    centers = [(cx, cy) for cy in ticks for cx in ticks]
    return gaussian_bump_source(grid, centers, width=width, amplitude=amplitude)


def lower_half_observation_nodes(grid, n_side=5):
    """n_side x n_side observation sub-grid in the lower half of the domain."""
    x_fracs = np.linspace(1.0 / 6.0, 5.0 / 6.0, n_side)
    y_fracs = np.linspace(1.0 / 12.0, 5.0 / 12.0, n_side)
    nodes = []
    for yf in y_fracs:
        i = int(round(yf * (grid.n - 1)))
        i = min(max(i, 1), grid.n - 2)
        for xf in x_fracs:
            j = int(round(xf * (grid.n - 1)))
            j = min(max(j, 1), grid.n - 2)
            nodes.append(grid.node(i, j))
    return np.array(nodes, dtype=np.intp)


@dataclass(frozen=True, eq=False)
class RDModel:
    """Reaction-diffusion forward model m -> q on a uniform grid."""

    grid: Grid
    c_nl: float = 1.0
    source: np.ndarray = None
    obs_nodes: np.ndarray = None
    newton_tol: float = 1e-10
    newton_max_iters: int = 25

    def __post_init__(self):
        if self.c_nl < 0:
            raise ValueError("c_nl must be >= 0")
        if self.source is None:
            object.__setattr__(self, "source", default_source(self.grid))
        if self.obs_nodes is None:
            object.__setattr__(
                self, "obs_nodes", lower_half_observation_nodes(self.grid)
            )
        src = np.asarray(self.source, dtype=float)
        if src.shape != (self.grid.num_nodes,):
            raise ValueError("source length must equal the node count")
        object.__setattr__(self, "source", src)
        obs = np.asarray(self.obs_nodes, dtype=np.intp)
        n = self.grid.n
        for p in obs:
            i, j = divmod(int(p), n)
            if i in (0, n - 1) or j in (0, n - 1):
                raise ValueError(f"observation node {p} is not interior")
        object.__setattr__(self, "obs_nodes", obs)

    @property
    def d_m(self):
        return self.grid.num_nodes

    @property
    def d_u(self):
        return self.grid.num_nodes

    @property
    def d_q(self):
        return len(self.obs_nodes)

    def config_dict(self):
        return {
            "kind": "reaction_diffusion",
            "grid_n": self.grid.n,
            "c_nl": self.c_nl,
            "obs_nodes": self.obs_nodes.tolist(),
            "newton_tol": self.newton_tol,
            "newton_max_iters": self.newton_max_iters,
        }


def _node_kind(grid):
    """Masks for the Dirichlet rows: bottom edge (u=0) and top edge (u=1)."""
    n = grid.n
    bottom = np.zeros(grid.num_nodes, dtype=bool)
    top = np.zeros(grid.num_nodes, dtype=bool)
    bottom[:n] = True
    top[-n:] = True
    return bottom, top


def dirichlet_values(model):
    bottom, top = _node_kind(model.grid)
    g = np.zeros(model.d_u)
    g[top] = 1.0
    return g, bottom | top


def residual(model, u, m):
    """Discrete residual R(u, m); Dirichlet rows are u - g."""
    grid = model.grid
    n, h2 = grid.n, grid.h**2
    k = np.exp(m)
    g, fixed = dirichlet_values(model)
    R = np.where(fixed, u - g, model.c_nl * u**3 - model.source)
    U = u.reshape(n, n)
    K = k.reshape(n, n)
    flux = np.zeros((n, n))
    # Horizontal faces (between rows i and i+1) and vertical faces.
    for axis in (0, 1):
        dU = np.diff(U, axis=axis)
        Kf = 0.5 * (K[:-1] + K[1:]) if axis == 0 else 0.5 * (K[:, :-1] + K[:, 1:])
        con = Kf * dU / h2
        if axis == 0:
            flux[:-1] += -con
            flux[1:] += con
        else:
            flux[:, :-1] += -con
            flux[:, 1:] += con
    R = R + np.where(fixed, 0.0, flux.ravel())
    return R


def state_jacobian(model, u, m):
    """Sparse dR/du at (u, m)."""
    grid = model.grid
    h2 = grid.h**2
    k = np.exp(m)
    g, fixed = dirichlet_values(model)
    rows, cols, vals = [], [], []
    for i in range(grid.n):
        for j in range(grid.n):
            p = grid.node(i, j)
            if fixed[p]:
                rows.append(p)
                cols.append(p)
                vals.append(1.0)
                continue
            diag = 3.0 * model.c_nl * u[p] ** 2
            for ii, jj in _neighbors(grid, i, j):
                q = grid.node(ii, jj)
                kf = 0.5 * (k[p] + k[q])
                diag += kf / h2
                rows.append(p)
                cols.append(q)
                vals.append(-kf / h2)
            rows.append(p)
            cols.append(p)
            vals.append(diag)
    d = grid.num_nodes
    return sp.csc_matrix((vals, (rows, cols)), shape=(d, d))


def parameter_jacobian(model, u, m):
    """Sparse dR/dm at (u, m); Dirichlet rows are zero."""
    grid = model.grid
    h2 = grid.h**2
    k = np.exp(m)
    _, fixed = dirichlet_values(model)
    rows, cols, vals = [], [], []
    for i in range(grid.n):
        for j in range(grid.n):
            p = grid.node(i, j)
            if fixed[p]:
                continue
            for ii, jj in _neighbors(grid, i, j):
                q = grid.node(ii, jj)
                du = (u[p] - u[q]) / h2
                rows.append(p)
                cols.append(p)
                vals.append(0.5 * k[p] * du)
                rows.append(p)
                cols.append(q)
                vals.append(0.5 * k[q] * du)
    d = grid.num_nodes
    return sp.csc_matrix((vals, (rows, cols)), shape=(d, d))


def solve_state(model, m, u0=None):
    """Newton solve of R(u, m) = 0 with Armijo backtracking.

    Converges when ||R||_2 <= newton_tol * max(1, ||s||_2).  Raises
    :class:`NewtonConvergenceError` with the residual history on failure.
    """
    m = np.asarray(m, dtype=float)
    grid = model.grid
    if u0 is None:
        # Linear-in-y profile satisfies the Dirichlet data exactly.
        u = np.repeat(np.linspace(0.0, 1.0, grid.n), grid.n)
    else:
        u = np.array(u0, dtype=float)
    tol = model.newton_tol * max(1.0, float(np.linalg.norm(model.source)))
    R = residual(model, u, m)
    rnorm = np.linalg.norm(R)
    history = [rnorm]
    for _ in range(model.newton_max_iters):
        if rnorm <= tol:
            return u
        J = state_jacobian(model, u, m)
        step = spla.splu(J).solve(-R)
        alpha = 1.0
        while alpha > 1e-12:
            u_try = u + alpha * step
            R_try = residual(model, u_try, m)
            if np.linalg.norm(R_try) <= (1.0 - 1e-4 * alpha) * rnorm:
                break
            alpha *= 0.5
        else:
            raise NewtonConvergenceError("line search stalled", history)
        u, R = u_try, R_try
        rnorm = np.linalg.norm(R)
        history.append(rnorm)
    if rnorm <= tol:
        return u
    raise NewtonConvergenceError(
        f"no convergence in {model.newton_max_iters} iterations "
        f"(||R|| = {rnorm:.3e}, tol = {tol:.3e})",
        history,
    )


def observe(model, u):
    """Pointwise observation q[i] = u[obs_nodes[i]]."""
    u = np.asarray(u, dtype=float)
    if u.shape != (model.d_u,):
        raise ValueError(f"state length {u.shape} != {model.d_u}")
    return u[model.obs_nodes].copy()


def jacobian_operator(model, m, u):
    """Matrix-free dq/dm at a converged state, reusing one factorization.

    Realizes -B [dR/du]^{-1} dR/dm with B the observation selector; the
    sparse LU of dR/du serves both the forward and the transpose action.
    """
    m = np.asarray(m, dtype=float)
    u = np.asarray(u, dtype=float)
    lu = spla.splu(state_jacobian(model, u, m))
    dRdm = parameter_jacobian(model, u, m)
    obs = model.obs_nodes

    def apply(v):
        return -lu.solve(dRdm @ v)[obs]

    def apply_transpose(w):
        rhs = np.zeros(model.d_u)
        # accumulate: coarse grids may map several sensors to one node
        np.add.at(rhs, obs, w)
        return -(dRdm.T @ lu.solve(rhs, trans="T"))

    return LinearOperator(
        nrows=model.d_q,
        ncols=model.d_m,
        apply=apply,
        apply_transpose=apply_transpose,
    )


TOY_MAP_SEED = 714025


@dataclass(frozen=True, eq=False)
class ToyMap:
    """Analytic oracle map q = B tanh(C m) with exact dense Jacobian."""

    B: np.ndarray
    C: np.ndarray

    @classmethod
    def default(cls, d_m=20, d_q=8, p=5, seed=TOY_MAP_SEED):
        rng = np.random.default_rng(seed)
        B = rng.standard_normal((d_q, p)) / np.sqrt(p)
        C = rng.standard_normal((p, d_m)) / np.sqrt(d_m)
        return cls(B=B, C=C)

    @property
    def d_m(self):
        return self.C.shape[1]

    @property
    def d_q(self):
        return self.B.shape[0]

    def config_dict(self):
        return {"kind": "toy_tanh", "d_m": self.d_m, "d_q": self.d_q,
                "p": self.B.shape[1], "seed": TOY_MAP_SEED}


def toy_map(model, m):
    """Evaluate the toy map and its exact Jacobian B diag(1 - tanh^2(Cm)) C."""
    m = np.asarray(m, dtype=float)
    t = np.tanh(model.C @ m)
    q = model.B @ t
    jac = (model.B * (1.0 - t**2)) @ model.C
    return q, jac
