"""Bundle data (k, c1, h0, lambda), flow state (t, u, f) and derived curvature."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import MeshSurface, laplacian


@dataclass(frozen=True)
class BundleSpec:
    """Principal T^k bundle data.

    ``c1`` is the Chern vector, ``h0`` the fiber inner product at t = 0 and
    ``lam`` the normalization constant of the flow (h_t = e^{-lam t} h0).
    """

    k: int
    c1: tuple[int, ...]
    h0: np.ndarray = field(compare=False)
    lam: int = 0

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError(f"bundle rank k must be >= 1, got {self.k}")
        c1 = tuple(int(c) for c in np.atleast_1d(self.c1))
        if len(c1) != self.k:
            raise ValueError(f"c1 has {len(c1)} entries, expected k={self.k}")
        if any(c != x for c, x in zip(c1, np.atleast_1d(self.c1))):
            raise ValueError(f"c1 must be integral, got {self.c1}")
        h0 = np.array(self.h0, dtype=float).reshape(self.k, self.k)
        if not np.allclose(h0, h0.T, rtol=0, atol=1e-12):
            raise ValueError("h0 must be symmetric")
        eig = np.linalg.eigvalsh(h0)
        if eig.min() <= 0:
            raise ValueError(f"h0 must be positive definite; eigenvalues {eig.tolist()}")
        if self.lam not in (-1, 0, 1):
            raise ValueError(f"lambda must be one of -1, 0, 1, got {self.lam}")
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "lam", int(self.lam))

    @classmethod
    def line(cls, c1: int = 0, h: float = 1.0, lam: int = 0) -> "BundleSpec":
        """Circle bundle (k = 1) shorthand."""
        return cls(k=1, c1=(c1,), h0=np.array([[h]]), lam=lam)

    @property
    def trivial(self) -> bool:
        return not any(self.c1)


def fiber_metric_at(spec: BundleSpec, t: float) -> np.ndarray:
    """h_t = e^{-lam t} h0, the exact solution of dh/dt = -lam h."""
    return np.exp(-spec.lam * t) * spec.h0


def zeta(spec: BundleSpec, mesh: MeshSurface) -> np.ndarray:
    """Constant curvature density of the harmonic background connection.

    Normalized so that sum_i zeta a_i = 2 pi c1 on the discrete surface.
    """
    return 2.0 * np.pi * np.asarray(spec.c1, dtype=float) / mesh.area


@dataclass(frozen=True, eq=False)
class FlowState:
    """Snapshot of the reduced flow: conformal factor u and potential f of shape (k, V)."""

    t: float
    u: np.ndarray
    f: np.ndarray
    spec: BundleSpec
    mesh: MeshSurface

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        f = np.asarray(self.f, dtype=float).reshape(self.spec.k, -1)
        if u.shape != (self.mesh.n_vertices,) or f.shape[1] != self.mesh.n_vertices:
            raise ValueError("field length does not match the mesh vertex count")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(f))):
            raise FloatingPointError(f"non-finite state at t={self.t}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "f", f)

    @property
    def h(self) -> np.ndarray:
        return fiber_metric_at(self.spec, self.t)

    def replace(self, **changes) -> "FlowState":
        return replace(self, **changes)

    @classmethod
    def initial(cls, mesh: MeshSurface, spec: BundleSpec, u=0.0, f=0.0, t: float = 0.0) -> "FlowState":
        n = mesh.n_vertices
        u = np.broadcast_to(np.asarray(u, float), (n,)).copy()
        f = np.broadcast_to(np.asarray(f, float), (spec.k, n)).copy()
        return cls(t=t, u=u, f=f, spec=spec, mesh=mesh)


def curvature_density(state: FlowState) -> np.ndarray:
    """phi^I = zeta^I + Lap f^I, so that F = phi (x) omega_Sigma; shape (k, V)."""
    return zeta(state.spec, state.mesh)[:, None] + laplacian(state.mesh, state.f)


def fiber_quadratic(phi: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-vertex phi^T h phi for phi of shape (k, V)."""
    return np.sum(phi * (h @ phi), axis=0)


def F_norm_sq(state: FlowState) -> np.ndarray:
    """|F|^2_{g_t, h_t} = 2 e^{-2u} phi^T h_t phi (full tensor norm, |omega_g|^2 = 2)."""
    phi = curvature_density(state)
    return 2.0 * np.exp(-2.0 * state.u) * fiber_quadratic(phi, state.h)


def chern_integrals(state: FlowState) -> np.ndarray:
    """int phi^I dV_Sigma for each component; equals 2 pi c1 along any flow."""
    return curvature_density(state) @ state.mesh.vertex_areas
