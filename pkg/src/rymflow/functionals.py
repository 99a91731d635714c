"""Functionals of a flow state: Liouville energy and its dissipation, the
shrinker entropy and its variation, volume, Calabi energy and total-space sizes.

Integrals are vertex quadratures: int phi dV_Sigma = sum_i a_i phi_i and
dV_g = e^u dV_Sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import FlowState, curvature_density, fiber_quadratic
from .mesh import dirichlet, geodesic_diameter, grad_form, laplacian

ENTROPY_DIM = 2


@dataclass(frozen=True)
class EnergyReport:
    F_value: float
    dissipation_analytic: float
    dirichlet: float
    curvature: float
    topological: float
    volume_term: float


def _form_quadratic(state: FlowState) -> np.ndarray:
    """phi^T h_t phi per vertex."""
    return fiber_quadratic(curvature_density(state), state.h)


def liouville_energy(state: FlowState, with_dissipation: bool = True) -> EnergyReport:
    """Energy whose weighted gradient flow is the reduced system.

    The curvature term is int e^{-u} phi^T h_t phi dV_Sigma, the squared norm of
    the curvature two-form measured with the background metric.  The
    dissipation costs one rhs evaluation; it is NaN when skipped.
    """
    mesh, a = state.mesh, state.mesh.vertex_areas
    terms = (
        0.5 * dirichlet(mesh, state.u),
        float(a @ (np.exp(-state.u) * _form_quadratic(state))),
        mesh.R_sigma * float(a @ state.u),
        state.spec.lam * float(a @ np.exp(state.u)),
    )
    diss = liouville_dissipation(state) if with_dissipation else float("nan")
    return EnergyReport(float(sum(terms)), diss, *terms)


def liouville_dissipation(state: FlowState) -> float:
    """Exact time derivative of the Liouville energy along the flow.

    Sum of -int e^u (du/dt)^2, -lam int e^{-u} phi^T h phi and
    -2 sum_IJ h_IJ D(psi^I, psi^J), with psi = e^{-u} phi and D the Dirichlet form.
    """
    from .flow import rhs

    mesh, a = state.mesh, state.mesh.vertex_areas
    du, _ = rhs(state)
    em = np.exp(-state.u)
    phi = curvature_density(state)
    psi = em * phi
    grad_part = np.einsum("ij,ij->", state.h, -psi @ (mesh.weights @ psi.T))
    return float(
        -a @ (np.exp(state.u) * du * du)
        - state.spec.lam * (a @ (em * fiber_quadratic(phi, state.h)))
        - 2.0 * grad_part
    )


def volume(state: FlowState) -> float:
    return float(state.mesh.vertex_areas @ np.exp(state.u))


def volume_rate(state: FlowState) -> float:
    """d/dt Vol = -R_Sigma A + (1/2) int |F|^2 dV_g - lam Vol (discretely exact)."""
    mesh, a = state.mesh, state.mesh.vertex_areas
    half_F = a @ (np.exp(-state.u) * _form_quadratic(state))
    return float(-mesh.R_sigma * mesh.area + half_F - state.spec.lam * volume(state))


def scalar_curvature(state: FlowState) -> np.ndarray:
    """R_g = e^{-u} (R_Sigma - Lap u)."""
    return np.exp(-state.u) * (state.mesh.R_sigma - laplacian(state.mesh, state.u))


def calabi_energy(state: FlowState) -> float:
    """int (R_g - Rbar)^2 dV_g, with Rbar the exact discrete mean R_Sigma A / Vol."""
    a = state.mesh.vertex_areas
    vol_w = a * np.exp(state.u)
    R = scalar_curvature(state)
    Rbar = state.mesh.R_sigma * state.mesh.area / vol_w.sum()
    return float(vol_w @ (R - Rbar) ** 2)


@dataclass(frozen=True)
class TotalSpaceInvariants:
    total_volume: float
    fiber_diameter: float
    base_diameter: float


def fiber_diameter(state: FlowState) -> float:
    """pi sqrt(k lambda_max(h_t)) for the fiber lattice (2 pi Z)^k."""
    return float(np.pi * np.sqrt(state.spec.k * np.linalg.eigvalsh(state.h)[-1]))


def total_space_invariants(state: FlowState, base_diameter: float | None = None) -> TotalSpaceInvariants:
    k = state.spec.k
    tv = volume(state) * (2.0 * np.pi) ** k * np.sqrt(np.linalg.det(state.h))
    if base_diameter is None:
        base_diameter = geodesic_diameter(state.mesh, state.u)
    return TotalSpaceInvariants(float(tv), fiber_diameter(state), float(base_diameter))


# --- entropy -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EntropyInput:
    """State with lam = 0, positive density w of unit g-mass, and scale tau > 0."""

    state: FlowState
    w: np.ndarray
    tau: float
    n: int = ENTROPY_DIM
    check_mass: bool = True

    def __post_init__(self):
        if self.state.spec.lam != 0:
            raise ValueError("entropy is only defined for lambda = 0")
        if self.n != ENTROPY_DIM:
            raise ValueError(f"only n = {ENTROPY_DIM} is supported")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        w = np.asarray(self.w, float)
        if w.shape != self.state.u.shape:
            raise ValueError("density length does not match the mesh")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("density must be finite and positive")
        if self.check_mass:
            mass = float(self.state.mesh.vertex_areas @ (w * np.exp(self.state.u)))
            if abs(mass - 1.0) > 1e-8:
                raise ValueError(f"density must have unit mass, got {mass:.12g}")
        object.__setattr__(self, "w", w)

    @classmethod
    def from_potential(cls, state: FlowState, f_minus: np.ndarray, tau: float) -> "EntropyInput":
        """Density e^{-f_-} / (4 pi tau), taken as is (no mass check)."""
        w = np.exp(-np.asarray(f_minus, float)) / (4.0 * np.pi * tau)
        return cls(state, w, tau, check_mass=False)

    @property
    def f_minus(self) -> np.ndarray:
        return -np.log(self.w) - 0.5 * self.n * np.log(4.0 * np.pi * self.tau)


def _entropy_integrand(inp: EntropyInput) -> np.ndarray:
    """Per-vertex tau (Lap_g f_- + R - |F|^2/4) + f_- - 2.

    Lap_g f_- stands in for |grad f_-|^2: both integrate to the same value
    against w = C e^{-f_-}, and the Laplacian form makes the discrete first
    variation exact.
    """
    st = inp.state
    fm = inp.f_minus
    em = np.exp(-st.u)
    lap_g = em * laplacian(st.mesh, fm)
    F_sq = 2.0 * em * em * _form_quadratic(st)
    return inp.tau * (lap_g + scalar_curvature(st) - 0.25 * F_sq) + fm - inp.n


def entropy_W(inp: EntropyInput) -> float:
    a = inp.state.mesh.vertex_areas
    return float((a * np.exp(inp.state.u) * inp.w) @ _entropy_integrand(inp))


def potential_gradient_weight(inp: EntropyInput) -> float:
    """int |grad f|^2_{g, h0} w dV_g; the conformal factors cancel."""
    st = inp.state
    return float(st.mesh.vertex_areas @ (grad_form(st.mesh, st.f, st.spec.h0) * inp.w))


def modified_entropy(inp: EntropyInput) -> float:
    return entropy_W(inp) - potential_gradient_weight(inp)


def entropy_variation(inp: EntropyInput, du=None, df=None, v_h=None, phi_minus=None, sigma: float = 0.0) -> float:
    """First variation of the entropy along u + e du, f + e df, h + e v_h,
    f_- + e phi_minus, tau + e sigma, with w = e^{-f_-}/(4 pi tau) following
    f_- and tau.
    """
    st = inp.state
    mesh, a = st.mesh, st.mesh.vertex_areas
    V, k = mesh.n_vertices, st.spec.k
    du = np.zeros(V) if du is None else np.asarray(du, float)
    df = np.zeros((k, V)) if df is None else np.asarray(df, float).reshape(k, V)
    v_h = np.zeros((k, k)) if v_h is None else np.asarray(v_h, float).reshape(k, k)
    phi_minus = np.zeros(V) if phi_minus is None else np.asarray(phi_minus, float)
    tau, w = inp.tau, inp.w
    em = np.exp(-st.u)
    dm = a * np.exp(st.u) * w  # w dV_g
    phi = curvature_density(st)
    q = fiber_quadratic(phi, st.h)
    F_sq = 2.0 * em * em * q
    fm = inp.f_minus
    integrand = _entropy_integrand(inp)

    # relative change of w
    eta = -phi_minus - sigma / tau
    density = dm @ (eta * integrand)
    scale = sigma / tau * (dm @ (integrand - fm + inp.n))
    potential = tau * (w @ (mesh.weights @ phi_minus)) + dm @ phi_minus
    conformal = dm @ (du * (0.25 * tau * F_sq + fm - inp.n)) - tau * (w @ (mesh.weights @ du))
    fiber = -0.5 * tau * (dm @ (em * em * fiber_quadratic(phi, v_h)))
    L_df = (mesh.weights @ df.T).T
    connection = -tau * float((w * em) @ np.einsum("iv,ij,jv->v", phi, st.h, L_df))
    return float(density + scale + potential + conformal + fiber + connection)
