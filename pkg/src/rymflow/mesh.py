"""Triangulated constant-curvature backgrounds and their discrete operators.

Two backgrounds are supported: the flat square torus [0, 2pi)^2 (R = 0) and
the round sphere of radius sqrt(2) (R = 1).  Both carry the cotangent
Laplacian with lumped vertex areas a_i:

    (Lap phi)_i = (1/a_i) sum_j w_ij (phi_j - phi_i),   w_ij = (cot a + cot b)/2

Fields are plain numpy arrays: a scalar field has shape ``(V,)`` and a
t^k-valued field has shape ``(k, V)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

SPHERE_RADIUS = np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class MeshSurface:
    """Closed triangulated surface with a constant-curvature background metric.

    ``vertices`` are 3-space positions for the sphere and grid coordinates in
    [0, 2pi)^2 for the torus.  Geometry that depends on the periodic wrap
    (edge lengths, cotangents) is computed once at build time.
    """

    kind: str
    vertices: np.ndarray
    triangles: np.ndarray
    cotan: np.ndarray  # (F, 3) cot of the angle at each triangle corner
    tri_areas: np.ndarray
    vertex_areas: np.ndarray
    edges: np.ndarray  # (E, 2), i < j
    edge_lengths: np.ndarray
    weights: sparse.csr_matrix  # L, symmetric, zero row sums
    R_sigma: float
    chi: int
    background_area: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def area(self) -> float:
        """Discrete total area sum_i a_i (equals ``background_area`` on the torus)."""
        return float(self.vertex_areas.sum())

    @property
    def spectral_bound(self) -> float:
        """Gershgorin bound max_i (2/a_i) sum_j |w_ij| on the spectral radius of Lap."""
        if "spectral_bound" not in self._cache:
            off = self.weights - sparse.diags(self.weights.diagonal())
            rowsum = np.asarray(abs(off).sum(axis=1)).ravel()
            self._cache["spectral_bound"] = float(np.max(2.0 * rowsum / self.vertex_areas))
        return self._cache["spectral_bound"]

    def unit_positions(self) -> np.ndarray:
        """Vertex positions rescaled to the unit sphere."""
        if self.kind != "sphere":
            raise ValueError("unit positions are only defined on the sphere mesh")
        return self.vertices / np.linalg.norm(self.vertices, axis=1, keepdims=True)

    def coordinates(self) -> dict[str, np.ndarray]:
        """Named coordinate fields used to build initial data (unit sphere on spheres)."""
        if self.kind == "torus":
            return {"x": self.vertices[:, 0], "y": self.vertices[:, 1]}
        v = self.unit_positions()
        return {"x": v[:, 0], "y": v[:, 1], "z": v[:, 2]}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype=np.int64).tobytes())
        return h.hexdigest()


def _cross_norm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] == 2:
        return np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    return np.linalg.norm(np.cross(a, b), axis=1)


def _assemble(kind, vertices, triangles, edge_vecs, R_sigma, chi, background_area,
              tri_areas=None):
    """Build cotangent weights and areas from per-corner edge vectors.

    ``edge_vecs[t, c]`` is the vector from corner c to corner c+1 of triangle t,
    so periodic wraps are resolved by the caller.  ``tri_areas`` overrides the
    flat triangle areas used for the vertex masses.
    """
    e0, e1, e2 = edge_vecs[:, 0], edge_vecs[:, 1], edge_vecs[:, 2]
    # angle at corner c sits between -e_{c-1} and e_c
    pairs = ((-e2, e0), (-e0, e1), (-e1, e2))
    cot = np.empty((len(triangles), 3))
    for c, (a, b) in enumerate(pairs):
        cot[:, c] = np.einsum("ij,ij->i", a, b) / _cross_norm(a, b)
    if tri_areas is None:
        tri_areas = 0.5 * _cross_norm(e0, -e2)

    n = len(vertices)
    t = triangles
    # edge opposite corner c joins corners c+1 and c+2
    I = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    J = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
    S = 0.5 * np.concatenate([cot[:, 0], cot[:, 1], cot[:, 2]])
    W = sparse.coo_matrix((np.concatenate([S, S]), (np.concatenate([I, J]), np.concatenate([J, I]))),
                          shape=(n, n)).tocsr()
    W.sum_duplicates()
    W = (W - sparse.diags(np.asarray(W.sum(axis=1)).ravel())).tocsr()

    vertex_areas = np.bincount(t.ravel(), weights=np.repeat(tri_areas / 3.0, 3), minlength=n)

    lens = np.linalg.norm(edge_vecs.reshape(-1, edge_vecs.shape[-1]), axis=1).reshape(-1, 3)
    a = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    b = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    ln = np.concatenate([lens[:, 0], lens[:, 1], lens[:, 2]])
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo.astype(np.int64) * n + hi
    _, first = np.unique(key, return_index=True)
    edges = np.stack([lo[first], hi[first]], axis=1)
    edge_lengths = ln[first]

    return MeshSurface(kind=kind, vertices=vertices, triangles=triangles, cotan=cot,
                       tri_areas=tri_areas, vertex_areas=vertex_areas, edges=edges,
                       edge_lengths=edge_lengths, weights=W, R_sigma=float(R_sigma),
                       chi=int(chi), background_area=float(background_area))


def build_torus_mesh(n: int) -> MeshSurface:
    """Flat torus [0, 2pi)^2 on a uniform n x n grid, squares split along one diagonal.

    On this grid the cotangent Laplacian is exactly the 5-point stencil.
    """
    if n < 8 or n % 2:
        raise ValueError(f"torus resolution must be even and >= 8, got {n}")
    h = 2.0 * np.pi / n
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    vertices = np.stack([ii.ravel() * h, jj.ravel() * h], axis=1)

    def vid(i, j):
        return (i % n) * n + (j % n)

    i, j = ii.ravel(), jj.ravel()
    lower = np.stack([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)], axis=1)
    upper = np.stack([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)], axis=1)
    triangles = np.concatenate([lower, upper])
    ev_lower = np.array([[h, 0.0], [0.0, h], [-h, -h]])
    ev_upper = np.array([[h, h], [-h, 0.0], [0.0, -h]])
    edge_vecs = np.concatenate([np.broadcast_to(ev_lower, (n * n, 3, 2)),
                                np.broadcast_to(ev_upper, (n * n, 3, 2))])
    mesh = _assemble("torus", vertices, triangles, edge_vecs, 0.0, 0, 4.0 * np.pi ** 2)
    # uniform grid: every vertex area is exactly h^2
    object.__setattr__(mesh, "vertex_areas", np.full(n * n, h * h))
    return mesh


_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def _icosphere(subdiv: int) -> tuple[np.ndarray, np.ndarray]:
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
             [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
             [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = _ICO_FACES.copy()
    for _ in range(subdiv):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new)
    return np.array(verts), faces


def _spherical_areas(p: np.ndarray, r: float) -> np.ndarray:
    """Areas of the geodesic triangles spanned by the corners (sum is exactly 4 pi r^2)."""
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = r ** 3 + r * (np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c)
                        + np.einsum("ij,ij->i", c, a))
    return 2.0 * np.arctan2(num, den) * r * r


def build_sphere_mesh(subdiv: int) -> MeshSurface:
    """Icosphere projected to radius sqrt(2): Gauss curvature 1/2, scalar curvature 1, area 8pi.

    Cotangent weights come from the flat triangles; vertex areas are thirds of
    the geodesic triangle areas, so the total is 8 pi to rounding.
    """
    if subdiv < 3:
        raise ValueError(f"sphere subdivision must be >= 3, got {subdiv}")
    verts, faces = _icosphere(subdiv)
    verts = SPHERE_RADIUS * verts
    p = verts[faces]
    edge_vecs = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    mesh = _assemble("sphere", verts, faces, edge_vecs, 1.0, 2, 8.0 * np.pi,
                     tri_areas=_spherical_areas(p, SPHERE_RADIUS))
    if np.any(mesh.cotan <= 0):
        raise RuntimeError("icosphere produced a non-acute triangle; cotan weights would be negative")
    return mesh


def laplacian(mesh: MeshSurface, phi: np.ndarray) -> np.ndarray:
    """Background Laplace-Beltrami operator; accepts (V,) or (k, V) fields."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        return mesh.weights @ phi / mesh.vertex_areas
    return (mesh.weights @ phi.T).T / mesh.vertex_areas


def _grad_operators(mesh: MeshSurface):
    """Cached sparse maps for the gradient pairing.

    ``diff`` takes vertex values to the three edge differences of every
    triangle (stacked by corner), ``half_cot`` holds cot(opposite)/2 in the
    same order, and ``scatter`` averages triangle values onto vertices with
    triangle-area weights.  A_T <grad phi, grad psi>_T = sum_e cot_e/2 d_e phi d_e psi.
    """
    if "grad_ops" not in mesh._cache:
        t = mesh.triangles
        T, V = len(t), mesh.n_vertices
        rows = np.arange(3 * T)
        a = np.concatenate([t[:, (c + 1) % 3] for c in range(3)])
        b = np.concatenate([t[:, (c + 2) % 3] for c in range(3)])
        diff = sparse.csr_matrix(
            (np.r_[np.ones(3 * T), -np.ones(3 * T)], (np.r_[rows, rows], np.r_[a, b])), shape=(3 * T, V))
        half_cot = 0.5 * mesh.cotan.T.ravel()
        inc = sparse.csr_matrix((np.ones(3 * T), (t.ravel(), np.repeat(np.arange(T), 3))), shape=(V, T))
        vertex_tri_area = inc @ mesh.tri_areas
        scatter = sparse.diags(1.0 / vertex_tri_area) @ inc
        mesh._cache["grad_ops"] = (diff, half_cot, scatter.tocsr(), T)
    return mesh._cache["grad_ops"]


def grad_inner(mesh: MeshSurface, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Per-vertex <d phi, d psi>_{g_Sigma}: area-weighted average over incident triangles
    of the pairing of the piecewise-affine interpolants."""
    diff, half_cot, scatter, T = _grad_operators(mesh)
    dphi = diff @ np.asarray(phi, float)
    dpsi = dphi if psi is phi else diff @ np.asarray(psi, float)
    # area-weighted triangle values A_T <grad phi, grad psi>_T
    tri = (half_cot * dphi * dpsi).reshape(3, T).sum(axis=0)
    return scatter @ tri


def grad_form(mesh: MeshSurface, f: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-vertex sum_IJ h_IJ <d f^I, d f^J>_{g_Sigma} for f of shape (k, V)."""
    diff, half_cot, scatter, T = _grad_operators(mesh)
    df = np.ascontiguousarray((diff @ np.asarray(f, float).T).T)
    tri = (half_cot * np.sum(df * (h @ df), axis=0)).reshape(3, T).sum(axis=0)
    return scatter @ tri


def grad_norm_sq(mesh: MeshSurface, phi: np.ndarray) -> np.ndarray:
    """Per-vertex |d phi|^2_{g_Sigma}."""
    return grad_inner(mesh, phi, phi)


def integrate(mesh: MeshSurface, phi: np.ndarray) -> float:
    """sum_i phi_i a_i, the discrete integral against dV_Sigma."""
    return float(np.dot(np.asarray(phi, float), mesh.vertex_areas))


def dirichlet(mesh: MeshSurface, phi: np.ndarray, psi: np.ndarray | None = None) -> float:
    """Discrete Dirichlet pairing -phi^T L psi = int <d phi, d psi> dV_Sigma."""
    psi = phi if psi is None else psi
    return float(-np.dot(phi, mesh.weights @ psi))


def _farthest_point_sources(mesh: MeshSurface, graph, count: int) -> np.ndarray:
    sources = [0]
    dist = csgraph.dijkstra(graph, directed=False, indices=0)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        if dist[nxt] == 0.0:
            break
        sources.append(nxt)
        dist = np.minimum(dist, csgraph.dijkstra(graph, directed=False, indices=nxt))
    return np.array(sources)


def edge_graph(mesh: MeshSurface, u: np.ndarray | None = None) -> sparse.csr_matrix:
    """Edge graph with conformal lengths l_ij exp((u_i + u_j)/4) under e^u g_Sigma."""
    lengths = mesh.edge_lengths
    if u is not None:
        lengths = lengths * np.exp((u[mesh.edges[:, 0]] + u[mesh.edges[:, 1]]) / 4.0)
    n = mesh.n_vertices
    return sparse.coo_matrix((lengths, (mesh.edges[:, 0], mesh.edges[:, 1])), shape=(n, n)).tocsr()


def geodesic_diameter(mesh: MeshSurface, u: np.ndarray, n_sources: int = 32) -> float:
    """Graph diameter of the mesh under e^u g_Sigma, sampled from well-spread sources.

    Sources are chosen by farthest-point sampling on the background edge graph so
    the choice does not depend on u.
    """
    if "diameter_sources" not in mesh._cache or len(mesh._cache["diameter_sources"]) < n_sources:
        mesh._cache["diameter_sources"] = _farthest_point_sources(mesh, edge_graph(mesh), n_sources)
    sources = mesh._cache["diameter_sources"][:n_sources]
    dist = csgraph.dijkstra(edge_graph(mesh, np.asarray(u, float)), directed=False, indices=sources)
    return float(dist.max())
