"""P1 finite-element realization of the bulk-surface heat operator.

One coefficient per mesh node carries both the bulk value and, on boundary
nodes, the trace value, so the coupling ``u_Γ = u|_Γ`` holds by construction.
The mass matrix ``M = M_Ω + M_Γ`` realizes the L²(Ω)×L²(Γ) inner product and
the stiffness ``K = K_Ω + K_Γ`` the Dirichlet forms of Δ and Δ_Γ, so the
semi-discrete flow is ``M u' + K u = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, ContractViolation
from .mesh import Mesh, Region, region_nodes


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    mesh: Mesh
    M: sp.csr_matrix
    K: sp.csr_matrix
    M_bulk: sp.csr_matrix
    M_surf: sp.csr_matrix
    K_bulk: sp.csr_matrix
    K_surf: sp.csr_matrix
    lumped: bool = False

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.n:
            raise ContractViolation(f"state has length {u.shape[0]}, operator expects {self.n}")
        return u

    def inner(self, u, v) -> float:
        u, v = self._check(u), self._check(v)
        return float(u @ (self.M @ v))

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def energy(self, u) -> float:
        """Dirichlet form uᵀKu (bulk plus surface)."""
        u = self._check(u)
        return float(u @ (self.K @ u))

    def ones(self) -> np.ndarray:
        return np.ones(self.n)


def _sym(A: sp.spmatrix) -> sp.csr_matrix:
    A = A.tocsr()
    A.sum_duplicates()
    # (a + b)/2 is bitwise symmetric because IEEE addition commutes
    S = ((A + A.T) * 0.5).tocsr()
    S.sort_indices()
    return S


def _coo(n, rows, cols, vals):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def _segment_forms(n, seg, lengths):
    """Line mass and 1D stiffness over a list of two-node segments."""
    loc_m = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    loc_k = np.array([[1.0, -1.0], [-1.0, 1.0]])
    rows = np.repeat(seg[:, :, None], 2, axis=2)
    cols = np.repeat(seg[:, None, :], 2, axis=1)
    m = lengths[:, None, None] * loc_m
    k = loc_k / lengths[:, None, None]
    return _coo(n, rows, cols, m), _coo(n, rows, cols, k)


def _lump(A):
    return sp.diags(np.asarray(A.sum(axis=1)).ravel()).tocsr()


def assemble(mesh: Mesh, lumped: bool = False) -> DiscreteOperator:
    n = mesh.n_nodes
    vol = mesh.element_volumes()
    if np.any(vol <= 0):
        raise ConfigurationError("mesh has non-positive element volumes")

    if mesh.dim == 1:
        M_b, K_b = _segment_forms(n, mesh.elements, vol)
        bn = mesh.boundary_nodes
        # Γ is two points carrying counting measure
        M_s = sp.coo_matrix((np.ones(len(bn)), (bn, bn)), shape=(n, n))
        K_s = sp.coo_matrix((n, n))
    else:
        tri = mesh.elements
        p = mesh.nodes[tri]  # (ne, 3, 2)
        # gradients of barycentric coordinates
        d = np.stack([p[:, 1] - p[:, 2], p[:, 2] - p[:, 0], p[:, 0] - p[:, 1]], axis=1)
        grads = np.stack([d[:, :, 1], -d[:, :, 0]], axis=2) / (2.0 * vol[:, None, None])
        k = vol[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
        m = vol[:, None, None] * (np.ones((3, 3)) + np.eye(3)) / 12.0
        rows = np.repeat(tri[:, :, None], 3, axis=2)
        cols = np.repeat(tri[:, None, :], 3, axis=1)
        M_b, K_b = _coo(n, rows, cols, m), _coo(n, rows, cols, k)
        seg = mesh.boundary_segments
        lengths = np.linalg.norm(mesh.nodes[seg[:, 1]] - mesh.nodes[seg[:, 0]], axis=1)
        M_s, K_s = _segment_forms(n, seg, lengths)

    M_b, M_s, K_b, K_s = (_sym(A) for A in (M_b, M_s, K_b, K_s))
    if lumped:
        M_b, M_s = _lump(M_b), _lump(M_s)
    return DiscreteOperator(
        mesh=mesh,
        M=_sym(M_b + M_s),
        K=_sym(K_b + K_s),
        M_bulk=M_b,
        M_surf=M_s,
        K_bulk=K_b,
        K_surf=K_s,
        lumped=lumped,
    )


@dataclass(frozen=True, eq=False)
class ControlMap:
    """Impulses supported in ω, entering the bulk equation only.

    A control is a vector ``h`` of nodal values on the ω nodes. It increments
    the state by ``E h`` (E injects ω nodes into the full node vector), and its
    size is ``‖h‖²_{L²(ω)} = hᵀ M_ω h`` with ``M_ω`` the bulk mass restricted
    to ω.
    """

    op: DiscreteOperator
    region: Region
    nodes: np.ndarray
    M_omega: np.ndarray
    _chol: tuple

    @property
    def size(self) -> int:
        return len(self.nodes)

    def inject(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if h.shape != (self.size,):
            raise ContractViolation(f"control has shape {h.shape}, expected ({self.size},)")
        out = np.zeros(self.op.n)
        out[self.nodes] = h
        return out

    def restrict(self, u) -> np.ndarray:
        """Bulk values of a full state on the ω nodes."""
        return np.asarray(u, dtype=float)[self.nodes]

    def localize(self, v) -> np.ndarray:
        """Accept either an ω-local control or a full vector vanishing off ω."""
        v = np.asarray(v, dtype=float)
        if v.shape == (self.size,):
            return v
        if v.shape != (self.op.n,):
            raise ContractViolation(f"control of shape {v.shape} fits neither ω nor the mesh")
        off = np.ones(self.op.n, dtype=bool)
        off[self.nodes] = False
        if np.any(v[off] != 0.0):
            raise ContractViolation("impulse has support outside the control region")
        return v[self.nodes]

    def norm(self, h) -> float:
        h = np.asarray(h, dtype=float)
        return float(np.sqrt(max(h @ self.M_omega @ h, 0.0)))

    def adjoint(self, w) -> np.ndarray:
        """B*: full state -> ω control, adjoint for the M and M_ω inner products."""
        rhs = (self.op.M @ np.asarray(w, dtype=float))[self.nodes]
        return sla.cho_solve(self._chol, rhs)

    def observe(self, u) -> float:
        """‖u‖_{L²(ω)} of a full state's bulk component."""
        return self.norm(self.restrict(u))


def control_map(op: DiscreteOperator, region: Region) -> ControlMap:
    nodes = region_nodes(op.mesh, region, control=True)
    M_omega = op.M_bulk[nodes][:, nodes].toarray()
    return ControlMap(op=op, region=region, nodes=nodes, M_omega=M_omega, _chol=sla.cho_factor(M_omega))


def sub_mass_norm(M: sp.spmatrix, u, nodes) -> float:
    """Norm of ``u`` measured with the principal sub-block of ``M`` on ``nodes``."""
    u = np.asarray(u, dtype=float)[nodes]
    sub = M[nodes][:, nodes]
    return float(np.sqrt(max(u @ (sub @ u), 0.0)))


class WeightKind(str, Enum):
    CARLEMAN = "carleman"  # Φ = s φ / Υ with s in (0, 1)
    GAUSSIAN = "gaussian"  # ζ = -|x - x0|² / (2Υ), i.e. the s = 2 slot


@dataclass(frozen=True)
class WeightFunction:
    x0: tuple[float, ...]
    s: float
    h: float
    T: float
    kind: WeightKind = WeightKind.CARLEMAN

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(self.x0)))
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if not (self.h > 0 and self.T > 0):
            raise ConfigurationError("weight needs h > 0 and T > 0")
        if self.kind is WeightKind.CARLEMAN and not 0 < self.s < 1:
            raise ConfigurationError(f"Carleman weight needs s in (0, 1), got {self.s}")

    @classmethod
    def gaussian(cls, x0, h: float, T: float) -> "WeightFunction":
        return cls(x0=x0, s=2.0, h=h, T=T, kind=WeightKind.GAUSSIAN)

    def phi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.x0):
            x = x.T
        return -np.sum((x - np.asarray(self.x0)) ** 2, axis=1) / 4.0

    def grad_phi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -0.5 * (x - np.asarray(self.x0))

    def upsilon(self, t: float) -> float:
        return self.T - t + self.h

    def value(self, x, t: float) -> np.ndarray:
        ups = self.upsilon(t)
        if ups <= 0:
            raise ContractViolation(f"T - t + h = {ups} must be positive")
        return self.s * self.phi(x) / ups


def weighted_norm_sq(op: DiscreteOperator, u, w: WeightFunction, t: float) -> float:
    """∫_Ω |u|² e^{w} + ∫_Γ |u_Γ|² e^{w}, via the mass matrix scaled nodally by e^{w/2}."""
    u = op._check(u)
    scaled = u * np.exp(0.5 * w.value(op.mesh.nodes, t))
    return float(scaled @ (op.M @ scaled))


def write_coo(path, A: sp.spmatrix) -> None:
    """Write ``row col value`` triplets, one per line, values at 17 significant digits."""
    A = sp.coo_matrix(A)
    lines = [f"# shape {A.shape[0]} {A.shape[1]}"]
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(A.row, A.col, A.data)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_coo(path) -> sp.csr_matrix:
    rows, cols, vals, shape = [], [], [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            parts = line.split()
            if len(parts) == 4 and parts[1] == "shape":
                shape = (int(parts[2]), int(parts[3]))
            continue
        i, j, v = line.split()
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
