"""Generalized eigenproblem K Φ = λ M Φ and spectral projections."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import ContractViolation, InsufficientBasisError, InsufficientDataError, NumericalError
from .operators import DiscreteOperator


@dataclass(frozen=True, eq=False)
class EigenBasis:
    op: DiscreteOperator
    eigenvalues: np.ndarray
    vectors: np.ndarray  # columns are M-orthonormal eigenvectors

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    @property
    def complete(self) -> bool:
        return self.count == self.op.n

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def coefficients(self, u) -> np.ndarray:
        """⟨u, Φ_i⟩_M for every computed mode."""
        return self.vectors.T @ (self.op.M @ self.op._check(u))

    def synthesize(self, c) -> np.ndarray:
        return self.vectors @ np.asarray(c, dtype=float)

    def remainder(self, u) -> np.ndarray:
        """Part of ``u`` not represented in the basis (zero for a complete basis)."""
        u = self.op._check(u)
        if self.complete:
            return np.zeros_like(u)
        return u - self.synthesize(self.coefficients(u))

    def mode(self, i: int) -> np.ndarray:
        """Eigenvector Φ_i with the 1-based index used throughout the theory."""
        return self.vectors[:, i - 1].copy()

    def low_mask(self, cutoff: float) -> np.ndarray:
        if not self.complete and cutoff > self.lambda_max:
            raise InsufficientBasisError(
                f"cutoff {cutoff:g} exceeds the largest computed eigenvalue {self.lambda_max:g}"
            )
        return self.eigenvalues <= cutoff


def _m_gram_schmidt(V, M, cols):
    for _ in range(2):
        for a, j in enumerate(cols):
            v = V[:, j]
            for i in cols[:a]:
                v -= (V[:, i] @ (M @ v)) * V[:, i]
            V[:, j] = v / np.sqrt(v @ (M @ v))


def eigensolve(op: DiscreteOperator, count: int | None = None, method: str = "dense") -> EigenBasis:
    """Smallest ``count`` eigenpairs, M-orthonormal, ascending, sign-normalized.

    The kernel mode is pinned to the exact normalized constant. Numerically
    degenerate clusters are re-orthonormalized by Gram-Schmidt in the M inner
    product.
    """
    n = op.n
    count = n if count is None else int(count)
    if not 1 <= count <= n:
        raise ContractViolation(f"count must lie in [1, {n}], got {count}")

    if method == "dense" or count >= n - 1:
        K, M = op.K.toarray(), op.M.toarray()
        w, V = sla.eigh(K, M, subset_by_index=[0, count - 1])
    elif method == "sparse":
        w, V = spla.eigsh(op.K.tocsc(), k=count, M=op.M.tocsc(), sigma=-1.0, which="LM")
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    else:
        raise ContractViolation(f"unknown eigensolver method {method!r}")

    M = op.M
    lam_scale = max(abs(w[-1]), 1.0)
    pinned = abs(w[0]) <= 1e-10 * lam_scale
    if pinned:
        ones = np.ones(n)
        V[:, 0] = ones / np.sqrt(ones @ (M @ ones))
        w[0] = 0.0
        rest = V[:, 1:]
        rest -= np.outer(V[:, 0], V[:, 0] @ (M @ rest))
        rest /= np.sqrt(np.einsum("ij,ij->j", rest, M @ rest))
    w = np.maximum(w, 0.0)

    # clusters: runs of eigenvalues closer than the degeneracy gap
    breaks = np.flatnonzero(np.diff(w) >= 1e-9 * lam_scale) + 1
    for a, b in zip(np.r_[0, breaks], np.r_[breaks, count]):
        cols = [j for j in range(a, b) if not (pinned and j == 0)]
        if len(cols) > 1:
            _m_gram_schmidt(V, M, cols)

    tol = 1e-12 * np.abs(V).max(axis=0)
    first = np.argmax(np.abs(V) > tol, axis=0)
    signs = np.sign(V[first, np.arange(count)])
    signs[signs == 0] = 1.0
    V = V * signs

    MV = M @ V
    res = np.linalg.norm(op.K @ V - MV * w, axis=0)
    bound = 1e-8 * (1.0 + w) * np.linalg.norm(MV, axis=0)
    bad = np.flatnonzero(res > bound)
    if bad.size:
        raise NumericalError(
            f"eigenpair residual too large for modes {(bad + 1).tolist()[:10]}",
            residual=float(res[bad].max()),
        )
    return EigenBasis(op=op, eigenvalues=w, vectors=V)


def project_low(basis: EigenBasis, u, cutoff: float) -> np.ndarray:
    """Σ_{λ_i ≤ cutoff} ⟨u, Φ_i⟩_M Φ_i."""
    if cutoff < 0:
        raise ContractViolation("cutoff must be nonnegative")
    mask = basis.low_mask(cutoff)
    V = basis.vectors[:, mask]
    return V @ (V.T @ (basis.op.M @ basis.op._check(u)))


def project_high(basis: EigenBasis, u, cutoff: float) -> np.ndarray:
    return np.asarray(u, dtype=float) - project_low(basis, u, cutoff)


def weyl_count(basis: EigenBasis, cutoff: float) -> int:
    return int(np.count_nonzero(basis.eigenvalues <= cutoff))


@dataclass(frozen=True)
class WeylFit:
    constant: float
    exponent: float
    r2: float
    points: int


def weyl_fit(basis: EigenBasis, skip: int = 0) -> WeylFit:
    """Least-squares fit of ``count(Λ) ≈ C Λ^p`` on log-log axes.

    The sample points are the positive computed eigenvalues paired with the
    counting function evaluated there; ``skip`` drops that many of the
    lowest positive eigenvalues from the regression.
    """
    lam = basis.eigenvalues
    if len(lam) < 10:
        raise InsufficientDataError("Weyl fit needs at least 10 eigenvalues")
    pos = np.unique(lam[lam > 0])[skip:]
    counts = np.searchsorted(lam, pos, side="right")
    x, y = np.log(pos), np.log(counts)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return WeylFit(
        constant=float(np.exp(intercept)),
        exponent=float(slope),
        r2=1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0,
        points=len(pos),
    )


@dataclass(frozen=True)
class TwoTermWeylFit:
    area_coefficient: float  # multiplies Λ^{n/2}
    boundary_coefficient: float  # multiplies Λ^{(n-1)/2}
    r2: float
    points: int


def weyl_two_term_fit(basis: EigenBasis, dim: int) -> TwoTermWeylFit:
    """Linear fit ``count(Λ) ≈ a Λ^{n/2} + c Λ^{(n-1)/2}``.

    The surface diffusion on Γ contributes its own counting function of
    order Λ^{(n-1)/2}; over a short spectral window it bends the single
    power-law fit well below n/2.
    """
    lam = basis.eigenvalues
    if len(lam) < 10:
        raise InsufficientDataError("Weyl fit needs at least 10 eigenvalues")
    pos = np.unique(lam[lam > 0])
    counts = np.searchsorted(lam, pos, side="right").astype(float)
    A = np.column_stack([pos ** (dim / 2), pos ** ((dim - 1) / 2)])
    coef, *_ = np.linalg.lstsq(A, counts, rcond=None)
    fitted = A @ coef
    ss_tot = float(np.sum((counts - counts.mean()) ** 2))
    r2 = 1.0 - float(np.sum((counts - fitted) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return TwoTermWeylFit(float(coef[0]), float(coef[1]), r2, len(pos))


def random_state(basis: EigenBasis, rng: np.random.Generator, profile: str = "decaying") -> np.ndarray:
    """M-normalized random state drawn through its eigen-coefficients.

    ``decaying`` scales mode i by 1/(1 + λ_i) so the draw stays low-frequency
    rich; ``flat`` weights every computed mode equally.
    """
    z = rng.standard_normal(basis.count)
    if profile == "decaying":
        z = z / (1.0 + basis.eigenvalues)
    elif profile != "flat":
        raise ContractViolation(f"unknown sampling profile {profile!r}")
    return basis.synthesize(z / np.linalg.norm(z))


def write_eigenvalues_csv(path, basis: EigenBasis) -> None:
    lines = ["# impheat eigenvalues v1", "index,lambda"]
    lines += [f"{i},{lam:.17g}" for i, lam in enumerate(basis.eigenvalues, start=1)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_eigenvectors_csv(path, basis: EigenBasis) -> None:
    header = "# impheat eigenvectors v1\n" + ",".join(f"phi_{i}" for i in range(1, basis.count + 1))
    np.savetxt(path, basis.vectors, delimiter=",", header=header, comments="", fmt="%.17g")
