"""Empirical checks of observability, convexity and monotonicity estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ContractViolation, DegenerateRegionError
from .evolution import propagate
from .mesh import Region, RegionKind, region_nodes
from .operators import DiscreteOperator, WeightFunction, control_map, sub_mass_norm, weighted_norm_sq
from .spectral import EigenBasis, random_state

DEFAULT_BETAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass
class ObservabilityFit:
    samples: int
    T: float
    seed: int
    beta_grid: np.ndarray
    c_beta: np.ndarray  # worst-case constant per β
    beta_star: float
    c_star: float
    lhs: np.ndarray
    observed: np.ndarray
    initial: np.ndarray
    flagged: list = field(default_factory=list)  # sample indices with ‖u(T)‖_ω = 0 < LHS
    contraction_ok: bool = True

    def bound(self, beta=None, c=None) -> np.ndarray:
        """Right-hand side e^{C(1+1/T)} ‖u(T)‖_ω^β ‖U(0)‖^{1-β} per sample."""
        beta = self.beta_star if beta is None else beta
        c = self.c_star if c is None else c
        return np.exp(c * (1 + 1 / self.T)) * self.observed**beta * self.initial ** (1 - beta)

    def violations(self, rtol: float = 1e-12) -> list:
        """Samples breaking the inequality at (β*, C*); empty by construction."""
        return np.flatnonzero(self.lhs > self.bound() * (1 + rtol)).tolist()

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "T": self.T,
            "seed": self.seed,
            "beta_grid": [float(b) for b in self.beta_grid],
            "c_beta": [float(c) for c in self.c_beta],
            "beta_star": self.beta_star,
            "c_star": self.c_star,
            "flagged": list(self.flagged),
            "contraction_ok": self.contraction_ok,
        }


def _fit(lhs, obs, init, T, betas, seed) -> ObservabilityFit:
    betas = np.asarray(betas, dtype=float)
    if np.any((betas <= 0) | (betas >= 1)):
        raise ContractViolation("beta grid must lie in (0, 1)")
    flagged = np.flatnonzero((obs == 0) & (lhs > 0)).tolist()
    good = np.setdiff1d(np.arange(len(lhs)), flagged)
    with np.errstate(divide="ignore"):
        log_ratio = (
            np.log(lhs[good])[None, :]
            - betas[:, None] * np.log(obs[good])[None, :]
            - (1 - betas[:, None]) * np.log(init[good])[None, :]
        )
    c_beta = log_ratio.max(axis=1) / (1 + 1 / T)
    j = int(np.argmin(c_beta))
    return ObservabilityFit(
        samples=len(lhs),
        T=T,
        seed=seed,
        beta_grid=betas,
        c_beta=c_beta,
        beta_star=float(betas[j]),
        c_star=float(c_beta[j]),
        lhs=lhs,
        observed=obs,
        initial=init,
        flagged=flagged,
        contraction_ok=bool(np.all(lhs <= init * (1 + 1e-12))),
    )


def _draws(basis, T, samples, seed, profile):
    if samples < 10:
        raise ContractViolation("observability fits need at least 10 samples")
    if not T > 0:
        raise ContractViolation("T must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        u0 = random_state(basis, rng, profile)
        yield u0, propagate(basis, u0, T)


def fit_observability(
    op: DiscreteOperator,
    basis: EigenBasis,
    omega: Region,
    T: float,
    samples: int = 50,
    beta_grid=DEFAULT_BETAS,
    seed: int = 0,
    profile: str = "decaying",
) -> ObservabilityFit:
    """Worst-case C(β) with ‖U(T)‖ ≤ e^{C(1+1/T)} ‖u(T)‖_ω^β ‖U(0)‖^{1-β} over random data."""
    cmap = control_map(op, omega)
    lhs, obs, init = [], [], []
    for u0, uT in _draws(basis, T, samples, seed, profile):
        lhs.append(op.norm(uT))
        obs.append(cmap.observe(uT))
        init.append(op.norm(u0))
    return _fit(np.array(lhs), np.array(obs), np.array(init), T, beta_grid, seed)


def localized_parts(op: DiscreteOperator, ball: Region, u) -> tuple[float, float]:
    """(‖u‖_{L²(Ω∩B)}, ‖u_Γ‖_{L²(Γ∩B)}) from sub-blocks of the bulk and surface masses."""
    nodes = region_nodes(op.mesh, ball)
    bnodes = np.intersect1d(nodes, op.mesh.boundary_nodes)
    bulk = sub_mass_norm(op.M_bulk, u, nodes)
    surf = sub_mass_norm(op.M_surf, u, bnodes) if bnodes.size else 0.0
    return bulk, surf


def fit_localized(
    op: DiscreteOperator,
    basis: EigenBasis,
    omega0: Region,
    ball: Region,
    T: float,
    samples: int = 50,
    beta_grid=DEFAULT_BETAS,
    seed: int = 0,
    profile: str = "decaying",
    combine: str = "sum",
) -> ObservabilityFit:
    """Same fit with the left side restricted to a ball.

    ``combine="sum"`` uses ‖u‖_{Ω∩B} + ‖u_Γ‖_{Γ∩B}; ``"l2"`` recombines the two
    parts as sqrt(a² + b²), which is the global norm when B covers Ω.
    """
    if ball.kind is not RegionKind.BALL:
        raise ContractViolation("localized fit needs a ball")
    try:
        region_nodes(op.mesh, ball)
    except DegenerateRegionError:
        raise DegenerateRegionError(f"ball {ball.to_dict()} misses the mesh") from None
    if combine not in ("sum", "l2"):
        raise ContractViolation(f"unknown combine rule {combine!r}")
    cmap = control_map(op, omega0)
    lhs, obs, init = [], [], []
    for u0, uT in _draws(basis, T, samples, seed, profile):
        a, b = localized_parts(op, ball, uT)
        lhs.append(a + b if combine == "sum" else math.sqrt(a * a + b * b))
        obs.append(cmap.observe(uT))
        init.append(op.norm(u0))
    return _fit(np.array(lhs), np.array(obs), np.array(init), T, beta_grid, seed)


def log_norm(basis: EigenBasis, coeffs, t: float) -> float:
    """ln‖U(t)‖ for U(0) = Σ c_i Φ_i, evaluated stably as half a log-sum-exp."""
    with np.errstate(divide="ignore"):
        logs = 2.0 * np.log(np.abs(coeffs)) - 2.0 * basis.eigenvalues * t
    return 0.5 * float(logsumexp(logs))


@dataclass(frozen=True)
class ConvexitySlack:
    t1: float
    t2: float
    t3: float
    theta: float
    slack: float


def check_log_convexity(basis: EigenBasis, u0, triples) -> list[ConvexitySlack]:
    """slack = ln‖U(t2)‖ - (1-θ) ln‖U(t1)‖ - θ ln‖U(t3)‖, θ = (t2-t1)/(t3-t1)."""
    c = basis.coefficients(u0)
    if not np.any(c):
        raise ContractViolation("log-convexity needs a nonzero state")
    out = []
    for t1, t2, t3 in triples:
        if not (0 < t1 <= t2 <= t3 and t1 < t3):
            raise ContractViolation(f"need 0 < t1 <= t2 <= t3 with t1 < t3, got {(t1, t2, t3)}")
        theta = (t2 - t1) / (t3 - t1)
        l1, l2, l3 = (log_norm(basis, c, t) for t in (t1, t2, t3))
        slack = 0.0 if theta == 0 else l2 - (1 - theta) * l1 - theta * l3
        out.append(ConvexitySlack(t1, t2, t3, theta, slack))
    return out


@dataclass
class MonotonicityReport:
    times: np.ndarray
    values: np.ndarray
    violations: list  # (index, relative increase)
    max_relative_increase: float
    tol: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "violations": self.violations,
            "max_relative_increase": self.max_relative_increase,
            "tol": self.tol,
        }


def check_gaussian_monotonicity(
    op: DiscreteOperator, basis: EigenBasis, u0, w: WeightFunction, sample_times, tol: float = 1e-8
) -> MonotonicityReport:
    """I(t) = ‖U(t) e^{ζ/2}‖² at the sample times; flags increases above tol·I(t)."""
    times = np.asarray(sorted(sample_times), dtype=float)
    if times.size and (times[0] < 0 or times[-1] > w.T):
        raise ContractViolation("sample times must lie in [0, T]")
    values, u, t = [], op._check(u0), 0.0
    for s in times:
        u = propagate(basis, u, s - t)
        t = s
        values.append(weighted_norm_sq(op, u, w, s))
    values = np.array(values)
    viol, worst = [], 0.0
    for i in range(len(values) - 1):
        inc = values[i + 1] - values[i]
        rel = inc / values[i] if values[i] > 0 else (math.inf if inc > 0 else 0.0)
        worst = max(worst, rel)
        if inc > tol * values[i]:
            viol.append((i, float(rel)))
    return MonotonicityReport(times, values, viol, float(worst), tol)


def smooth_field(rng: np.random.Generator, dim: int, modes: int = 8):
    """Random smooth function on the unit box, resolvable on any grid.

    Returns a callable of node coordinates; cosine/sine coefficients decay
    like 1/(1 + j²) so refinements see the same continuous datum.
    """
    a = rng.standard_normal((modes,) * dim)
    b = rng.standard_normal((modes,) * dim)
    j = np.indices((modes,) * dim)
    damp = 1.0 / (1.0 + np.sum(j**2, axis=0))

    def f(x):
        x = np.atleast_2d(x)
        out = np.zeros(len(x))
        for idx in np.ndindex(*(modes,) * dim):
            arg = np.pi * sum(idx[d] * x[:, d] for d in range(dim))
            out += damp[idx] * (a[idx] * np.cos(arg) + b[idx] * np.sin(arg))
        return out

    return f


def gaussian_refinement_study(spec_for, resolutions, u0_fn, w: WeightFunction, sample_times, tol=1e-8):
    """Rerun the monotonicity check on successively finer meshes.

    ``spec_for(r)`` returns a DomainSpec at resolution ``r``; ``u0_fn`` maps
    node coordinates to the initial datum.
    """
    from .mesh import build_mesh
    from .operators import assemble
    from .spectral import eigensolve

    out = []
    for r in resolutions:
        op = assemble(build_mesh(spec_for(r)))
        basis = eigensolve(op)
        out.append((r, check_gaussian_monotonicity(op, basis, u0_fn(op.mesh.nodes), w, sample_times, tol)))
    return out


@dataclass
class FrequencyReport:
    times: np.ndarray
    quotients: np.ndarray
    monotone_violations: list
    fd_residuals: np.ndarray  # central-difference identity residual per interval
    exact_residuals: np.ndarray  # same identity with the spectral time derivative

    @property
    def max_fd_residual(self) -> float:
        return float(np.max(np.abs(self.fd_residuals))) if self.fd_residuals.size else 0.0

    @property
    def max_exact_residual(self) -> float:
        return float(np.max(np.abs(self.exact_residuals))) if self.exact_residuals.size else 0.0

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "quotients": self.quotients.tolist(),
            "monotone_violations": self.monotone_violations,
            "max_fd_residual": self.max_fd_residual,
            "max_exact_residual": self.max_exact_residual,
        }


def check_frequency_inequality(
    op: DiscreteOperator, basis: EigenBasis, u0, times, tol: float = 1e-10
) -> FrequencyReport:
    """Dirichlet quotient 𝒩 = UᵀKU/UᵀMU along the free flow and the identity ½ d‖U‖²/dt + 𝒩‖U‖² = 0.

    The finite-difference residual on each interval [t_a, t_b] uses the
    midpoint, so it is O((t_b - t_a)²).
    """
    u0 = op._check(u0)
    if op.norm(u0) == 0:
        raise ContractViolation("frequency check needs a nonzero state")
    times = np.asarray(sorted(times), dtype=float)
    c = basis.coefficients(u0)
    lam = basis.eigenvalues

    def state(t):
        return propagate(basis, u0, t)

    energies, quotients, exact = [], [], []
    for t in times:
        u = state(t)
        e = op.inner(u, u)
        dirichlet = op.energy(u)
        energies.append(e)
        quotients.append(dirichlet / e)
        half_de = -float(np.sum(lam * (c * np.exp(-lam * t)) ** 2))
        exact.append((half_de + dirichlet) / e)
    quotients = np.array(quotients)
    viol = [
        (i, float(quotients[i + 1] - quotients[i]))
        for i in range(len(quotients) - 1)
        if quotients[i + 1] - quotients[i] > tol * max(abs(quotients[i]), 1.0)
    ]
    fd = []
    for i in range(len(times) - 1):
        um = state(0.5 * (times[i] + times[i + 1]))
        half_de = 0.5 * (energies[i + 1] - energies[i]) / (times[i + 1] - times[i])
        fd.append((half_de + op.energy(um)) / op.inner(um, um))
    return FrequencyReport(times, quotients, viol, np.array(fd), np.array(exact))
