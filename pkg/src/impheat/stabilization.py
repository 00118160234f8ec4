"""Finite-time stabilization by impulses on a geometric schedule.

On stage k the state at ``t_k`` is split at the cutoff ``Λ_k``; each low mode
has a precomputed impulse ``h_i`` that steers ``Φ_i`` to a small ball by
``t_{k+1}``, and the feedback impulse applied at ``τ_k`` is
``ℒ_k(ψ(t_k)) = Σ ⟨ψ(t_k), Φ_i⟩ h_i``. High modes decay freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .control import ControlBundle, HumContext, apply_control_operator, eigenmode_controls
from .errors import ConfigurationError, ContractViolation, InsufficientDataError, NumericalError
from .evolution import Trajectory, propagate
from .operators import ControlMap, DiscreteOperator
from .spectral import EigenBasis


class ConstantsMode(str, Enum):
    MANUAL = "manual"
    FIXED_POINT = "fixed_point"


@dataclass(frozen=True)
class StabilizationConstants:
    T: float
    b: float
    eta: float
    C3: float
    n: int = 1
    mode: ConstantsMode = ConstantsMode.MANUAL
    iterations: int = 0

    @property
    def K(self) -> float:
        return 16.0 * self.b / self.eta

    def fixed_point_residuals(self) -> tuple[float, float]:
        """Residuals of η = 1 + (8/T)(b/(b-1))(C3 + C3²) and b = e^{16/η}."""
        r_eta = self.eta - _eta_of_b(self.b, self.T, self.C3)
        r_b = self.b - math.exp(16.0 / self.eta)
        return r_eta, r_b

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "b": self.b,
            "eta": self.eta,
            "C3": self.C3,
            "K": self.K,
            "n": self.n,
            "mode": self.mode.value,
            "iterations": self.iterations,
        }


def _eta_of_b(b, T, C3):
    return 1.0 + (8.0 / T) * (b / (b - 1.0)) * (C3 + C3 * C3)


def make_constants(
    T: float,
    C3: float,
    mode: str = "manual",
    b: float | None = None,
    eta: float | None = None,
    n: int = 1,
    damping: float = 0.5,
    max_iter: int = 1000,
    tol: float = 1e-12,
) -> StabilizationConstants:
    """Schedule constants, either given by hand or from the coupled (η, b) relations.

    The fixed point is found by damped iteration from (b, η) = (2, 2). It only
    exists when C3 is small against T; otherwise NumericalError is raised and
    the caller should fall back to manual constants.
    """
    if not T > 0:
        raise ConfigurationError(f"T must be positive, got {T}")
    if not C3 > 0:
        raise ConfigurationError(f"C3 must be positive, got {C3}")
    try:
        mode = ConstantsMode(mode)
    except ValueError:
        raise ConfigurationError(f"unknown constants mode {mode!r}") from None

    if mode is ConstantsMode.MANUAL:
        if b is None or eta is None:
            raise ConfigurationError("manual constants need both b and eta")
        if not b > 1:
            raise ConfigurationError("b must exceed 1")
        if not eta > 1:
            raise ConfigurationError("eta must exceed 1")
        return StabilizationConstants(T=T, b=float(b), eta=float(eta), C3=C3, n=n, mode=mode)

    bb, ee = 2.0, 2.0
    for it in range(1, max_iter + 1):
        ee_new = (1 - damping) * ee + damping * _eta_of_b(bb, T, C3)
        bb_new = (1 - damping) * bb + damping * math.exp(16.0 / ee_new)
        if not (np.isfinite(ee_new) and np.isfinite(bb_new) and bb_new > 1):
            break
        step = max(abs(ee_new - ee), abs(bb_new - bb))
        bb, ee = bb_new, ee_new
        if step <= tol * max(1.0, ee, bb):
            consts = StabilizationConstants(T=T, b=bb, eta=ee, C3=C3, n=n, mode=mode, iterations=it)
            r_eta, r_b = consts.fixed_point_residuals()
            if abs(r_eta) <= 1e-10 * ee and abs(r_b) <= 1e-10 * bb:
                return consts
    raise NumericalError(f"(b, eta) fixed point did not converge for C3={C3}, T={T}")


@dataclass(frozen=True)
class Stage:
    k: int
    t_start: float
    t_end: float
    tau: float
    cutoff: float
    eps: float
    card: int
    eps_squared_reading: float  # sqrt(e^{-ηb^k}/card)
    eps_literal_reading: float  # e^{-ηb^k}/card

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "tau": self.tau,
            "cutoff": self.cutoff,
            "eps": self.eps,
            "card": self.card,
            "eps_squared_reading": self.eps_squared_reading,
            "eps_literal_reading": self.eps_literal_reading,
        }


class TargetMode(str, Enum):
    SQUARED = "squared"  # ‖ψ_i(t_{k+1})‖² ≤ e^{-ηb^k}/card
    LITERAL = "literal"  # ‖ψ_i(t_{k+1})‖ ≤ e^{-ηb^k}/card


@dataclass
class ImpulseSchedule:
    consts: StabilizationConstants
    stages: list
    target_mode: TargetMode = TargetMode.SQUARED
    truncation_stage: int | None = None
    truncation_reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "constants": self.consts.to_dict(),
            "target_mode": self.target_mode.value,
            "stages": [s.to_dict() for s in self.stages],
            "truncation_stage": self.truncation_stage,
            "truncation_reason": self.truncation_reason,
        }


def stage_times(T: float, b: float, k: int) -> tuple[float, float, float]:
    t0 = T * (1.0 - b ** (-k))
    t1 = T * (1.0 - b ** (-(k + 1)))
    return t0, 0.5 * (t0 + t1), t1


def make_schedule(
    consts: StabilizationConstants,
    basis: EigenBasis,
    max_stages: int = 6,
    target_mode: str = "squared",
    eps_floor: float = 0.0,
) -> ImpulseSchedule:
    """Stages k = 0, 1, ... up to ``max_stages``.

    The run is truncated, with the reason recorded, when Λ_k leaves the
    computed spectrum or the per-mode target drops below ``eps_floor``.
    """
    if basis.count < 1:
        raise ContractViolation("schedule needs a nonempty basis")
    mode = TargetMode(target_mode)
    T, b, eta = consts.T, consts.b, consts.eta
    lam1 = float(basis.eigenvalues[0])
    sched = ImpulseSchedule(consts=consts, stages=[], target_mode=mode)
    for k in range(int(max_stages)):
        t0, tau, t1 = stage_times(T, b, k)
        if not t0 < tau < t1:
            sched.truncation_stage, sched.truncation_reason = k, "stage times no longer separable in floating point"
            break
        cutoff = lam1 + (eta / T) * b ** (2 * k + 1) / (b - 1.0)
        if not basis.complete and cutoff > basis.lambda_max:
            sched.truncation_stage, sched.truncation_reason = k, "cutoff exceeds computed spectrum"
            break
        card = int(np.count_nonzero(basis.eigenvalues <= cutoff))
        log_target = -eta * b**k - math.log(card)
        sq, lit = math.exp(0.5 * log_target), math.exp(log_target)
        eps = sq if mode is TargetMode.SQUARED else lit
        if eps < eps_floor:
            sched.truncation_stage, sched.truncation_reason = k, f"target {eps:.3g} below floor {eps_floor:.3g}"
            break
        sched.stages.append(
            Stage(k=k, t_start=t0, t_end=t1, tau=tau, cutoff=cutoff, eps=eps, card=card,
                  eps_squared_reading=sq, eps_literal_reading=lit)
        )
    _assert_schedule(sched)
    return sched


def _assert_schedule(sched: ImpulseSchedule) -> None:
    for a, c in zip(sched.stages, sched.stages[1:]):
        if not (a.t_end == c.t_start and a.cutoff < c.cutoff):
            raise NumericalError("schedule lost monotonicity")
    for s in sched.stages:
        if not s.t_start < s.tau < s.t_end:
            raise NumericalError(f"stage {s.k} has tau outside (t_k, t_(k+1))")


@dataclass
class StageRecord:
    k: int
    t_start: float
    t_end: float
    norm_start: float
    norm_pre: float  # ‖Ψ(τ_k⁻)‖
    norm_post: float  # ‖Ψ(τ_k)‖
    norm_end: float
    control_norm: float  # ‖ℒ_k(ψ(t_k))‖_{L²(ω)}, the applied impulse
    control_norm_tau: float  # ‖ℒ_k(ψ(τ_k⁻))‖_{L²(ω)}, logged for comparison
    stage_bound: float  # e^{1-ηb^k}
    stage_ok: bool
    cumulative_bound: float  # e^{(k+1) - ηb^{k+1}}, for ‖Ψ(t_{k+1})‖²/‖Ψ(t_0)‖²
    cumulative_ok: bool
    boundary_jump: float  # max |Δ| on boundary nodes at τ_k
    case_analysis_ok: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunReport:
    norm0: float
    stages: list = field(default_factory=list)
    halted_stage: int | None = None
    halt_reason: str | None = None
    truncation_stage: int | None = None
    truncation_reason: str | None = None
    bundles: list = field(default_factory=list)
    decay_slope: float | None = None
    decay_intercept: float | None = None

    @property
    def completed(self) -> int:
        return len(self.stages)

    def to_dict(self) -> dict:
        return {
            "norm0": self.norm0,
            "completed_stages": self.completed,
            "stages": [s.to_dict() for s in self.stages],
            "halted_stage": self.halted_stage,
            "halt_reason": self.halt_reason,
            "truncation_stage": self.truncation_stage,
            "truncation_reason": self.truncation_reason,
            "decay_slope": self.decay_slope,
            "decay_intercept": self.decay_intercept,
            "bundles": [b.to_dict() for b in self.bundles],
        }


# relative slack on the bound flags; only absorbs rounding
BOUND_RTOL = 1e-12


def decay_fit(T: float, times, norms) -> tuple[float, float]:
    """Least-squares slope and intercept of log‖Ψ(t)‖ against T/(T - t)."""
    x = T / (T - np.asarray(times, dtype=float))
    y = np.log(np.asarray(norms, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def run_closed_loop(
    op: DiscreteOperator,
    basis: EigenBasis,
    schedule: ImpulseSchedule,
    psi0,
    cmap: ControlMap,
    samples_per_stage: int = 3,
    bundles: list | None = None,
    cg_tol: float = 1e-12,
    cg_max_iter: int = 5000,
) -> tuple[Trajectory, RunReport]:
    """Apply the stage impulses in sequence and measure the decay estimates.

    ``bundles`` may hold precomputed control bundles in stage order; missing
    ones are computed on the fly. A stage whose bundle is infeasible halts
    the run and the partial report is returned.
    """
    u = op._check(psi0).copy()
    norm0 = op.norm(u)
    if norm0 < 1e-14:
        raise ContractViolation("initial state is numerically zero")
    consts = schedule.consts
    eta, b = consts.eta, consts.b
    bnodes = op.mesh.boundary_nodes
    ctx = HumContext(op, basis, cmap)

    traj = Trajectory()
    report = RunReport(
        norm0=norm0,
        truncation_stage=schedule.truncation_stage,
        truncation_reason=schedule.truncation_reason,
    )
    traj.record(0.0, u)
    for idx, st in enumerate(schedule.stages):
        if bundles is not None and idx < len(bundles):
            bundle = bundles[idx]
        else:
            bundle = eigenmode_controls(op, basis, st, cmap, cg_tol=cg_tol, cg_max_iter=cg_max_iter, context=ctx)
        report.bundles.append(bundle)
        if not bundle.feasible:
            report.halted_stage = st.k
            report.halt_reason = f"infeasible modes {bundle.failing_modes}"
            break

        norm_start = op.norm(u)
        if traj.times[-1] != st.t_start:
            traj.record(st.t_start, u)
        h = apply_control_operator(bundle, basis, u)
        control_norm = cmap.norm(h)

        case_ok = True
        first = np.linspace(st.t_start, st.tau, samples_per_stage + 2)[1:-1]
        for s in first:
            v = propagate(basis, u, s - st.t_start)
            traj.record(s, v)
            case_ok &= op.norm(v) <= norm_start * (1 + BOUND_RTOL)
        pre = propagate(basis, u, st.tau - st.t_start)
        traj.record(st.tau, pre, "pre")
        post = pre + cmap.inject(h)
        traj.record(st.tau, post, "impulse")
        traj.impulse_log.append((st.tau, control_norm))
        jump = float(np.max(np.abs(post[bnodes] - pre[bnodes])))
        norm_pre = op.norm(pre)
        limit = 2 * norm_pre**2 + 2 * control_norm**2
        second = np.linspace(st.tau, st.t_end, samples_per_stage + 2)[1:-1]
        for s in second:
            v = propagate(basis, post, s - st.tau)
            traj.record(s, v)
            case_ok &= op.norm(v) ** 2 <= limit * (1 + BOUND_RTOL)
        u = propagate(basis, post, st.t_end - st.tau)
        traj.record(st.t_end, u)

        norm_end = op.norm(u)
        stage_bound = math.exp(1.0 - eta * b**st.k)
        cum_bound = math.exp((st.k + 1) - eta * b ** (st.k + 1))
        report.stages.append(
            StageRecord(
                k=st.k,
                t_start=st.t_start,
                t_end=st.t_end,
                norm_start=norm_start,
                norm_pre=norm_pre,
                norm_post=op.norm(post),
                norm_end=norm_end,
                control_norm=control_norm,
                control_norm_tau=cmap.norm(apply_control_operator(bundle, basis, pre)),
                stage_bound=stage_bound,
                stage_ok=norm_end**2 <= stage_bound * norm_start**2 * (1 + BOUND_RTOL),
                cumulative_bound=cum_bound,
                cumulative_ok=norm_end**2 <= cum_bound * norm0**2 * (1 + BOUND_RTOL),
                boundary_jump=jump,
                case_analysis_ok=bool(case_ok),
            )
        )

    if report.stages:
        times = [0.0] + [s.t_end for s in report.stages]
        norms = [norm0] + [s.norm_end for s in report.stages]
        if all(n > 0 for n in norms):
            report.decay_slope, report.decay_intercept = decay_fit(consts.T, times, norms)
    return traj, report


def vanishing_onset(eta: float, b: float, k_max: int = 64) -> int:
    """First k from which k - ηb^k/8 is nonincreasing."""
    for k in range(k_max):
        if (k + 1) - eta * b ** (k + 1) / 8 <= k - eta * b**k / 8:
            return k
    return k_max


@dataclass
class Certificate:
    stages: int
    stage_fraction: float
    cumulative_fraction: float
    onset: int
    control_norms_vanishing: bool
    control_norms: list
    decay_slope: float | None
    reference_slope: float
    slope_negative: bool
    slope_at_most_reference: bool
    boundary_continuous: bool
    case_analysis_ok: bool

    @property
    def passed(self) -> bool:
        return (
            self.stage_fraction == 1.0
            and self.cumulative_fraction == 1.0
            and self.control_norms_vanishing
            and self.slope_negative
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def certify(report: RunReport, consts: StabilizationConstants, min_stages: int = 3) -> Certificate:
    """Summarize the measured decay against the predicted bounds."""
    if report.completed < min_stages:
        raise InsufficientDataError(f"certificate needs {min_stages} completed stages, got {report.completed}")
    recs = report.stages
    onset = vanishing_onset(consts.eta, consts.b)
    norms = [r.control_norm for r in recs]
    tail = [r.control_norm for r in recs if r.k >= onset]
    vanishing = all(b_ <= a_ for a_, b_ in zip(tail, tail[1:]))
    slope = report.decay_slope
    if slope is None:
        times = [0.0] + [r.t_end for r in recs]
        vals = [report.norm0] + [r.norm_end for r in recs]
        slope = decay_fit(consts.T, times, vals)[0]
    ref = -1.0 / consts.K
    return Certificate(
        stages=len(recs),
        stage_fraction=sum(r.stage_ok for r in recs) / len(recs),
        cumulative_fraction=sum(r.cumulative_ok for r in recs) / len(recs),
        onset=onset,
        control_norms_vanishing=vanishing,
        control_norms=norms,
        decay_slope=slope,
        reference_slope=ref,
        slope_negative=slope < 0,
        slope_at_most_reference=slope <= ref,
        boundary_continuous=all(r.boundary_jump == 0.0 for r in recs),
        case_analysis_ok=all(r.case_analysis_ok for r in recs),
    )
