"""Free heat flow, impulsive trajectories and flow diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ContractViolation, NumericalError
from .operators import ControlMap, DiscreteOperator
from .spectral import EigenBasis


def propagate(basis: EigenBasis, u0, dt: float, remainder_substeps: int = 64) -> np.ndarray:
    """Apply e^{dt A}: exact in the computed eigenbasis.

    Whatever the basis does not resolve is advanced by Crank-Nicolson, so a
    truncated basis never silently drops part of the state.
    """
    if dt < 0:
        raise ContractViolation(f"propagation time must be nonnegative, got {dt}")
    u0 = basis.op._check(u0)
    if dt == 0:
        return u0.copy()
    c = basis.coefficients(u0)
    out = basis.synthesize(np.exp(-basis.eigenvalues * dt) * c)
    if not basis.complete:
        rem = u0 - basis.synthesize(c)
        if np.any(rem):
            out += step_cn(basis.op, rem, dt, remainder_substeps)
    return out


@lru_cache(maxsize=16)
def _cn_factors(op: DiscreteOperator, tau: float):
    lhs = (op.M + 0.5 * tau * op.K).tocsc()
    rhs = (op.M - 0.5 * tau * op.K).tocsr()
    try:
        return spla.splu(lhs), rhs
    except RuntimeError as exc:
        raise NumericalError(f"Crank-Nicolson factorization failed: {exc}") from exc


def step_cn(op: DiscreteOperator, u0, dt: float, substeps: int = 1) -> np.ndarray:
    """Crank-Nicolson for M u' + K u = 0 over total time ``dt`` in ``substeps`` equal steps."""
    if not dt > 0 or substeps < 1:
        raise ContractViolation("step_cn needs dt > 0 and substeps >= 1")
    lu, rhs = _cn_factors(op, dt / substeps)
    u = op._check(u0).copy()
    for _ in range(int(substeps)):
        u = lu.solve(rhs @ u)
    return u


@dataclass
class Trajectory:
    """Snapshots of an impulsive run.

    Times are nondecreasing; an impulse time appears twice, first with the
    left limit (``kind == "pre"``) and then with the post-jump state
    (``kind == "impulse"``).
    """

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    impulse_log: list = field(default_factory=list)  # (tau, ‖h‖_{L²(ω)})

    def record(self, t, u, kind="sample"):
        if self.times and t < self.times[-1]:
            raise ContractViolation("trajectory times must be nondecreasing")
        self.times.append(float(t))
        self.states.append(np.array(u, dtype=float))
        self.kinds.append(kind)

    def at(self, t, kind=None) -> np.ndarray:
        """Last snapshot recorded at time ``t`` (optionally of a given kind)."""
        for ti, ui, ki in zip(reversed(self.times), reversed(self.states), reversed(self.kinds)):
            if ti == t and (kind is None or ki == kind):
                return ui
        raise KeyError(t)

    def __len__(self):
        return len(self.times)


def run_impulsive(
    basis: EigenBasis,
    op: DiscreteOperator,
    u0,
    impulses,
    t_end: float,
    sample_times=(),
    control: ControlMap | None = None,
) -> Trajectory:
    """Free flow between impulses, bulk jump on ω at each impulse time.

    ``impulses`` is a sequence of ``(tau, h)``; ``h`` is either a vector on the
    ω nodes of ``control`` or a full nodal vector that vanishes off ω.
    Boundary coefficients never jump because ω holds no boundary node.
    """
    u = op._check(u0).copy()
    impulses = [(float(t), h) for t, h in impulses]
    taus = [t for t, _ in impulses]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ContractViolation("impulse times must be strictly increasing")
    if any(not 0 < t < t_end for t in taus):
        raise ContractViolation("impulse times must lie in (0, t_end)")
    if impulses and control is None:
        raise ContractViolation("impulses need a control map")
    local = [control.localize(h) for _, h in impulses] if impulses else []

    samples = sorted({float(s) for s in sample_times if 0 <= s <= t_end} | {0.0, float(t_end)})
    events = sorted(
        [(s, 1, None) for s in samples if s not in taus] + [(t, 0, i) for i, t in enumerate(taus)]
    )
    traj = Trajectory()
    t = 0.0
    for when, is_sample, i in events:
        u = propagate(basis, u, when - t)
        t = when
        if is_sample:
            traj.record(t, u)
            continue
        traj.record(t, u, "pre")
        u = u + control.inject(local[i])
        traj.record(t, u, "impulse")
        traj.impulse_log.append((t, control.norm(local[i])))
    return traj


@dataclass(frozen=True)
class FlowRecord:
    t: float
    norm: float
    energy: float
    mass: float
    dirichlet_quotient: float | None
    is_impulse: bool


def diagnostics(traj: Trajectory, op: DiscreteOperator) -> list[FlowRecord]:
    """Energy ‖U‖²_M, mass ⟨U, 1⟩_M and the Dirichlet quotient at each snapshot."""
    ones = op.ones()
    out = []
    for t, u, kind in zip(traj.times, traj.states, traj.kinds):
        energy = op.inner(u, u)
        quotient = op.energy(u) / energy if energy > 0 else None
        out.append(
            FlowRecord(
                t=t,
                norm=float(np.sqrt(energy)),
                energy=energy,
                mass=op.inner(u, ones),
                dirichlet_quotient=quotient,
                is_impulse=kind == "impulse",
            )
        )
    return out


TRAJECTORY_COLUMNS = ("t", "norm", "energy", "mass", "dirichlet_quotient", "is_impulse")


def write_trajectory_csv(path, records) -> None:
    lines = ["# impheat trajectory v1", ",".join(TRAJECTORY_COLUMNS)]
    for r in records:
        q = "nan" if r.dirichlet_quotient is None else f"{r.dirichlet_quotient:.17g}"
        lines.append(
            f"{r.t:.17g},{r.norm:.17g},{r.energy:.17g},{r.mass:.17g},{q},{int(r.is_impulse)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path) -> np.ndarray:
    return np.genfromtxt(path, delimiter=",", skip_header=1, names=True)
