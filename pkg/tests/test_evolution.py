import numpy as np
import pytest

from impheat.analysis import smooth_field
from impheat.errors import ContractViolation
from impheat.evolution import (
    Trajectory,
    diagnostics,
    propagate,
    read_trajectory_csv,
    run_impulsive,
    step_cn,
    write_trajectory_csv,
)
from impheat.mesh import Region
from impheat.operators import control_map
from impheat.spectral import eigensolve, random_state
from oracles import semigroup_dense


def test_zero_time_is_identity(line200, rng):
    op, basis = line200
    u = rng.standard_normal(op.n)
    assert np.array_equal(propagate(basis, u, 0.0), u)


def test_negative_time_rejected(line200):
    op, basis = line200
    with pytest.raises(ContractViolation):
        propagate(basis, op.ones(), -1e-3)


def test_eigenmode_decays_exactly(line200):
    op, basis = line200
    for i in (1, 2, 7):
        out = propagate(basis, basis.mode(i), 0.03)
        assert np.allclose(out, np.exp(-basis.eigenvalues[i - 1] * 0.03) * basis.mode(i), atol=1e-12)
    for t in (0.1, 1.0, 10.0):
        assert np.allclose(propagate(basis, basis.mode(1), t), basis.mode(1), atol=1e-14)


def test_semigroup_and_contraction(line200, rng):
    op, basis = line200
    for _ in range(100):
        u = random_state(basis, rng, "flat")
        s, t = rng.uniform(0, 0.2, 2)
        a = propagate(basis, propagate(basis, u, s), t)
        b = propagate(basis, u, s + t)
        assert op.norm(a - b) <= 1e-12 * op.norm(u)
        assert op.norm(b) <= op.norm(u) * (1 + 1e-12)


def test_truncated_basis_uses_fallback(line200, rng):
    op, basis = line200
    small = eigensolve(op, 30)
    u = random_state(basis, rng)
    full = propagate(basis, u, 0.05)
    part = propagate(small, u, 0.05, remainder_substeps=256)
    assert op.norm(part - full) < 1e-6


def test_matches_dense_exponential(line40, rng):
    op, basis = line40
    u = rng.standard_normal(op.n)
    assert np.allclose(propagate(basis, u, 0.07), semigroup_dense(op, 0.07) @ u, atol=1e-11)


def test_cn_constant_fixed_point(line200):
    op, _ = line200
    assert np.max(np.abs(step_cn(op, op.ones(), 0.1, 7) - 1.0)) <= 1e-13


def test_cn_contraction(line200, rng):
    op, _ = line200
    for _ in range(100):
        u = rng.standard_normal(op.n)
        assert op.norm(step_cn(op, u, 0.1, 3)) <= op.norm(u) * (1 + 1e-13)


def test_cn_second_order_on_smooth_data(line200, rng):
    op, basis = line200
    errs = []
    for sub in (64, 128, 256):
        worst = 0.0
        for s in range(5):
            u = smooth_field(np.random.default_rng(s), 1)(op.mesh.nodes)
            u /= op.norm(u)
            worst = max(worst, op.norm(step_cn(op, u, 0.1, sub) - propagate(basis, u, 0.1)))
        errs.append(worst)
    assert errs[0] <= 1e-4
    assert 3.5 <= errs[0] / errs[1] <= 4.5 and 3.5 <= errs[1] / errs[2] <= 4.5


def test_cn_argument_checks(line40):
    op, _ = line40
    with pytest.raises(ContractViolation):
        step_cn(op, op.ones(), 0.0, 4)
    with pytest.raises(ContractViolation):
        step_cn(op, op.ones(), 0.1, 0)


def test_no_impulse_run_matches_propagate(line200, rng):
    op, basis = line200
    u = random_state(basis, rng)
    times = np.linspace(0, 0.4, 9)
    traj = run_impulsive(basis, op, u, [], 0.4, times)
    assert traj.times == sorted(traj.times)
    for t, s in zip(traj.times, traj.states):
        assert np.allclose(s, propagate(basis, u, t), atol=1e-12)


def test_zero_impulse_is_free_flow(line200, omega_mid, rng):
    op, basis = line200
    u = random_state(basis, rng)
    traj = run_impulsive(basis, op, u, [(0.2, np.zeros(omega_mid.size))], 0.5, control=omega_mid)
    assert np.allclose(traj.states[-1], propagate(basis, u, 0.5), atol=1e-12)


def test_single_impulse_mild_solution(line40, rng):
    op, basis = line40
    cmap = control_map(op, Region.interval(0.3, 0.7))
    u = rng.standard_normal(op.n)
    h = rng.standard_normal(cmap.size)
    traj = run_impulsive(basis, op, u, [(0.1, h)], 0.3, control=cmap)
    mild = semigroup_dense(op, 0.3) @ u + semigroup_dense(op, 0.2) @ cmap.inject(h)
    assert np.allclose(traj.states[-1], mild, atol=1e-11)


def test_jump_snapshot_pair(line200, omega_mid, rng):
    op, basis = line200
    u = random_state(basis, rng)
    h = rng.standard_normal(omega_mid.size)
    traj = run_impulsive(basis, op, u, [(0.2, h)], 0.5, sample_times=[0.1, 0.2, 0.3], control=omega_mid)
    pre, post = traj.at(0.2, "pre"), traj.at(0.2, "impulse")
    jump = post - pre
    off = np.setdiff1d(np.arange(op.n), omega_mid.nodes)
    assert np.all(jump[off] == 0.0)
    assert np.all(jump[op.mesh.boundary_nodes] == 0.0)
    assert np.allclose(jump[omega_mid.nodes], h, rtol=0, atol=1e-14)
    assert traj.impulse_log == [(0.2, omega_mid.norm(h))]


def test_impulse_validation(line200, omega_mid):
    op, basis = line200
    h = np.zeros(omega_mid.size)
    with pytest.raises(ContractViolation):
        run_impulsive(basis, op, op.ones(), [(0.3, h), (0.2, h)], 0.5, control=omega_mid)
    with pytest.raises(ContractViolation):
        run_impulsive(basis, op, op.ones(), [(0.5, h)], 0.5, control=omega_mid)
    outside = np.zeros(op.n)
    outside[5] = 1.0
    with pytest.raises(ContractViolation):
        run_impulsive(basis, op, op.ones(), [(0.2, outside)], 0.5, control=omega_mid)


def test_full_vector_impulse_accepted(line200, omega_mid):
    op, basis = line200
    full = np.zeros(op.n)
    full[omega_mid.nodes] = 1.0
    traj = run_impulsive(basis, op, op.ones(), [(0.2, full)], 0.5, control=omega_mid)
    assert np.allclose(traj.at(0.2, "impulse") - traj.at(0.2, "pre"), full, rtol=0, atol=1e-14)


def test_trajectory_times_nondecreasing():
    tr = Trajectory()
    tr.record(0.0, [1.0])
    tr.record(0.5, [1.0])
    with pytest.raises(ContractViolation):
        tr.record(0.4, [1.0])


def test_mass_energy_and_quotient(line200, rng):
    op, basis = line200
    u = random_state(basis, rng, "flat")
    traj = run_impulsive(basis, op, u, [], 0.5, np.linspace(0, 0.5, 26))
    recs = diagnostics(traj, op)
    m0 = recs[0].mass
    assert all(abs(r.mass - m0) <= 1e-11 * abs(m0) for r in recs)
    for a in recs:
        for b in recs:
            if b.t > a.t:
                assert b.energy <= a.energy * (1 + 1e-12)
    q = [r.dirichlet_quotient for r in recs]
    assert all(q2 - q1 <= 1e-10 * q1 for q1, q2 in zip(q, q[1:]))


def test_two_mode_quotient_closed_form(line200):
    op, basis = line200
    a, b = 0.8, -0.6
    l2, l5 = basis.eigenvalues[1], basis.eigenvalues[4]
    u = a * basis.mode(2) + b * basis.mode(5)
    times = np.linspace(0, 0.3, 16)
    recs = diagnostics(run_impulsive(basis, op, u, [], 0.3, times), op)
    for r in recs:
        e2, e5 = np.exp(-2 * l2 * r.t), np.exp(-2 * l5 * r.t)
        ref = (a * a * l2 * e2 + b * b * l5 * e5) / (a * a * e2 + b * b * e5)
        assert np.isclose(r.dirichlet_quotient, ref, rtol=1e-10)
    q = [r.dirichlet_quotient for r in recs]
    assert all(q2 <= q1 * (1 + 1e-12) for q1, q2 in zip(q, q[1:]))
    assert abs(q[-1] - l2) < abs(q[0] - l2)


def test_zero_state_quotient_undefined(line40):
    op, basis = line40
    traj = run_impulsive(basis, op, np.zeros(op.n), [], 0.1)
    assert all(r.dirichlet_quotient is None for r in diagnostics(traj, op))


def test_trajectory_csv_roundtrip(tmp_path, line200, omega_mid, rng):
    op, basis = line200
    traj = run_impulsive(basis, op, random_state(basis, rng), [(0.2, np.ones(omega_mid.size))], 0.4,
                         sample_times=[0.1], control=omega_mid)
    recs = diagnostics(traj, op)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, recs)
    assert path.read_text().splitlines()[1] == "t,norm,energy,mass,dirichlet_quotient,is_impulse"
    data = read_trajectory_csv(path)
    assert np.array_equal(data["norm"], [r.norm for r in recs])
    assert data["is_impulse"].tolist() == [int(r.is_impulse) for r in recs]
