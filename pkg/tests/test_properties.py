import json
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from impheat.analysis import check_log_convexity
from impheat.evolution import propagate
from impheat.mesh import DomainSpec, build_mesh
from impheat.operators import assemble
from impheat.serialize import dumps
from impheat.stabilization import stage_times
from conftest import make_system

OP, BASIS = make_system(60)

coeffs = st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=5, max_size=5)
times = st.floats(0.0, 0.5, allow_nan=False)


def state(cs):
    return sum(c * BASIS.mode(i + 1) for i, c in enumerate(cs))


@settings(max_examples=60, deadline=None)
@given(coeffs, times, times)
def test_semigroup_property(cs, s, t):
    u = state(cs)
    a = propagate(BASIS, propagate(BASIS, u, s), t)
    b = propagate(BASIS, u, s + t)
    assert OP.norm(a - b) <= 1e-12 * max(OP.norm(u), 1e-300)
    assert OP.norm(b) <= OP.norm(u) * (1 + 1e-12) + 1e-300


@settings(max_examples=60, deadline=None)
@given(coeffs, times)
def test_mass_conserved(cs, t):
    u = state(cs)
    m0 = OP.inner(u, OP.ones())
    assert abs(OP.inner(propagate(BASIS, u, t), OP.ones()) - m0) <= 1e-12 * max(OP.norm(u), 1.0)


@settings(max_examples=60, deadline=None)
@given(coeffs, st.lists(st.floats(1e-3, 1.0), min_size=3, max_size=3))
def test_log_convexity(cs, ts):
    u = state(cs)
    if OP.norm(u) < 1e-6:
        return
    t1, t2, t3 = sorted(ts)
    if not t1 < t3:
        return
    assert check_log_convexity(BASIS, u, [(t1, t2, t3)])[0].slack <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.floats(0.3, 3.0))
def test_interval_assembly_invariants(n, length):
    op = assemble(build_mesh(DomainSpec.interval(length, n)))
    ones = op.ones()
    assert np.linalg.norm(op.K @ ones) <= 1e-12
    assert abs(ones @ (op.M @ ones) - (length + 2.0)) <= 1e-12 * (length + 2.0)
    assert (op.M != op.M.T).nnz == 0 and (op.K != op.K.T).nnz == 0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(1.1, 5.0), st.integers(0, 6))
def test_stage_times_ordered(T, b, k):
    t0, tau, t1 = stage_times(T, b, k)
    assert 0 <= t0 < tau < t1 < T
    assert math.isclose(t1 - t0, T * (b - 1) * b ** (-(k + 1)), rel_tol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_roundtrip(x):
    text = dumps({"x": x})
    assert json.loads(text)["x"] == x
    assert isinstance(json.loads(text)["x"], float)
