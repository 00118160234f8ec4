import numpy as np
import pytest

from impheat.errors import ConfigurationError, ContractViolation, DegenerateRegionError
from impheat.mesh import DomainSpec, Region, build_mesh, region_nodes


def test_interval_nodes_and_boundary():
    mesh = build_mesh(DomainSpec.interval(1.0, 4))
    assert mesh.n_nodes == 5
    assert mesh.boundary_nodes.tolist() == [0, 4]
    assert np.allclose(mesh.nodes[:, 0], [0, 0.25, 0.5, 0.75, 1.0])


def test_rectangle_counts():
    mesh = build_mesh(DomainSpec.rectangle(1.0, 1.0, 4, 4))
    assert mesh.n_nodes == 25
    assert len(mesh.boundary_nodes) == 16
    assert len(mesh.boundary_segments) == 16


@pytest.mark.parametrize("nx,ny,lx,ly", [(2, 2, 1.0, 1.0), (3, 5, 2.0, 0.5), (7, 4, 1.0, 3.0)])
def test_rectangle_invariants(nx, ny, lx, ly):
    mesh = build_mesh(DomainSpec.rectangle(lx, ly, nx, ny))
    assert mesh.n_nodes == (nx + 1) * (ny + 1)
    assert len(mesh.boundary_nodes) == 2 * (nx + ny)
    assert set(mesh.boundary_segments.ravel()) <= set(mesh.boundary_nodes.tolist())
    assert np.all(mesh.element_volumes() > 0)
    assert np.isclose(mesh.element_volumes().sum(), lx * ly)
    assert np.all(mesh.nodes >= 0) and np.all(mesh.nodes <= [lx, ly])
    seg_len = np.linalg.norm(mesh.nodes[mesh.boundary_segments[:, 1]] - mesh.nodes[mesh.boundary_segments[:, 0]], axis=1)
    assert np.isclose(seg_len.sum(), 2 * (lx + ly))


def test_node_ordering_is_lexicographic():
    mesh = build_mesh(DomainSpec.rectangle(1.0, 1.0, 2, 2))
    assert np.allclose(mesh.nodes[:3], [[0, 0], [0.5, 0], [1, 0]])
    assert np.allclose(mesh.nodes[3], [0, 0.5])


@pytest.mark.parametrize(
    "args",
    [
        ("interval", (1.0,), (1,)),
        ("interval", (0.0,), (4,)),
        ("interval", (1.0, 1.0), (4, 4)),
        ("rectangle", (1.0,), (4,)),
        ("rectangle", (1.0, -1.0), (4, 4)),
        ("annulus", (1.0,), (4,)),
    ],
)
def test_invalid_specs(args):
    with pytest.raises(ConfigurationError):
        DomainSpec(*args)


def test_ball_region():
    mesh = build_mesh(DomainSpec.interval(1.0, 10))
    idx = region_nodes(mesh, Region.ball(0.5, 0.15))
    assert np.allclose(mesh.nodes[idx, 0], [0.4, 0.5, 0.6])


def test_empty_ball_is_degenerate():
    mesh = build_mesh(DomainSpec.interval(1.0, 10))
    with pytest.raises(DegenerateRegionError):
        region_nodes(mesh, Region.ball(0.55, 0.01))


def test_node_set_identity_and_validation():
    mesh = build_mesh(DomainSpec.interval(1.0, 10))
    assert region_nodes(mesh, Region.nodes([2, 3])).tolist() == [2, 3]
    with pytest.raises(ContractViolation):
        region_nodes(mesh, Region.nodes([2, 99]))


def test_control_region_must_be_interior():
    mesh = build_mesh(DomainSpec.interval(1.0, 10))
    with pytest.raises(DegenerateRegionError):
        region_nodes(mesh, Region.interval(0.0, 0.3), control=True)
    assert region_nodes(mesh, Region.interval(0.3, 0.7), control=True).tolist() == [3, 4, 5, 6, 7]


def test_ball_monotone_in_radius():
    mesh = build_mesh(DomainSpec.rectangle(1.0, 1.0, 12, 12))
    prev = set()
    for r in np.linspace(0.05, 0.8, 12):
        cur = set(region_nodes(mesh, Region.ball((0.4, 0.6), r)).tolist())
        assert prev <= cur
        prev = cur


def test_ball_radius_positive():
    with pytest.raises(ConfigurationError):
        Region.ball(0.5, 0.0)
