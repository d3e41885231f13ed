import numpy as np
import pytest

from bltrecon.fem import assemble_region_mass
from bltrecon.levelset import (
    Annulus,
    CrescentImplicit,
    Disk,
    LevelSetField,
    Rectangle,
    Tag,
    Union,
    advect,
    classify,
    connected_component_count,
    init_levelset,
    perimeter,
    reinitialize,
    volume,
)
from bltrecon.mesh import TriMesh, generate_square_mesh


def find_vertex(mesh, x, y):
    d = np.linalg.norm(mesh.vertices - np.array([x, y]), axis=1)
    i = int(np.argmin(d))
    assert d[i] < 1e-12
    return i


# -- initialization ---------------------------------------------------------------


def test_disk_signed_distance(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.2))
    assert ls.phi[find_vertex(coarse_mesh, 0, 0)] == pytest.approx(-0.2, abs=1e-14)
    assert ls.phi[find_vertex(coarse_mesh, 1, 1)] == pytest.approx(
        np.sqrt(2) - 0.2, abs=1e-14
    )


def test_union_is_min_of_distances(coarse_mesh):
    d1 = Disk((0.4, 0.4), 0.15)
    d2 = Disk((-0.4, -0.4), 0.2)
    u = Union((d1, d2))
    expected = np.minimum(d1.values(coarse_mesh.vertices), d2.values(coarse_mesh.vertices))
    assert np.allclose(u.values(coarse_mesh.vertices), expected, atol=1e-14)


def test_crescent_sign_pattern(coarse_mesh):
    shape = CrescentImplicit()
    ls = init_levelset(coarse_mesh, shape)
    raw = shape.values(coarse_mesh.vertices)
    # the redistancing pass must not move the interface across vertices
    assert np.all((ls.phi < 0) == (raw < 0))


def test_support_touching_boundary_rejected(coarse_mesh):
    with pytest.raises(ValueError):
        init_levelset(coarse_mesh, Disk((0.0, 0.0), 1.2))


def test_annulus_values():
    a = Annulus((0.0, 0.0), 0.2, 0.5)
    pts = np.array([[0.0, 0.0], [0.35, 0.0], [0.8, 0.0]])
    v = a.values(pts)
    assert v[0] > 0 and v[1] < 0 and v[2] > 0
    assert v[1] == pytest.approx(-0.15, abs=1e-14)


# -- classification ----------------------------------------------------------------


def test_classify_all_inside(mesh8):
    ls = LevelSetField(-np.ones(mesh8.vertex_count), mesh8)
    cls, w = classify(mesh8, ls)
    assert np.all(cls.tags == Tag.INSIDE)
    assert np.all(cls.fractions == 1.0)


def test_classify_cut_fraction_analytic():
    # unit right triangle with nodal values (-1, 1, 1): the negative set is
    # the corner sub-triangle with legs halved, area fraction 1/4
    m = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    ls = LevelSetField(np.array([-1.0, 1.0, 1.0]), m)
    cls, w = classify(m, ls)
    assert cls.tags[0] == Tag.CUT
    assert cls.fractions[0] == pytest.approx(0.25, abs=1e-14)
    assert len(cls.seg_lengths) == 1
    assert cls.seg_lengths[0] == pytest.approx(np.sqrt(0.5), abs=1e-14)


def test_classify_zero_vertices_inside():
    m = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    # all nonpositive with zeros: inside
    cls, _ = classify(m, LevelSetField(np.array([0.0, -1.0, 0.0]), m))
    assert cls.tags[0] == Tag.INSIDE
    # all nonnegative with zeros: outside (inside set has measure zero)
    cls, _ = classify(m, LevelSetField(np.array([0.0, 1.0, 0.0]), m))
    assert cls.tags[0] == Tag.OUTSIDE


def test_disk_measures(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.4))
    assert volume(ls) == pytest.approx(np.pi * 0.16, abs=2e-3)
    assert perimeter(ls) == pytest.approx(2 * np.pi * 0.4, abs=2e-2)


def test_empty_region_measures(mesh8):
    ls = LevelSetField(np.ones(mesh8.vertex_count), mesh8)
    assert volume(ls) == 0.0
    assert perimeter(ls) == 0.0


def test_rectangle_measures(coarse_mesh):
    ls = init_levelset(coarse_mesh, Rectangle((-0.1, 0.6), (0.1, 0.4)))
    assert volume(ls) == pytest.approx(0.21, abs=2e-2)
    assert perimeter(ls) == pytest.approx(2.0, abs=2e-2)


def test_volume_matches_region_mass(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.1, -0.2), 0.33))
    _, w = classify(coarse_mesh, ls)
    one = np.ones(coarse_mesh.vertex_count)
    total = one @ (assemble_region_mass(coarse_mesh, w) @ one)
    assert total == pytest.approx(volume(ls), abs=1e-12)


def test_perimeter_convergence_first_order():
    errs = []
    for n in (16, 32):
        m = generate_square_mesh(n)
        ls = init_levelset(m, Disk((0.0, 0.0), 0.4))
        errs.append(abs(perimeter(ls) - 2 * np.pi * 0.4))
    assert errs[1] < 0.6 * errs[0]
    assert errs[0] < 0.1


# -- transport ---------------------------------------------------------------------


def test_advect_zero_velocity_identity(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.3))
    out = advect(ls, np.zeros((coarse_mesh.vertex_count, 2)), dt=0.1)
    assert np.allclose(out.phi, ls.phi, atol=1e-12)


def test_advect_requires_positive_dt(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.3))
    with pytest.raises(ValueError):
        advect(ls, np.zeros((coarse_mesh.vertex_count, 2)), dt=0.0)


def _windowed(mesh, vec):
    """Scale a velocity so it vanishes on the boundary but is unchanged
    in the box |x|_inf <= 0.6."""
    w = np.clip((1.0 - np.abs(mesh.vertices).max(axis=1)) / 0.4, 0.0, 1.0)
    return vec * w[:, None]


def test_advect_uniform_translation(coarse_mesh):
    r, c, dt = 0.2, 1.0, 0.05
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), r))
    V = _windowed(coarse_mesh, np.tile([c, 0.0], (coarse_mesh.vertex_count, 1)))
    out = advect(ls, V, dt)
    moved = Disk((c * dt, 0.0), r)
    band = np.abs(coarse_mesh.vertices).max(axis=1) < 0.55
    err = np.abs(out.phi[band] - moved.values(coarse_mesh.vertices[band]))
    assert err.max() < 2e-3  # O(h^2) interpolation error


def test_advect_radial_dilation(coarse_mesh):
    r, dt = 0.3, 0.02
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), r))
    V = _windowed(coarse_mesh, coarse_mesh.vertices.copy())
    out = advect(ls, V, dt)
    target = np.pi * (r / (1 - dt)) ** 2
    assert volume(out) == pytest.approx(target, abs=4e-3)


# -- redistancing -------------------------------------------------------------------


def band_median(mesh, phi):
    grads = np.einsum("mk,mkd->md", phi[mesh.elements], mesh.grad_basis)
    gnorm = np.linalg.norm(grads, axis=1)
    band = np.abs(phi[mesh.elements].mean(axis=1)) < 3 * mesh.h_mean
    return np.median(np.abs(gnorm[band] - 1))


def test_reinitialize_line_sdf_is_fixed_point(coarse_mesh):
    phi = coarse_mesh.vertices[:, 0] - 0.1
    ls = LevelSetField(phi, coarse_mesh)
    out = reinitialize(ls)
    assert np.abs(out.phi - phi).max() < 1e-3


def test_reinitialize_scaled_disk(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.4))
    scaled = LevelSetField(2.0 * ls.phi, coarse_mesh)
    out = reinitialize(scaled)
    assert band_median(coarse_mesh, out.phi) < 0.1
    # interface stays put: volume change below 2 percent
    assert abs(volume(out) - volume(ls)) / volume(ls) < 0.02


def test_reinitialize_preserves_signs_away_from_interface(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.4))
    scaled = LevelSetField(2.0 * ls.phi, coarse_mesh)
    out = reinitialize(scaled)
    cls = scaled.classification()
    cut_vertices = np.unique(coarse_mesh.elements[cls.tags == Tag.CUT])
    safe = np.setdiff1d(np.arange(coarse_mesh.vertex_count), cut_vertices)
    assert np.all(np.sign(out.phi[safe]) == np.sign(scaled.phi[safe]))


def test_reinitialize_empty_interface_raises(mesh8):
    with pytest.raises(ValueError):
        reinitialize(LevelSetField(np.ones(mesh8.vertex_count), mesh8))


# -- topology ------------------------------------------------------------------------


def test_component_counts(coarse_mesh):
    two = Union((Disk((0.45, 0.45), 0.2), Disk((-0.45, -0.45), 0.2)))
    assert connected_component_count(init_levelset(coarse_mesh, two)) == 2
    assert connected_component_count(init_levelset(coarse_mesh, Disk((0, 0), 0.3))) == 1
    ring = Annulus((0.0, 0.0), 0.2, 0.5)
    assert connected_component_count(init_levelset(coarse_mesh, ring)) == 1
    empty = LevelSetField(np.ones(coarse_mesh.vertex_count), coarse_mesh)
    assert connected_component_count(empty) == 0
