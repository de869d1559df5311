import numpy as np
import pytest

from hdgsdt.mesh import (BOUNDARY_KINDS, DARCY, GAMMA_D1, GAMMA_D2, GAMMA_S1, GAMMA_S2, GAMMA_S3, INTERFACE,
                         INTERIOR_D, INTERIOR_S, STOKES, Mesh, MeshError, build_structured_mesh)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_counts_and_area(n):
    m = build_structured_mesh(n)
    assert m.num_elements == 2 * n * n
    assert len(m.vertices) == (n + 1) ** 2
    assert m.num_facets == 3 * n * n + 2 * n
    assert np.isclose(m.area.sum(), 1.0)
    assert np.sum(m.subdomain == STOKES) == np.sum(m.subdomain == DARCY) == n * n


@pytest.mark.parametrize("n", [0, 1, 3, 7, 2.0, True, "4"])
def test_rejects_bad_subdivisions(n):
    with pytest.raises(MeshError):
        build_structured_mesh(n)


def test_boundary_partition():
    n = 6
    m = build_structured_mesh(n)
    counts = {k: len(m.facets_of_kind(k)) for k in BOUNDARY_KINDS + (INTERFACE,)}
    assert counts == {GAMMA_S1: n // 2, GAMMA_S2: n // 2, GAMMA_S3: n, GAMMA_D1: n, GAMMA_D2: n, INTERFACE: n}
    mid = m.vertices[m.facet_vertices].mean(axis=1)
    assert np.allclose(mid[m.facets_of_kind(GAMMA_S1), 0], 0.0)
    assert np.allclose(mid[m.facets_of_kind(GAMMA_S2), 0], 1.0)
    assert np.allclose(mid[m.facets_of_kind(GAMMA_S3), 1], 1.0)
    assert np.allclose(mid[m.facets_of_kind(GAMMA_D2), 1], 0.0)
    assert np.all(mid[m.facets_of_kind(GAMMA_D1), 1] < 0.5)
    assert np.allclose(mid[m.facets_of_kind(INTERFACE), 1], 0.5)


def test_interface_orientation():
    m = build_structured_mesh(4)
    f = m.facets_of_kind(INTERFACE)
    assert np.all(m.subdomain[m.facet_elements[f, 0]] == STOKES)
    assert np.all(m.subdomain[m.facet_elements[f, 1]] == DARCY)
    assert np.allclose(m.facet_normal[f], [0.0, -1.0])


def test_normals_outward_and_unit():
    m = build_structured_mesh(4)
    centroid = m.vertices[m.triangles].mean(axis=1)
    mid = m.vertices[m.facet_vertices].mean(axis=1)
    owner = m.facet_elements[:, 0]
    assert np.allclose(np.linalg.norm(m.facet_normal, axis=1), 1.0)
    assert np.all(np.einsum("fi,fi->f", mid - centroid[owner], m.facet_normal) > 0)
    assert np.allclose(np.einsum("fi,fi->f", m.facet_normal, m.facet_tangent), 0.0)
    # element normals agree with the facet normal up to the recorded sign
    for e in range(m.num_elements):
        for j, f in enumerate(m.element_facets[e]):
            assert np.allclose(m.element_normals[e, j], m.element_facet_sign[e, j] * m.facet_normal[f])


def test_interior_facets_have_two_owners_in_one_region():
    m = build_structured_mesh(4)
    for kind, sub in ((INTERIOR_S, STOKES), (INTERIOR_D, DARCY)):
        f = m.facets_of_kind(kind)
        assert np.all(m.facet_elements[f] >= 0)
        assert np.all(m.subdomain[m.facet_elements[f]] == sub)
    b = m.facets_of_kind(*BOUNDARY_KINDS)
    assert np.all(m.facet_elements[b, 1] == -1)


def test_reference_map_roundtrip():
    m = build_structured_mesh(4)
    rng = np.random.default_rng(1)
    ref = rng.random((m.num_elements, 5, 2)) * 0.5
    elems = np.repeat(np.arange(m.num_elements), 5).reshape(-1, 5)
    assert np.allclose(m.to_reference(m.to_physical(ref, elems), elems), ref)


def test_arrays_are_read_only():
    m = build_structured_mesh(2)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 1.0


def test_rejects_clockwise_and_straddling():
    with pytest.raises(MeshError):
        Mesh([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def test_summary_keys():
    s = build_structured_mesh(4).summary()
    assert s["triangles"] == 32 and s["interface"] == 4
