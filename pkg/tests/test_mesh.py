import numpy as np
import pytest
from hypothesis import given, strategies as st

from vbmog.fem.mesh import Mesh, adjacency_pairs, incidence_matrix


class TestMesh:
    def test_counts(self):
        m = Mesh(4, 3, 50.0, 30.0)
        assert (m.n_nodes, m.n_elements, m.n_dofs) == (20, 12, 40)
        assert m.coords.shape == (20, 2)
        assert m.elements.shape == (12, 4)

    @given(st.integers(1, 8), st.integers(1, 8))
    def test_areas_tile_domain(self, nx, ny):
        m = Mesh(nx, ny, 50.0, 20.0)
        np.testing.assert_allclose(m.element_areas, 1000.0 / (nx * ny), rtol=1e-12)

    def test_connectivity_is_counter_clockwise(self):
        m = Mesh(3, 2, 3.0, 2.0)
        xy = m.coords[m.elements[4]]
        np.testing.assert_allclose(xy, [[1, 1], [2, 1], [2, 2], [1, 2]])

    def test_boundary_nodes(self):
        m = Mesh(5, 4, 50.0, 50.0)
        np.testing.assert_array_equal(m.coords[m.bottom_nodes, 1], 0.0)
        np.testing.assert_array_equal(m.coords[m.top_nodes, 1], 50.0)
        assert m.top_edges.shape == (5, 2)

    def test_rejects_empty_mesh(self):
        with pytest.raises(ValueError):
            Mesh(0, 3)

    def test_refine_and_coincident_nodes(self):
        coarse = Mesh(4, 4, 50.0, 50.0)
        fine = coarse.refine(2, 2)
        assert (fine.nx, fine.ny) == (8, 8)
        ids = fine.coincident_nodes(coarse)
        np.testing.assert_allclose(fine.coords[ids], coarse.coords, atol=1e-12)

    def test_parent_elements_contain_children(self):
        coarse = Mesh(3, 2, 30.0, 20.0)
        fine = coarse.refine(3, 2)
        parent = fine.parent_elements(coarse)
        lo = coarse.coords[coarse.elements[parent, 0]]
        hi = coarse.coords[coarse.elements[parent, 2]]
        c = fine.centroids
        assert np.all((c > lo) & (c < hi))

    def test_non_integer_refinement_rejected(self):
        with pytest.raises(ValueError):
            Mesh(5, 5).coincident_nodes(Mesh(2, 2))

    def test_mirror_is_involution(self):
        m = Mesh(5, 3, 50.0, 30.0)
        e, n = m.mirror_elements(), m.mirror_nodes()
        np.testing.assert_array_equal(e[e], np.arange(m.n_elements))
        np.testing.assert_allclose(m.coords[n, 0], 50.0 - m.coords[:, 0])


class TestIncidence:
    @given(st.integers(1, 7), st.integers(1, 7))
    def test_rows_are_signed_differences(self, nx, ny):
        L = incidence_matrix(nx, ny)
        assert L.shape == ((nx - 1) * ny + nx * (ny - 1), nx * ny)
        dense = L.toarray()
        np.testing.assert_array_equal(np.sort(dense, axis=1)[:, [0, -1]],
                                      np.tile([-1.0, 1.0], (dense.shape[0], 1)))
        np.testing.assert_allclose(L @ np.ones(nx * ny), 0.0)

    def test_pairs_share_an_edge(self):
        m = Mesh(4, 3)
        for k, l in adjacency_pairs(4, 3):
            shared = set(m.elements[k]) & set(m.elements[l])
            assert len(shared) == 2
