import numpy as np
import pytest
import scipy.sparse as sp

from cusp_spectra.assembly import DIRICHLET, NEUMANN, assemble, dump_matrix, element_matrices, load_matrix
from cusp_spectra.errors import SingularityError
from cusp_spectra.geometry import CuspGeometry
from cusp_spectra.mesh import TriangleMesh, mesh_rectangle, mesh_reference
from cusp_spectra.transform import CoefficientField, affine, identity, phi_eps, pullback


class ConstantFields:
    """g = c, a = I everywhere."""

    def __init__(self, c):
        self.c = c

    def evaluate(self, pts):
        n = len(pts)
        return np.full(n, self.c), np.broadcast_to(np.eye(2), (n, 2, 2)).copy()


def reference_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return TriangleMesh.build(nodes, np.array([[0, 1, 2]]))


def test_reference_element_matrices():
    Ke, Me = element_matrices(reference_triangle(), ConstantFields(1.0), 3)
    np.testing.assert_allclose(Ke[0], [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)
    np.testing.assert_allclose(Me[0], (0.5 / 12) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-15)


def test_quadrature_orders_agree_for_constants():
    m = mesh_rectangle(nx=5)
    f = pullback(identity(), CoefficientField.identity())
    a3, a7 = assemble(m, f, NEUMANN, 3), assemble(m, f, NEUMANN, 7)
    assert abs(a3.K - a7.K).max() < 1e-14
    assert abs(a3.M - a7.M).max() < 1e-15


def test_weight_scales_linearly():
    m = mesh_rectangle(nx=6)
    one, three = assemble(m, ConstantFields(1.0)), assemble(m, ConstantFields(3.0))
    assert abs(three.K - 3 * one.K).max() < 1e-13
    assert abs(three.M - 3 * one.M).max() < 1e-15


def test_neumann_constant_nullspace_and_mass():
    m = mesh_rectangle(nx=8)
    s = assemble(m, pullback(identity(), CoefficientField.identity()), NEUMANN)
    assert np.abs(s.K @ np.ones(s.ndof)).max() < 1e-10
    assert np.ones(s.ndof) @ (s.M @ np.ones(s.ndof)) == pytest.approx(1.0, abs=1e-14)


def test_exact_symmetry_on_cusp_mesh():
    geo = CuspGeometry(0.95, 0.2)
    m = mesh_reference(geo, 0.1, 2.0, [0.05])
    s = assemble(m, pullback(phi_eps(geo, 0.05), CoefficientField.identity()))
    assert (s.K - s.K.T).count_nonzero() == 0
    assert (s.M - s.M.T).count_nonzero() == 0
    assert np.all(s.M.diagonal() > 0)


def test_dirichlet_elimination():
    m = mesh_rectangle(nx=4)
    s = assemble(m, pullback(identity(), CoefficientField.identity()), DIRICHLET)
    assert s.ndof == 9 and s.K.shape == (9, 9)
    assert np.all(~m.boundary_mask()[s.dof_map])
    full = s.expand(np.arange(9.0))
    assert full.shape == (25,) and np.all(full[m.boundary_mask()] == 0)


def test_assembly_is_bitwise_deterministic():
    geo = CuspGeometry(0.95, 0.2)
    m = mesh_reference(geo, 0.1, 2.0, [0.05])
    f = pullback(phi_eps(geo, 0.05), CoefficientField.identity())
    a, b = assemble(m, f), assemble(m, f)
    for x, y in ((a.K, b.K), (a.M, b.M)):
        np.testing.assert_array_equal(x.data, y.data)
        np.testing.assert_array_equal(x.indices, y.indices)


def test_singular_field_reports_element():
    f = pullback(affine([[1.0, 0.0], [0.0, 0.0]]), CoefficientField.identity())
    with pytest.raises(SingularityError) as info:
        assemble(mesh_rectangle(nx=2), f)
    assert info.value.element is not None


def test_matrix_dump_round_trip(tmp_path):
    s = assemble(mesh_rectangle(nx=5), pullback(identity(), CoefficientField.identity()))
    dump_matrix(s.K, tmp_path / "K.txt")
    back = load_matrix(tmp_path / "K.txt", s.ndof)
    assert (back != s.K).nnz == 0


def test_bad_bc():
    with pytest.raises(ValueError):
        assemble(mesh_rectangle(nx=2), ConstantFields(1.0), "robin")
