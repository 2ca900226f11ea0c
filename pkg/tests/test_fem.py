import numpy as np
import pytest

import oracles
from afemeig import fem, mesh, problem
from conftest import grid_square, two_triangle_square


class TestDofMap:
    def test_two_triangle_p1(self):
        dm = fem.build_dofmap(two_triangle_square(), 1)
        assert dm.num_dofs == 4
        assert dm.num_interior == 0

    def test_structured_3x3_p1(self):
        dm = fem.build_dofmap(grid_square(2), 1)
        assert dm.num_dofs == 9
        assert dm.num_interior == 1

    def test_two_triangle_p2(self):
        tri = two_triangle_square()
        dm = fem.build_dofmap(tri, 2)
        assert dm.num_dofs == 9  # 4 vertices + 5 edge midpoints
        assert dm.num_interior == 1  # the diagonal midpoint
        pt = fem.dof_coordinates(tri, dm)[dm.interior_dofs[0]]
        assert np.allclose(pt, (0.5, 0.5))

    def test_shared_edge_dofs_agree(self):
        tri = grid_square(3)
        for deg in (2, 3):
            dm = fem.build_dofmap(tri, deg)
            coords = fem.dof_coordinates(tri, dm)
            # same physical point -> same dof id, across all elements
            seen = {}
            for e in range(tri.num_elements):
                for loc, gd in enumerate(dm.elem_dofs[e]):
                    key = tuple(np.round(coords[gd], 12))
                    assert seen.setdefault(key, gd) == gd

    def test_p3_count(self):
        tri = grid_square(2)
        dm = fem.build_dofmap(tri, 3)
        expect = tri.num_vertices + 2 * tri.num_sides + tri.num_elements
        assert dm.num_dofs == expect


class TestAssembly:
    def test_hand_assembled_h_half(self, square_problem):
        tri = grid_square(2)
        dm = fem.build_dofmap(tri, 1)
        forms = fem.assemble(tri, dm, square_problem.coefficients)
        assert forms.K.shape == (1, 1)
        assert forms.K[0, 0] == pytest.approx(4.0, rel=1e-14)
        assert forms.M[0, 0] == pytest.approx(0.125, rel=1e-14)

    def test_generalized_eigenvalue_32(self, square_problem):
        tri = grid_square(2)
        dm = fem.build_dofmap(tri, 1)
        forms = fem.assemble(tri, dm, square_problem.coefficients)
        lam = forms.K[0, 0] / forms.M[0, 0]
        assert lam == pytest.approx(32.0, rel=1e-13)

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_matches_dense_oracle(self, degree, square_problem):
        tri = grid_square(3)
        dm = fem.build_dofmap(tri, degree)
        forms = fem.assemble(tri, dm, square_problem.coefficients)
        K, M = oracles.dense_assemble(tri, dm, square_problem.coefficients)
        assert np.abs(forms.K.toarray() - K).max() <= 1e-13 * np.abs(K).max()
        assert np.abs(forms.M.toarray() - M).max() <= 1e-13 * np.abs(M).max()

    def test_exact_symmetry_and_positivity(self, square_problem):
        tri = mesh.refine(grid_square(3), [0, 5, 7])
        for deg in (1, 2):
            dm = fem.build_dofmap(tri, deg)
            forms = fem.assemble(tri, dm, square_problem.coefficients)
            assert (forms.K != forms.K.T).nnz == 0
            assert (forms.M != forms.M.T).nnz == 0
            rng = np.random.default_rng(0)
            for _ in range(100):
                x = rng.standard_normal(dm.num_interior)
                assert x @ (forms.K @ x) > 0
                assert x @ (forms.M @ x) > 0
            # positive definiteness via factorization success
            np.linalg.cholesky(forms.K.toarray())
            np.linalg.cholesky(forms.M.toarray())

    def test_empty_space_rejected(self, square_problem):
        tri = two_triangle_square()
        dm = fem.build_dofmap(tri, 1)
        with pytest.raises(fem.AssemblyError, match="empty discrete space"):
            fem.assemble(tri, dm, square_problem.coefficients)

    def test_norm_equivalence_bounds(self):
        # a1 |v|_H1^2 <= ||v||_a^2 <= a2 |v|_H1^2, same for b
        p = problem.builtin("interface", alpha=50.0)
        tri = mesh.uniform_refine(p.tri, 2)
        dm = fem.build_dofmap(tri, 1)
        forms = fem.assemble(tri, dm, p.coefficients)
        unit = fem.assemble_unit(tri, dm)
        a1, a2 = p.coefficients.a_bounds
        b1, b2 = p.coefficients.b_bounds
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.standard_normal(dm.num_interior)
            semi = x @ (unit.K @ x)
            l2 = x @ (unit.M @ x)
            assert a1 * semi - 1e-10 <= x @ (forms.K @ x) <= a2 * semi + 1e-10
            assert b1 * l2 - 1e-10 <= x @ (forms.M @ x) <= b2 * l2 + 1e-10


class TestEvaluation:
    def test_hat_nodal_property(self, square_problem):
        tri = grid_square(4)
        dm = fem.build_dofmap(tri, 2)
        u = fem.DiscreteFunction(dm, np.zeros(dm.num_interior))
        u.coeffs[3] = 1.0
        gdof = dm.interior_dofs[3]
        e, loc = np.argwhere(dm.elem_dofs == gdof)[0]
        nodes = fem.reference_nodes(2)
        assert fem.eval_function(u, tri, int(e), nodes[loc]) == pytest.approx(1.0)
        for other in range(nodes.shape[0]):
            if other != loc:
                assert abs(fem.eval_function(u, tri, int(e),
                                             nodes[other])) < 1e-13

    def test_p1_gradient_constant_matches_fd(self, square_problem):
        tri = grid_square(4)
        dm = fem.build_dofmap(tri, 1)
        u = fem.interpolate(tri, dm, lambda x, y: np.sin(x + 2 * y))
        e = 9
        g1 = fem.eval_gradient(u, tri, e, np.array([1 / 3, 1 / 3, 1 / 3]))
        g2 = fem.eval_gradient(u, tri, e, np.array([0.6, 0.3, 0.1]))
        assert np.allclose(g1, g2)  # constant per element
        xy = tri.element_coords([e])[0]
        pt = xy.mean(axis=0)
        h = 1e-6

        def at(px, py):
            bary = mesh.barycentric(tri, e, px, py)
            return fem.eval_function(u, tri, e, bary)

        fd = [(at(pt[0] + h, pt[1]) - at(pt[0] - h, pt[1])) / (2 * h),
              (at(pt[0], pt[1] + h) - at(pt[0], pt[1] - h)) / (2 * h)]
        assert np.allclose(g1, fd, atol=1e-8)

    def test_local_polynomial_agrees(self):
        tri = grid_square(3)
        dm = fem.build_dofmap(tri, 3)
        rng = np.random.default_rng(8)
        u = fem.DiscreteFunction(dm, rng.standard_normal(dm.num_interior))
        e = 5
        p = fem.local_polynomial(u, tri, e)
        for bary in rng.dirichlet([1, 1, 1], size=4):
            xy = bary @ tri.element_coords([e])[0]
            assert p(xy[0], xy[1]) == pytest.approx(
                fem.eval_function(u, tri, e, bary), abs=1e-12)


class TestNorms:
    def test_zero_function(self, square_problem):
        tri = grid_square(2)
        dm = fem.build_dofmap(tri, 1)
        forms = fem.assemble(tri, dm, square_problem.coefficients)
        z = fem.DiscreteFunction(dm, np.zeros(dm.num_interior))
        assert fem.norms(z, forms, tri=tri) == (0.0, 0.0, 0.0)

    def test_eigenvector_energy_is_lambda(self, square_problem):
        from afemeig import eigsolve
        tri = grid_square(4)
        dm = fem.build_dofmap(tri, 1)
        forms = fem.assemble(tri, dm, square_problem.coefficients)
        s = eigsolve.solve_smallest(forms, 1)
        u = fem.DiscreteFunction(dm, s.vectors[:, 0].copy())
        a, b, _ = fem.norms(u, forms, tri=tri)
        assert b == pytest.approx(1.0, abs=1e-10)
        assert a ** 2 == pytest.approx(s.values[0], rel=1e-12)

    def test_interpolant_b_norm_tends_to_one(self, square_problem):
        # quadrature oracle: the b-norm of the interpolant of the first
        # closed-form mode approaches 1 under refinement
        bf = square_problem.reference_basis[0]
        errs = []
        for k in (2, 4, 8):
            tri = grid_square(k)
            dm = fem.build_dofmap(tri, 1)
            forms = fem.assemble(tri, dm, square_problem.coefficients)
            u = fem.interpolate(tri, dm, bf.value)
            _, b, _ = fem.norms(u, forms, tri=tri)
            errs.append(abs(b - 1.0))
        assert errs[2] < errs[1] < errs[0]
        assert errs[2] < 0.05


class TestProlongation:
    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_nesting_preserves_norms(self, degree, square_problem):
        tri = grid_square(3)
        dm = fem.build_dofmap(tri, degree)
        rng = np.random.default_rng(degree)
        u = fem.DiscreteFunction(dm, rng.standard_normal(dm.num_interior))
        fine = mesh.refine(tri, [0, 4, 7, 10])
        dmf = fem.build_dofmap(fine, degree)
        up = fem.prolong(u, tri, fine, dmf)
        f_c = fem.assemble(tri, dm, square_problem.coefficients)
        f_f = fem.assemble(fine, dmf, square_problem.coefficients)
        nc = fem.norms(u, f_c, tri=tri)
        nf = fem.norms(up, f_f, tri=fine)
        for a, b in zip(nc, nf):
            assert b == pytest.approx(a, rel=1e-12, abs=1e-12)

    def test_pointwise_identity(self, square_problem):
        tri = grid_square(2)
        dm = fem.build_dofmap(tri, 2)
        rng = np.random.default_rng(9)
        u = fem.DiscreteFunction(dm, rng.standard_normal(dm.num_interior))
        fine = mesh.refine_times(tri, np.arange(tri.num_elements), 2)
        dmf = fem.build_dofmap(fine, 2)
        up = fem.prolong(u, tri, fine, dmf)
        for e in range(0, fine.num_elements, 5):
            anc = int(fine.parent_elements[e])
            bary = np.array([0.2, 0.5, 0.3])
            xy = bary @ fine.element_coords([e])[0]
            cb = mesh.barycentric(tri, anc, xy[0], xy[1])
            assert fem.eval_function(up, fine, e, bary) == pytest.approx(
                fem.eval_function(u, tri, anc, cb), abs=1e-12)


class TestMatrixExport:
    def test_round_trip(self, tmp_path, square_problem):
        tri = grid_square(3)
        dm = fem.build_dofmap(tri, 1)
        forms = fem.assemble(tri, dm, square_problem.coefficients)
        path = tmp_path / "K.txt"
        fem.export_matrix(forms.K, path)
        back = fem.import_matrix(path)
        assert np.array_equal(back.toarray(), forms.K.toarray())
        header = path.read_text().split("\n")[0]
        assert header.startswith("afem-matrix")
