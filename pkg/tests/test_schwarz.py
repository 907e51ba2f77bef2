import json

import numpy as np
import pytest
import scipy.sparse as sp

from schwarzq import (
    Coefficient,
    MeshSpec,
    assemble_stiffness,
    build_layout,
    build_preconditioner,
    coarse_space,
    dg_prolongation,
    factorize_gradient,
    local_gradient_identity_check,
    local_stiffness,
    restriction,
)
from schwarzq.schwarz import dg_row_map, layout_to_json

from oracles import dense_preconditioner, hat_interpolation, nonzero_eigvals


def small_problem(d=1, L=3, N=(2,), delta=0.125, coarse="nodal", flavor="as2",
                  local="exact"):
    mesh = MeshSpec(d, L, N, delta)
    A = assemble_stiffness(mesh, Coefficient.identity(mesh))
    layout = build_layout(mesh)
    pre = build_preconditioner(A, layout, flavor=flavor, local=local,
                               coarse_kind=coarse)
    return mesh, A, layout, pre


class TestLayout:
    def test_eight_subdomain_geometry(self):
        # 4 x 2 decomposition at L = 3 with one-element half-overlap
        mesh = MeshSpec(2, 3, (4, 2), 2**-3)
        layout = build_layout(mesh)
        assert layout.n_subdomains == 8
        for i, multi in enumerate(layout.multi_indices):
            assert len(layout.omegas[i]) == (2**3 - 1) ** 2
            # subdomain (i1, i2) spans elements [i_s * stride, i_s * stride + 2^L)
            es = layout.element_sets[i]
            x = es // mesh.elems_per_dir[1]
            y = es % mesh.elems_per_dir[1]
            assert x.min() == multi[0] * mesh.stride_elems
            assert x.max() == multi[0] * mesh.stride_elems + 2**3 - 1
            assert y.min() == multi[1] * mesh.stride_elems
            assert y.max() == multi[1] * mesh.stride_elems + 2**3 - 1
        covered = np.unique(np.concatenate(layout.element_sets))
        assert len(covered) == mesh.n_elems

    def test_single_subdomain_owns_everything(self):
        mesh = MeshSpec(1, 3, (1,), 0.0)
        layout = build_layout(mesh)
        assert np.array_equal(layout.omegas[0], np.arange(mesh.n_dofs))

    def test_textbook_1d_example(self):
        # two subdomains, L = 2, quarter overlap: omega_1 = {0,1,2}, omega_2 = {2,3,4}
        mesh = MeshSpec(1, 2, (2,), 0.25)
        layout = build_layout(mesh)
        assert layout.omegas[0].tolist() == [0, 1, 2]
        assert layout.omegas[1].tolist() == [2, 3, 4]
        R1t = restriction(layout, 0).T.toarray()
        R2t = restriction(layout, 1).T.toarray()
        assert np.array_equal(R1t, np.vstack([np.eye(3), np.zeros((2, 3))]))
        assert np.array_equal(R2t, np.vstack([np.zeros((2, 3)), np.eye(3)]))

    def test_rejects_coinciding_subdomains(self):
        with pytest.raises(ValueError, match="coincide"):
            build_layout(MeshSpec(1, 2, (2,), 0.5))

    def test_json_serialization(self, tmp_path):
        mesh = MeshSpec(2, 2, (2, 1), 0.25)
        layout = build_layout(mesh)
        path = tmp_path / "layout.json"
        layout_to_json(layout, path)
        doc = json.loads(path.read_text())
        assert doc["d"] == 2 and doc["L"] == 2 and doc["N_s"] == [2, 1]
        assert doc["omega"] == [w.tolist() for w in layout.omegas]

    def test_coloring_constants(self):
        assert build_layout(MeshSpec(2, 3, (2, 2), 2**-3)).coloring_constant == 4
        assert build_layout(MeshSpec(2, 3, (8, 1), 2**-3)).coloring_constant == 2
        assert build_layout(MeshSpec(1, 3, (1,), 0.0)).coloring_constant == 1

    def test_coloring_with_huge_overlap_matches_bruteforce(self):
        # overlap of 3 of 4 elements: subdomains up to 3 steps apart intersect
        mesh = MeshSpec(1, 2, (4,), 0.375)
        layout = build_layout(mesh)
        adj = [
            (i, j)
            for i in range(4)
            for j in range(i + 1, 4)
            if np.intersect1d(layout.element_sets[i], layout.element_sets[j]).size
        ]

        def chromatic(n, edges):
            for k in range(1, n + 1):
                from itertools import product

                for colors in product(range(k), repeat=n):
                    if all(colors[a] != colors[b] for a, b in edges):
                        return k
            return n

        assert layout.coloring_constant == chromatic(4, adj)


class TestRestrictionAndLocal:
    def test_rows_orthonormal(self):
        mesh = MeshSpec(2, 2, (2, 2), 0.25)
        layout = build_layout(mesh)
        for i in range(layout.n_subdomains):
            R = restriction(layout, i)
            assert ((R @ R.T) - sp.eye(R.shape[0])).nnz == 0

    def test_out_of_range(self):
        layout = build_layout(MeshSpec(1, 2, (2,), 0.25))
        with pytest.raises(IndexError):
            restriction(layout, 2)

    def test_submatrix_extraction(self):
        mesh = MeshSpec(1, 2, (2,), 0.25)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = build_layout(mesh)
        A1 = local_stiffness(A, layout, 0).toarray()
        assert np.array_equal(A1, [[8, -4, 0], [-4, 8, -4], [0, -4, 8]])
        R = restriction(layout, 1)
        assert np.array_equal(
            (R @ A @ R.T).toarray(), local_stiffness(A, layout, 1).toarray()
        )

    def test_local_matches_independent_assembly(self):
        # the extracted block equals the Dirichlet problem assembled on the cube
        mesh = MeshSpec(2, 3, (2, 2), 2**-3)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = build_layout(mesh)
        local = mesh.local_spec()
        A_ref = assemble_stiffness(local, Coefficient.identity(local)).toarray()
        for i in range(layout.n_subdomains):
            Ai = local_stiffness(A, layout, i).toarray()
            assert np.abs(Ai - A_ref).max() <= 1e-12 * np.abs(A_ref).max()
            assert np.array_equal(Ai, Ai.T)


class TestGradientSwitch:
    @pytest.mark.parametrize("spec", [(1, 2, (2,), 0.25), (2, 3, (2, 2), 0.125)])
    def test_identity_holds(self, spec):
        mesh = MeshSpec(*spec)
        layout = build_layout(mesh)
        for i in range(layout.n_subdomains):
            assert local_gradient_identity_check(mesh, layout, i)

    def test_wrong_offset_breaks_identity(self):
        mesh = MeshSpec(1, 2, (2,), 0.25)
        layout = build_layout(mesh)
        C = factorize_gradient(mesh)
        C_loc = factorize_gradient(mesh.local_spec())
        rows = dg_row_map(layout, 1)
        n_loc = rows.size
        bad = sp.coo_matrix(
            (np.ones(n_loc), ((rows - 2) % mesh.n_dg_dofs, np.arange(n_loc))),
            shape=(mesh.n_dg_dofs, n_loc),
        ).tocsr()
        lhs = (C @ restriction(layout, 1).T).toarray()
        assert np.abs(lhs - (bad @ C_loc).toarray()).max() > 1.0


class TestCoarseSpace:
    def test_nodal_tent_1d(self):
        mesh = MeshSpec(1, 4, (2,), 2**-4)
        layout = build_layout(mesh)
        Z = coarse_space(layout, "nodal").toarray()
        assert Z.shape == (mesh.n_dofs, 1)
        # interpolate the hat over [0, center, end] at the fine vertices
        center = mesh.stride_elems + mesh.overlap_elems / 2.0
        expected = hat_interpolation(
            np.arange(1, mesh.elems_per_dir[0]), 0.0, center, mesh.elems_per_dir[0]
        )
        assert np.allclose(Z[:, 0], expected, atol=1e-14)
        assert Z.max() == 1.0

    def test_nodal_column_count_3x3(self):
        layout = build_layout(MeshSpec(2, 4, (3, 3), 2**-4))
        Z = coarse_space(layout, "nodal")
        assert Z.shape[1] == 4

    def test_nodal_empty_for_banded(self):
        layout = build_layout(MeshSpec(2, 3, (8, 1), 2**-3))
        assert coarse_space(layout, "nodal").shape[1] == 0

    def test_galerkin_coarse_spd(self):
        mesh = MeshSpec(2, 3, (2, 2), 0.125)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = build_layout(mesh)
        for kind in ("nodal", "pou"):
            Z = coarse_space(layout, kind)
            ev = np.linalg.eigvalsh((Z.T @ (A @ Z)).toarray())
            assert ev.min() > 0

    def test_partition_of_unity_sums_to_one(self):
        mesh = MeshSpec(2, 3, (2, 2), 0.125)
        layout = build_layout(mesh)
        Z = coarse_space(layout, "pou").toarray()
        assert Z.shape[1] == 4
        assert np.allclose(Z.sum(axis=1), 1.0, atol=1e-14)

    def test_unknown_kind(self):
        layout = build_layout(MeshSpec(1, 2, (2,), 0.25))
        with pytest.raises(ValueError, match="kind"):
            coarse_space(layout, "geneo")


class TestSplitPreconditioner:
    def test_single_subdomain_is_exact_inverse(self):
        mesh, A, layout, pre = small_problem(N=(1,), delta=0.0, flavor="as1")
        HA = np.column_stack([pre.apply(A @ e) for e in np.eye(mesh.n_dofs)])
        assert np.abs(HA - np.eye(mesh.n_dofs)).max() <= 1e-12

    def test_hybrid_requires_coarse(self):
        mesh = MeshSpec(1, 3, (2,), 0.125)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = build_layout(mesh)
        with pytest.raises(ValueError, match="coarse"):
            build_preconditioner(A, layout, flavor="hyb", use_coarse=False)

    def test_cholesky_failure_raises(self):
        mesh = MeshSpec(1, 3, (2,), 0.125)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = build_layout(mesh)
        with pytest.raises(ValueError, match="SPD|Cholesky"):
            build_preconditioner(-A, layout, flavor="as1")

    @pytest.mark.parametrize("flavor,local", [("as1", "exact"), ("as2", "exact"),
                                              ("hyb", "exact"), ("as2", "bpx")])
    def test_apply_matches_dense_oracle(self, flavor, local):
        mesh, A, layout, pre = small_problem(
            d=2, L=2, N=(2, 2), delta=0.25, flavor=flavor, local=local
        )
        Ad = A.toarray()
        Z = coarse_space(layout, "nodal").toarray() if flavor != "as1" else None
        if local == "bpx":
            from schwarzq import build_bpx

            F = build_bpx(mesh.L, mesh.d).matrix.toarray()
            inv = [F @ F.T] * layout.n_subdomains
        else:
            inv = None
        H_ref = dense_preconditioner(
            Ad, layout.omegas, Z=Z, hybrid=flavor == "hyb", local_inverses=inv
        )
        H = np.column_stack([pre.apply(e) for e in np.eye(mesh.n_dofs)])
        assert np.abs(H - H_ref).max() <= 1e-12 * np.abs(H_ref).max()

    def test_flavor_tags(self):
        _, _, _, pre = small_problem(flavor="as2", local="exact")
        assert pre.flavor_tag == "AS2_exact"
        _, _, _, pre = small_problem(flavor="hyb", local="bpx")
        assert pre.flavor_tag == "HYB_bpx"

    def test_as2_without_coarse_degrades_to_as1(self):
        mesh, A, layout, _ = small_problem()
        pre = build_preconditioner(A, layout, flavor="as2", use_coarse=False)
        assert pre.flavor_tag == "AS1_exact"
        assert not pre.has_coarse


class TestFtilde:
    @pytest.mark.parametrize("flavor", ["as1", "as2", "hyb"])
    def test_zero_and_adjoint(self, flavor):
        mesh, A, layout, pre = small_problem(flavor=flavor)
        assert not np.any(pre.apply_Ftilde(np.zeros(pre.total_cols)))
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.standard_normal(mesh.n_dofs)
            y = rng.standard_normal(pre.total_cols)
            lhs = pre.apply_Ftilde(y) @ x
            rhs = y @ pre.apply_Ftilde_T(x)
            assert abs(lhs - rhs) <= 1e-13 * max(1.0, abs(lhs))

    @pytest.mark.parametrize("flavor,local", [("as1", "exact"), ("as2", "exact"),
                                              ("hyb", "exact"), ("as2", "bpx")])
    def test_outer_product_reproduces_preconditioner(self, flavor, local):
        mesh, A, layout, pre = small_problem(d=2, L=2, N=(2, 2), delta=0.25,
                                             flavor=flavor, local=local)
        Ft = pre.dense_factor()
        H = np.column_stack([pre.apply(e) for e in np.eye(mesh.n_dofs)])
        assert np.abs(Ft @ Ft.T - H).max() <= 1e-12 * max(1.0, np.abs(H).max())
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = rng.standard_normal(mesh.n_dofs)
            assert np.isclose(x @ (Ft @ (Ft.T @ x)), x @ pre.apply(x), rtol=1e-12)

    def test_gram_norm_identity(self):
        mesh, A, layout, pre = small_problem(flavor="as2")
        Ft = pre.dense_factor()
        rng = np.random.default_rng(9)
        for _ in range(5):
            y = rng.standard_normal(pre.total_cols)
            assert np.isclose(
                np.linalg.norm(pre.apply_Ftilde(y)) ** 2,
                y @ (Ft.T @ Ft @ y),
                rtol=1e-12,
            )

    def test_dimension_mismatch(self):
        mesh, A, layout, pre = small_problem()
        with pytest.raises(ValueError):
            pre.apply_Ftilde(np.zeros(pre.total_cols + 1))
        with pytest.raises(ValueError):
            pre.apply_Ftilde_T(np.zeros(mesh.n_dofs + 1))

    def test_nonzero_spectrum_transfer(self):
        # nonzero eigenvalues of F~^T A F~ equal the spectrum of H A
        mesh, A, layout, pre = small_problem(d=2, L=3, N=(2, 1), delta=0.125,
                                             flavor="as1")
        assert mesh.n_dofs <= 300
        Ft = pre.dense_factor()
        Ad = A.toarray()
        sym = Ft.T @ Ad @ Ft
        H = np.column_stack([pre.apply(e) for e in np.eye(mesh.n_dofs)])
        ev_sym = nonzero_eigvals(sym)
        ev_ha = np.sort(np.linalg.eigvals(H @ Ad).real)
        assert len(ev_sym) == mesh.n_dofs
        assert np.allclose(ev_sym, ev_ha, rtol=1e-8)
