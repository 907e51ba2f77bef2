import numpy as np
import pytest

from schwarzq import (
    Coefficient,
    MeshSpec,
    assemble_stiffness,
    build_layout,
    build_preconditioner,
    calibrate_subnorm_offset,
    compose_concat_columns,
    compose_product,
    encode_dilation,
    encode_prolongation,
    encode_scaled_identity,
    factorize_gradient,
)
from schwarzq.encoding import (
    BlockEncoding,
    assemble_preconditioned_encoding,
    assemble_split_gradient_encoding,
    prolong_rows,
    spectral_norm_power,
)
from schwarzq.schwarz import dg_prolongation


def bpx_problem(L=2, N=2, local="bpx", coarse="nodal", use_coarse=True):
    mesh = MeshSpec(1, L, (N,), 2.0**-L)
    rho = Coefficient.identity(mesh)
    A = assemble_stiffness(mesh, rho)
    layout = build_layout(mesh)
    pre = build_preconditioner(
        A, layout, flavor="as2" if use_coarse else "as1", local=local,
        use_coarse=use_coarse, coarse_kind=coarse,
    )
    return mesh, rho, A, layout, pre


class TestDilation:
    def test_scalar_dilation_by_hand(self):
        be = encode_dilation(np.array([[0.6]]), 1.0)
        assert np.allclose(be.unitary[:2, :2], [[0.6, 0.8], [0.8, -0.6]], atol=1e-15)
        assert be.shape == (1, 1)

    def test_identity_recovery(self):
        be = encode_dilation(np.eye(2), 1.0)
        assert np.abs(be.encoded() - np.eye(2)).max() <= 1e-12
        assert be.unitarity_defect() <= 1e-12

    def test_random_rectangular(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((3, 5))
        alpha = 2.0 * np.linalg.norm(M, 2)
        be = encode_dilation(M, alpha)
        assert np.abs(be.encoded() - M).max() <= 1e-12
        assert np.isclose(be.subnormalization(), 2.0, rtol=1e-9)
        assert be.unitarity_defect() <= 1e-12
        assert be.P == 8  # least power of two above 3 + 5

    def test_alpha_below_norm_rejected(self):
        M = np.eye(3) * 2.0
        with pytest.raises(ValueError, match="spectral norm"):
            encode_dilation(M, 1.0)

    def test_power_iteration_norm(self):
        rng = np.random.default_rng(1)
        M = rng.standard_normal((7, 4))
        assert np.isclose(spectral_norm_power(M), np.linalg.norm(M, 2), rtol=1e-8)


class TestProduct:
    def test_identity_times_identity(self):
        a = encode_dilation(np.eye(2), 1.0)
        b = encode_dilation(np.eye(2), 1.0)
        prod = compose_product(a, b)
        assert prod.alpha == 1.0
        assert np.abs(prod.encoded() - np.eye(2)).max() <= 1e-12

    def test_random_square_pair(self):
        rng = np.random.default_rng(2)
        Ma, Mb = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
        a = encode_dilation(Ma, 1.7 * np.linalg.norm(Ma, 2))
        b = encode_dilation(Mb, 1.1 * np.linalg.norm(Mb, 2))
        prod = compose_product(a, b)
        assert prod.alpha == a.alpha * b.alpha
        assert np.abs(prod.encoded() - Ma @ Mb).max() <= 1e-11
        assert prod.unitarity_defect() <= 1e-12

    def test_rectangular_chain(self):
        rng = np.random.default_rng(3)
        Ma, Mb = rng.standard_normal((2, 5)), rng.standard_normal((5, 3))
        a = encode_dilation(Ma, 1.5 * np.linalg.norm(Ma, 2))
        b = encode_dilation(Mb, 2.5 * np.linalg.norm(Mb, 2))
        prod = compose_product(a, b)
        assert prod.shape == (2, 3)
        assert np.abs(prod.encoded() - Ma @ Mb).max() <= 1e-11

    def test_shape_mismatch(self):
        a = encode_dilation(np.eye(2), 1.0)
        b = encode_dilation(np.eye(3), 1.0)
        with pytest.raises(ValueError, match="incompatible"):
            compose_product(a, b)

    def test_scaled_identity_shortcut(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((3, 3))
        a = encode_dilation(M, 2.0 * np.linalg.norm(M, 2))
        c = encode_scaled_identity(3, 2.5)
        prod = compose_product(a, c)
        assert prod.alpha == a.alpha * 2.5
        assert np.abs(prod.encoded() - 2.5 * M).max() <= 1e-11

    def test_dense_projector_path(self):
        # rotate the projectors of two encodings into non-coordinate bases
        rng = np.random.default_rng(5)
        Ma, Mb = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        a = encode_dilation(Ma, 2 * np.linalg.norm(Ma, 2))
        b = encode_dilation(Mb, 2 * np.linalg.norm(Mb, 2))
        Q, _ = np.linalg.qr(rng.standard_normal((a.P, a.P)))
        a_rot = BlockEncoding(a.alpha, Q @ a.unitary,
                              np.eye(a.P)[a.row] @ Q.T, a.col)
        assert np.abs(a_rot.encoded() - Ma).max() <= 1e-12
        prod = compose_product(a_rot, b)
        assert np.abs(prod.encoded() - Ma @ Mb).max() <= 1e-11


class TestConcat:
    def test_two_scalar_ones(self):
        a = encode_dilation(np.array([[1.0]]), 1.0)
        b = encode_dilation(np.array([[1.0]]), 1.0)
        cat = compose_concat_columns([a, b])
        assert cat.alpha == np.sqrt(2.0)
        assert np.abs(cat.encoded() - np.array([[1.0, 1.0]])).max() <= 1e-12

    def test_root_sum_square_law(self):
        rng = np.random.default_rng(6)
        mats = [rng.standard_normal((3, k)) for k in (2, 4, 3)]
        bes = [encode_dilation(M, (1 + i) * np.linalg.norm(M, 2))
               for i, M in enumerate(mats)]
        cat = compose_concat_columns(bes)
        assert cat.alpha == np.sqrt(sum(b.alpha**2 for b in bes))
        assert np.abs(cat.encoded() - np.hstack(mats)).max() <= 1e-11
        assert cat.unitarity_defect() <= 1e-12

    def test_row_dimension_mismatch(self):
        a = encode_dilation(np.ones((2, 2)), 3.0)
        b = encode_dilation(np.ones((3, 2)), 3.0)
        with pytest.raises(ValueError, match="row dimension"):
            compose_concat_columns([a, b])

    def test_empty_list(self):
        with pytest.raises(ValueError, match="empty"):
            compose_concat_columns([])


class TestProlongation:
    def test_encoded_matrix_is_the_classical_extension(self):
        mesh = MeshSpec(1, 2, (2,), 0.25)
        layout = build_layout(mesh)
        for i in range(2):
            be = encode_prolongation(layout, i)
            cls = dg_prolongation(layout, i).toarray()
            assert be.alpha == 1.0
            assert np.array_equal(be.encoded(), cls)
            g = be.encoded()
            assert np.array_equal(np.unique(g), [0.0, 1.0])
            assert np.allclose(g.T @ g, np.eye(g.shape[1]))  # orthonormal columns

    def test_subnormalization_is_one(self):
        layout = build_layout(MeshSpec(1, 2, (2,), 0.25))
        be = encode_prolongation(layout, 0)
        assert np.isclose(be.subnormalization(), 1.0, rtol=1e-12)

    def test_alpha_neutral_in_products(self):
        mesh = MeshSpec(1, 2, (2,), 0.25)
        layout = build_layout(mesh)
        be = encode_prolongation(layout, 0)
        rng = np.random.default_rng(7)
        M = rng.standard_normal((be.shape[1], 3))
        block = encode_dilation(M, 2.0 * np.linalg.norm(M, 2))
        prod = compose_product(be, block)
        assert prod.alpha == block.alpha
        target = dg_prolongation(layout, 0).toarray() @ M
        assert np.abs(prod.encoded() - target).max() <= 1e-11

    def test_prolong_rows_shortcut_equals_product_route(self):
        from schwarzq.schwarz import dg_row_map

        mesh = MeshSpec(1, 2, (2,), 0.25)
        layout = build_layout(mesh)
        rng = np.random.default_rng(8)
        ncols_loc = dg_prolongation(layout, 0).shape[1]
        M = rng.standard_normal((ncols_loc, 3))
        block = encode_dilation(M, 2.0 * np.linalg.norm(M, 2))
        fast = prolong_rows(block, dg_row_map(layout, 0), mesh.n_dg_dofs)
        slow = compose_product(encode_prolongation(layout, 0), block)
        assert fast.alpha == slow.alpha == block.alpha
        assert np.abs(fast.encoded() - slow.encoded()).max() <= 1e-12


class TestAssembled:
    def test_split_gradient_concat_matches_dense(self):
        mesh, rho, A, layout, pre = bpx_problem(L=2, N=2, local="exact")
        cat = assemble_split_gradient_encoding(mesh, layout, pre)
        C = factorize_gradient(mesh).toarray()
        target = C @ pre.dense_factor()
        assert np.abs(cat.encoded() - target).max() <= 1e-11

    @pytest.mark.parametrize("local", ["exact", "bpx"])
    def test_preconditioned_reconstruction(self, local):
        mesh, rho, A, layout, pre = bpx_problem(L=2, N=2, local=local)
        be = assemble_preconditioned_encoding(mesh, rho, layout, pre)
        Ft = pre.dense_factor()
        target = Ft.T @ (A @ Ft)
        assert np.abs(be.encoded() - target).max() <= 1e-10
        assert be.subnormalization() >= 1.0

    def test_alpha_composition_formula(self):
        mesh, rho, A, layout, pre = bpx_problem(L=3, N=2, local="bpx")
        be, parts = assemble_preconditioned_encoding(
            mesh, rho, layout, pre, return_parts=True
        )
        d, L, N = 1, 3, 2
        assert parts.alpha_locals == [np.sqrt(4.0 * d * L)] * N
        expected = parts.alpha_rho * (
            sum(a**2 for a in parts.alpha_locals) + parts.alpha_coarse**2
        )
        assert np.isclose(be.alpha, expected, rtol=1e-14)

    def test_forced_bpx_normalization_without_coarse(self):
        mesh, rho, A, layout, pre = bpx_problem(L=3, N=4, local="bpx",
                                                use_coarse=False)
        cat = assemble_split_gradient_encoding(mesh, layout, pre)
        # N identical blocks of alpha^2 = 4 d L and no coarse term
        assert np.isclose(cat.alpha**2, 4 * 4 * 1 * 3, rtol=1e-14)

    def test_subnormalization_bound(self):
        c1 = calibrate_subnorm_offset(1)
        for L in (2, 3):
            for N in (2, 4):
                mesh, rho, A, layout, pre = bpx_problem(L=L, N=N, local="bpx")
                be, parts = assemble_preconditioned_encoding(
                    mesh, rho, layout, pre, return_parts=True
                )
                bound = parts.kappa_rho * parts.subnorm_rho * (
                    N * 1 * (L + c1) + parts.subnorm_coarse**2
                )
                assert be.subnormalization() <= bound
                for sn in parts.subnorm_locals:
                    assert sn**2 <= 1 * (L + c1) + 1e-12

    def test_subnorm_grows_at_most_linearly(self):
        measured = {}
        for N in (2, 4):
            for L in (2, 3):
                mesh, rho, A, layout, pre = bpx_problem(L=L, N=N, local="bpx",
                                                        use_coarse=False)
                be = assemble_preconditioned_encoding(mesh, rho, layout, pre)
                measured[(N, L)] = be.subnormalization()
        assert measured[(4, 2)] <= 2.3 * measured[(2, 2)]
        assert measured[(4, 3)] <= 2.3 * measured[(2, 3)]
        assert measured[(2, 3)] <= 1.8 * measured[(2, 2)]

    def test_hybrid_rejected(self):
        mesh, rho, A, layout, _ = bpx_problem(L=2, N=2)
        pre = build_preconditioner(A, layout, flavor="hyb", coarse_kind="nodal")
        with pytest.raises(ValueError, match="additive"):
            assemble_split_gradient_encoding(mesh, layout, pre)


class TestSerialization:
    def test_dump_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        M = rng.standard_normal((3, 4))
        be = encode_dilation(M, 2.0 * np.linalg.norm(M, 2))
        be.dump(tmp_path / "enc")
        back = BlockEncoding.load(tmp_path / "enc")
        assert back.alpha == be.alpha
        assert np.array_equal(back.unitary, be.unitary)
        assert np.array_equal(back.row, be.row)
        assert np.array_equal(back.col, be.col)

    def test_cap_enforced(self):
        with pytest.raises(ValueError, match="cap"):
            encode_scaled_identity(2**14 + 1, 1.0)
