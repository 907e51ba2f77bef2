"""Projected unitary encodings and their numerically emulated compositions.

A block encoding holds (alpha, U, Pi_row, Pi_col) with U stored dense; the
encoded matrix is alpha * Pi_row U Pi_col^T.  Projectors are coordinate index
lists whenever possible and general orthonormal-row matrices otherwise.
Compositions (product, column concatenation, row prolongation) operate on the
unitaries themselves so that the normalization bookkeeping is the literal
floating-point law: products multiply alpha, concatenations take the root sum
of squares, prolongations leave it unchanged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import schwarz
from .fem import MeshSpec, Coefficient, coefficient_block_expanded, factorize_gradient

__all__ = [
    "BlockEncoding",
    "EncodingParts",
    "DIMENSION_CAP",
    "spectral_norm_power",
    "encode_dilation",
    "encode_scaled_identity",
    "compose_product",
    "compose_concat_columns",
    "prolong_rows",
    "encode_prolongation",
    "assemble_split_gradient_encoding",
    "assemble_preconditioned_encoding",
    "calibrate_subnorm_offset",
]

DIMENSION_CAP = 2**14


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def _check_cap(P: int):
    if P > DIMENSION_CAP:
        raise ValueError(f"emulation dimension {P} exceeds the cap {DIMENSION_CAP}")


def spectral_norm_power(M: np.ndarray, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """Largest singular value by power iteration on the Gram matrix."""
    M = np.asarray(M, dtype=float)
    if min(M.shape) == 0:
        return 0.0
    if M.shape[0] < M.shape[1]:
        M = M.T
    x = np.ones(M.shape[1])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(max_iter):
        y = M.T @ (M @ x)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        x_new = y / nrm
        sigma_new = np.sqrt(nrm)
        if abs(sigma_new - sigma) <= tol * max(sigma_new, 1e-300):
            return float(sigma_new)
        # deterministic tie-break against starting orthogonal to the top vector
        x = x_new
        sigma = sigma_new
    return float(sigma)


def _proj_is_index(p) -> bool:
    return isinstance(p, np.ndarray) and p.ndim == 1 and np.issubdtype(p.dtype, np.integer)


def _proj_dim(p) -> int:
    return len(p) if _proj_is_index(p) else p.shape[0]


def _proj_matrix(p, P: int) -> np.ndarray:
    if _proj_is_index(p):
        out = np.zeros((len(p), P))
        out[np.arange(len(p)), p] = 1.0
        return out
    out = np.zeros((p.shape[0], P))
    out[:, : p.shape[1]] = p
    return out


@dataclass
class BlockEncoding:
    """Quadruple (alpha, U, Pi_row, Pi_col) of a projected unitary encoding."""

    alpha: float
    unitary: np.ndarray
    row: np.ndarray  # 1-D int index list or 2-D orthonormal-row matrix
    col: np.ndarray
    is_scaled_identity: bool = False

    @property
    def P(self) -> int:
        return self.unitary.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (_proj_dim(self.row), _proj_dim(self.col))

    def encoded(self) -> np.ndarray:
        """The matrix alpha * Pi_row U Pi_col^T."""
        U = self.unitary
        if _proj_is_index(self.row):
            U = U[self.row, :]
        else:
            U = _proj_matrix(self.row, self.P) @ U
        if _proj_is_index(self.col):
            U = U[:, self.col]
        else:
            U = U @ _proj_matrix(self.col, self.P).T
        return self.alpha * U

    def norm(self) -> float:
        return float(np.linalg.svd(self.encoded(), compute_uv=False)[0])

    def subnormalization(self) -> float:
        return self.alpha / self.norm()

    def transpose(self) -> "BlockEncoding":
        return BlockEncoding(self.alpha, self.unitary.T.copy(), self.col, self.row,
                             self.is_scaled_identity)

    def unitarity_defect(self) -> float:
        U = self.unitary
        return float(np.abs(U.T @ U - np.eye(self.P)).max())

    def dump(self, prefix) -> None:
        """Write <prefix>.json manifest and <prefix>.bin (row-major little-endian f8)."""
        if not (_proj_is_index(self.row) and _proj_is_index(self.col)):
            raise ValueError("only index-list projectors are serializable")
        prefix = Path(prefix)
        manifest = {
            "alpha": self.alpha,
            "P": self.P,
            "shape": list(self.shape),
            "row_idx": self.row.tolist(),
            "col_idx": self.col.tolist(),
        }
        prefix.with_suffix(".json").write_text(json.dumps(manifest))
        self.unitary.astype("<f8").tofile(prefix.with_suffix(".bin"))

    @classmethod
    def load(cls, prefix) -> "BlockEncoding":
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        P = manifest["P"]
        U = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8").reshape(P, P)
        return cls(manifest["alpha"], U,
                   np.asarray(manifest["row_idx"], dtype=np.int64),
                   np.asarray(manifest["col_idx"], dtype=np.int64))


def encode_dilation(M: np.ndarray, alpha: float) -> BlockEncoding:
    """Generic encoding of M by exact unitary dilation of M/alpha."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if alpha < spectral_norm_power(M) * (1.0 - 1e-12):
        raise ValueError("alpha is smaller than the spectral norm of M")
    B = M / alpha
    m, n = B.shape
    W, s, Vt = np.linalg.svd(B, full_matrices=True)
    V = Vt.T
    comp = np.sqrt(np.clip(1.0 - s**2, 0.0, None))
    sm = np.ones(m)
    sm[: len(s)] = comp
    sn = np.ones(n)
    sn[: len(s)] = comp
    S1 = (W * sm) @ W.T
    S2 = (V * sn) @ V.T
    P = _next_pow2(m + n)
    _check_cap(P)
    U = np.eye(P)
    U[:m, :n] = B
    U[:m, n : n + m] = S1
    U[m : m + n, :n] = S2
    U[m : m + n, n : n + m] = -B.T
    return BlockEncoding(float(alpha), U,
                         np.arange(m, dtype=np.int64),
                         np.arange(n, dtype=np.int64))


def encode_scaled_identity(n: int, c: float) -> BlockEncoding:
    """Exact encoding of c * I_n with alpha = c and a trivial unitary."""
    if c <= 0:
        raise ValueError("scale must be positive")
    P = _next_pow2(n)
    _check_cap(P)
    idx = np.arange(n, dtype=np.int64)
    return BlockEncoding(float(c), np.eye(P), idx, idx, is_scaled_identity=True)


def compose_product(a: BlockEncoding, b: BlockEncoding) -> BlockEncoding:
    """Encoding of (encoded a) @ (encoded b) with alpha = alpha_a * alpha_b.

    The inner contraction Pi_{a,col}^T Pi_{b,row} is a partial isometry, so its
    exact unitary completion stitches the two unitaries together without any
    numerical square root.
    """
    m_a, n_a = a.shape
    m_b, n_b = b.shape
    if n_a != m_b:
        raise ValueError(f"incompatible encoded shapes {a.shape} x {b.shape}")
    if b.is_scaled_identity:
        return BlockEncoding(a.alpha * b.alpha, a.unitary.copy(), a.row, a.col)
    if a.is_scaled_identity:
        return BlockEncoding(a.alpha * b.alpha, b.unitary.copy(), b.row, b.col)

    Pa, Pb = a.P, b.P
    P = _next_pow2(Pa + Pb)
    _check_cap(P)
    U = np.eye(P)
    if _proj_is_index(a.col) and _proj_is_index(b.row):
        TL = a.unitary.copy()
        TL[:, a.col] = 0.0
        TR = a.unitary[:, a.col] @ b.unitary[b.row, :]
        BL = np.zeros((Pb, Pa))
        BL[b.row, a.col] = -1.0
        BR = b.unitary.copy()
        BR[b.row, :] = 0.0
    else:
        Q = _proj_matrix(a.col, Pa).T @ _proj_matrix(b.row, Pb)
        TL = a.unitary @ (np.eye(Pa) - Q @ Q.T)
        TR = a.unitary @ (Q @ b.unitary)
        BL = -Q.T
        BR = (np.eye(Pb) - Q.T @ Q) @ b.unitary
    U[:Pa, :Pa] = TL
    U[:Pa, Pa : Pa + Pb] = TR
    U[Pa : Pa + Pb, :Pa] = BL
    U[Pa : Pa + Pb, Pa : Pa + Pb] = BR

    row = a.row if _proj_is_index(a.row) else _proj_matrix(a.row, P)
    if _proj_is_index(b.col):
        col = b.col + Pa
    else:
        col = np.zeros((b.shape[1], P))
        col[:, Pa : Pa + Pb] = _proj_matrix(b.col, Pb)
    return BlockEncoding(a.alpha * b.alpha, U, row, col)


def _canonical_rows(be: BlockEncoding, P: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (U', col') with U padded to P and rows permuted/rotated so the
    row projector becomes the leading coordinates in order."""
    m1 = be.shape[0]
    U = np.eye(P)
    U[: be.P, : be.P] = be.unitary
    if _proj_is_index(be.row):
        perm = np.concatenate([be.row, np.setdiff1d(np.arange(P), be.row)])
        U = U[perm, :]
    else:
        basis = np.zeros((be.row.shape[0], P))
        basis[:, : be.row.shape[1]] = be.row
        rest = sla.null_space(basis).T
        U = np.vstack([basis, rest]) @ U
    if _proj_is_index(be.col):
        col = be.col.copy()
    else:
        col = np.zeros((be.shape[1], P))
        col[:, : be.col.shape[1]] = be.col
    return U, col


def _weight_orthogonal(w: np.ndarray) -> np.ndarray:
    """Orthogonal matrix whose first column is the unit vector w (Householder)."""
    k = len(w)
    e0 = np.zeros(k)
    e0[0] = 1.0
    v = e0 - w
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        return np.eye(k)
    v /= nv
    return np.eye(k) - 2.0 * np.outer(v, v)


def compose_concat_columns(blocks: list[BlockEncoding]) -> BlockEncoding:
    """Encoding of the horizontal concatenation (B_1 | ... | B_k).

    A selector index register addresses the blocks; the selector preparation
    carries amplitude alpha_i / alpha so that alpha = sqrt(sum alpha_i^2).
    """
    if not blocks:
        raise ValueError("empty block list")
    m1 = blocks[0].shape[0]
    if any(b.shape[0] != m1 for b in blocks):
        raise ValueError("blocks must share the row dimension")
    k = len(blocks)
    P = max(_next_pow2(b.P) for b in blocks)
    alphas = np.array([b.alpha for b in blocks])
    alpha = float(np.sqrt(np.sum(alphas**2)))
    Wsel = _weight_orthogonal(alphas / alpha)

    Ptot = _next_pow2(k * P)
    _check_cap(Ptot)
    U = np.eye(Ptot)
    canon = [_canonical_rows(b, P) for b in blocks]
    for i in range(k):
        for j in range(k):
            # block (i, j) of (Wsel^T kron I_P) @ blockdiag(U_j)
            if Wsel[j, i] != 0.0:
                U[i * P : (i + 1) * P, j * P : (j + 1) * P] = Wsel[j, i] * canon[j][0]
            else:
                U[i * P : (i + 1) * P, j * P : (j + 1) * P] = 0.0

    row = np.arange(m1, dtype=np.int64)
    col_parts = []
    dense_cols = any(not _proj_is_index(c) for _, c in canon)
    if dense_cols:
        mats = []
        for j, (_, c) in enumerate(canon):
            cm = _proj_matrix(c, P)
            full = np.zeros((cm.shape[0], Ptot))
            full[:, j * P : (j + 1) * P] = cm
            mats.append(full)
        col = np.vstack(mats)
    else:
        for j, (_, c) in enumerate(canon):
            col_parts.append(c.astype(np.int64) + j * P)
        col = np.concatenate(col_parts)
    return BlockEncoding(alpha, U, row, col)


def prolong_rows(be: BlockEncoding, row_map: np.ndarray, new_m1: int) -> BlockEncoding:
    """Re-address the encoded rows into a larger zero-padded row space.

    row_map[r] is the new row index of old row r; unmapped rows of the target
    space point at spare identity rows of the padded unitary, which vanish on
    the column subspace.  Emulates composing with an orthonormal zero-extension
    and leaves alpha unchanged.
    """
    if not _proj_is_index(be.row):
        raise ValueError("row prolongation needs an index-list row projector")
    old_m1 = be.shape[0]
    if len(row_map) != old_m1:
        raise ValueError("row_map must assign every encoded row")
    spare_needed = new_m1 - old_m1
    if spare_needed < 0:
        raise ValueError("target row space smaller than the encoded one")
    P_new = _next_pow2(be.P + spare_needed)
    _check_cap(P_new)
    U = np.eye(P_new)
    U[: be.P, : be.P] = be.unitary
    new_row = np.empty(new_m1, dtype=np.int64)
    lookup = {int(g): r for r, g in enumerate(row_map)}
    spare = be.P
    for g in range(new_m1):
        r = lookup.get(g)
        if r is not None:
            new_row[g] = be.row[r]
        else:
            new_row[g] = spare
            spare += 1
    return BlockEncoding(be.alpha, U, new_row, be.col)


def encode_prolongation(layout: schwarz.SubdomainLayout, i: int) -> BlockEncoding:
    """Encoding of the broken-space zero-extension of subdomain i (alpha = 1).

    The unitary is the register permutation of the emulated circuit layer.
    """
    from .circuits import RegisterLayout, prolongation_tensor

    reg = RegisterLayout.from_mesh(layout.mesh)
    return prolongation_tensor(reg, layout.multi_indices[i])


@dataclass
class EncodingParts:
    """Per-block constants entering the normalization identities."""

    alpha_locals: list[float]
    alpha_coarse: float | None
    alpha_rho: float
    subnorm_locals: list[float]
    subnorm_coarse: float | None
    subnorm_rho: float
    kappa_rho: float


def assemble_split_gradient_encoding(
    mesh: MeshSpec,
    layout: schwarz.SubdomainLayout,
    precond: schwarz.SplitPreconditioner,
    return_parts: bool = False,
):
    """Encoding of C_L F~ as a column concatenation of per-block encodings.

    Local blocks are the subdomain gradient-times-factor matrices, prolonged
    into the global broken space; the coarse block C_L Z F_0 is encoded by a
    tight generic dilation (no specialized construction is assumed for it).
    BPX blocks are dilated with the forced normalization sqrt(4 d L).
    """
    if precond.flavor == "hyb":
        raise ValueError("block encodings are defined for the additive flavors only")
    d, L = mesh.d, mesh.L
    C_loc = factorize_gradient(mesh.local_spec())
    blocks = []
    alphas = []
    subnorms = []
    for i in range(layout.n_subdomains):
        B = C_loc @ precond.local_factor(i)
        if precond.local_kind == "bpx":
            alpha_i = float(np.sqrt(4.0 * d * L))
        else:
            alpha_i = spectral_norm_power(B) * (1.0 + 1e-6)
        be = encode_dilation(B, alpha_i)
        subnorms.append(alpha_i / np.linalg.svd(B, compute_uv=False)[0])
        be = prolong_rows(be, schwarz.dg_row_map(layout, i), mesh.n_dg_dofs)
        blocks.append(be)
        alphas.append(alpha_i)
    alpha_coarse = None
    subnorm_coarse = None
    if precond.has_coarse:
        Z, F0 = precond.coarse
        C = factorize_gradient(mesh)
        B0 = C @ (Z @ F0)
        nrm0 = np.linalg.svd(B0, compute_uv=False)[0]
        alpha_coarse = float(nrm0 * (1.0 + 1e-6))
        blocks.append(encode_dilation(B0, alpha_coarse))
        subnorm_coarse = alpha_coarse / nrm0
    cat = compose_concat_columns(blocks)
    if return_parts:
        return cat, alphas, alpha_coarse, subnorms, subnorm_coarse
    return cat


def assemble_preconditioned_encoding(
    mesh: MeshSpec,
    rho: Coefficient,
    layout: schwarz.SubdomainLayout,
    precond: schwarz.SplitPreconditioner,
    return_parts: bool = False,
):
    """Encoding of F~^T A F~ = (C F~)^T (D_rho kron I) (C F~).

    alpha comes out as alpha(U_D) * (sum_i alpha_i^2 + alpha_coarse^2), the
    composition law for the sandwich of the concatenated gradient factor.
    """
    cat, alphas, alpha_c, subn, subn_c = assemble_split_gradient_encoding(
        mesh, layout, precond, return_parts=True
    )
    n_dg = mesh.n_dg_dofs
    if rho.uniform_scalar is not None:
        enc_d = encode_scaled_identity(n_dg, rho.uniform_scalar)
        norm_d = rho.uniform_scalar
    else:
        D = coefficient_block_expanded(mesh, rho).toarray()
        norm_d = float(np.linalg.svd(D, compute_uv=False)[0])
        enc_d = encode_dilation(D, norm_d * (1.0 + 1e-6))
    be = compose_product(compose_product(cat.transpose(), enc_d), cat)
    if return_parts:
        parts = EncodingParts(
            alpha_locals=alphas,
            alpha_coarse=alpha_c,
            alpha_rho=enc_d.alpha,
            subnorm_locals=subn,
            subnorm_coarse=subn_c,
            subnorm_rho=enc_d.alpha / norm_d,
            kappa_rho=rho.contrast,
        )
        return be, parts
    return be


def calibrate_subnorm_offset(d: int, levels=range(1, 7)) -> float:
    """Empirical constant C_d with subnorm(U_{C F})^2 <= d (L + C_d).

    Measured on the forced-normalization BPX blocks over a range of levels;
    the subnormalization is sqrt(4 d L) over the top singular value of C F.
    """
    from .bpx import build_bpx
    from .fem import assemble_stiffness

    worst = -np.inf
    for L in levels:
        local = MeshSpec(d, L, (1,) * d, 0.0)
        C = factorize_gradient(local)
        F = build_bpx(L, d).matrix
        B = (C @ F).toarray()
        nrm = np.linalg.svd(B, compute_uv=False)[0]
        subnorm_sq = 4.0 * d * L / nrm**2
        worst = max(worst, subnorm_sq / d - L)
    return float(worst)
