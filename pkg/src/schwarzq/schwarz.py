"""Overlapping decomposition, restriction/prolongation, local solves and the
split two-level additive/hybrid Schwarz preconditioners."""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .bpx import BpxFactor
from .fem import MeshSpec, assemble_stiffness, factorize_gradient

__all__ = [
    "SubdomainLayout",
    "SplitPreconditioner",
    "build_layout",
    "restriction",
    "local_stiffness",
    "dg_prolongation",
    "dg_row_map",
    "local_gradient_identity_check",
    "coarse_space",
    "build_preconditioner",
    "layout_to_json",
]


@dataclass(frozen=True)
class SubdomainLayout:
    """Subdomain index sets of an overlapping Cartesian decomposition.

    Subdomains are ordered lexicographically by multi-index (last direction
    fastest).  omega_i holds the sorted global interior-dof indices of
    subdomain i; element_sets the global element indices it covers.
    """

    mesh: MeshSpec
    omegas: tuple[np.ndarray, ...]
    element_sets: tuple[np.ndarray, ...]
    multi_indices: tuple[tuple[int, ...], ...]

    @property
    def n_subdomains(self) -> int:
        return len(self.omegas)

    @property
    def local_dim(self) -> int:
        return (2**self.mesh.L - 1) ** self.mesh.d

    @property
    def coloring_constant(self) -> int:
        """Chromatic number of the subdomain overlap graph.

        Along each direction the farthest overlapping neighbour is at
        multi-index distance q_s, so q_s + 1 colors per direction suffice and
        a (q_s + 1)-clique exists; the product over directions is exact for a
        Cartesian layout.
        """
        mesh = self.mesh
        nc = 1
        for n in mesh.N_s:
            if n == 1:
                continue
            q = -(-(2**mesh.L) // mesh.stride_elems) - 1  # ceil - 1
            nc *= min(q, n - 1) + 1
        return nc


def _dir_ranges(mesh: MeshSpec, ind: int):
    """Per-direction element range start and interior-dof ids of subdomain ind."""
    lo = ind * mesh.stride_elems
    elems = np.arange(lo, lo + 2**mesh.L)
    dofs = np.arange(lo, lo + 2**mesh.L - 1)  # vertices lo+1 .. lo+2^L-1, 0-based dof ids
    return elems, dofs


def build_layout(mesh: MeshSpec) -> SubdomainLayout:
    """Enumerate subdomains and their dof/element index sets."""
    if max(mesh.N_s) > 1 and 1.0 - 2.0 * mesh.delta <= 0:
        raise ValueError("overlap too large: adjacent subdomains coincide (1 - 2*delta <= 0)")
    d, E, m = mesh.d, mesh.elems_per_dir, mesh.dofs_per_dir
    omegas, esets, multis = [], [], []
    for multi in product(*[range(n) for n in mesh.N_s]):
        per_e, per_v = zip(*[_dir_ranges(mesh, multi[s]) for s in range(d)])
        ev = per_e[0]
        for s in range(1, d):
            ev = ev[:, None] * E[s] + per_e[s][None, :]
            ev = ev.ravel()
        dv = per_v[0]
        for s in range(1, d):
            dv = dv[:, None] * m[s] + per_v[s][None, :]
            dv = dv.ravel()
        omegas.append(np.sort(dv))
        esets.append(np.sort(ev))
        multis.append(multi)
    return SubdomainLayout(mesh, tuple(omegas), tuple(esets), tuple(multis))


def restriction(layout: SubdomainLayout, i: int) -> sp.csr_matrix:
    """0/1 restriction R_i selecting the rows in omega_i (subdomains 0-based)."""
    if not 0 <= i < layout.n_subdomains:
        raise IndexError(f"subdomain index {i} out of range")
    w = layout.omegas[i]
    R = sp.coo_matrix(
        (np.ones(len(w)), (np.arange(len(w)), w)),
        shape=(len(w), layout.mesh.n_dofs),
    )
    return R.tocsr()


def local_stiffness(A: sp.spmatrix, layout: SubdomainLayout, i: int) -> sp.csr_matrix:
    """A(omega_i, omega_i), the Dirichlet problem on subdomain i."""
    w = layout.omegas[i]
    return A.tocsr()[w][:, w]


def dg_row_map(layout: SubdomainLayout, i: int) -> np.ndarray:
    """Global broken-gradient row index of each local row of subdomain i.

    Local and global rows are both packed (element * d + s) * 2^d + mode.
    """
    mesh = layout.mesh
    d, n_loc = mesh.d, 2**mesh.d
    glob = layout.element_sets[i]  # already lexicographic
    comp = np.arange(d * n_loc)
    return (glob[:, None] * (d * n_loc) + comp[None, :]).ravel()


def dg_prolongation(layout: SubdomainLayout, i: int) -> sp.csr_matrix:
    """Zero-extension of local broken-gradient dofs into the global broken space."""
    mesh = layout.mesh
    rows = dg_row_map(layout, i)
    n_local = rows.size
    P = sp.coo_matrix(
        (np.ones(n_local), (rows, np.arange(n_local))),
        shape=(mesh.n_dg_dofs, n_local),
    )
    return P.tocsr()


def local_gradient_identity_check(mesh: MeshSpec, layout: SubdomainLayout, i: int) -> bool:
    """Whether prolonging then taking the gradient equals the reverse order.

    Compares C R_i^T with Rcal_i^T C_i entrywise; both equal the omega_i
    columns of C, and the shared entry formulas make the match exact.
    """
    C = factorize_gradient(mesh)
    lhs = (C @ restriction(layout, i).T).tocsr()
    C_loc = factorize_gradient(mesh.local_spec())
    rhs = (dg_prolongation(layout, i) @ C_loc).tocsr()
    diff = lhs - rhs
    return diff.nnz == 0 or np.abs(diff.data).max() == 0.0


def _coarse_cols_1d_nodal(mesh: MeshSpec, s: int) -> np.ndarray:
    """Values at interior fine vertices of the interior coarse hats along s.

    Coarse nodes sit at the centers of the overlap bands (plus the two domain
    endpoints, whose hats are excluded by the Dirichlet condition).
    """
    N = mesh.N_s[s]
    E = mesh.elems_per_dir[s]
    if N < 2:
        return np.zeros((mesh.dofs_per_dir[s], 0))
    nodes = [0.0] + [j * mesh.stride_elems + mesh.overlap_elems / 2.0 for j in range(1, N)] + [float(E)]
    xs = np.arange(1, E, dtype=float)
    cols = np.zeros((mesh.dofs_per_dir[s], N - 1))
    for j in range(1, N):
        xl, xc, xr = nodes[j - 1], nodes[j], nodes[j + 1]
        vals = np.where(xs <= xc, (xs - xl) / (xc - xl), (xr - xs) / (xr - xc))
        cols[:, j - 1] = np.clip(vals, 0.0, None)
    return cols


def _coarse_cols_1d_pou(mesh: MeshSpec, s: int) -> np.ndarray:
    """Interpolated partition-of-unity ramps, one column per subdomain along s.

    Each function is 1 on the unshared part of its subdomain, falls linearly
    to 0 across each overlap band (gradient 1/(2*delta)), and is truncated to
    interior vertices.
    """
    N = mesh.N_s[s]
    E = mesh.elems_per_dir[s]
    m = mesh.dofs_per_dir[s]
    xs = np.arange(1, E, dtype=float)
    if N == 1:
        return np.ones((m, 1))
    ov = mesh.overlap_elems
    stride = mesh.stride_elems
    cols = np.zeros((m, N))
    for ind in range(N):
        lo, hi = ind * stride, ind * stride + 2**mesh.L
        up = np.clip((xs - lo) / ov, 0.0, 1.0) if ind > 0 else np.ones(m)
        dn = np.clip((hi - xs) / ov, 0.0, 1.0) if ind < N - 1 else np.ones(m)
        v = np.minimum(up, dn)
        v[(xs <= lo) | (xs >= hi)] = 0.0
        cols[:, ind] = v
    return cols


def coarse_space(layout: SubdomainLayout, kind: str = "nodal") -> sp.csr_matrix:
    """Coarse basis Z interpolated onto the fine grid.

    kind="nodal": Q1 hats of the coarse mesh induced by the decomposition, one
    column per interior coarse node (empty when some N_s = 1).
    kind="pou":   partition-of-unity ramps, one column per subdomain.
    """
    mesh = layout.mesh
    if kind == "nodal":
        per_dir = [_coarse_cols_1d_nodal(mesh, s) for s in range(mesh.d)]
    elif kind == "pou":
        per_dir = [_coarse_cols_1d_pou(mesh, s) for s in range(mesh.d)]
    else:
        raise ValueError(f"unknown coarse space kind {kind!r}")
    Z = sp.csr_matrix(per_dir[0])
    for s in range(1, mesh.d):
        Z = sp.kron(Z, sp.csr_matrix(per_dir[s]), format="csr")
    return Z


_FLAVORS = ("as1", "as2", "hyb")


class SplitPreconditioner:
    """Two-level Schwarz preconditioner held in split form H = F~ F~^T.

    The factor concatenates the zero-extended local blocks R_i^T F_i in
    subdomain order followed by the coarse block Z F_0 (hybrid flavors wrap
    the local blocks with I - P0).  Local factors F_i are inverse transposed
    Cholesky factors for exact solves, or the shared multilevel factor for
    BPX solves.
    """

    def __init__(self, A, layout, flavor, local_kind, local_factors,
                 local_solves, coarse):
        self.A = A.tocsr()
        self.layout = layout
        self.flavor = flavor
        self.local_kind = local_kind
        self._factors = local_factors      # list of (n_i x c_i) dense
        self._solves = local_solves        # list of (n_i x n_i) dense, = F_i F_i^T
        self.coarse = coarse               # None or (Z csr, F0 dense)
        cols = [f.shape[1] for f in local_factors]
        if coarse is not None:
            cols.append(coarse[1].shape[1])
        self._block_cols = cols
        self.total_cols = int(sum(cols))

    # -- descriptive ------------------------------------------------------

    @property
    def flavor_tag(self) -> str:
        return f"{self.flavor.upper()}_{self.local_kind}"

    @property
    def has_coarse(self) -> bool:
        return self.coarse is not None

    def block_slices(self):
        out, start = [], 0
        for c in self._block_cols:
            out.append(slice(start, start + c))
            start += c
        return out

    # -- coarse projection pieces ----------------------------------------

    def _coarse_solve(self, r):
        Z, F0 = self.coarse
        return Z @ (F0 @ (F0.T @ (Z.T @ r)))

    def _apply_p0(self, x):
        # P0 = Z (Z^T A Z)^{-1} Z^T A
        return self._coarse_solve(self.A @ x)

    def _apply_p0_t(self, x):
        return self.A @ self._coarse_solve(x)

    # -- main operator ----------------------------------------------------

    def _local_sum(self, x):
        out = np.zeros_like(x)
        for w, Hloc in zip(self.layout.omegas, self._solves):
            out[w] += Hloc @ x[w]
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        """H x."""
        x = np.asarray(x, dtype=float)
        if self.flavor == "hyb":
            y = self._local_sum(x - self._apply_p0_t(x))
            out = y - self._apply_p0(y)
            return out + self._coarse_solve(x)
        out = self._local_sum(x)
        if self.coarse is not None:
            out = out + self._coarse_solve(x)
        return out

    __call__ = apply

    # -- split factor ------------------------------------------------------

    def apply_Ftilde(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.total_cols,):
            raise ValueError(f"expected coefficient vector of length {self.total_cols}")
        slices = self.block_slices()
        out = np.zeros(self.layout.mesh.n_dofs)
        for w, F, slc in zip(self.layout.omegas, self._factors, slices):
            out[w] += F @ y[slc]
        if self.flavor == "hyb":
            out = out - self._apply_p0(out)
        if self.coarse is not None:
            Z, F0 = self.coarse
            out = out + Z @ (F0 @ y[slices[-1]])
        return out

    def apply_Ftilde_T(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.layout.mesh.n_dofs,):
            raise ValueError("expected a vector of global dofs")
        xl = x - self._apply_p0_t(x) if self.flavor == "hyb" else x
        parts = [F.T @ xl[w] for w, F in zip(self.layout.omegas, self._factors)]
        if self.coarse is not None:
            Z, F0 = self.coarse
            parts.append(F0.T @ (Z.T @ x))
        return np.concatenate(parts)

    def dense_factor(self) -> np.ndarray:
        """F~ as a dense matrix (intended for small problems and oracles)."""
        n = self.layout.mesh.n_dofs
        out = np.zeros((n, self.total_cols))
        slices = self.block_slices()
        for w, F, slc in zip(self.layout.omegas, self._factors, slices):
            out[np.ix_(w, range(slc.start, slc.stop))] = F
        if self.flavor == "hyb":
            for j in range(slices[-1].start if self.coarse is not None else self.total_cols):
                out[:, j] -= self._apply_p0(out[:, j])
        if self.coarse is not None:
            Z, F0 = self.coarse
            out[:, slices[-1]] = Z @ F0
        return out

    def local_factor(self, i: int) -> np.ndarray:
        return self._factors[i]


def _inv_transposed_cholesky(M: np.ndarray) -> np.ndarray:
    """F with F F^T = M^{-1}, from the Cholesky factor of M."""
    try:
        Lo = sla.cholesky(M, lower=True)
    except sla.LinAlgError as exc:
        raise ValueError(f"Cholesky failed, matrix not SPD: {exc}") from exc
    return sla.solve_triangular(Lo, np.eye(M.shape[0]), lower=True, trans="T")


def build_preconditioner(
    A: sp.spmatrix,
    layout: SubdomainLayout,
    flavor: str = "as2",
    local: str = "exact",
    use_coarse: bool | None = None,
    coarse_kind: str = "nodal",
    bpx_factor: "BpxFactor | None" = None,
) -> SplitPreconditioner:
    """Assemble a split Schwarz preconditioner.

    flavor: "as1" (one-level), "as2" (additive coarse), "hyb" (multiplicative
    coarse); local: "exact" or "bpx".  For "bpx" the shared factor may be
    passed in to avoid rebuilding it.
    """
    if flavor not in _FLAVORS:
        raise ValueError(f"flavor must be one of {_FLAVORS}")
    if use_coarse is None:
        use_coarse = flavor != "as1"
    if flavor == "hyb" and not use_coarse:
        raise ValueError("hybrid flavor requires the coarse space")
    if flavor == "as2" and not use_coarse:
        flavor = "as1"

    A = A.tocsr()
    mesh = layout.mesh
    if local == "exact":
        factors, solves = [], []
        for i in range(layout.n_subdomains):
            F = _inv_transposed_cholesky(local_stiffness(A, layout, i).toarray())
            factors.append(F)
            solves.append(F @ F.T)
    elif local == "bpx":
        if bpx_factor is None:
            from .bpx import build_bpx
            bpx_factor = build_bpx(mesh.L, mesh.d)
        F = bpx_factor.matrix.toarray()
        Hloc = F @ F.T
        factors = [F] * layout.n_subdomains
        solves = [Hloc] * layout.n_subdomains
    else:
        raise ValueError(f"local solver must be 'exact' or 'bpx', got {local!r}")

    coarse = None
    if use_coarse:
        Z = coarse_space(layout, coarse_kind)
        if Z.shape[1] == 0:
            if flavor == "hyb":
                raise ValueError("hybrid flavor requires a nonempty coarse space")
            flavor = "as1"
        else:
            ZAZ = (Z.T @ (A @ Z)).toarray()
            coarse = (Z, _inv_transposed_cholesky(ZAZ))
    return SplitPreconditioner(A, layout, flavor, local, factors, solves, coarse)


def layout_to_json(layout: SubdomainLayout, path=None) -> str:
    """Serialize the layout (geometry plus omega index sets)."""
    mesh = layout.mesh
    doc = {
        "d": mesh.d,
        "L": mesh.L,
        "N_s": list(mesh.N_s),
        "delta": mesh.delta,
        "omega": [w.tolist() for w in layout.omegas],
    }
    text = json.dumps(doc, indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
