"""Q1 finite elements on Cartesian meshes of unions of overlapping unit hypercubes.

The domain is the union of N_s unit hypercubes per direction, each meshed with
step h = 2^-L, adjacent cubes overlapping by a fixed band of elements.  Only
interior vertices carry degrees of freedom (homogeneous Dirichlet data is never
allocated).  Vertices, elements and discontinuous-Galerkin modes are all
numbered lexicographically with the last direction fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MeshSpec",
    "Coefficient",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_rhs",
    "factorize_gradient",
    "coefficient_block",
    "coefficient_block_expanded",
]


@dataclass(frozen=True)
class MeshSpec:
    """Geometry of the global Cartesian mesh.

    d      spatial dimension (1, 2 or 3)
    L      refinement level, mesh size h = 2^-L
    N_s    number of unit-hypercube subdomains per direction
    delta  geometric overlap half-width, a multiple of h/2
    """

    d: int
    L: int
    N_s: tuple[int, ...]
    delta: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        object.__setattr__(self, "N_s", tuple(int(n) for n in self.N_s))
        if len(self.N_s) != self.d:
            raise ValueError("N_s must have one entry per direction")
        if any(n < 1 for n in self.N_s):
            raise ValueError("subdomain counts must be positive")
        if max(self.N_s) > 1:
            ov = 2.0 * self.delta * 2**self.L
            if ov <= 0 or abs(ov - round(ov)) > 1e-9:
                raise ValueError(
                    "overlap must be a positive integer number of elements: "
                    f"2*delta*2^L = {ov}"
                )
        elif self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if any(m <= 0 for m in self.dofs_per_dir):
            raise ValueError(
                f"no interior vertices left in some direction: {self.dofs_per_dir}"
            )

    @property
    def h(self) -> float:
        return 2.0 ** (-self.L)

    @property
    def overlap_elems(self) -> int:
        """Number of mesh elements shared by two adjacent subdomains."""
        if max(self.N_s) == 1:
            return 0
        return round(2.0 * self.delta * 2**self.L)

    @property
    def stride_elems(self) -> int:
        """Element offset between the origins of adjacent subdomains."""
        return 2**self.L - self.overlap_elems

    @property
    def elems_per_dir(self) -> tuple[int, ...]:
        ov = self.overlap_elems
        return tuple(2**self.L * n - ov * (n - 1) for n in self.N_s)

    @property
    def dofs_per_dir(self) -> tuple[int, ...]:
        return tuple(e - 1 for e in self.elems_per_dir)

    @property
    def n_elems(self) -> int:
        return int(np.prod(self.elems_per_dir))

    @property
    def n_dofs(self) -> int:
        return int(np.prod(self.dofs_per_dir))

    @property
    def domain_lengths(self) -> tuple[float, ...]:
        return tuple(n - 2.0 * self.delta * (n - 1) for n in self.N_s)

    @property
    def n_dg_dofs(self) -> int:
        """Rows of the elementwise gradient factor: d * 2^d per element."""
        return self.d * 2**self.d * self.n_elems

    def local_spec(self) -> "MeshSpec":
        """Mesh of a single subdomain (unit hypercube, same step)."""
        return MeshSpec(self.d, self.L, (1,) * self.d, self.delta)


@dataclass(frozen=True)
class Coefficient:
    """Elementwise-constant symmetric positive definite diffusion tensor."""

    tensors: np.ndarray  # (n_elems, d, d)
    rho_min: float
    rho_max: float
    uniform_scalar: float | None = None

    def __post_init__(self):
        t = self.tensors
        if t.ndim != 3 or t.shape[1] != t.shape[2]:
            raise ValueError("tensors must have shape (n_elems, d, d)")
        if not np.allclose(t, np.transpose(t, (0, 2, 1)), atol=1e-12):
            raise ValueError("coefficient tensors must be symmetric")
        eigs = np.linalg.eigvalsh(t)
        if eigs.min() <= 0:
            raise ValueError("coefficient tensors must be positive definite")
        if eigs.min() < self.rho_min - 1e-12 or eigs.max() > self.rho_max + 1e-12:
            raise ValueError("tensor eigenvalues outside [rho_min, rho_max]")

    @classmethod
    def identity(cls, mesh: MeshSpec) -> "Coefficient":
        return cls.isotropic(mesh, 1.0)

    @classmethod
    def isotropic(cls, mesh: MeshSpec, value) -> "Coefficient":
        vals = np.broadcast_to(np.asarray(value, dtype=float), (mesh.n_elems,))
        t = vals[:, None, None] * np.eye(mesh.d)[None, :, :]
        uniform = float(vals[0]) if np.all(vals == vals[0]) else None
        return cls(np.ascontiguousarray(t), float(vals.min()), float(vals.max()),
                   uniform_scalar=uniform)

    @classmethod
    def from_tensors(cls, mesh: MeshSpec, tensors: np.ndarray) -> "Coefficient":
        t = np.asarray(tensors, dtype=float)
        if t.shape != (mesh.n_elems, mesh.d, mesh.d):
            raise ValueError(f"expected shape {(mesh.n_elems, mesh.d, mesh.d)}")
        eigs = np.linalg.eigvalsh(t)
        return cls(t, float(eigs.min()), float(eigs.max()))

    @property
    def contrast(self) -> float:
        return self.rho_max / self.rho_min


# ---------------------------------------------------------------------------
# element-level closed-form integrals (all integrands are polynomial)

def _elem_mats_1d(h: float):
    """1D element matrices over [0, h] for the two linear corner functions."""
    k_e = (1.0 / h) * np.array([[1.0, -1.0], [-1.0, 1.0]])
    m_e = h * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    c_e = np.array([[-0.5, -0.5], [0.5, 0.5]])  # rows: derivative side
    return k_e, c_e, m_e


@lru_cache(maxsize=None)
def _grad_pair_tensors(d: int, L: int) -> np.ndarray:
    """G[s, t, a, b] = integral over one element of d_s phi_a * d_t phi_b."""
    h = 2.0 ** (-L)
    k_e, c_e, m_e = _elem_mats_1d(h)
    n_loc = 2**d
    G = np.zeros((d, d, n_loc, n_loc))
    corners = _corner_bits(d)
    for s in range(d):
        for t in range(d):
            val = np.ones((n_loc, n_loc))
            for r in range(d):
                if r == s and r == t:
                    M = k_e
                elif r == s:
                    M = c_e
                elif r == t:
                    M = c_e.T
                else:
                    M = m_e
                val = val * M[np.ix_(corners[:, r], corners[:, r])]
            G[s, t] = val
    return G


@lru_cache(maxsize=None)
def _corner_bits(d: int) -> np.ndarray:
    """Corner index -> per-direction bits, direction d fastest (bit 0)."""
    a = np.arange(2**d)
    return np.stack([(a >> (d - 1 - r)) & 1 for r in range(d)], axis=1)


def _element_dof_map(mesh: MeshSpec) -> np.ndarray:
    """Global dof of each element corner, -1 on the Dirichlet boundary.

    Returns an (n_elems, 2^d) int array; element and corner indices are
    lexicographic with the last direction fastest.
    """
    d, E, m = mesh.d, mesh.elems_per_dir, mesh.dofs_per_dir
    corners = _corner_bits(d)
    per_dir = [np.arange(E[r]) for r in range(d)]
    grids = np.meshgrid(*per_dir, indexing="ij")
    K = np.stack([g.ravel() for g in grids], axis=1)  # (n_elems, d)
    # vertex index per direction is K_r + a_r; interior dofs are 1..E_r-1
    v = K[:, None, :] + corners[None, :, :]
    inside = np.all((v >= 1) & (v <= np.array(E) - 1), axis=2)
    dof = np.zeros(v.shape[:2], dtype=np.int64)
    for r in range(d):
        dof = dof * m[r] + (v[:, :, r] - 1)
    dof[~inside] = -1
    return dof


def assemble_stiffness(mesh: MeshSpec, rho: Coefficient) -> sp.csr_matrix:
    """Stiffness matrix of the weighted Poisson bilinear form.

    Entries are exact integrals of rho grad(phi_i) . grad(phi_j); the local
    matrices are symmetrized before scattering so the result is symmetric to
    the last bit.
    """
    if rho.tensors.shape[0] != mesh.n_elems:
        raise ValueError("coefficient does not cover all elements")
    G = _grad_pair_tensors(mesh.d, mesh.L)
    loc = np.einsum("est,stab->eab", rho.tensors, G)
    loc = 0.5 * (loc + np.transpose(loc, (0, 2, 1)))
    dof = _element_dof_map(mesh)
    n_loc = 2**mesh.d
    rows = np.repeat(dof[:, :, None], n_loc, axis=2)
    cols = np.repeat(dof[:, None, :], n_loc, axis=1)
    mask = (rows >= 0) & (cols >= 0)
    A = sp.coo_matrix(
        (loc[mask], (rows[mask], cols[mask])),
        shape=(mesh.n_dofs, mesh.n_dofs),
    )
    return A.tocsr()


def assemble_mass(mesh: MeshSpec) -> sp.csr_matrix:
    """Q1 mass matrix on interior vertices."""
    _, _, m_e = _elem_mats_1d(mesh.h)
    corners = _corner_bits(mesh.d)
    loc = np.ones((2**mesh.d, 2**mesh.d))
    for r in range(mesh.d):
        loc = loc * m_e[np.ix_(corners[:, r], corners[:, r])]
    dof = _element_dof_map(mesh)
    n_loc = 2**mesh.d
    rows = np.repeat(dof[:, :, None], n_loc, axis=2)
    cols = np.repeat(dof[:, None, :], n_loc, axis=1)
    mask = (rows >= 0) & (cols >= 0)
    data = np.broadcast_to(loc, (mesh.n_elems, n_loc, n_loc))
    M = sp.coo_matrix(
        (data[mask], (rows[mask], cols[mask])),
        shape=(mesh.n_dofs, mesh.n_dofs),
    )
    return M.tocsr()


def assemble_rhs(mesh: MeshSpec, f) -> np.ndarray:
    """Load vector for an elementwise-constant source.

    `f` is a scalar or an array of per-element constants.  Each element
    contributes f_K * (h/2)^d to every interior corner dof, the exact value of
    the integral of f against the corner basis function.
    """
    if np.isscalar(f):
        fvals = np.full(mesh.n_elems, float(f))
    else:
        fvals = np.asarray(f, dtype=float)
        if fvals.shape != (mesh.n_elems,):
            raise ValueError(
                "unsupported source descriptor: expected scalar or "
                f"per-element array of length {mesh.n_elems}"
            )
    weight = (mesh.h / 2.0) ** mesh.d
    dof = _element_dof_map(mesh)
    b = np.zeros(mesh.n_dofs)
    contrib = np.repeat(fvals[:, None] * weight, 2**mesh.d, axis=1)
    mask = dof >= 0
    np.add.at(b, dof[mask], contrib[mask])
    return b


# ---------------------------------------------------------------------------
# factorized form: A = C^T (D_rho kron I_{2^d}) C

@lru_cache(maxsize=None)
def _gradient_weights(d: int, L: int) -> np.ndarray:
    """W[s, k, a]: coefficient of corner function a in the orthonormal
    tensor-Legendre expansion of its s-derivative; k are the mode bits."""
    h = 2.0 ** (-L)
    sq = np.sqrt(h)
    # per-direction weights: index [mode_bit, corner_bit]
    w_plain = np.array([[sq / 2, sq / 2], [-sq / (2 * np.sqrt(3.0)), sq / (2 * np.sqrt(3.0))]])
    w_deriv = np.array([[-1 / sq, 1 / sq], [0.0, 0.0]])
    bits = _corner_bits(d)
    n_loc = 2**d
    W = np.zeros((d, n_loc, n_loc))
    for s in range(d):
        val = np.ones((n_loc, n_loc))
        for r in range(d):
            M = w_deriv if r == s else w_plain
            val = val * M[np.ix_(bits[:, r], bits[:, r])]
        W[s] = val
    return W


def factorize_gradient(mesh: MeshSpec) -> sp.csr_matrix:
    """Matrix of the elementwise gradient into the broken tensor-Legendre basis.

    Row (K, s, k) holds the component-s derivative coefficients on element K in
    mode k; rows are packed (K * d + s) * 2^d + k so that the elementwise
    coefficient matrix is literally block diagonal.  Satisfies
    A = C^T (D_rho kron I_{2^d}) C exactly.
    """
    d = mesh.d
    W = _gradient_weights(d, mesh.L)  # (d, 2^d, 2^d)
    dof = _element_dof_map(mesh)      # (n_elems, 2^d)
    n_loc = 2**d
    n_elems = mesh.n_elems
    K = np.arange(n_elems)
    # rows[e, s, k, a], cols[e, s, k, a], data[e, s, k, a]
    base = (K[:, None, None, None] * d + np.arange(d)[None, :, None, None]) * n_loc
    rows = np.broadcast_to(base + np.arange(n_loc)[None, None, :, None],
                           (n_elems, d, n_loc, n_loc))
    cols = np.broadcast_to(dof[:, None, None, :], rows.shape)
    data = np.broadcast_to(W[None, :, :, :], rows.shape)
    mask = (cols >= 0) & (data != 0.0)
    C = sp.coo_matrix(
        (data[mask], (rows[mask], cols[mask])),
        shape=(mesh.n_dg_dofs, mesh.n_dofs),
    )
    return C.tocsr()


def coefficient_block(mesh: MeshSpec, rho: Coefficient) -> sp.csr_matrix:
    """Block-diagonal matrix with one d x d tensor per element."""
    if rho.tensors.shape[0] != mesh.n_elems:
        raise ValueError("coefficient does not cover all elements")
    eigs = np.linalg.eigvalsh(rho.tensors)
    if eigs.min() <= 0:
        raise ValueError("non-SPD coefficient block")
    d = mesh.d
    K = np.arange(mesh.n_elems)
    rows = (K[:, None, None] * d + np.arange(d)[None, :, None])
    cols = (K[:, None, None] * d + np.arange(d)[None, None, :])
    rows = np.broadcast_to(rows, (mesh.n_elems, d, d))
    cols = np.broadcast_to(cols, (mesh.n_elems, d, d))
    D = sp.coo_matrix(
        (rho.tensors.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_elems * d, mesh.n_elems * d),
    )
    return D.tocsr()


def coefficient_block_expanded(mesh: MeshSpec, rho: Coefficient) -> sp.csr_matrix:
    """D_rho kron I_{2^d}, sized to the rows of factorize_gradient."""
    return sp.kron(coefficient_block(mesh, rho), sp.eye(2**mesh.d), format="csr")
