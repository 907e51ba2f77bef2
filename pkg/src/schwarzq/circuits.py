"""Register-level emulation of the quantum implementation.

Fourier-transform adders are emulated as exact modular-integer permutations on
the register index space, comparator ancillas as predicates on basis indices.
Register packing, least to most significant: the k block (one qubit per
direction), the j block (L qubits per direction), the i block, the i~ block
(log2 N_s qubits per direction each) and the s register; inside every block
the last direction sits lowest, matching the lexicographic orderings of the
classical matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log2

import numpy as np
import scipy.sparse as sp

from .fem import MeshSpec

__all__ = [
    "RegisterLayout",
    "Prolongation1D",
    "prolongation_permutation_1d",
    "prolongation_tensor",
    "prepare_rhs_state",
    "rhs_state_to_coefficients",
    "comparator_emulation",
    "comparator_uncompute",
]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RegisterLayout:
    """Qubit layout and index codec for one decomposition geometry."""

    d: int
    L: int
    N_s: tuple[int, ...]
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "N_s", tuple(int(n) for n in self.N_s))
        if len(self.N_s) != self.d:
            raise ValueError("N_s must have one entry per direction")
        if not all(_is_pow2(n) for n in self.N_s):
            raise ValueError("register construction needs power-of-two subdomain counts")
        shift = 2 ** (self.L + 2) * self.delta
        if abs(shift - round(shift)) > 1e-9 or shift < 0:
            raise ValueError(f"2^(L+2) delta = {shift} must be a nonnegative integer")

    @classmethod
    def from_mesh(cls, mesh: MeshSpec) -> "RegisterLayout":
        return cls(mesh.d, mesh.L, mesh.N_s, mesh.delta)

    # -- widths ------------------------------------------------------------

    @property
    def n_bits(self) -> tuple[int, ...]:
        return tuple(int(log2(n)) for n in self.N_s)

    @property
    def s_bits(self) -> int:
        return ceil(log2(self.d)) if self.d > 1 else 0

    @property
    def total_qubits(self) -> int:
        return self.d + self.d * self.L + 2 * sum(self.n_bits) + self.s_bits

    @property
    def dg_shift(self) -> int:
        """Per-subdomain decrement of the combined register, 2^(L+2) delta."""
        return round(2 ** (self.L + 2) * self.delta)

    def dir_register_size(self, r: int) -> int:
        """Size of the (k, j, i) combined register of direction r."""
        return 2 ** (1 + self.L + self.n_bits[r])

    def global_dg_per_dir(self, r: int) -> int:
        """Broken-space dofs along direction r: N_s 2^(L+1) - 2^(L+2) delta (N_s - 1)."""
        return self.N_s[r] * 2 ** (self.L + 1) - self.dg_shift * (self.N_s[r] - 1)

    # -- codec -------------------------------------------------------------

    def _offsets(self):
        d, L, nb = self.d, self.L, self.n_bits
        offs = {"k": [], "j": [], "i": [], "it": []}
        for r in range(d):
            offs["k"].append(d - 1 - r)
        base = d
        for r in range(d):
            offs["j"].append(base + (d - 1 - r) * L)
        base = d + d * L
        for r in range(d):
            offs["i"].append(base + sum(nb[r + 1 :]))
        base += sum(nb)
        for r in range(d):
            offs["it"].append(base + sum(nb[r + 1 :]))
        offs["s"] = base + sum(nb)
        return offs

    def pack(self, k, j, i, it, s=0):
        """Basis index of the register tuple; arguments are per-direction arrays."""
        offs = self._offsets()
        idx = np.asarray(s) << offs["s"] if self.s_bits else np.zeros_like(np.asarray(k[0]))
        idx = np.asarray(idx, dtype=np.int64)
        for r in range(self.d):
            idx = idx | (np.asarray(k[r], dtype=np.int64) << offs["k"][r])
            idx = idx | (np.asarray(j[r], dtype=np.int64) << offs["j"][r])
            idx = idx | (np.asarray(i[r], dtype=np.int64) << offs["i"][r])
            idx = idx | (np.asarray(it[r], dtype=np.int64) << offs["it"][r])
        return idx

    def unpack(self, idx):
        """Inverse of pack; returns (k, j, i, it, s) with per-direction tuples."""
        idx = np.asarray(idx, dtype=np.int64)
        offs = self._offsets()
        nb = self.n_bits
        k = tuple((idx >> offs["k"][r]) & 1 for r in range(self.d))
        j = tuple((idx >> offs["j"][r]) & (2**self.L - 1) for r in range(self.d))
        i = tuple((idx >> offs["i"][r]) & (2 ** nb[r] - 1) for r in range(self.d))
        it = tuple((idx >> offs["it"][r]) & (2 ** nb[r] - 1) for r in range(self.d))
        s = (idx >> offs["s"]) & (2**self.s_bits - 1) if self.s_bits else np.zeros_like(idx)
        return k, j, i, it, s


def comparator_emulation(p, bound: int, register_size: int):
    """Fourier-adder comparator: |p>|0> -> |p - bound - 1 mod R>|p < bound + 1>."""
    p = np.asarray(p, dtype=np.int64)
    shifted = (p - bound - 1) % register_size
    flag = p < bound + 1
    return shifted, flag


def comparator_uncompute(shifted, bound: int, register_size: int):
    """Undo the comparator shift, restoring the original index."""
    return (np.asarray(shifted, dtype=np.int64) + bound + 1) % register_size


class Prolongation1D:
    """Shift permutation and projector predicates of one direction's extension.

    Acts on the (k, j, i, i~) register of direction r: the combined (k, j, i)
    integer drops by 2^(L+2) delta per unit of i~ (modular arithmetic), which
    relabels subdomain-local broken dofs as global ones.  Subdomain indices are
    0-based here.
    """

    def __init__(self, layout: RegisterLayout, direction: int, ind: int):
        if not 0 <= direction < layout.d:
            raise ValueError("direction out of range")
        if not 0 <= ind < layout.N_s[direction]:
            raise ValueError("subdomain index out of range")
        self.layout = layout
        self.direction = direction
        self.ind = ind
        self.kji_size = layout.dir_register_size(direction)
        self.size = self.kji_size * layout.N_s[direction]
        self.n_global = layout.global_dg_per_dir(direction)
        self.row_lo = layout.N_s[direction] * 2 ** (layout.L + 1) * ind
        self.row_hi = self.n_global + self.row_lo  # exclusive; inclusive form overcounts

    def index_map(self) -> np.ndarray:
        """out[index_in] for every basis state of the (k, j, i, i~) space."""
        idx = np.arange(self.size, dtype=np.int64)
        kji = idx % self.kji_size
        it = idx // self.kji_size
        out_kji = (kji - self.layout.dg_shift * it) % self.kji_size
        return out_kji + it * self.kji_size

    def permutation_matrix(self) -> sp.csr_matrix:
        out = self.index_map()
        return sp.coo_matrix(
            (np.ones(self.size), (out, np.arange(self.size))),
            shape=(self.size, self.size),
        ).tocsr()

    def row_predicate(self, p) -> np.ndarray:
        """Ancilla flip on row indices: lo <= p < lo + (global dof count)."""
        p = np.asarray(p, dtype=np.int64)
        return (p >= self.row_lo) & (p < self.row_hi)

    def col_predicate(self, p) -> np.ndarray:
        """Ancilla flip on column indices: |i~> = |i> = ind."""
        p = np.asarray(p, dtype=np.int64)
        kji = p % self.kji_size
        it = p // self.kji_size
        i = kji >> (1 + self.layout.L)
        return (i == self.ind) & (it == self.ind)

    def row_indices(self) -> np.ndarray:
        """Selected rows ordered by the global broken dof they carry."""
        return self.row_lo + np.arange(self.n_global, dtype=np.int64)

    def col_indices(self) -> np.ndarray:
        """Selected columns ordered by the local broken dof k + 2 j."""
        c = np.arange(2 ** (self.layout.L + 1), dtype=np.int64)
        return (
            c
            + 2 ** (self.layout.L + 1) * self.ind
            + self.kji_size * self.ind
        )

    def projected(self) -> sp.csr_matrix:
        """Pi_row P Pi_col^T, the classical one-direction extension matrix."""
        out = self.index_map()
        P = sp.coo_matrix(
            (np.ones(self.size), (out, np.arange(self.size))),
            shape=(self.size, self.size),
        ).tocsr()
        return P[self.row_indices()][:, self.col_indices()]


def prolongation_permutation_1d(layout: RegisterLayout, direction: int, ind: int) -> Prolongation1D:
    """Permutation plus row/column predicates for one direction's extension."""
    return Prolongation1D(layout, direction, ind)


def prolongation_tensor(layout: RegisterLayout, multi: tuple[int, ...]):
    """Block encoding of the broken-space zero-extension of one subdomain.

    Tensor of the per-direction shift permutations (identity on the s
    register), with projectors ordered by the canonical classical broken-dof
    numbering so the encoded block matches the classical extension matrix
    entry by entry.  alpha = 1.
    """
    from .encoding import DIMENSION_CAP, BlockEncoding

    d, L = layout.d, layout.L
    multi = tuple(int(m) for m in multi)
    if len(multi) != d:
        raise ValueError("need one subdomain index per direction")
    P = 2**layout.total_qubits
    if P > DIMENSION_CAP:
        raise ValueError(f"register space {P} exceeds the emulation cap {DIMENSION_CAP}")

    idx = np.arange(P, dtype=np.int64)
    k, j, i, it, s = layout.unpack(idx)
    out_k, out_j, out_i = [], [], []
    for r in range(d):
        kji = k[r] + 2 * j[r] + 2 ** (L + 1) * i[r]
        out = (kji - layout.dg_shift * it[r]) % layout.dir_register_size(r)
        out_k.append(out & 1)
        out_j.append((out >> 1) & (2**L - 1))
        out_i.append(out >> (1 + L))
    out_idx = layout.pack(out_k, out_j, out_i, it, s)
    U = np.zeros((P, P))
    U[out_idx, idx] = 1.0

    E = [layout.global_dg_per_dir(r) // 2 for r in range(d)]  # elements per direction
    n_loc = 2**d

    # rows: canonical global broken dofs (element, component, mode)
    g = np.arange(d * n_loc * int(np.prod(E)), dtype=np.int64)
    kmode = g % n_loc
    s_comp = (g // n_loc) % d
    K = g // (n_loc * d)
    K_dirs = []
    rem = K
    for r in range(d - 1, -1, -1):
        K_dirs.insert(0, rem % E[r])
        rem = rem // E[r]
    row_k, row_j, row_i = [], [], []
    for r in range(d):
        g_r = 2 * K_dirs[r] + ((kmode >> (d - 1 - r)) & 1)
        row_k.append(g_r & 1)
        row_j.append((g_r >> 1) & (2**L - 1))
        row_i.append(g_r >> (1 + L))
    rows = layout.pack(row_k, row_j, row_i,
                       [np.full_like(g, multi[r]) for r in range(d)], s_comp)

    # cols: canonical local broken dofs on the 2^L-per-direction subdomain mesh
    n_loc_elems = 2 ** (d * L)
    c = np.arange(d * n_loc * n_loc_elems, dtype=np.int64)
    kmode_c = c % n_loc
    s_c = (c // n_loc) % d
    Kc = c // (n_loc * d)
    col_k, col_j, col_i, col_it = [], [], [], []
    rem = Kc
    K_loc = []
    for r in range(d - 1, -1, -1):
        K_loc.insert(0, rem % 2**L)
        rem = rem // 2**L
    for r in range(d):
        col_k.append((kmode_c >> (d - 1 - r)) & 1)
        col_j.append(K_loc[r])
        col_i.append(np.full_like(c, multi[r]))
        col_it.append(np.full_like(c, multi[r]))
    cols = layout.pack(col_k, col_j, col_i, col_it, s_c)

    return BlockEncoding(1.0, U, rows.astype(np.int64), cols.astype(np.int64))


def prepare_rhs_state(precond, b: np.ndarray):
    """Normalized statevector of the preconditioned right-hand side.

    Selector value 0 carries the coarse component, value i the component of
    subdomain i (1-based); each slot holds the corresponding block of F~^T b
    over the total norm.  Returns the state on the (n+1)+m qubit index space
    and the per-block norms.
    """
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        raise ValueError("zero right-hand side has no state")
    y = precond.apply_Ftilde_T(b)
    slices = precond.block_slices()
    n_sub = precond.layout.n_subdomains
    if not _is_pow2(n_sub):
        raise ValueError("state preparation needs a power-of-two subdomain count")
    n = int(log2(n_sub))
    block_dims = [s.stop - s.start for s in slices]
    m = max(1, ceil(log2(max(block_dims))))
    total = np.linalg.norm(y)
    state = np.zeros(2 ** (n + 1 + m))
    local_norms = []
    for i in range(n_sub):
        blk = y[slices[i]]
        local_norms.append(float(np.linalg.norm(blk)))
        state[(i + 1) * 2**m : (i + 1) * 2**m + blk.size] = blk / total
    coarse_norm = None
    if precond.has_coarse:
        blk = y[slices[-1]]
        coarse_norm = float(np.linalg.norm(blk))
        state[: blk.size] = blk / total
    norms = {"local": local_norms, "coarse": coarse_norm, "total": float(total)}
    return state, norms


def rhs_state_to_coefficients(state: np.ndarray, precond) -> np.ndarray:
    """Undo the selector/block layout, recovering the flat coefficient vector."""
    slices = precond.block_slices()
    n_sub = precond.layout.n_subdomains
    block_dims = [s.stop - s.start for s in slices]
    m = max(1, ceil(log2(max(block_dims))))
    parts = []
    for i in range(n_sub):
        dim = block_dims[i]
        parts.append(state[(i + 1) * 2**m : (i + 1) * 2**m + dim])
    if precond.has_coarse:
        parts.append(state[: block_dims[-1]])
    return np.concatenate(parts)
