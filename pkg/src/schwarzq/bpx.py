"""Split multilevel (BPX) factor on a unit-hypercube subdomain.

All subdomains are congruent dyadically refined unit hypercubes, so one factor
is built per (L, d) and shared.  The factor concatenates the scaled nodal
embeddings of every level into the finest space; its outer product is the
multilevel approximation of the local inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = ["BpxFactor", "build_bpx", "bpx_spectral_bounds", "embedding_1d"]


def embedding_1d(l: int) -> sp.csr_matrix:
    """One-level nodal embedding from grid l to grid l+1 in 1D.

    Column c carries the stencil (1/2, 1, 1/2) centred at fine node 2c+1.
    """
    nf, nc = 2 ** (l + 1) - 1, 2**l - 1
    cols = np.repeat(np.arange(nc), 3)
    rows = (2 * np.arange(nc)[:, None] + np.array([0, 1, 2])[None, :]).ravel()
    data = np.tile([0.5, 1.0, 0.5], nc)
    return sp.coo_matrix((data, (rows, cols)), shape=(nf, nc)).tocsr()


@dataclass(frozen=True)
class BpxFactor:
    """Blocks (scale_l, I_{l,L}) for l = 1..L and their concatenation."""

    L: int
    d: int
    blocks: tuple[tuple[float, sp.csr_matrix], ...]

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.hstack([s * I for s, I in self.blocks], format="csr")

    @property
    def rows(self) -> int:
        return (2**self.L - 1) ** self.d

    @property
    def cols(self) -> int:
        return sum(I.shape[1] for _, I in self.blocks)

    @property
    def scales(self) -> tuple[float, ...]:
        return tuple(s for s, _ in self.blocks)


def build_bpx(L: int, d: int) -> BpxFactor:
    """Assemble the level embeddings and the literal per-level scaling 2^(-l(2-d)/2)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    embeds_1d = {L: sp.eye(2**L - 1, format="csr")}
    for l in range(L - 1, 0, -1):
        embeds_1d[l] = (embeds_1d[l + 1] @ embedding_1d(l)).tocsr()
    blocks = []
    for l in range(1, L + 1):
        E = embeds_1d[l]
        I_lL = E
        for _ in range(d - 1):
            I_lL = sp.kron(I_lL, E, format="csr")
        scale = 2.0 ** (-l * (2 - d) / 2.0)
        blocks.append((scale, I_lL))
    return BpxFactor(L, d, tuple(blocks))


def bpx_spectral_bounds(A_i: sp.spmatrix, F: BpxFactor, tol: float = 1e-8):
    """Extreme nonzero eigenvalues (mu_min, mu_max) of F^T A_i F.

    These bracket the spectrum of the preconditioned local operator; the
    factor is rank deficient, so the kernel is cut before selecting the
    smallest eigenvalue.
    """
    from .spectral import extreme_eigs_sym

    Fm = F.matrix
    if Fm.shape[0] != A_i.shape[0]:
        raise ValueError("factor and local matrix dimensions do not match")
    A_i = A_i.tocsr()

    def apply_m(x):
        return Fm.T @ (A_i @ (Fm @ x))

    rep = extreme_eigs_sym(apply_m, Fm.shape[1], tol=tol)
    return rep.lambda_min, rep.lambda_max
