"""Sparse assembly with a fixed pattern and a direct solver that reuses its
factorization across slowly varying matrices."""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SparsePattern:
    """CSC structure fixed once from COO index arrays.

    ``assemble(values)`` sums duplicate entries in a deterministic order, so
    identical inputs give bit-identical matrices.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        self.shape = shape
        self.nnz_in = rows.size
        key = cols * shape[0] + rows
        uniq, self._slot = np.unique(key, return_inverse=True)
        self.keys = uniq
        self._slot = self._slot.ravel()
        c = uniq // shape[0]
        self.indices = (uniq % shape[0]).astype(np.int32)
        self.indptr = np.zeros(shape[1] + 1, dtype=np.int32)
        np.cumsum(np.bincount(c, minlength=shape[1]), out=self.indptr[1:])
        self.nnz = uniq.size

    def assemble(self, values: np.ndarray) -> sp.csc_matrix:
        values = np.asarray(values, dtype=float).ravel()
        if values.size != self.nnz_in:
            raise ValueError(f"expected {self.nnz_in} values, got {values.size}")
        data = np.bincount(self._slot, weights=values, minlength=self.nnz)
        return sp.csc_matrix((data, self.indices, self.indptr), shape=self.shape, copy=False)


def block_indices(row_dofs: np.ndarray, col_dofs: np.ndarray):
    """COO index arrays for a batch of dense blocks ``(nb, r) x (nb, c)``."""
    r = np.broadcast_to(row_dofs[:, :, None], row_dofs.shape + (col_dofs.shape[1],))
    c = np.broadcast_to(col_dofs[:, None, :], (col_dofs.shape[0], row_dofs.shape[1], col_dofs.shape[1]))
    return r.ravel(), c.ravel()


class ReusableSolver:
    """Direct solver that keeps an LU factorization between calls.

    A new matrix is first tried with iterative refinement preconditioned by
    the stored factors; if that does not reach ``rtol`` within ``max_iter``
    sweeps the matrix is refactorized. The decision depends only on the
    inputs, so runs are reproducible.
    """

    def __init__(self, rtol: float = 1e-12, max_iter: int = 8, reuse: bool = True,
                 symmetric_pattern: bool = False):
        self.rtol = rtol
        self.max_iter = max_iter
        self.reuse = reuse
        # structurally symmetric systems with nonzero diagonals factor with far
        # less fill under a symmetric ordering and diagonal pivoting
        self.symmetric_pattern = symmetric_pattern
        self._lu = None
        self.factorizations = 0
        self.last_iterations = 0

    def reset(self):
        self._lu = None

    def _factor(self, A: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
        self.factorizations += 1
        if self.symmetric_pattern:
            try:
                self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                     options=dict(SymmetricMode=True))
                x = self._lu.solve(b)
                if np.all(np.isfinite(x)) and np.linalg.norm(b - A @ x) <= 1e-8 * np.linalg.norm(b):
                    return x
            except RuntimeError:
                pass
            log.debug("diagonal pivoting failed, falling back to partial pivoting")
        try:
            self._lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        return self._lu.solve(b)

    def apply(self, A: sp.spmatrix, b: np.ndarray, sweeps: int = 3) -> np.ndarray:
        """Approximate solve with the stored factors, refined against ``A``
        without an acceptance test or refactorization."""
        if self._lu is None:
            raise SolverError("no stored factorization")
        x = self._lu.solve(b)
        for _ in range(sweeps - 1):
            x += self._lu.solve(b - A @ x)
        return x

    def solve(self, A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        if not sp.isspmatrix_csc(A):
            A = sp.csc_matrix(A)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        if self._lu is not None and self.reuse:
            if x0 is None:
                x = np.zeros_like(b)
                r = b.copy()
            else:
                x = x0.copy()
                r = b - A @ x
            for it in range(self.max_iter):
                x += self._lu.solve(r)
                r = b - A @ x
                if np.linalg.norm(r) <= self.rtol * bnorm:
                    self.last_iterations = it + 1
                    return x
            log.debug("refinement stalled at %.2e, refactorizing", np.linalg.norm(r) / bnorm)
        x = self._factor(A, b)
        # one refinement sweep cleans up pivoting error on indefinite systems
        r = b - A @ x
        x += self._lu.solve(r)
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values (singular system)")
        self.last_iterations = 0
        return x


class ReducedSystem:
    """Sparse system on the free DOFs of a fixed COO layout.

    Entries in fixed rows are dropped; entries in free rows and fixed columns
    are moved to the right-hand side with the prescribed values.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, fixed: np.ndarray):
        n = fixed.size
        self.n = n
        self.fixed = fixed
        self.free_index = np.flatnonzero(~fixed)
        renum = np.full(n, -1, dtype=np.int64)
        renum[self.free_index] = np.arange(len(self.free_index))
        free = ~fixed
        self._keep = free[rows] & free[cols]
        self._lift = free[rows] & fixed[cols]
        self._lift_rows = renum[rows[self._lift]]
        self._lift_cols = cols[self._lift]
        m = len(self.free_index)
        self.pattern = SparsePattern(renum[rows[self._keep]], renum[cols[self._keep]], (m, m))
        self.full_pattern = SparsePattern(rows, cols, (n, n))

    def matrix(self, values: np.ndarray) -> sp.csc_matrix:
        return self.pattern.assemble(values[self._keep])

    def reduced_rhs(self, values: np.ndarray, F: np.ndarray, xfix: np.ndarray) -> np.ndarray:
        lifted = np.bincount(self._lift_rows, weights=values[self._lift] * xfix[self._lift_cols],
                             minlength=len(self.free_index))
        return F[self.free_index] - lifted

    def expand(self, xf: np.ndarray, xfix: np.ndarray) -> np.ndarray:
        x = xfix.copy()
        x[self.free_index] = xf
        return x


class CondensedSolver:
    """Static condensation of element-interior unknowns.

    ``interior`` lists, per element, the full-numbering DOFs that couple only
    to their own element and to skeleton DOFs; every one of them must be
    free. Each solve eliminates them with batched dense solves, factors the
    skeleton Schur complement with ``inner`` and recovers the interior values
    by back substitution. Drop-in replacement for :class:`ReusableSolver`.
    """

    def __init__(self, system: ReducedSystem, interior: np.ndarray, inner: ReusableSolver | None = None,
                 refine_sweeps: int = 6):
        self.inner = inner or ReusableSolver(symmetric_pattern=True)
        self.refine_sweeps = refine_sweeps
        pat = system.pattern
        m = len(system.free_index)
        renum = np.full(system.n, -1, dtype=np.int64)
        renum[system.free_index] = np.arange(m)
        I = renum[np.asarray(interior)]
        if np.any(I < 0):
            raise ValueError("interior DOFs must all be free")
        is_int = np.zeros(m, dtype=bool)
        is_int[I.ravel()] = True
        if is_int.sum() != I.size:
            raise ValueError("interior DOF groups overlap")
        self.skeleton = np.flatnonzero(~is_int)
        ns = len(self.skeleton)
        sk_num = np.full(m + 1, ns, dtype=np.int64)
        sk_num[self.skeleton] = np.arange(ns)

        cols = np.repeat(np.arange(m), np.diff(pat.indptr))
        rows = pat.indices.astype(np.int64)
        owner = np.full(m, -1, dtype=np.int64)
        owner[I.ravel()] = np.repeat(np.arange(I.shape[0]), I.shape[1])
        # skeleton neighbours of each element, from either triangle of the pattern
        link = np.concatenate([np.stack([owner[rows], cols], 1), np.stack([owner[cols], rows], 1)])
        link = link[(link[:, 0] >= 0) & ~is_int[link[:, 1]]]
        link = np.unique(link, axis=0)
        counts = np.bincount(link[:, 0], minlength=I.shape[0])
        smax = int(counts.max()) if counts.size else 0
        S = np.full((I.shape[0], smax), m, dtype=np.int64)        # m = padding
        slot = np.arange(len(link)) - np.repeat(np.cumsum(counts) - counts, counts)
        S[link[:, 0], slot] = link[:, 1]
        self._I, self._S, self._Ssk = I, S, sk_num[S]

        def positions(r, c):
            key = c * m + r
            pos = np.searchsorted(pat.keys, key)
            pos = np.minimum(pos, pat.nnz - 1)
            hit = (pat.keys[pos] == key) & (r < m) & (c < m)
            return np.where(hit, pos, pat.nnz)               # nnz -> appended zero

        self._pII = positions(I[:, :, None], I[:, None, :])
        self._pIS = positions(I[:, :, None], S[:, None, :])
        self._pSI = positions(S[:, :, None], I[:, None, :])
        sk_r, sk_c = ~is_int[rows], ~is_int[cols]
        self._ss = np.flatnonzero(sk_r & sk_c)
        br = np.broadcast_to(self._Ssk[:, :, None], self._pSI.shape[:2] + (smax,))
        bc = np.broadcast_to(self._Ssk[:, None, :], br.shape)
        self._blk_keep = ((br < ns) & (bc < ns)).ravel()
        self.schur_pattern = SparsePattern(
            np.concatenate([sk_num[rows[self._ss]], br.ravel()[self._blk_keep]]),
            np.concatenate([sk_num[cols[self._ss]], bc.ravel()[self._blk_keep]]), (ns, ns))
        self._ns = ns

    @property
    def reuse(self) -> bool:
        return self.inner.reuse

    @reuse.setter
    def reuse(self, value: bool):
        self.inner.reuse = value

    @property
    def factorizations(self) -> int:
        return self.inner.factorizations

    def reset(self):
        self.inner.reset()

    def solve(self, A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        A = sp.csc_matrix(A)
        data = np.append(A.data, 0.0)
        Kii, Kis, Ksi = data[self._pII], data[self._pIS], data[self._pSI]
        bpad = np.append(b, 0.0)
        try:
            X = np.linalg.solve(Kii, np.concatenate([Kis, bpad[self._I][:, :, None]], axis=2))
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular element block during condensation: {exc}") from exc
        E, y = X[:, :, :-1], X[:, :, -1]
        blocks = -np.matmul(Ksi, E)
        vals = np.concatenate([data[self._ss], blocks.ravel()[self._blk_keep]])
        S = self.schur_pattern.assemble(vals)

        def back_substitute(rhs, y, guess=None, correction=False):
            red = -np.einsum("esi,ei->es", Ksi, y)
            rs = rhs[self.skeleton] + np.bincount(self._Ssk.ravel(), weights=red.ravel(),
                                                  minlength=self._ns + 1)[:self._ns]
            xs = self.inner.apply(S, rs) if correction else self.inner.solve(S, rs, guess)
            out = np.empty_like(rhs)
            out[self.skeleton] = xs
            out[self._I] = y - np.einsum("eis,es->ei", E, np.append(xs, 0.0)[self._Ssk])
            return out

        x = back_substitute(b, y, None if x0 is None else x0[self.skeleton])
        # rounding in the Schur complement can leave local constraint rows
        # (the divergence rows at small viscosity) well short of the unreduced accuracy
        scale = abs(A) @ np.abs(x) + np.abs(b)
        scale[scale == 0.0] = 1.0
        for _ in range(self.refine_sweeps):
            r = b - A @ x
            if np.max(np.abs(r) / scale) <= 1e-15:
                break
            ry = np.linalg.solve(Kii, np.append(r, 0.0)[self._I][:, :, None])[:, :, 0]
            x += back_substitute(r, ry, correction=True)
        return x
