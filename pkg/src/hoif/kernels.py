"""Shared computational machinery for degenerate U-statistics.

Everything downstream reduces to sums over tuples of *distinct* row indices
of products of entries of an n x n kernel matrix G and per-row weights.
``distinct_graph_sum`` evaluates such sums exactly by Mobius inversion over
the partition lattice of the index positions: the unrestricted sum for each
coincidence pattern is one einsum contraction, and the Mobius weights
(-1)^{|B|-1} (|B|-1)! undo the overcounting.  ``KernelCache`` holds the
kernel matrix for one (residuals, basis, precision plan) triple together
with the closed-form O(n^2) paths for the second-order statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np

__all__ = ["KernelCache", "distinct_graph_sum", "distinct_chain_sum", "set_partitions"]


def set_partitions(items):
    """All set partitions of a sequence, as tuples of tuples."""
    items = list(items)
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i, block in enumerate(part):
            yield part[:i] + ((first,) + block,) + part[i + 1 :]
        yield ((first,),) + part


@lru_cache(maxsize=None)
def _partitions_with_mobius(m: int):
    out = []
    for part in set_partitions(range(m)):
        mob = 1.0
        for block in part:
            b = len(block)
            mob *= (-1.0) ** (b - 1) * factorial(b - 1)
        out.append((part, mob))
    return tuple(out)


_LETTERS = "abcdefghijkl"


def distinct_graph_sum(n: int, edges, weights=None, num_vertices: int | None = None) -> float:
    """Sum over distinct index assignments of a product of kernel entries.

    Parameters
    ----------
    n : int
        Range of each index.
    edges : list of (u, v, matrix)
        Each contributes ``matrix[i_u, i_v]`` to the product; vertices are
        integer labels 0..V-1.
    weights : list of (u, vector), optional
        Each contributes ``vector[i_u]``.
    num_vertices : int, optional
        Total number of vertex labels (isolated vertices still count toward
        the distinctness constraint and contribute falling-factorial mass).

    Returns the exact sum over assignments with all vertex indices distinct.
    """
    weights = list(weights or [])
    labels = {u for u, v, _ in edges} | {v for u, v, _ in edges} | {u for u, _ in weights}
    V = num_vertices if num_vertices is not None else (max(labels) + 1 if labels else 0)
    if V > n:
        return 0.0
    if V == 0:
        return 1.0
    total = 0.0
    for part, mob in _partitions_with_mobius(V):
        block_of = {}
        for bi, block in enumerate(part):
            for lab in block:
                block_of[lab] = bi
        n_blocks = len(part)
        if n_blocks > n:
            continue
        subs = []
        ops = []
        touched = set()
        for u, v, mat in edges:
            bu, bv = block_of[u], block_of[v]
            subs.append(_LETTERS[bu] + _LETTERS[bv])
            ops.append(mat)
            touched.add(bu)
            touched.add(bv)
        for u, vec in weights:
            bu = block_of[u]
            subs.append(_LETTERS[bu])
            ops.append(vec)
            touched.add(bu)
        free = n_blocks - len(touched)
        if ops:
            value = float(np.einsum(",".join(subs) + "->", *ops, optimize=True))
        else:
            value = 1.0
        total += mob * value * n**free
    return total


def distinct_chain_sum(a: np.ndarray, G: np.ndarray, b: np.ndarray, r: int) -> float:
    """Sum over r+2 distinct indices of a_{i0} G_{i0 i1} ... G_{i_r i_{r+1}} b_{i_{r+1}}."""
    n = a.size
    if r == 0:
        d = np.einsum("ii->i", G)
        return float(a @ G @ b - np.sum(a * b * d))
    edges = [(t, t + 1, G) for t in range(r + 1)]
    weights = [(0, a), (r + 1, b)]
    return distinct_graph_sum(n, edges, weights, num_vertices=r + 2)


@dataclass
class KernelCache:
    """The n x n kernel matrix for one (residuals, basis, plan) triple.

    ``G[i, j] = z_i^T P z_j`` for explicit-inverse plans; for the est_svd
    plan ``G = n Q Q^T`` (the scaling that makes every downstream formula
    uniform), where Q is the stored orthonormal basis.  ``diag_m`` keeps the
    projector diagonal needed by the quasi correction.
    """

    a: np.ndarray
    b: np.ndarray
    G: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    n: int = 0
    k: int = 0
    variant: str = ""
    diag_m: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def build(cls, residuals, Z: np.ndarray, plan) -> "KernelCache":
        a = np.asarray(residuals.eps_b, dtype=float)
        b = np.asarray(residuals.eps_p, dtype=float)
        Z = np.asarray(Z, dtype=float)
        n = a.size
        if Z.shape[0] != n:
            raise ValueError(f"design has {Z.shape[0]} rows but residuals have {n}")
        if Z.shape[1] != plan.k:
            raise ValueError(f"design has k={Z.shape[1]} columns but plan has k={plan.k}")
        if plan.k == 0:
            zero = np.zeros((n, n))
            return cls(
                a=a, b=b, G=zero, d=np.zeros(n), Y=np.zeros((n, 0)),
                n=n, k=0, variant=plan.variant,
            )
        if plan.variant == "est_svd":
            if plan.source and residuals.fingerprint and plan.source != residuals.fingerprint:
                raise ValueError(
                    "est_svd plan was built from a different split than the residuals"
                )
            Q = plan.basis_q
            if Q.shape[0] != n:
                raise ValueError("est_svd basis rows do not match the residual length")
            trace_m = float(np.einsum("ij,ij->", Q, Q))
            if abs(trace_m - plan.k) > 1e-8:
                raise ValueError(
                    f"projector trace {trace_m:.12g} differs from k={plan.k}"
                )
            Y = np.sqrt(n) * Q
            G = Y @ Y.T
            diag_m = np.einsum("ij,ij->i", Q, Q)
        else:
            Y = Z @ plan.whitener
            G = Y @ Y.T
            diag_m = None
        G = 0.5 * (G + G.T)
        d = np.einsum("ii->i", G).copy()
        return cls(
            a=a, b=b, G=G, d=d, Y=Y, n=n, k=plan.k, variant=plan.variant, diag_m=diag_m,
        )

    # -- second-order closed forms ------------------------------------

    def pair_sum(self) -> float:
        """sum over i != j of a_i G_ij b_j."""
        return _pair_sum(self.a, self.b, self.G, self.d)

    def if22_value(self) -> float:
        return self.pair_sum() / (self.n * (self.n - 1))

    def quasi_correction(self) -> float:
        """The diagonal-interaction correction of the quasi-debiased estimator."""
        if self.variant != "est_svd":
            raise ValueError("the quasi correction is defined for est_svd plans only")
        a, b, G, d, n = self.a, self.b, self.G, self.d, self.n
        # sum_{i != j} a_i (d_i G_ij + G_ij d_j) b_j / n, with G = n M
        da = (d * a) @ G @ b + a @ G @ (d * b) - 2.0 * np.sum(a * b * d * d)
        return da / n / (n * (n - 1))

    def var_uncorrected(self) -> float:
        return _var_uncorrected(self.a, self.b, self.G, self.d, self.n)

    def var_corrected(self) -> float:
        return self.var_uncorrected() + _var_correction(self.a, self.b, self.G, self.d, self.n)

    def bootstrap_values(self, n_boot: int, rng: np.random.Generator) -> np.ndarray:
        """Point estimates over with-replacement row resamples.

        Uses the factor form G = Y Y^T, so each replicate costs O(nk + k^2)
        when k < n (and O(n^2) via the kernel matrix otherwise).
        """
        n = self.n
        vals = np.empty(n_boot)
        use_factor = self.Y.shape[1] <= n
        for t in range(n_boot):
            idx = rng.integers(0, n, size=n)
            a_s, b_s, d_s = self.a[idx], self.b[idx], self.d[idx]
            if use_factor:
                Ys = self.Y[idx]
                cross = float((Ys.T @ a_s) @ (Ys.T @ b_s))
            else:
                Gs = self.G[np.ix_(idx, idx)]
                cross = float(a_s @ Gs @ b_s)
            vals[t] = (cross - np.sum(a_s * b_s * d_s)) / (n * (n - 1))
        return vals


def _pair_sum(a, b, G, d) -> float:
    return float(a @ G @ b - np.sum(a * b * d))


def _var_uncorrected(a, b, G, d, n) -> float:
    G2 = G * G
    a2, b2, ab = a * a, b * b, a * b
    t1 = float(a2 @ G2 @ b2 - np.sum(a2 * b2 * d * d))
    t2 = float(ab @ G2 @ ab - np.sum(ab * ab * d * d))
    return (t1 + t2) / (n * n * (n - 1.0) * (n - 1.0))


def _var_correction(a, b, G, d, n) -> float:
    """Unbiased estimator of the distinct-triple variance component."""
    G2 = G * G
    a2, b2, ab = a * a, b * b, a * b
    Ga = G @ a - d * a
    Gb = G @ b - d * b
    t1 = float(np.sum(ab * (Ga * Gb - (G2 @ ab - ab * d * d))))
    t2 = float(np.sum(a2 * (Gb * Gb - (G2 @ b2 - b2 * d * d))))
    t3 = float(np.sum(b2 * (Ga * Ga - (G2 @ a2 - a2 * d * d))))
    return (2.0 * t1 + t2 + t3) / (n * n * (n - 1.0) * (n - 1.0))


def pair_variances_from_kernel(a, b, D, n):
    """(uncorrected, corrected) variance estimates for an explicit kernel D.

    Used for difference kernels G_{k'} - G_k of nested bases, which are
    themselves second-order U-statistic kernels.
    """
    d = np.einsum("ii->i", D).copy()
    vu = _var_uncorrected(a, b, D, d, n)
    return vu, vu + _var_correction(a, b, D, d, n)
