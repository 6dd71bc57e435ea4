"""Periodized Daubechies-6 wavelet bases on [0, 1].

The father (scaling) and mother wavelet of the D6 family (three vanishing
moments, six filter taps) have no closed form; they are tabulated once on a
dyadic grid by the cascade algorithm and evaluated elsewhere by linear
interpolation.  Periodizing the dilated/translated father wavelets modulo 1
turns the k = 2^j level-j translates into an orthonormal basis of their span
in L2[0, 1], and the spans are nested across levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WaveletTable",
    "BasisFamily",
    "build_wavelet_table",
    "eval_basis",
    "build_basis_family",
    "write_table_csv",
    "D6_SCALING_FILTER",
]

# Orthonormal D6 scaling filter, normalized so the taps sum to sqrt(2).
D6_SCALING_FILTER = np.array(
    [
        0.33267055295095688,
        0.80689150931333875,
        0.45987750211933132,
        -0.13501102001039084,
        -0.08544127388224149,
        0.03522629188210562,
    ]
)

_SUPPORT = len(D6_SCALING_FILTER) - 1  # father/mother wavelets live on [0, 5]
_DEFAULT_K_CAP = 4096


@dataclass(frozen=True)
class WaveletTable:
    """Father/mother wavelet values on the dyadic grid m / 2^R over [0, 5].

    Immutable after construction; safe for concurrent reads.
    """

    filter_id: str
    resolution_R: int
    father: np.ndarray
    mother: np.ndarray

    @property
    def grid_step(self) -> float:
        return 2.0 ** (-self.resolution_R)

    def eval_father(self, t: np.ndarray) -> np.ndarray:
        return _interp_compact(t, self.father, self.resolution_R)

    def eval_mother(self, t: np.ndarray) -> np.ndarray:
        return _interp_compact(t, self.mother, self.resolution_R)


def _interp_compact(t, table, resolution_R):
    """Linear interpolation of a tabulated function supported on [0, 5]."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0.0) & (t < _SUPPORT)
    if not np.any(inside):
        return out
    pos = t[inside] * 2.0**resolution_R
    idx = np.floor(pos).astype(np.int64)
    frac = pos - idx
    np.clip(idx, 0, table.size - 2, out=idx)
    out[inside] = table[idx] * (1.0 - frac) + table[idx + 1] * frac
    return out


def build_wavelet_table(family: str = "D6", resolution_R: int = 14) -> WaveletTable:
    """Tabulate the D6 father and mother wavelets by the cascade algorithm.

    Values at integers come from the eigenvector of the two-scale refinement
    matrix; values at finer dyadic points follow exactly from the refinement
    relation, one resolution level at a time.  The mother wavelet is then
    obtained from the father at one level finer, so every tabulated value is
    exact up to floating point.

    Parameters
    ----------
    family : str
        Wavelet family tag.  Only ``"D6"`` is supported.
    resolution_R : int
        Dyadic tabulation resolution, between 10 and 20.
    """
    if family != "D6":
        raise ValueError(f"unsupported wavelet family {family!r}; only 'D6' is available")
    if not 10 <= resolution_R <= 20:
        raise ValueError(f"resolution_R must lie in [10, 20], got {resolution_R}")

    h = D6_SCALING_FILTER
    n_taps = h.size

    # phi at the integers 0..5: eigenvector of T[i, j] = sqrt(2) h_{2i - j}
    # for eigenvalue 1, normalized so that sum_i phi(i) = 1.
    T = np.zeros((n_taps, n_taps))
    for i in range(n_taps):
        for j in range(n_taps):
            idx = 2 * i - j
            if 0 <= idx < n_taps:
                T[i, j] = np.sqrt(2.0) * h[idx]
    eigvals, eigvecs = np.linalg.eig(T)
    which = int(np.argmin(np.abs(eigvals - 1.0)))
    phi_int = np.real(eigvecs[:, which])
    phi_int = phi_int / phi_int.sum()
    phi_int[0] = 0.0
    phi_int[-1] = 0.0

    # Refine father values level by level: needs one extra level so the
    # mother can be filled in from exact father lookups.
    internal_R = resolution_R + 1
    father_fine = np.zeros(_SUPPORT * 2**internal_R + 1)
    father_fine[:: 2**internal_R] = phi_int
    for r in range(1, internal_R + 1):
        step = 2 ** (internal_R - r)  # fine-grid stride of the level-r grid
        odd = np.arange(step, father_fine.size, 2 * step)
        t_odd = odd * 2.0**-internal_R  # abscissae being filled in
        vals = np.zeros(odd.size)
        for ell in range(n_taps):
            src = 2.0 * t_odd - ell
            ok = (src >= 0.0) & (src <= _SUPPORT)
            src_idx = np.round(src[ok] * 2**internal_R).astype(np.int64)
            contrib = np.zeros(odd.size)
            contrib[ok] = father_fine[src_idx]
            vals += np.sqrt(2.0) * h[ell] * contrib
        father_fine[odd] = vals

    # Mother from the father, keeping support [0, 5]:
    # psi(x) = sqrt(2) sum_l (-1)^l h_{n-1-l} phi(2x - l).
    g = ((-1.0) ** np.arange(n_taps)) * h[::-1]
    m_grid = np.arange(_SUPPORT * 2**resolution_R + 1)
    t_m = m_grid * 2.0**-resolution_R
    mother = np.zeros(m_grid.size)
    for ell in range(n_taps):
        src = 2.0 * t_m - ell
        ok = (src >= 0.0) & (src <= _SUPPORT)
        src_idx = np.round(src[ok] * 2**internal_R).astype(np.int64)
        contrib = np.zeros(m_grid.size)
        contrib[ok] = father_fine[src_idx]
        mother += np.sqrt(2.0) * g[ell] * contrib

    father = father_fine[::2].copy()
    return WaveletTable(
        filter_id=family, resolution_R=resolution_R, father=father, mother=mother
    )


def eval_basis(table: WaveletTable, x: np.ndarray, k: int) -> np.ndarray:
    """Evaluation matrix of the k periodized level-j father wavelets.

    Column ``ell`` holds 2^{j/2} sum_m phi(2^j x - ell + 2^j m) with
    j = log2(k), wrapped modulo 1, so the columns are orthonormal in
    L2[0, 1] for X uniform.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be one-dimensional")
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("all evaluation points must lie in [0, 1]")
    j = _level_of(k)
    n = x.size
    scale = 2.0 ** (j / 2.0)
    t = (2.0**j) * x
    Z = np.zeros((n, k))
    if k > _SUPPORT:
        # At most 5 translates touch each point; place them directly.
        base = np.floor(t).astype(np.int64)
        frac = t - base
        rows = np.arange(n)
        for off in range(_SUPPORT):
            cols = np.mod(base - off, k)
            Z[rows, cols] = scale * table.eval_father(frac + off)
    else:
        # Coarse levels: the periodized support wraps several times.
        wraps = int(np.ceil(_SUPPORT / k)) + 1
        for ell in range(k):
            acc = np.zeros(n)
            for m in range(wraps + 1):
                acc += table.eval_father(np.mod(t - ell, k) + k * m)
            Z[:, ell] = scale * acc
    return Z


def eval_mother_level_sum(table: WaveletTable, x: np.ndarray, j: int) -> np.ndarray:
    """sum over all translates ell of 2^{j/2} omega(2^j x - ell) at level j.

    Every translate whose support meets the evaluation point contributes;
    with one coefficient per (j, ell) this equals the whole-line sum.
    """
    x = np.asarray(x, dtype=float)
    t = (2.0**j) * x
    base = np.floor(t)
    frac = t - base
    acc = np.zeros_like(t)
    for off in range(_SUPPORT):
        acc += table.eval_mother(frac + off)
    return 2.0 ** (j / 2.0) * acc


@dataclass(frozen=True)
class BasisFamily:
    """Nested design matrices Z_k over an ascending power-of-two k grid."""

    k_grid: tuple[int, ...]
    x_values: np.ndarray
    matrices: dict[int, np.ndarray] = field(repr=False)
    row_norm_constant: float = 0.0

    def matrix(self, k: int) -> np.ndarray:
        if k == 0:
            return np.zeros((self.x_values.size, 0))
        return self.matrices[k]


def build_basis_family(
    table: WaveletTable,
    x: np.ndarray,
    k_grid,
    *,
    k_cap: int = _DEFAULT_K_CAP,
    check_nesting: bool = False,
) -> BasisFamily:
    """Evaluate Z_k for every k in an ascending power-of-two grid.

    The level-j spans are nested by the two-scale relation; the optional
    check verifies it numerically (a failure signals a construction bug).
    """
    k_grid = [int(k) for k in k_grid]
    if not k_grid:
        raise ValueError("k_grid must be nonempty")
    if any(k2 <= k1 for k1, k2 in zip(k_grid, k_grid[1:])):
        raise ValueError("k_grid must be strictly increasing")
    if max(k_grid) > k_cap:
        raise ValueError(f"largest k {max(k_grid)} exceeds the cap {k_cap}")
    x = np.asarray(x, dtype=float)
    matrices = {k: eval_basis(table, x, k) for k in k_grid}

    row_norm_constant = 0.0
    for k, Z in matrices.items():
        sup_row = float(np.max(np.einsum("ij,ij->i", Z, Z))) if Z.size else 0.0
        row_norm_constant = max(row_norm_constant, sup_row / k)

    if check_nesting and len(k_grid) > 1:
        _check_nesting(matrices, k_grid)
    return BasisFamily(
        k_grid=tuple(k_grid),
        x_values=x,
        matrices=matrices,
        row_norm_constant=row_norm_constant,
    )


def _check_nesting(matrices, k_grid, tol=1e-8):
    for k1, k2 in zip(k_grid, k_grid[1:]):
        Z1, Z2 = matrices[k1], matrices[k2]
        coef, *_ = np.linalg.lstsq(Z2, Z1, rcond=None)
        resid = Z1 - Z2 @ coef
        col_norms = np.linalg.norm(Z1, axis=0)
        rel = np.linalg.norm(resid, axis=0) / np.maximum(col_norms, 1e-30)
        worst = float(np.max(rel)) if rel.size else 0.0
        if worst > tol:
            raise ValueError(
                f"nesting check failed between k={k1} and k={k2}: "
                f"max relative projection residual {worst:.3e} > {tol:.0e}"
            )


def _level_of(k: int) -> int:
    if k < 1 or (k & (k - 1)) != 0:
        raise ValueError(f"k must be a positive power of two, got {k}")
    return int(k).bit_length() - 1


def write_table_csv(table: WaveletTable, path) -> None:
    """Dump the tabulation as CSV with columns x, father, mother."""
    x = np.arange(table.father.size) * table.grid_step
    data = np.column_stack([x, table.father, table.mother])
    header = "x,father,mother"
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
