"""Brute-force reference implementations of every U-statistic.

These follow the distinct-index definitions literally, with explicit Python
loops over index tuples, and exist solely to validate the fast paths on
small inputs.  They share no code with the production implementations.
"""

from __future__ import annotations

from itertools import permutations
from math import factorial

import numpy as np

__all__ = [
    "naive_if22",
    "naive_if22_quasi",
    "naive_if22_debiased",
    "naive_if_mm",
    "naive_if44_cs",
    "naive_var_uncorrected",
    "naive_var_correction",
    "naive_var_plugin",
    "naive_var_plugin_cs",
    "naive_distinct_graph_sum",
]


def _falling(n: int, m: int) -> float:
    return float(factorial(n) // factorial(n - m))


def naive_if22(a, b, Z, P) -> float:
    n = len(a)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            total += a[i] * float(Z[i] @ P @ Z[j]) * b[j]
    return total / (n * (n - 1))


def naive_if22_quasi(a, b, Z) -> float:
    n = len(a)
    omega = (Z.T @ Z) / n
    P = np.linalg.inv(omega)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            Q = P + (P @ (np.outer(Z[i], Z[i]) + np.outer(Z[j], Z[j])) @ P) / n
            total += a[i] * float(Z[i] @ Q @ Z[j]) * b[j]
    return total / (n * (n - 1))


def naive_if22_debiased(a, b, Z) -> float:
    """Leave-two-out debiased estimator with explicitly re-inverted matrices."""
    n = len(a)
    omega = (Z.T @ Z) / n
    P = np.linalg.inv(omega)
    base = naive_if22(a, b, Z, P)
    extra = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            om_ij = omega - (np.outer(Z[i], Z[i]) + np.outer(Z[j], Z[j])) / n
            P_ij = np.linalg.inv(om_ij)
            mid = np.outer(Z[i], Z[i]) + np.outer(Z[j], Z[j])
            extra += a[i] * float(Z[i] @ P_ij @ mid @ P @ Z[j]) * b[j]
    return base + extra / (n * n * (n - 1))


def naive_if_mm(a, b, Z, P, omega, m: int) -> float:
    """(-1)^m (n-m)!/n! sum over distinct m-tuples of the chain kernel."""
    n = len(a)
    total = 0.0
    mids = [np.outer(Z[i], Z[i]) - omega for i in range(n)]
    for tup in permutations(range(n), m):
        i1, i2 = tup[0], tup[1]
        vec = P @ Z[i2]
        for j in range(m - 1, 2 - 1, -1):
            vec = P @ (mids[tup[j]] @ vec)
        total += a[i1] * float(Z[i1] @ vec) * b[i2]
    return ((-1.0) ** m) * total / _falling(n, m)


def naive_if44_cs(a, b, Z, P) -> float:
    n = len(a)
    G = Z @ P @ Z.T
    total = 0.0
    for tup in permutations(range(n), 4):
        i1, i2, i3, i4 = tup
        total += a[i1] * G[i1, i2] * a[i2] * b[i3] * G[i3, i4] * b[i4]
    return total / _falling(n, 4)


def naive_var_uncorrected(a, b, Z, P) -> float:
    n = len(a)
    G = Z @ P @ Z.T
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            total += a[i] * G[i, j] * b[j] * b[j] * G[j, i] * a[i]
            total += a[i] * G[i, j] * b[j] * b[i] * G[i, j] * a[j]
    return total / (n * n * (n - 1.0) ** 2)


def naive_var_correction(a, b, Z, P) -> float:
    n = len(a)
    G = Z @ P @ Z.T
    total = 0.0
    for tup in permutations(range(n), 3):
        i1, i2, i3 = tup
        total += a[i1] * G[i1, i2] * b[i2] * b[i1] * G[i1, i3] * a[i3]
        total += a[i1] * G[i1, i2] * b[i2] * b[i3] * G[i3, i1] * a[i1]
        total += a[i1] * G[i1, i2] * b[i2] * b[i2] * G[i2, i3] * a[i3]
        total += a[i1] * G[i1, i2] * b[i2] * b[i3] * G[i3, i2] * a[i2]
    return total / (n * n * (n - 1.0) ** 2)


def _chain_value(a, b, G, tup) -> float:
    val = a[tup[0]]
    for u, v in zip(tup, tup[1:]):
        val *= G[u, v]
    return val * b[tup[-1]]


def naive_var_plugin(a, b, Z, P, omega, order: int) -> float:
    """Full-overlap plug-in second moment of the order-m chain statistic.

    [(n-m)!/n!]^2 sum over distinct tuples T and permutations s of
    h(T) h(s(T)), with h the exact signed kernel of the order-m statistic.
    """
    n = len(a)
    mids = [np.outer(Z[i], Z[i]) - omega for i in range(n)]

    def h(tup):
        i1, i2 = tup[0], tup[1]
        vec = P @ Z[i2]
        for j in range(len(tup) - 1, 1, -1):
            vec = P @ (mids[tup[j]] @ vec)
        return ((-1.0) ** len(tup)) * a[i1] * float(Z[i1] @ vec) * b[i2]

    total = 0.0
    for tup in permutations(range(n), order):
        ht = h(tup)
        for sigma in permutations(tup):
            total += ht * h(sigma)
    return total / _falling(n, order) ** 2


def naive_var_plugin_cs(a, b, Z, P) -> float:
    """Full-overlap plug-in second moment of the fourth-order product kernel."""
    n = len(a)
    G = Z @ P @ Z.T

    def h(tup):
        i1, i2, i3, i4 = tup
        return a[i1] * G[i1, i2] * a[i2] * b[i3] * G[i3, i4] * b[i4]

    total = 0.0
    for tup in permutations(range(n), 4):
        ht = h(tup)
        for sigma in permutations(tup):
            total += ht * h(sigma)
    return total / _falling(n, 4) ** 2


def naive_distinct_graph_sum(n, edges, weights=None, num_vertices=None) -> float:
    weights = list(weights or [])
    labels = {u for u, v, _ in edges} | {v for u, v, _ in edges} | {u for u, _ in weights}
    V = num_vertices if num_vertices is not None else (max(labels) + 1 if labels else 0)
    total = 0.0
    for tup in permutations(range(n), V):
        val = 1.0
        for u, v, mat in edges:
            val *= mat[tup[u], tup[v]]
        for u, vec in weights:
            val *= vec[tup[u]]
        total += val
    return total
