"""Solid spherical harmonics and translation coefficient tables.

Basis convention, documented once here and relied on everywhere:

    Y_n^m(theta, phi) = sqrt((n-|m|)! / (n+|m|)!) P_n^|m|(cos theta) e^{i m phi}

with the Condon-Shortley phase inside P_n^m, so Y_n^-m = conj(Y_n^m). The
regular and irregular solid harmonics are R_n^m = rho^n Y_n^m and
I_n^m = Y_n^m / rho^(n+1). A multipole expansion stores
M_n^m = sum_i q_i conj(R_n^m(x_i - c)) and evaluates as
phi(x) = Re sum_{n,m} M_n^m I_n^m(x - c); local expansions pair L with R the
same way. With real charges both coefficient sets obey M_n^-m = conj(M_n^m),
so only m >= 0 is stored (p(p+1)/2 entries for degrees 0..p-1).

This module holds plain-numpy reference implementations plus the translation
tables (derived from the classical Laplace addition theorems) that the
compiled kernels consume. Correctness rests on the oracle tests, which check
every operator against direct summation, not on any single derivation.
"""

from math import factorial, sqrt

import numpy as np


def num_half(p: int) -> int:
    return p * (p + 1) // 2


def num_full(p: int) -> int:
    return p * p


def half_index(n: int, m: int) -> int:
    """Storage slot of (n, m), m >= 0, in the half (conjugate-symmetric) layout."""
    return n * (n + 1) // 2 + m


def full_index(n: int, m: int) -> int:
    """Storage slot of (n, m), -n <= m <= n, in the dense layout."""
    return n * n + n + m


def build_recurrence_tables(nmax: int):
    """Coefficient tables for the R/I recurrences up to degree nmax.

    diag[m]  = sqrt((2m-1) / 2m)            seeds R_m^m from R_{m-1}^{m-1}
    a1[n,m]  = (2n-1) / sqrt(n^2 - m^2)     vertical step weight on z
    a2[n,m]  = sqrt((n-1)^2-m^2)/sqrt(n^2-m^2)  two-back correction
    """
    diag = np.zeros(nmax + 1)
    a1 = np.zeros((nmax + 1, nmax + 1))
    a2 = np.zeros((nmax + 1, nmax + 1))
    for m in range(1, nmax + 1):
        diag[m] = sqrt((2 * m - 1) / (2 * m))
    for n in range(1, nmax + 1):
        for m in range(0, n):
            a1[n, m] = (2 * n - 1) / sqrt(n * n - m * m)
            a2[n, m] = sqrt((n - 1) ** 2 - m * m) / sqrt(n * n - m * m)
    return diag, a1, a2


def regular_solid(d, nmax: int):
    """R_n^m(d) for n = 0..nmax in the dense layout (complex, (nmax+1)^2)."""
    x, y, z = (float(d[0]), float(d[1]), float(d[2]))
    rho2 = x * x + y * y + z * z
    u = complex(x, y)
    out = np.zeros((nmax + 1) ** 2, dtype=np.complex128)
    out[0] = 1.0
    for m in range(1, nmax + 1):
        out[full_index(m, m)] = -u * sqrt((2 * m - 1) / (2 * m)) * out[full_index(m - 1, m - 1)]
    for m in range(0, nmax + 1):
        for n in range(m + 1, nmax + 1):
            prev2 = out[full_index(n - 2, m)] if n - 2 >= m else 0.0
            out[full_index(n, m)] = (
                (2 * n - 1) * z * out[full_index(n - 1, m)]
                - rho2 * sqrt((n - 1) ** 2 - m * m) * prev2
            ) / sqrt(n * n - m * m)
    for n in range(nmax + 1):
        for m in range(1, n + 1):
            out[full_index(n, -m)] = np.conj(out[full_index(n, m)])
    return out


def irregular_solid(d, nmax: int):
    """I_n^m(d) for n = 0..nmax in the dense layout; requires |d| > 0."""
    x, y, z = (float(d[0]), float(d[1]), float(d[2]))
    rho2 = x * x + y * y + z * z
    if rho2 == 0.0:
        raise ValueError("irregular solid harmonics are singular at the origin")
    u = complex(x, y)
    out = np.zeros((nmax + 1) ** 2, dtype=np.complex128)
    out[0] = 1.0 / sqrt(rho2)
    for m in range(1, nmax + 1):
        out[full_index(m, m)] = (
            -u / rho2 * sqrt((2 * m - 1) / (2 * m)) * out[full_index(m - 1, m - 1)]
        )
    for m in range(0, nmax + 1):
        for n in range(m + 1, nmax + 1):
            prev2 = out[full_index(n - 2, m)] if n - 2 >= m else 0.0
            out[full_index(n, m)] = (
                (2 * n - 1) * z * out[full_index(n - 1, m)]
                - sqrt((n - 1) ** 2 - m * m) * prev2
            ) / (rho2 * sqrt(n * n - m * m))
    for n in range(nmax + 1):
        for m in range(1, n + 1):
            out[full_index(n, -m)] = np.conj(out[full_index(n, m)])
    return out


def half_to_full(half, p: int):
    """Expand a conjugate-symmetric coefficient vector to the dense layout."""
    full = np.zeros(num_full(p), dtype=np.complex128)
    for n in range(p):
        for m in range(0, n + 1):
            c = half[half_index(n, m)]
            full[full_index(n, m)] = c
            if m:
                full[full_index(n, -m)] = np.conj(c)
    return full


def a_coeff(n: int, m: int) -> float:
    """A_n^m = (-1)^n / sqrt((n-m)! (n+m)!), the translation normalizer."""
    return (-1.0) ** n / sqrt(factorial(n - m) * factorial(n + m))


def _ipow_sign(e: int) -> float:
    # i**e for the even exponents produced by the translation theorems
    assert e % 2 == 0
    return 1.0 if e % 4 == 0 else -1.0


def build_m2m_table(p: int):
    """M2M contraction table against R(child_center - parent_center).

    Returns (coef, ridx), both (num_half(p), num_full(p)): the half-layout
    parent coefficient (j, k) accumulates coef[a, b] * O_full[b] * R[ridx[a, b]]
    over all b; invalid (n, m) combinations carry coef 0.
    """
    kh, kf = num_half(p), num_full(p)
    coef = np.zeros((kh, kf))
    ridx = np.zeros((kh, kf), dtype=np.int32)
    for j in range(p):
        for k in range(0, j + 1):
            a = half_index(j, k)
            for n in range(0, j + 1):
                for m in range(-n, n + 1):
                    if abs(m - k) > j - n:
                        continue
                    b = full_index(n, m)
                    ph = _ipow_sign(abs(k) - abs(k - m) - abs(m))
                    coef[a, b] = ph * a_coeff(j - n, k - m) * a_coeff(n, m) / a_coeff(j, k)
                    ridx[a, b] = full_index(j - n, m - k)
    return coef, ridx


def build_m2l_table(p: int):
    """M2L contraction table against I(source_center - target_center).

    Same layout as build_m2m_table; the index table points into an irregular
    vector of degree 2p - 2 (length (2p-1)^2). Every (n, m) term is valid.
    """
    kh, kf = num_half(p), num_full(p)
    coef = np.zeros((kh, kf))
    iidx = np.zeros((kh, kf), dtype=np.int32)
    for j in range(p):
        for k in range(0, j + 1):
            a = half_index(j, k)
            for n in range(p):
                for m in range(-n, n + 1):
                    b = full_index(n, m)
                    ph = _ipow_sign(abs(m - k) - abs(k) - abs(m))
                    coef[a, b] = (
                        ph * (-1.0) ** n * a_coeff(n, m) * a_coeff(j, k)
                        / a_coeff(j + n, m - k)
                    )
                    iidx[a, b] = full_index(j + n, m - k)
    return coef, iidx


def build_l2l_table(p: int):
    """L2L contraction table against R(parent_center - child_center)."""
    kh, kf = num_half(p), num_full(p)
    coef = np.zeros((kh, kf))
    ridx = np.zeros((kh, kf), dtype=np.int32)
    for j in range(p):
        for k in range(0, j + 1):
            a = half_index(j, k)
            for n in range(j, p):
                for m in range(-n, n + 1):
                    if abs(m - k) > n - j:
                        continue
                    b = full_index(n, m)
                    ph = _ipow_sign(abs(m) - abs(m - k) - abs(k))
                    coef[a, b] = (
                        ph * (-1.0) ** (n + j) * a_coeff(n - j, m - k) * a_coeff(j, k)
                        / a_coeff(n, m)
                    )
                    ridx[a, b] = full_index(n - j, m - k)
    return coef, ridx


def fold_translation(coef, idx, basis):
    """Fold a harmonic vector into a contraction table: T[a,b] = coef * basis[idx]."""
    return coef * basis[idx]


def build_gradient_tables(p: int):
    """Ladder tables for the analytic gradient of a local expansion.

    For phi = Re sum L_n^m R_n^m the three derivative sums reuse R one degree
    lower:
        d/dz:             gz_c[b]  * R[gz_i[b]]
        d/dx + i d/dy:    gp_c[b]  * R[gp_i[b]]
    indexed by the dense slot b of L_n^m; entries with zero coefficient are
    inert. Signs follow from the Condon-Shortley phase.
    """
    kf = num_full(p)
    gz_c = np.zeros(kf)
    gz_i = np.zeros(kf, dtype=np.int32)
    gp_c = np.zeros(kf)
    gp_i = np.zeros(kf, dtype=np.int32)
    for n in range(1, p):
        for m in range(-n, n + 1):
            b = full_index(n, m)
            if abs(m) <= n - 1:
                gz_c[b] = sqrt(n * n - m * m)
                gz_i[b] = full_index(n - 1, m)
            if abs(m + 1) <= n - 1:
                s = 1.0 if m >= 0 else -1.0
                gp_c[b] = s * sqrt((n - m) * (n - m - 1))
                gp_i[b] = full_index(n - 1, m + 1)
    return gz_c, gz_i, gp_c, gp_i
