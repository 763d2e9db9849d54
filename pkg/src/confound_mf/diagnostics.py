"""Subspace distances and matrix conditioning diagnostics."""

import numpy as np
from scipy import linalg


def orthonormalize(a, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ``col(a)`` via QR with column pivoting.

    Columns whose pivoted diagonal falls below ``tol * |R_00|`` are dropped,
    so rank-deficient inputs yield a narrower basis.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], 0))
    q, r, _ = linalg.qr(a, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0:
        return np.zeros((a.shape[0], 0))
    keep = int(np.count_nonzero(d > tol * d[0]))
    return q[:, :keep]


def _check_pair(m, m_hat):
    m = np.asarray(m, dtype=float)
    m_hat = np.asarray(m_hat, dtype=float)
    m = m[:, None] if m.ndim == 1 else m
    m_hat = m_hat[:, None] if m_hat.ndim == 1 else m_hat
    if m.shape[0] != m_hat.shape[0]:
        raise ValueError("bases must have the same number of rows")
    return m, m_hat


def principal_angle(m, m_hat) -> float:
    """Largest principal angle sine, ``sqrt(1 - sigma_{r^k}(m_hat' m)^2)``.

    Both inputs must have orthonormal columns. Returns a value in ``[0, 1]``;
    0 for equal column spaces and 1 for orthogonal ones.
    """
    m, m_hat = _check_pair(m, m_hat)
    if min(m.shape[1], m_hat.shape[1]) == 0:
        return 1.0
    # sine computed directly as ||(I - B B')A|| with A the narrower basis,
    # which stays accurate for nearly equal spaces
    a, b = (m, m_hat) if m.shape[1] <= m_hat.shape[1] else (m_hat, m)
    resid = a - b @ (b.T @ a)
    return float(min(np.linalg.norm(resid, 2), 1.0))


def projection_distance(m, m_hat) -> float:
    """Spectral norm of the difference of the two orthogonal projectors."""
    m, m_hat = _check_pair(m, m_hat)
    return float(np.linalg.norm(m_hat @ m_hat.T - m @ m.T, 2))


def spikiness_ratio(phi) -> float:
    """``max|phi_ij| * sqrt(N p) / ||phi||_F``, between 1 and ``sqrt(N p)``."""
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    fro = np.linalg.norm(phi)
    if fro == 0:
        raise ValueError("spikiness ratio is undefined for the zero matrix")
    return float(np.abs(phi).max() * np.sqrt(phi.size) / fro)


def residual_treatment_energy(t, u_basis) -> float:
    """``(1/N) t' (I - P_U) t`` for an orthonormal basis ``u_basis``.

    An ``N x 0`` basis gives the mean of ``t**2``.
    """
    t = np.asarray(t, dtype=float).ravel()
    u = np.asarray(u_basis, dtype=float)
    u = u[:, None] if u.ndim == 1 else u
    if u.shape[0] != t.size:
        raise ValueError("treatment and basis lengths differ")
    proj = u.T @ t
    val = (t @ t - proj @ proj) / t.size
    return float(min(max(val, 0.0), (t @ t) / t.size))
