"""
Linear-algebra helpers for the covariance and simplex reparametrizations.

``vec`` stacks columns (column-major), so ``vec(A @ B @ C) = (C.T kron A) vec(B)``.
"""
import numpy as np
from scipy.special import logsumexp


def vec(A):
    return np.asarray(A).reshape(-1, order="F")


def unvec(v, n_rows):
    return np.asarray(v).reshape(n_rows, -1, order="F")


def commutation_matrix(D):
    """Dense ``K_D`` with ``K_D vec(A) = vec(A.T)`` for ``D x D`` matrices."""
    K = np.zeros((D * D, D * D))
    for i in range(D):
        for j in range(D):
            # vec(A)[i + j*D] = A[i, j] ends up at vec(A.T)[j + i*D]
            K[j + i * D, i + j * D] = 1.0
    return K


def tril_size(D):
    return D * (D + 1) // 2


def tril_to_vector(H):
    """Lower-triangular entries of ``H`` in row-major order."""
    return np.asarray(H)[np.tril_indices(H.shape[0])]


def vector_to_tril(h, D):
    H = np.zeros((D, D))
    H[np.tril_indices(D)] = h
    return H


def h_to_cholesky(H):
    """Cholesky factor from an H-matrix: strictly-lower part kept, diagonal exponentiated."""
    L = np.tril(H, k=-1)
    L[np.diag_indices_from(L)] = np.exp(np.diag(H))
    return L


def cholesky_to_h(L):
    H = np.tril(L, k=-1)
    H[np.diag_indices_from(H)] = np.log(np.diag(L))
    return H


def h_to_covariance(H):
    L = h_to_cholesky(H)
    return L @ L.T


def covariance_to_h(Sigma):
    return cholesky_to_h(np.linalg.cholesky(Sigma))


def h_log_jacobian(H):
    """
    Log-Jacobian of ``H -> Sigma`` on the lower-triangular coordinates:
    ``D log 2 + sum_d (D - d + 2) H_dd`` with ``d`` counted from 1.
    """
    D = H.shape[0]
    return D * np.log(2.0) + np.sum((D - np.arange(1, D + 1) + 2) * np.diag(H))


def h_log_jacobian_gradient(D):
    """Gradient of :func:`h_log_jacobian` restricted to the diagonal of ``H``."""
    return (D - np.arange(1, D + 1) + 2).astype(float)


def exp_diagonal_jacobian(H):
    """``J1``: diagonal Jacobian of ``vec(H) -> vec(L)`` (ones off the diagonal, ``exp(H_dd)`` on it)."""
    D = H.shape[0]
    scale = np.ones((D, D))
    scale[np.diag_indices(D)] = np.exp(np.diag(H))
    return np.diag(vec(scale))


def cholesky_product_jacobian(L):
    """``J2 = d vec(L L^T) / d vec(L) = (I + K_D)(L kron I_D)``."""
    D = L.shape[0]
    eye = np.eye(D)
    return (np.eye(D * D) + commutation_matrix(D)) @ np.kron(L, eye)


def covariance_gradient_to_h(G, H):
    """
    Maps ``grad_Sigma f`` (a ``D x D`` matrix) to the gradient of ``f(Sigma(H))`` over the
    lower-triangular entries of ``H`` (row-major order, see :func:`tril_to_vector`).
    """
    D = H.shape[0]
    L = h_to_cholesky(H)
    full = exp_diagonal_jacobian(H).T @ cholesky_product_jacobian(L).T @ vec(G)
    return tril_to_vector(unvec(full, D))


def simplex_from_free(v):
    """Additive log-ratio inverse: ``w = softmax([v, 0])``."""
    z = np.append(v, 0.0)
    return np.exp(z - logsumexp(z))


def free_from_simplex(w):
    w = np.asarray(w, dtype=float)
    return np.log(w[:-1]) - np.log(w[-1])


def simplex_log_jacobian(w):
    """Log-Jacobian of ``v -> w`` for the additive log-ratio map, ``sum_k log w_k``."""
    return float(np.sum(np.log(w)))
