"""Small dense linear-algebra kernels.

Everything here targets matrices of dimension at most a dozen or so: the
closed-loop matrices, Lyapunov solutions and Riccati gains used by the rest
of the package.  Functions are pure and accept anything ``np.asarray`` can
turn into a square float array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "LinalgError",
    "NotHurwitzError",
    "Spectrum",
    "eigenvalues",
    "is_hurwitz",
    "matrix_exp",
    "solve_lyapunov",
    "riccati_oracle",
    "riccati_residual",
    "KleinmanResult",
]


class LinalgError(RuntimeError):
    pass


class NotHurwitzError(LinalgError):
    """Raised when a routine needs a Hurwitz matrix and did not get one."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    max_real_part: float

    def __len__(self):
        return len(self.eigenvalues)


def as_square(m, name="matrix"):
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def eigenvalues(m, tol=1e-10) -> Spectrum:
    """Eigenvalues of a small dense matrix.

    Backed by LAPACK's Hessenberg/QR iteration.  Each returned eigenvalue is
    checked by the smallest singular value of ``m - lam*I``, which must be
    below ``tol * max(1, ||m||)`` (a square-root tolerance is used for
    eigenvalues that LAPACK reports as numerically repeated, where the
    perturbation theory only guarantees that accuracy).
    """
    a = as_square(m)
    try:
        lam = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise LinalgError(f"QR iteration did not converge for {a.shape[0]}x{a.shape[0]} matrix: {exc}") from exc
    scale = max(1.0, np.linalg.norm(a, 2))
    eye = np.eye(a.shape[0])
    for k, lk in enumerate(lam):
        resid = np.linalg.svd(a - lk * eye, compute_uv=False)[-1]
        clustered = np.sum(np.abs(lam - lk) < 1e-6 * scale) > 1
        bound = (np.sqrt(tol) if clustered else tol) * scale
        if resid > bound:
            raise LinalgError(f"eigenvalue {lk} failed residual check ({resid:.3e} > {bound:.3e})")
    # exact conjugate pairing for real input
    lam = np.where(np.abs(lam.imag) <= 1e-14 * scale, lam.real + 0j, lam)
    return Spectrum(eigenvalues=lam, max_real_part=float(np.max(lam.real)))


def is_hurwitz(m, margin=0.0):
    """Return ``(max Re(lambda) < -margin, spectrum)``.

    ``margin=0`` is the usual Hurwitz test; ``margin=1`` asks whether
    ``I + m`` is Hurwitz.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    spec = eigenvalues(m)
    return spec.max_real_part < -margin, spec


def matrix_exp(m):
    """Matrix exponential (scaling and squaring with Pade approximants)."""
    return scipy.linalg.expm(as_square(m))


def solve_lyapunov(a, q, initial=None):
    r"""Solve :math:`A^T P + P A + Q = 0` for symmetric ``P``.

    The equation is vectorised with Kronecker products and solved directly;
    with ``d <= 12`` that is at most a 144x144 system.  If ``initial`` is
    given the solve is done for the correction ``P - initial``, which gives
    the same answer and is there so callers can refine a warm start.

    Raises
    ------
    NotHurwitzError
        If ``a`` has an eigenvalue with non-negative real part.
    """
    a = as_square(a, "a")
    q = as_square(q, "q")
    if q.shape != a.shape:
        raise ValueError(f"q has shape {q.shape}, expected {a.shape}")
    if not np.allclose(q, q.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(q).max())):
        raise ValueError("q must be symmetric")
    spec = eigenvalues(a)
    if spec.max_real_part >= 0:
        worst = spec.eigenvalues[np.argmax(spec.eigenvalues.real)]
        raise NotHurwitzError(f"a is not Hurwitz: eigenvalue {worst} has real part >= 0", eigenvalue=worst)

    n = a.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, a.T) + np.kron(a.T, eye)
    p0 = np.zeros_like(q) if initial is None else as_square(initial, "initial")
    rhs = -(a.T @ p0 + p0 @ a + q)
    delta = np.linalg.solve(lhs, rhs.reshape(-1, order="F")).reshape(n, n, order="F")
    p = p0 + delta
    return 0.5 * (p + p.T)


def riccati_residual(a, b, m, r, p):
    """Frobenius norm of ``A'P + PA - P B R^-1 B' P + M``."""
    a, m, p = (np.asarray(x, dtype=float) for x in (a, m, p))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    res = a.T @ p + p @ a - p @ b @ np.linalg.solve(r, b.T @ p) + m
    return float(np.linalg.norm(res))


@dataclass(frozen=True)
class KleinmanResult:
    p: np.ndarray
    k: np.ndarray
    iterations: int
    history: tuple  # ((P_n, K_n), ...) including the initial gain


def riccati_oracle(a, b, m, r, k0, tol=1e-10, max_iter=100, residual_tol=1e-8) -> KleinmanResult:
    """Kleinman's Newton iteration for the continuous-time algebraic Riccati
    equation, under the ``u = K x`` sign convention.

    Starting from a stabilizing ``k0`` it alternates a Lyapunov solve for
    the closed loop ``A + B K`` with the update ``K <- -R^-1 B' P`` until the
    gain stops moving.
    """
    a = as_square(a, "a")
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] != a.shape[0]:
        b = b.T
    m = as_square(m, "m")
    r = as_square(r, "r")
    k = np.atleast_2d(np.asarray(k0, dtype=float))

    history = []
    for it in range(1, max_iter + 1):
        acl = a + b @ k
        try:
            p = solve_lyapunov(acl, m + k.T @ r @ k)
        except NotHurwitzError as exc:
            raise LinalgError(f"Kleinman iteration {it}: gain is not stabilizing ({exc})") from exc
        history.append((p, k))
        k_next = -np.linalg.solve(r, b.T @ p)
        step = np.linalg.norm(k_next - k)
        k = k_next
        if step <= tol:
            break
    else:
        raise LinalgError(f"Kleinman iteration did not converge in {max_iter} iterations")

    p = solve_lyapunov(a + b @ k, m + k.T @ r @ k)
    res = riccati_residual(a, b, m, r, p)
    if res > residual_tol * max(1.0, np.linalg.norm(p)):
        raise LinalgError(f"Riccati residual {res:.3e} above tolerance after {it} iterations")
    history.append((p, k))
    return KleinmanResult(p=p, k=k, iterations=it, history=tuple(history))
