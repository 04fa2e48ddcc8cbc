"""Deterministic nonlinear least squares and GMM minimization.

A single damped Gauss-Newton (Levenberg-Marquardt) engine drives both
problem types: a GMM problem with weight matrix ``W`` is whitened into the
residual ``h = W^{1/2} g`` so that ``h'h`` equals the GMM criterion
``g'Wg`` exactly.  The implementation is pure numpy and contains no hidden
randomness; given the same inputs it produces the same iterates on every
run.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NlsProblem",
    "GmmProblem",
    "OptimResult",
    "minimize_nls",
    "minimize_gmm",
    "finite_diff_jacobian",
    "check_gradient",
    "jittered_starts",
]

#: default iteration controls for the Levenberg-Marquardt loop
GRAD_TOL = 1e-8
STEP_TOL = 1e-12
MAX_ITER = 500


@dataclasses.dataclass
class NlsProblem:
    """Residual-based least squares: minimize ``sum(residual(x)**2)``.

    ``jacobian`` may be None, in which case central finite differences are
    used.  ``bounds`` is an optional (lower, upper) pair of arrays; the
    iterates are kept inside the box by clipping trial steps.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    bounds: tuple[np.ndarray, np.ndarray] | None = None


@dataclasses.dataclass
class GmmProblem:
    """Quadratic-form criterion ``g(x)' W g(x)`` over averaged moments ``g``.

    ``moments`` returns the sample-averaged moment vector, ``jacobian`` its
    derivative with respect to the parameters (optional), and ``weight`` the
    symmetric positive semidefinite weighting matrix.
    """

    moments: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    weight: np.ndarray | None = None
    bounds: tuple[np.ndarray, np.ndarray] | None = None


@dataclasses.dataclass
class OptimResult:
    params: np.ndarray
    objective: float
    grad_norm: float
    n_iter: int
    converged: bool
    status: str
    start_index: int = 0


def finite_diff_jacobian(fun: Callable[[np.ndarray], np.ndarray], x, *, step: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued function.

    The per-coordinate step is ``step`` if given, otherwise
    ``1e-6 * max(1, |x_j|)``.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = step if step is not None else 1e-6 * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.atleast_1d(np.asarray(fun(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(xm), dtype=float))
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac


def check_gradient(fun, jac, x) -> float:
    """Worst relative discrepancy between analytic and numeric Jacobians.

    Returns ``max |analytic - numeric| / max(1, |analytic|, |numeric|)``
    over all entries.
    """
    x = np.asarray(x, dtype=float)
    analytic = np.atleast_2d(np.asarray(jac(x), dtype=float))
    numeric = np.atleast_2d(finite_diff_jacobian(fun, x))
    if analytic.shape != numeric.shape:
        raise ValueError(f"jacobian shape {analytic.shape} != finite-difference shape {numeric.shape}")
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def jittered_starts(x0, n: int = 5, *, scale: float = 0.25, seed: int = 20240901) -> list[np.ndarray]:
    """Deterministic jittered copies of a starting point.

    Multiplicative jitter ``x0 * (1 + scale*u) + scale*u*1{x0==0}`` with
    ``u ~ U(-1, 1)`` from a fixed-seed generator, so repeated calls yield
    identical start lists.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence((seed, x0.size, n)))
    starts = [x0]
    for _ in range(max(0, n - 1)):
        u = rng.uniform(-1.0, 1.0, x0.size)
        starts.append(x0 * (1.0 + scale * u) + scale * u * (x0 == 0.0))
    return starts


def _clip(x: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return x
    lo, hi = bounds
    return np.minimum(np.maximum(x, lo), hi)


def _lm_single(problem: NlsProblem, x0, *, grad_tol, step_tol, max_iter) -> OptimResult:
    resid = problem.residual
    jacfun = problem.jacobian or (lambda x: finite_diff_jacobian(resid, x))
    x = _clip(np.asarray(x0, dtype=float).copy(), problem.bounds)

    r = np.atleast_1d(np.asarray(resid(x), dtype=float))
    if not np.all(np.isfinite(r)):
        return OptimResult(x, np.inf, np.inf, 0, False, "infeasible start")
    obj = float(r @ r)
    lam = 1e-3
    grad_norm = np.inf
    status = "max iterations reached"
    converged = False

    for it in range(1, max_iter + 1):
        jac = np.atleast_2d(np.asarray(jacfun(x), dtype=float))
        grad = jac.T @ r
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < grad_tol:
            converged, status = True, "gradient tolerance reached"
            return OptimResult(x, obj, grad_norm, it - 1, converged, status)

        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        while lam <= 1e12:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = _clip(x + step, problem.bounds)
            actual_step = x_new - x
            if np.linalg.norm(actual_step) <= step_tol * (step_tol + np.linalg.norm(x)):
                return OptimResult(x, obj, grad_norm, it, True, "step tolerance reached")
            r_new = np.atleast_1d(np.asarray(resid(x_new), dtype=float))
            if np.all(np.isfinite(r_new)) and float(r_new @ r_new) < obj:
                x, r, obj = x_new, r_new, float(r_new @ r_new)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction within damping budget: flat or at a kink
            return OptimResult(x, obj, grad_norm, it, True, "no further decrease possible")
    return OptimResult(x, obj, grad_norm, max_iter, converged, status)


def minimize_nls(
    problem: NlsProblem,
    x0,
    *,
    starts: Sequence[np.ndarray] | None = None,
    grad_tol: float = GRAD_TOL,
    step_tol: float = STEP_TOL,
    max_iter: int = MAX_ITER,
) -> OptimResult:
    """Levenberg-Marquardt minimization of ``sum(residual**2)``.

    When ``starts`` is given, the solver runs from ``x0`` and from every
    extra start and returns the result with the lowest objective (earliest
    start wins ties).  Starts where the residual is not finite are skipped.
    """
    all_starts = [np.asarray(x0, dtype=float)]
    if starts is not None:
        all_starts += [np.asarray(s, dtype=float) for s in starts]
    best: OptimResult | None = None
    for idx, start in enumerate(all_starts):
        res = _lm_single(problem, start, grad_tol=grad_tol, step_tol=step_tol, max_iter=max_iter)
        res.start_index = idx
        if best is None or res.objective < best.objective:
            best = res
    assert best is not None
    return best


def _psd_sqrt(weight: np.ndarray) -> np.ndarray:
    w = np.asarray(weight, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("weight matrix must be square")
    if not np.allclose(w, w.T, atol=1e-10):
        raise ValueError("weight matrix must be symmetric")
    vals, vecs = np.linalg.eigh(w)
    if np.any(vals < -1e-10 * max(1.0, float(np.max(np.abs(vals))))):
        raise ValueError("weight matrix must be positive semidefinite")
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def minimize_gmm(
    problem: GmmProblem,
    x0,
    *,
    starts: Sequence[np.ndarray] | None = None,
    grad_tol: float = GRAD_TOL,
    step_tol: float = STEP_TOL,
    max_iter: int = MAX_ITER,
) -> OptimResult:
    """Minimize the GMM criterion ``g(x)' W g(x)``.

    The problem is whitened with the symmetric square root of ``W`` and
    handed to :func:`minimize_nls`, so the reported objective equals the
    GMM criterion exactly.  ``weight=None`` means the identity.
    """
    g0 = np.atleast_1d(np.asarray(problem.moments(np.asarray(x0, dtype=float)), dtype=float))
    weight = problem.weight if problem.weight is not None else np.eye(g0.size)
    half = _psd_sqrt(weight)

    def residual(x):
        return half @ np.atleast_1d(np.asarray(problem.moments(x), dtype=float))

    jacobian = None
    if problem.jacobian is not None:
        jacobian = lambda x: half @ np.atleast_2d(np.asarray(problem.jacobian(x), dtype=float))

    nls = NlsProblem(residual=residual, jacobian=jacobian, bounds=problem.bounds)
    return minimize_nls(nls, x0, starts=starts, grad_tol=grad_tol, step_tol=step_tol, max_iter=max_iter)
