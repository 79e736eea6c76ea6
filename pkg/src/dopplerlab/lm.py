"""Small dense Levenberg-Marquardt solver.

Damping follows Marquardt scaling (mu times the diagonal of J^T J). After an
accepted step the damping is greedily lowered while that keeps improving the
cost on the same linearization, so near-quadratic problems converge in one or
two iterations. Accepted steps are strictly monotone in cost.
"""
from dataclasses import dataclass

import numpy as np

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
STALLED = "stalled"


@dataclass
class LmOptions:
    max_iter: int = 200
    gtol: float = 1e-10
    xtol: float = 1e-12
    mu0: float = 1e-3
    mu_up: float = 10.0
    mu_down: float = 10.0
    mu_min: float = 1e-14
    mu_max: float = 1e12


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    iterations: int
    status: str


def finite_difference_jacobian(residual_fn, x, h=None):
    """Central-difference Jacobian, step scaled by the parameter magnitude.

    h defaults to 1e-6 * max(1, |x_i|) per column so large parameters keep
    relative probe precision.
    """
    x = np.asarray(x, float)
    steps = np.full(x.shape, h) if h is not None \
        else 1e-6 * np.maximum(1.0, np.abs(x))
    cols = []
    for i, hi in enumerate(steps):
        xp = x.copy()
        xm = x.copy()
        xp[i] += hi
        xm[i] -= hi
        rp = np.asarray(residual_fn(xp), float)
        rm = np.asarray(residual_fn(xm), float)
        if not (np.isfinite(rp).all() and np.isfinite(rm).all()):
            raise ValueError(f"non-finite residual probing parameter {i}")
        cols.append((rp - rm) / (2.0 * hi))
    return np.stack(cols, axis=-1)


def _cost_drop(r_old, r_new):
    """Cost change 0.5*(||r_new||^2 - ||r_old||^2) with a sign that stays
    accurate near a minimum.

    Differencing the squared norms directly loses the sign once the change
    falls below eps * cost; the sum-times-difference form keeps it, so tiny
    correct steps are still accepted instead of stalling short of the
    solution.
    """
    return 0.5 * float((r_new - r_old) @ (r_new + r_old))


def lm_solve(residual_fn, jacobian_fn, x0, options=None):
    """Minimize 0.5 ||r(x)||^2.

    residual_fn(x) -> (m,), jacobian_fn(x) -> (m, p) with d r / d x, or None
    to fall back to finite differences.
    """
    opt = options or LmOptions()
    if jacobian_fn is None:
        jacobian_fn = lambda p: finite_difference_jacobian(residual_fn, p)
    x = np.asarray(x0, float).copy()
    r = residual_fn(x)
    cost = 0.5 * float(r @ r)
    if not np.isfinite(cost):
        raise ValueError("residual is not finite at the starting point")
    mu = opt.mu0
    it = 0
    status = MAX_ITERATIONS
    while it < opt.max_iter:
        it += 1
        J = jacobian_fn(x)
        g = J.T @ r
        if np.max(np.abs(g)) < opt.gtol:
            status = CONVERGED
            it -= 1
            break
        A = J.T @ J
        dA = np.diag(A).copy()
        dA[dA < 1e-12] = 1e-12
        stepped = False
        inner = 0
        while inner < 50:
            inner += 1
            try:
                delta = np.linalg.solve(A + mu * np.diag(dA), -g)
            except np.linalg.LinAlgError:
                mu *= opt.mu_up
                continue
            xn = x + delta
            rn = residual_fn(xn)
            drop = _cost_drop(r, rn)
            if np.isfinite(drop) and drop < 0.0:
                while mu > opt.mu_min:
                    mu2 = mu / opt.mu_down
                    d2 = np.linalg.solve(A + mu2 * np.diag(dA), -g)
                    x2 = x + d2
                    r2 = residual_fn(x2)
                    if _cost_drop(rn, r2) < 0.0:
                        mu, delta, xn, rn = mu2, d2, x2, r2
                    else:
                        break
                x, r = xn, rn
                cost = 0.5 * float(r @ r)
                mu = max(mu / opt.mu_down, opt.mu_min)
                stepped = True
                if np.max(np.abs(delta)) < opt.xtol:
                    status = CONVERGED
                break
            if np.isfinite(drop) and np.max(np.abs(delta)) < opt.xtol:
                # No descent left within step tolerance of the current point;
                # a finite plateau is convergence, not a stall.
                status = CONVERGED
                break
            mu *= opt.mu_up
            if mu > opt.mu_max:
                break
        if not stepped:
            if status != CONVERGED:
                status = STALLED
            break
        if status == CONVERGED:
            break
    return LmResult(x=x, cost=cost, iterations=it, status=status)
