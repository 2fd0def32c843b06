"""Small dense BFGS minimiser with a backtracking (Armijo) line search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerError


@dataclass
class BFGSResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    history: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


def bfgs(fun, grad, x0, gtol: float = 1e-8, max_iter: int = 200,
         c1: float = 1e-4, min_step: float = 1e-16) -> BFGSResult:
    """Minimise ``fun`` from ``x0`` using its analytic gradient ``grad``.

    The inverse-Hessian approximation starts as the identity, is rescaled by
    ``s.y / y.y`` after the first accepted step, and is updated only when the
    curvature condition ``s.y > 0`` holds. Accepted steps satisfy the Armijo
    condition; when the predicted decrease is below floating-point resolution
    of ``fun`` a unit step is accepted if it reduces the gradient norm instead.

    Raises :class:`OptimizerError` (carrying the last iterate) if the gradient
    norm does not fall below ``gtol`` within ``max_iter`` iterations.
    """
    x = np.array(x0, dtype=float)
    f = float(fun(x))
    g = np.asarray(grad(x), dtype=float)
    n = x.size
    H = np.eye(n)
    history = [f]
    for k in range(max_iter + 1):
        if np.linalg.norm(g) < gtol:
            return BFGSResult(x, f, g, k, history)
        if k == max_iter:
            break
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(n)
            p = -g
            slope = float(g @ p)

        resolution = 64 * np.finfo(float).eps * max(1.0, abs(f))
        t = 1.0
        accepted = False
        while t >= min_step:
            x_new = x + t * p
            f_new = float(fun(x_new))
            if f_new <= f + c1 * t * slope:
                accepted = True
                break
            if t == 1.0 and -slope < resolution:
                g_try = np.asarray(grad(x_new), dtype=float)
                if np.linalg.norm(g_try) < np.linalg.norm(g):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            raise OptimizerError(
                f"optimizer failed: line search stalled at |grad|={np.linalg.norm(g):.3e}",
                last_iterate=x,
            )

        g_new = np.asarray(grad(x_new), dtype=float)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-300:
            if k == 0:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        history.append(f)
    raise OptimizerError(
        f"optimizer failed: no convergence in {max_iter} iterations "
        f"(|grad|={np.linalg.norm(g):.3e})",
        last_iterate=x,
    )
