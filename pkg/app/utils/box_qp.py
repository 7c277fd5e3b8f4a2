import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class BoxQpResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def quadratic_value(hess_apply: Callable[[np.ndarray], np.ndarray], linear: np.ndarray, x: np.ndarray) -> float:
    return 0.5 * _inner(x, hess_apply(x)) - _inner(linear, x)


def solve_box_qp(
    hess_apply: Callable[[np.ndarray], np.ndarray],
    linear: np.ndarray,
    radius: float,
    lipschitz: float,
    x0: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 100000,
) -> BoxQpResult:
    """
    Minimize 1/2 <x, Hx> - <linear, x> over the cube ||x||_inf <= radius.

    Accelerated projected gradient with adaptive (gradient-based) restarts.
    H must be symmetric PSD; arrays may have any shape.

    Args:
        hess_apply: x -> Hx
        linear: linear term, same shape as x
        radius: half-width of the cube
        lipschitz: an upper bound on lambda_max(H)
        x0: starting point, clipped into the cube
        tol: stop when the gradient mapping sup-norm is below tol * max(1, ||linear||_inf)

    Returns:
        BoxQpResult; x is never worse than the clipped start
    """
    start = np.clip(np.asarray(x0, dtype=float), -radius, radius)
    start_value = quadratic_value(hess_apply, linear, start)
    if lipschitz <= 0:
        # Linear objective: minimized at a vertex
        x = radius * np.sign(linear)
        value = quadratic_value(hess_apply, linear, x)
        if value > start_value:
            return BoxQpResult(start, start_value, 0, True)
        return BoxQpResult(x, value, 0, True)

    step = 1.0 / lipschitz
    scale = max(1.0, float(np.max(np.abs(linear))) if linear.size else 1.0)
    x = start.copy()
    y = start.copy()
    momentum = 1.0
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        gradient = hess_apply(y) - linear
        x_next = np.clip(y - step * gradient, -radius, radius)
        if lipschitz * float(np.max(np.abs(x_next - y))) <= tol * scale:
            x = x_next
            converged = True
            break
        if _inner(y - x_next, x_next - x) > 0:
            momentum = 1.0
            y = x_next
        else:
            momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
            y = x_next + ((momentum - 1.0) / momentum_next) * (x_next - x)
            momentum = momentum_next
        x = x_next

    value = quadratic_value(hess_apply, linear, x)
    if not converged:
        logger.warning(f"Box QP stopped at the iteration cap ({max_iter}) without reaching tol {tol:.1e}")
    else:
        logger.debug(f"Box QP converged in {iteration} iterations")
    if value > start_value:
        return BoxQpResult(start, start_value, iteration, converged)
    return BoxQpResult(x, value, iteration, converged)
