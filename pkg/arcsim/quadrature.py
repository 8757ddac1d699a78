"""Adaptive Simpson quadrature for smooth scalar integrands."""
from typing import Callable, Tuple, Sequence

import numpy as np


def _simpson(fa: float, fm: float, fb: float, h: float) -> float:
    return h / 3.0 * (fa + 4.0 * fm + fb)


def integrate_adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                               tol: float = 1e-10, max_depth: int = 50) -> Tuple[float, float]:
    """Integral of f over [a, b] and an error estimate.

    Recursive subdivision until the Richardson error estimate of each
    piece falls below its share of `tol`.

    >>> value, _ = integrate_adaptive_simpson(lambda s: s * s, 0.0, 3.0)
    >>> round(value, 12)
    9.0
    """
    if a == b:
        return 0.0, 0.0
    if a > b:
        value, error = integrate_adaptive_simpson(f, b, a, tol, max_depth)
        return -value, error

    def adaptive(a, b, fa, fm, fb, whole, depth, tol):
        m = (a + b) / 2.0
        h = (b - a) / 2.0
        flm = f((a + m) / 2.0)
        frm = f((m + b) / 2.0)
        left = _simpson(fa, flm, fm, h / 2.0)
        right = _simpson(fm, frm, fb, h / 2.0)
        error = (left + right - whole) / 15.0

        if depth >= max_depth or abs(error) < tol:
            return left + right + error, abs(error)

        left_value, left_error = adaptive(a, m, fa, flm, fm, left, depth + 1, tol / 2.0)
        right_value, right_error = adaptive(m, b, fm, frm, fb, right, depth + 1, tol / 2.0)
        return left_value + right_value, left_error + right_error

    fa, fb = f(a), f(b)
    fm = f((a + b) / 2.0)
    return adaptive(a, b, fa, fm, fb, _simpson(fa, fm, fb, (b - a) / 2.0), 0, tol)


def cumulative_adaptive_simpson(f: Callable[[float], float], nodes: Sequence[float],
                                tol: float = 1e-10) -> np.ndarray:
    """Integral of f from nodes[0] to every node.

    The tolerance is shared evenly between the panels so the final value
    carries (roughly) the requested absolute accuracy.

    >>> cumulative_adaptive_simpson(lambda s: 1.0, [0.0, 0.5, 2.0]).tolist()
    [0.0, 0.5, 2.0]
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or np.any(np.diff(nodes) < 0):
        raise ValueError("nodes must be a non-decreasing one dimensional sequence")
    panel_tol = tol / max(1, len(nodes) - 1)
    values = np.zeros(len(nodes))
    total = 0.0
    for i in range(1, len(nodes)):
        piece, _ = integrate_adaptive_simpson(f, nodes[i - 1], nodes[i], panel_tol)
        total += piece
        values[i] = total
    return values
