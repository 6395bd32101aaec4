"""Independent reference values built without the package's quadrature."""

import numpy as np


def simpson(f, a, b, n):
    """Composite Simpson's rule with ``n`` (even) panels."""
    if n % 2:
        n += 1
    x = np.linspace(a, b, n + 1)
    y = f(x)
    h = (b - a) / n
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def joint_line_integral_simpson(coeffs, positions, alpha, panels=4_000_000, far=1e6):
    """Brute-force integral of 1 - prod_i 1/(1 + c_i |x - x_i|^-alpha) over the line.

    A uniform grid covers the receivers; beyond it the tails are integrated in
    ``t = log|x - centre|`` out to ``far``, and the leading tail term past
    ``far`` is added analytically.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    positions = np.asarray(positions, dtype=float)

    def g(x):
        x = np.asarray(x, dtype=float)
        d = np.abs(x[:, None] - positions[None, :])
        with np.errstate(divide="ignore"):
            keep = d ** alpha / (d ** alpha + coeffs)
        return 1.0 - keep.prod(axis=1)

    lo, hi = positions.min() - 50.0, positions.max() + 50.0
    total = simpson(g, lo, hi, panels)
    for edge, sign in ((hi, 1.0), (lo, -1.0)):
        # x = edge + sign * (exp(t) - 1), t in [0, log(far)]
        def tail(t):
            return g(edge + sign * np.expm1(t)) * np.exp(t)
        total += simpson(tail, 0.0, np.log(far), panels // 8)
    total += 2.0 * coeffs.sum() * far ** (1.0 - alpha) / (alpha - 1.0)
    return total


def blomqvist_m2(C):
    """Two-link Blomqvist beta from C(1/2, 1/2) at exact medians."""
    return 4.0 * C - 1.0
