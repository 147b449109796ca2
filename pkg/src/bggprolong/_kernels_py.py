"""Pure numpy RK4 propagation, used when the compiled kernel is unavailable."""

import numpy as np


def propagate(A, h, Y0):
    """Integrate ``dY/dt = -A(t) Y`` with classical RK4.

    ``A[b, j]`` holds the coefficient matrix at ``t0 + j h / 2``; ray ``b`` takes
    ``(A.shape[1] - 1) // 2`` steps.  Returns the final ``Y`` for every ray.
    """
    A = np.asarray(A, dtype=float)
    Y = np.array(Y0, dtype=float, copy=True)
    B, S, d, _ = A.shape
    if Y.shape[:2] != (B, d):
        raise ValueError("shape mismatch between coefficient matrices and initial values")
    for s in range((S - 1) // 2):
        A0, Ah, A1 = A[:, 2 * s], A[:, 2 * s + 1], A[:, 2 * s + 2]
        k1 = -A0 @ Y
        k2 = -Ah @ (Y + 0.5 * h * k1)
        k3 = -Ah @ (Y + 0.5 * h * k2)
        k4 = -A1 @ (Y + h * k3)
        Y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Y
