"""Dense matrix helpers shared by the differentiable modules and the metrics.

Matrices are plain 2-D ``float64`` numpy arrays. The helpers here add the
shape/finiteness checks and the error types the rest of the package relies on.
"""
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg


class ShapeError(ValueError):
    pass


class DegenerateCorrelation(ValueError):
    """Pearson correlation is undefined (constant input or too few samples)."""


class FitError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_mat(values, name="matrix"):
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return m


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m):
    """Row-wise softmax with max subtraction; rows land on the simplex."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(p, grad_p):
    """Vector-Jacobian product of :func:`softmax_rows` given its output ``p``."""
    return p * (grad_p - (grad_p * p).sum(axis=-1, keepdims=True))


def pearson(x, y):
    """Pearson correlation coefficient of two equal-length sequences.

    Raises
    ------
    DegenerateCorrelation
        If fewer than two samples are given or either input is constant.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise DegenerateCorrelation("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    # relative test so that float noise around a constant does not count as variance
    if sxx <= (1e-14 * max(1.0, np.abs(x).max())) ** 2 * x.size:
        raise DegenerateCorrelation("first input has zero variance")
    if syy <= (1e-14 * max(1.0, np.abs(y).max())) ** 2 * y.size:
        raise DegenerateCorrelation("second input has zero variance")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def legendre_fit(x, y, degree=3):
    """Least-squares coefficients of P_0..P_degree for samples on [-1, 1]."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    if np.unique(x).size < degree + 1:
        raise FitError(
            f"need at least {degree + 1} distinct abscissae, got {np.unique(x).size}"
        )
    design = npleg.legvander(x, degree)
    coeffs, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < degree + 1:
        raise FitError("rank-deficient Legendre design matrix")
    return coeffs


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter_errors: np.ndarray = field(repr=False)

    @property
    def worst_index(self):
        return int(np.argmax(self.per_parameter_errors))


def grad_check(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    analytic_grad: Sequence[float],
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare an analytic gradient against central differences.

    The relative error for coordinate i is
    ``|numeric_i - analytic_i| / max(1, |analytic_i|)``.
    """
    x0 = np.array(x0, dtype=np.float64).ravel()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if g.shape != x0.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match x0 {x0.shape}")
    errors = np.empty_like(x0)
    x = x0.copy()
    for i in range(x0.size):
        x[i] = x0[i] + h
        fp = float(f(x))
        x[i] = x0[i] - h
        fm = float(f(x))
        x[i] = x0[i]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value at coordinate {i}")
        numeric = (fp - fm) / (2.0 * h)
        errors[i] = abs(numeric - g[i]) / max(1.0, abs(g[i]))
    worst = float(errors.max()) if errors.size else 0.0
    return GradCheckReport(worst, errors)
