"""Kernel SVM trained with sequential minimal optimisation.

Working-set selection uses second-order information (the maximal violating
``i`` paired with the ``j`` giving the largest guaranteed objective decrease),
the same scheme LIBSVM uses. Multi-class problems are split one-vs-rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import PreconditionError
from .data import N_CLASSES, DimensionMismatch, NoConvergence, check_classes

TAU = 1e-12
MAX_ITER = 100_000
# decision value of a machine whose class never appeared in training
ABSENT_SCORE = -1e300


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def linear_kernel(A, B, gamma: float = 0.0) -> np.ndarray:
    return np.atleast_2d(np.asarray(A, dtype=float)) @ np.atleast_2d(np.asarray(B, dtype=float)).T


KERNELS = {"rbf": rbf_kernel, "linear": linear_kernel}


@dataclass(frozen=True)
class BinarySvm:
    """One binary machine: f(x) = sum_i coef_i K(sv_i, x) + bias.

    ``coef`` holds alpha_i * y_i for the support vectors only.
    """

    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    kernel: str = "rbf"
    gamma: float = 0.1
    C: float = 100.0
    n_iter: int = 0

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.coef.size == 0:
            return np.full(X.shape[0], self.bias)
        return KERNELS[self.kernel](X, self.support_vectors, self.gamma) @ self.coef + self.bias

    def linear_weights(self) -> np.ndarray:
        if self.kernel != "linear":
            raise PreconditionError("primal weights exist only for the linear kernel")
        return self.coef @ self.support_vectors


def _smo(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    """Solve min 1/2 a'Qa - e'a s.t. 0 <= a <= C, y'a = 0, Q = yy' * K."""
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.diag(K).copy()
    pos = y > 0
    for it in range(max_iter):
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        viol = -y * grad
        if not up.any() or not low.any():
            return alpha, grad, it
        v_up = np.where(up, viol, -np.inf)
        i = int(np.argmax(v_up))
        m_up = v_up[i]
        v_low = np.where(low, viol, np.inf)
        if m_up - v_low.min() < tol:
            return alpha, grad, it

        b = m_up - viol
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        cand = low & (b > 0)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        yi, yj = y[i], y[j]
        step = b[j] / a[j]
        ai_old, aj_old = alpha[i], alpha[j]
        s = yi * ai_old + yj * aj_old
        ai = min(max(ai_old + yi * step, 0.0), C)
        aj = yj * (s - yi * ai)
        aj = min(max(aj, 0.0), C)
        ai = yi * (s - yj * aj)
        alpha[i], alpha[j] = ai, aj
        # gradient of the dual: Q[:, k] = y * y_k * K[:, k]
        grad += y * (K[:, i] * (yi * (ai - ai_old)) + K[:, j] * (yj * (aj - aj_old)))
    raise NoConvergence(f"SMO did not reach KKT tolerance {tol} in {max_iter} iterations")


def _bias(alpha, grad, y, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(-yg[free].mean())
    pos = y > 0
    # bounds on rho from the at-bound variables
    ub_mask = np.where(pos, alpha <= 0, alpha >= C)
    lb_mask = np.where(pos, alpha >= C, alpha <= 0)
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        rho = ub if np.isfinite(ub) else lb
    else:
        rho = 0.5 * (ub + lb)
    return float(-rho)


def train_binary_svm(
    X,
    y,
    C: float = 100.0,
    gamma: float = 0.1,
    kernel: str = "rbf",
    tol: float = 1e-3,
    max_iter: int = MAX_ITER,
    seed: int = 0,
) -> BinarySvm:
    """Train one machine on labels in {-1, +1}.

    The solver is deterministic; ``seed`` is accepted so every trainer has
    the same signature.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if C <= 0 or (kernel == "rbf" and gamma <= 0):
        raise PreconditionError("C and gamma must be > 0")
    if kernel not in KERNELS:
        raise PreconditionError(f"unknown kernel {kernel!r}")
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise PreconditionError("binary labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise PreconditionError("binary SVM needs both classes")
    K = KERNELS[kernel](X, X, gamma)
    alpha, grad, n_iter = _smo(K, y, C, tol, max_iter)
    b = _bias(alpha, grad, y, C)
    sv = alpha > 0
    return BinarySvm(X[sv].copy(), (alpha * y)[sv], b, kernel, gamma, C, n_iter)


@dataclass(frozen=True)
class SvmModel:
    machines: tuple[BinarySvm | None, ...]
    gamma: float
    C: float
    n_features: int
    meta: dict = field(default_factory=dict, compare=False)

    def scores(self, X) -> np.ndarray:
        """Decision value of every one-vs-rest machine, shape (n, 4)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        cols = [
            m.decision(X) if m is not None else np.full(X.shape[0], ABSENT_SCORE)
            for m in self.machines
        ]
        return np.column_stack(cols)

    @property
    def n_support(self) -> list[int]:
        return [0 if m is None else m.coef.size for m in self.machines]


def train_svm(ds, gamma: float = 0.1, C: float = 100.0, seed: int = 0, tol: float = 1e-3,
              max_iter: int = MAX_ITER) -> SvmModel:
    """Four one-vs-rest RBF machines; classes absent from ``ds`` never win."""
    X, y = np.asarray(ds.X, dtype=float), np.asarray(ds.y, dtype=int)
    present = set(check_classes(y).tolist())
    machines = []
    for c in range(N_CLASSES):
        if c not in present:
            machines.append(None)
            continue
        yy = np.where(y == c, 1.0, -1.0)
        machines.append(train_binary_svm(X, yy, C=C, gamma=gamma, tol=tol, max_iter=max_iter, seed=seed))
    return SvmModel(tuple(machines), gamma, C, X.shape[1])


def kkt_violation(m: BinarySvm, X, y) -> float:
    """Largest KKT violation of a trained machine on its training set.

    With f the decision function: alpha=0 needs y f >= 1, 0<alpha<C needs
    y f = 1 and alpha=C needs y f <= 1.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    alpha = np.zeros(y.size)
    if m.coef.size:
        # map support vectors back to their rows
        idx = [int(np.flatnonzero((X == sv).all(axis=1))[0]) for sv in m.support_vectors]
        alpha[idx] = m.coef * y[idx]
    yf = y * m.decision(X)
    eps = 1e-9 * m.C
    v = np.where(alpha <= eps, np.maximum(0.0, 1.0 - yf), 0.0)
    v = np.where(alpha >= m.C - eps, np.maximum(0.0, yf - 1.0), v)
    free = (alpha > eps) & (alpha < m.C - eps)
    v = np.where(free, np.abs(yf - 1.0), v)
    return float(v.max())
