"""Projection of representations onto a fixed-radius lp manifold.

Every vector x is rescaled to alpha * x / (||x||_p + eps), so its p-norm
equals the radius alpha (up to the eps stabilizer). The norm order p and
the radius alpha are either fixed constants or trainable scalars behind
softplus reparameterizations that keep them in their valid ranges
(p > 1, alpha > 0). All norm computations are overflow-safe: entries are
rescaled by the row maximum before powers are taken, so large p does not
overflow and the p -> infinity limit degrades gracefully toward max|x_i|.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit as sigmoid

from .autodiff import Parameter, Tensor, _emit

__all__ = [
    "NormOrder",
    "RadiusParam",
    "LpNormLayer",
    "softplus",
    "softplus_inv",
    "sigmoid",
    "lp_norm",
    "lp_norm_rows",
    "normalize_forward",
    "normalize_rows",
    "grad_wrt_input",
    "grad_wrt_p",
    "grad_wrt_alpha",
    "cp_ratio",
    "magnitude_interval",
    "logit_decomposition",
    "lp_normalize",
]


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y: float) -> float:
    """Inverse of softplus for y > 0 (stable for small and large y)."""
    return y + math.log1p(-math.exp(-y))


class NormOrder:
    """Norm order p: a fixed value (1 <= p <= inf) or a trainable scalar.

    The trainable mode decodes p = 1 + softplus(rho), which stays in the
    open interval (1, inf); it can never reach p = 1 or p = inf.
    """

    def __init__(self, mode: str, value: float | None = None,
                 rho: Parameter | None = None):
        self.mode = mode
        self.value = value
        self.rho = rho

    @classmethod
    def fixed(cls, p: float) -> "NormOrder":
        p = float(p)
        if math.isnan(p) or p < 1.0:
            raise ValueError(f"p = {p} is not a norm order (need p >= 1)")
        return cls("fixed", value=p)

    @classmethod
    def learnable(cls, initial_p: float = 2.0) -> "NormOrder":
        if not initial_p > 1.0 or math.isinf(initial_p):
            raise ValueError("learnable p must start finite and > 1")
        rho = Parameter(softplus_inv(initial_p - 1.0), "norm.rho")
        return cls("learnable", rho=rho)

    @classmethod
    def from_config(cls, spec) -> "NormOrder":
        if spec == "learnable":
            return cls.learnable()
        if spec == "inf":
            return cls.fixed(math.inf)
        return cls.fixed(float(spec))

    @property
    def is_learnable(self) -> bool:
        return self.mode == "learnable"

    def decode(self) -> float:
        if self.is_learnable:
            return 1.0 + float(softplus(self.rho.values))
        return self.value

    def __repr__(self) -> str:
        if self.is_learnable:
            return f"NormOrder(learnable, p={self.decode():.4f})"
        return f"NormOrder(fixed, p={self.value})"


class RadiusParam:
    """Manifold radius alpha: fixed positive constant or trainable scalar.

    The trainable mode decodes alpha = softplus(a) + 1e-6 > 0.
    """

    _FLOOR = 1e-6

    def __init__(self, mode: str, value: float | None = None,
                 raw: Parameter | None = None):
        self.mode = mode
        self.value = value
        self.raw = raw

    @classmethod
    def fixed(cls, alpha: float) -> "RadiusParam":
        alpha = float(alpha)
        if not alpha > 0.0:
            raise ValueError(f"radius alpha must be positive, got {alpha}")
        return cls("fixed", value=alpha)

    @classmethod
    def learnable(cls, initial_alpha: float = 1.0) -> "RadiusParam":
        if not initial_alpha > cls._FLOOR:
            raise ValueError("learnable alpha must start above the floor")
        raw = Parameter(softplus_inv(initial_alpha - cls._FLOOR), "norm.alpha_raw")
        return cls("learnable", raw=raw)

    @classmethod
    def from_config(cls, spec) -> "RadiusParam":
        if spec == "learnable":
            return cls.learnable()
        return cls.fixed(float(spec))

    @property
    def is_learnable(self) -> bool:
        return self.mode == "learnable"

    def decode(self) -> float:
        if self.is_learnable:
            return float(softplus(self.raw.values)) + self._FLOOR
        return self.value

    def __repr__(self) -> str:
        if self.is_learnable:
            return f"RadiusParam(learnable, alpha={self.decode():.4f})"
        return f"RadiusParam(fixed, alpha={self.value})"


class LpNormLayer:
    """Stateless projection layer; its only state is two optional scalars."""

    def __init__(self, order: NormOrder, radius: RadiusParam,
                 epsilon: float = 1e-12):
        if not epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        self.order = order
        self.radius = radius
        self.epsilon = epsilon

    def parameters(self) -> list[Parameter]:
        params = []
        if self.order.is_learnable:
            params.append(self.order.rho)
        if self.radius.is_learnable:
            params.append(self.radius.raw)
        return params


# --- norm primitives (pure numpy, rows = samples) -----------------------


def _check_order(p: float) -> float:
    p = float(p)
    if math.isnan(p) or p < 1.0:
        raise ValueError(f"p = {p} is not a norm order (need p >= 1)")
    return p


def lp_norm_rows(x: np.ndarray, p: float) -> np.ndarray:
    """Row-wise p-norm, rescaled by the row max so powers cannot overflow."""
    p = _check_order(p)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ax = np.abs(x)
    m = ax.max(axis=1)
    if math.isinf(p):
        return m
    safe_m = np.where(m > 0.0, m, 1.0)
    u = ax / safe_m[:, None]
    s = (u**p).sum(axis=1) ** (1.0 / p)
    return np.where(m > 0.0, m * s, 0.0)


def lp_norm(x, p: float) -> float:
    """p-norm of a single vector; 0 on the zero vector."""
    return float(lp_norm_rows(np.asarray(x, dtype=np.float64)[None, :], p)[0])


def _norm_grad_rows(x: np.ndarray, p: float) -> np.ndarray:
    """Row-wise gradient of ||x||_p.

    Finite p: sign(x_i) * (|x_i| / ||x||_p)^(p-1), evaluated on rescaled
    magnitudes. p = 1: sign(x_i) with sign(0) = 0. p = inf: the subgradient
    concentrated on the max-magnitude coordinates, ties split equally.
    Zero rows get a zero gradient.
    """
    ax = np.abs(x)
    m = ax.max(axis=1)
    sign = np.sign(x)
    if math.isinf(p):
        at_max = (ax == m[:, None]) & (m[:, None] > 0.0)
        ties = at_max.sum(axis=1)
        safe_ties = np.where(ties > 0, ties, 1)
        return sign * at_max / safe_ties[:, None]
    if p == 1.0:
        return sign
    safe_m = np.where(m > 0.0, m, 1.0)
    u = ax / safe_m[:, None]
    s = ((u**p).sum(axis=1)) ** (1.0 / p)  # >= 1 because max(u) = 1
    g = sign * (u / s[:, None]) ** (p - 1.0)
    return np.where(m[:, None] > 0.0, g, 0.0)


def _norm_grad_p_rows(x: np.ndarray, p: float) -> np.ndarray:
    """Row-wise d||x||_p / dp for finite p > 1.

    Computed on rescaled magnitudes u_i = |x_i| / max|x|, with the
    convention 0^p * ln 0 = 0; rows of zeros (or a single nonzero entry)
    yield 0 because their norm does not depend on p.
    """
    ax = np.abs(x)
    m = ax.max(axis=1)
    safe_m = np.where(m > 0.0, m, 1.0)
    u = ax / safe_m[:, None]
    up = u**p
    s_p = up.sum(axis=1)
    log_u = np.zeros_like(u)
    positive = u > 0.0
    log_u[positive] = np.log(u[positive])
    weighted = (up * log_u).sum(axis=1)
    norm = lp_norm_rows(x, p)
    dlog = weighted / (p * s_p) - np.log(s_p) / (p * p)
    return norm * dlog


def normalize_rows(x: np.ndarray, p: float, alpha: float,
                   epsilon: float = 1e-12) -> np.ndarray:
    """Project each row onto the radius-alpha lp manifold."""
    x = np.asarray(x, dtype=np.float64)
    denom = lp_norm_rows(x, p) + epsilon
    return alpha * x / denom[:, None]


def normalize_forward(x, layer: LpNormLayer) -> np.ndarray:
    """Project a single vector through the layer's current p and alpha."""
    x = np.asarray(x, dtype=np.float64)
    out = normalize_rows(x[None, :], layer.order.decode(),
                         layer.radius.decode(), layer.epsilon)
    return out[0]


def _input_grad_rows(x, p, alpha, epsilon, upstream):
    """Jacobian-transpose product of the projection, applied row-wise."""
    denom = lp_norm_rows(x, p) + epsilon
    contraction = (upstream * x).sum(axis=1) / (denom * denom)
    norm_grad = _norm_grad_rows(x, p)
    return alpha * (upstream / denom[:, None] - contraction[:, None] * norm_grad)


def grad_wrt_input(x, layer: LpNormLayer, upstream) -> np.ndarray:
    """Gradient of <upstream, projection(x)> with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    out = _input_grad_rows(x[None, :], layer.order.decode(),
                           layer.radius.decode(), layer.epsilon,
                           upstream[None, :])
    return out[0]


def grad_wrt_p(x, p: float, upstream, alpha: float = 1.0,
               epsilon: float = 1e-12) -> float:
    """Gradient of <upstream, projection(x)> with respect to a finite p.

    The reparameterization factor for a trainable raw scalar is applied by
    the layer op, not here.
    """
    p = float(p)
    if not (1.0 < p < math.inf):
        raise ValueError(f"p gradient needs finite p > 1, got {p}")
    x = np.asarray(x, dtype=np.float64)[None, :]
    upstream = np.asarray(upstream, dtype=np.float64)[None, :]
    denom = lp_norm_rows(x, p) + epsilon
    contraction = (upstream * x).sum(axis=1) / (denom * denom)
    dnorm_dp = _norm_grad_p_rows(x, p)
    return float(-alpha * contraction[0] * dnorm_dp[0])


def grad_wrt_alpha(x, layer: LpNormLayer, upstream) -> float | None:
    """Gradient with respect to the radius; None when the radius is fixed.

    In learnable mode the softplus reparameterization factor is included,
    so the result is the gradient for the raw scalar.
    """
    if not layer.radius.is_learnable:
        return None
    x = np.asarray(x, dtype=np.float64)[None, :]
    upstream = np.asarray(upstream, dtype=np.float64)[None, :]
    denom = lp_norm_rows(x, layer.order.decode()) + layer.epsilon
    raw = layer.radius.raw.values
    d_alpha = float((upstream * x / denom[:, None]).sum())
    return d_alpha * float(sigmoid(raw))


def cp_ratio(x, p: float) -> float:
    """Ratio of the l2 norm to the p-norm, computed on the rescaled vector.

    Equals 1 at p = 2; governs the l2 magnitude of the projected vector.
    """
    x = np.asarray(x, dtype=np.float64)
    norm_p = lp_norm(x, p)
    if norm_p == 0.0:
        raise ValueError("cp_ratio is undefined for the zero vector")
    return float(np.linalg.norm(x / norm_p))


def magnitude_interval(x, p: float, alpha: float) -> tuple[float, float, float]:
    """l2-magnitude bounds of the projection: (lo, hi, actual).

    actual is the measured l2 norm of the eps-free projection; lo and hi
    are alpha * min(1, ratio) and alpha * max(1, ratio). Rejects the zero
    vector, for which no projection exists.
    """
    x = np.asarray(x, dtype=np.float64)
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    norm_p = lp_norm(x, p)
    if norm_p == 0.0:
        raise ValueError("magnitude interval is undefined for the zero vector")
    ratio = float(np.linalg.norm(x / norm_p))
    actual = alpha * ratio
    return alpha * min(1.0, ratio), alpha * max(1.0, ratio), actual


def logit_decomposition(w, xbar) -> tuple[float, float, float, float]:
    """Split an inner product into (|w|, |xbar|, cos angle, inner)."""
    w = np.asarray(w, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    norm_w = float(np.linalg.norm(w))
    norm_x = float(np.linalg.norm(xbar))
    if norm_w == 0.0 or norm_x == 0.0:
        raise ValueError("logit decomposition needs two nonzero vectors")
    inner = float(w @ xbar)
    return norm_w, norm_x, inner / (norm_w * norm_x), inner


# --- tape-integrated batched projection ----------------------------------


def lp_normalize(x: Tensor, layer: LpNormLayer) -> Tensor:
    """Apply the projection to each row of a batch, recording backward rules
    for the input and for any trainable scalar of the layer."""
    if x.values.ndim != 2:
        raise ValueError(f"lp_normalize expects a batch (rank 2), got {x.shape}")
    p = layer.order.decode()
    alpha = layer.radius.decode()
    epsilon = layer.epsilon
    xv = x.values
    out_values = normalize_rows(xv, p, alpha, epsilon)

    if __debug__:
        _assert_magnitude_identity(xv, out_values, p, alpha)

    inputs = [x]
    if layer.order.is_learnable:
        inputs.append(layer.order.rho.tensor)
    if layer.radius.is_learnable:
        inputs.append(layer.radius.raw.tensor)

    track_x = x.tape is not None
    learn_p = layer.order.is_learnable
    learn_a = layer.radius.is_learnable
    rho_raw = layer.order.rho.values.copy() if learn_p else None
    alpha_raw = layer.radius.raw.values.copy() if learn_a else None

    def backward_rule(g):
        denom = lp_norm_rows(xv, p) + epsilon
        contraction = (g * xv).sum(axis=1) / (denom * denom)
        grads = [
            _input_grad_rows(xv, p, alpha, epsilon, g) if track_x else None
        ]
        if learn_p:
            dnorm_dp = _norm_grad_p_rows(xv, p)
            d_p = float((-alpha * contraction * dnorm_dp).sum())
            grads.append(np.asarray(d_p * sigmoid(rho_raw)).reshape(rho_raw.shape))
        if learn_a:
            d_alpha = float((g * xv / denom[:, None]).sum())
            grads.append(np.asarray(d_alpha * sigmoid(alpha_raw)).reshape(alpha_raw.shape))
        return tuple(grads)

    return _emit("lp_normalize", inputs, out_values, backward_rule)


def _assert_magnitude_identity(x, xbar, p, alpha):
    # eps-induced slack makes the identity meaningless for tiny rows
    norms_p = lp_norm_rows(x, p)
    ok = norms_p >= 1e-2
    if not ok.any():
        return
    measured = np.linalg.norm(xbar[ok], axis=1)
    expected = alpha * np.linalg.norm(
        x[ok] / norms_p[ok][:, None], axis=1
    )
    assert np.allclose(measured, expected, rtol=1e-9, atol=1e-12), (
        "projected l2 magnitude drifted from alpha * (l2/lp ratio)"
    )
