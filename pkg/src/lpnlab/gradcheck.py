"""Central finite-difference gradient oracle and the standard check suite.

The oracle differentiates an arbitrary scalar function numerically and never
touches the analytic backward rules it is used to audit.
"""

from __future__ import annotations

import math
import time

import numpy as np

__all__ = [
    "central_difference",
    "relative_error",
    "run_gradient_suite",
    "GradCheckResult",
]

DEFAULT_STEP = 1e-5


def central_difference(f, x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Gradient of scalar f at x via central differences, one coordinate
    at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_grad = grad.reshape(-1)
    probe = x.copy()
    flat_probe = probe.reshape(-1)
    for i in range(flat_probe.size):
        original = flat_probe[i]
        flat_probe[i] = original + step
        f_plus = f(probe)
        flat_probe[i] = original - step
        f_minus = f(probe)
        flat_probe[i] = original
        flat_grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    """Norm-based relative disagreement.

    The denominator is floored at 1.0: central differences at the pinned
    step carry ~1e-11 absolute cancellation noise on O(1) functions, so a
    near-zero true gradient cannot be certified to a pure relative
    tolerance by the oracle. Gradients here live on O(1) scales, where the
    floor is inactive and the measure is plain relative error.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1.0)
    return float(np.linalg.norm(analytic - numeric) / scale)


class GradCheckResult:
    """One named check: its worst relative error and pass/fail verdict."""

    def __init__(self, name: str, max_rel_err: float, tolerance: float):
        self.name = name
        self.max_rel_err = max_rel_err
        self.tolerance = tolerance

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __repr__(self) -> str:
        verdict = "ok" if self.passed else "FAIL"
        return (f"[{verdict}] {self.name}: max rel err "
                f"{self.max_rel_err:.3e} (tol {self.tolerance:.0e})")


def run_gradient_suite(seeds: int = 100, tolerance: float = 1e-5,
                       step: float = DEFAULT_STEP) -> list[GradCheckResult]:
    """Check every analytic gradient path against central differences.

    Covers the engine ops (matmul, add_bias, tanh, multiply, softmax
    cross-entropy) and the lp projection's input/p/alpha paths, including
    the trainable reparameterizations. Returns one result per path plus a
    wall-time entry.
    """
    from . import autodiff as ad
    from . import lpnorm

    start = time.time()
    worst: dict[str, float] = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for seed in range(seeds):
        rng = np.random.default_rng(seed)

        note("matmul", _check_matmul(ad, rng, step))
        note("add_bias", _check_bias(ad, rng, step))
        note("tanh", _check_tanh(ad, rng, step))
        note("softmax_cross_entropy", _check_softmax(ad, rng, step))

        dim = int(rng.integers(2, 17))
        xvec = rng.standard_normal(dim) * rng.uniform(0.5, 3.0)
        upstream = rng.standard_normal(dim)
        for p in (1.5, 2.0, 3.0, 8.0):
            alpha = float(rng.uniform(0.5, 3.0))
            layer = lpnorm.LpNormLayer(
                lpnorm.NormOrder.fixed(p), lpnorm.RadiusParam.fixed(alpha)
            )

            analytic = lpnorm.grad_wrt_input(xvec, layer, upstream)
            numeric = central_difference(
                lambda z: float(upstream @ lpnorm.normalize_forward(z, layer)),
                xvec, step)
            note(f"lp input p={p}", relative_error(analytic, numeric))

            analytic_p = lpnorm.grad_wrt_p(xvec, p, upstream, alpha=alpha)
            numeric_p = central_difference(
                lambda q: float(upstream @ lpnorm.normalize_rows(
                    xvec[None, :], float(q[0]), alpha)[0]),
                np.array([p]), step)
            note(f"lp order p={p}", relative_error(analytic_p, numeric_p[0]))

        err_rho, err_alpha, err_x = _check_learnable(ad, lpnorm, rng, step)
        note("lp learnable rho", err_rho)
        note("lp learnable alpha", err_alpha)
        note("lp learnable input", err_x)

    results = [
        GradCheckResult(name, err, tolerance)
        for name, err in sorted(worst.items())
    ]
    results.append(
        GradCheckResult("suite wall time (s)", time.time() - start, math.inf)
    )
    return results


def _weighted_sum(ad, out, weights):
    """Scalar loss sum(out * weights) so the seed gradient is `weights`."""
    return ad.tensor_sum(ad.multiply(out, ad.Tensor(weights)))


def _check_matmul(ad, rng, step):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    weights = rng.standard_normal((3, 2))

    def loss_of(av, bv):
        return float(((av @ bv) * weights).sum())

    ta, tb = ad.Tensor(a), ad.Tensor(b)
    tape = ad.Tape()
    tape.watch(ta)
    tape.watch(tb)
    loss = _weighted_sum(ad, ad.matmul(ta, tb), weights)
    ad.backward(tape, loss)
    err_a = relative_error(
        ta.grad, central_difference(lambda z: loss_of(z, b), a, step))
    err_b = relative_error(
        tb.grad, central_difference(lambda z: loss_of(a, z), b, step))
    return max(err_a, err_b)


def _check_bias(ad, rng, step):
    x = rng.standard_normal((3, 4))
    bias = rng.standard_normal(4)
    weights = rng.standard_normal((3, 4))

    def loss_of(xv, bv):
        return float(((xv + bv[None, :]) * weights).sum())

    tx, tb = ad.Tensor(x), ad.Tensor(bias)
    tape = ad.Tape()
    tape.watch(tx)
    tape.watch(tb)
    loss = _weighted_sum(ad, ad.add_bias(tx, tb), weights)
    ad.backward(tape, loss)
    err_x = relative_error(
        tx.grad, central_difference(lambda z: loss_of(z, bias), x, step))
    err_b = relative_error(
        tb.grad, central_difference(lambda z: loss_of(x, z), bias, step))
    return max(err_x, err_b)


def _check_tanh(ad, rng, step):
    v = rng.standard_normal((2, 6))
    weights = rng.standard_normal((2, 6))

    def loss_of(z):
        return float((np.tanh(z) * weights).sum())

    tv = ad.Tensor(v)
    tape = ad.Tape()
    tape.watch(tv)
    loss = _weighted_sum(ad, ad.tanh(tv), weights)
    ad.backward(tape, loss)
    return relative_error(tv.grad, central_difference(loss_of, v, step))


def _check_softmax(ad, rng, step):
    logits = rng.standard_normal((4, 3))
    labels = rng.integers(0, 3, size=4)

    def loss_of(z):
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        picked = shifted[np.arange(z.shape[0]), labels]
        return float(-(picked - lse).mean())

    tl = ad.Tensor(logits)
    tape = ad.Tape()
    tape.watch(tl)
    loss = ad.softmax_cross_entropy(tl, labels)
    ad.backward(tape, loss)
    return relative_error(tl.grad, central_difference(loss_of, logits, step))


def _check_learnable(ad, lpnorm, rng, step):
    """FD-check d(loss)/d(rho), d(loss)/d(alpha_raw) and d(loss)/d(input)
    through the batched projection op with both scalars trainable."""
    batch = rng.standard_normal((3, 5))
    upstream = rng.standard_normal((3, 5))
    initial_p = float(rng.uniform(1.3, 3.0))
    initial_alpha = float(rng.uniform(0.5, 2.0))

    layer = lpnorm.LpNormLayer(
        lpnorm.NormOrder.learnable(initial_p),
        lpnorm.RadiusParam.learnable(initial_alpha),
    )
    rho0 = layer.order.rho.values.copy()
    a0 = layer.radius.raw.values.copy()

    tape = ad.Tape()
    for param in layer.parameters():
        tape.watch(param.tensor)
    x = ad.Tensor(batch)
    tape.watch(x)
    loss = _weighted_sum(ad, lpnorm.lp_normalize(x, layer), upstream)
    ad.backward(tape, loss)

    def loss_at(rho_raw, alpha_raw, batch_vals):
        p = 1.0 + float(lpnorm.softplus(rho_raw))
        alpha = float(lpnorm.softplus(alpha_raw)) + 1e-6
        projected = lpnorm.normalize_rows(batch_vals, p, alpha)
        return float((projected * upstream).sum())

    numeric_rho = central_difference(
        lambda r: loss_at(r, a0, batch), rho0, step)
    numeric_alpha = central_difference(
        lambda a: loss_at(rho0, a, batch), a0, step)
    numeric_x = central_difference(
        lambda bv: loss_at(rho0, a0, bv), batch, step)

    return (
        relative_error(layer.order.rho.grad, numeric_rho),
        relative_error(layer.radius.raw.grad, numeric_alpha),
        relative_error(x.grad, numeric_x),
    )
