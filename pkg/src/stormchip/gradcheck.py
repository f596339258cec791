"""Central-difference verification of every analytic gradient path.

Each check builds a tiny 64-bit network featuring one layer kind, runs
the analytic backward pass, and compares every parameter gradient (and
the input gradient) against central finite differences of the full
BCE + L2 loss.  Kinked operations (relu, leaky relu, max pooling) are
resampled until every kink sits safely away from the finite-difference
step, so the comparison is well-posed.
"""

from dataclasses import dataclass

import numpy as np

from .net import LayerSpec, Network, backward, bce_loss, forward, l2_penalty
from .optim import initialize_network

# Pre-activations / pool gaps must clear the FD step by this margin.
KINK_MARGIN = 1e-3
PROB_MARGIN = 1e-4

CHECK_KINDS = ("conv3x3", "maxpool2x2", "dense", "relu", "leaky_relu", "sigmoid",
               "flatten", "bce_l2")


@dataclass
class CheckResult:
    kind: str
    seed: int
    max_rel_error: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def numeric_gradient(loss_fn, array, h=1e-5):
    """Central finite differences of loss_fn over every element of array.

    array is mutated in place during probing and restored afterwards.
    """
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """max |a - n| normalized by the larger of the two tensor max-norms."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _check_setup(kind):
    """(layers, input_shape, l2_lambda) for one layer-kind check."""
    if kind == "conv3x3":
        # Fused smooth activation also covers the fused-backward path.
        return ([LayerSpec("conv3x3", out_channels=3, activation_kind="sigmoid"),
                 LayerSpec("flatten"),
                 LayerSpec("dense", out_units=1, activation_kind="sigmoid")],
                (2, 6, 6), 0.0)
    if kind == "maxpool2x2":
        return ([LayerSpec("conv3x3", out_channels=2),
                 LayerSpec("maxpool2x2"),
                 LayerSpec("flatten"),
                 LayerSpec("dense", out_units=1, activation_kind="sigmoid")],
                (2, 6, 6), 0.0)
    if kind == "dense":
        return ([LayerSpec("flatten"),
                 LayerSpec("dense", out_units=4, activation_kind="sigmoid"),
                 LayerSpec("dense", out_units=1, activation_kind="sigmoid")],
                (2, 4, 4), 0.0)
    if kind in ("relu", "leaky_relu", "sigmoid"):
        alpha = 0.1 if kind == "leaky_relu" else None
        return ([LayerSpec("conv3x3", out_channels=2),
                 LayerSpec("activation", activation_kind=kind, alpha=alpha),
                 LayerSpec("flatten"),
                 LayerSpec("dense", out_units=1, activation_kind="sigmoid")],
                (2, 5, 5), 0.0)
    if kind == "flatten":
        return ([LayerSpec("flatten"),
                 LayerSpec("dense", out_units=1, activation_kind="sigmoid")],
                (2, 4, 4), 0.0)
    if kind == "bce_l2":
        return ([LayerSpec("conv3x3", out_channels=2, activation_kind="sigmoid"),
                 LayerSpec("flatten"),
                 LayerSpec("dense", out_units=1, activation_kind="sigmoid")],
                (2, 5, 5), 1e-2)
    raise ValueError(f"unknown check kind {kind!r}")


def _margins_ok(net, acts):
    probs = acts[-1]["out"]
    if np.any(probs < PROB_MARGIN) or np.any(probs > 1.0 - PROB_MARGIN):
        return False
    for i, spec in enumerate(net.layers):
        if spec.kind == "activation" and spec.activation_kind in ("relu", "leaky_relu"):
            pre = acts[i]["out"]
            if np.abs(pre).min() < KINK_MARGIN:
                return False
        if spec.kind == "maxpool2x2":
            x = acts[i]["out"]
            n, c, h, w = x.shape
            h2, w2 = h // 2, w // 2
            windows = (x[:, :, :h2 * 2, :w2 * 2]
                       .reshape(n, c, h2, 2, w2, 2)
                       .transpose(0, 1, 2, 4, 3, 5)
                       .reshape(n, c, h2, w2, 4))
            top2 = np.sort(windows, axis=4)[..., -2:]
            if (top2[..., 1] - top2[..., 0]).min() < KINK_MARGIN:
                return False
    return True


def _build_case(kind, seed):
    layers, input_shape, l2_lambda = _check_setup(kind)
    for attempt in range(200):
        rng = np.random.default_rng([seed, attempt])
        net = Network(layers, input_shape, dtype=np.float64)
        initialize_network(net, rng)
        x = rng.normal(0.0, 1.0, size=(2,) + input_shape)
        y = rng.integers(0, 2, size=(2, 1)).astype(np.float64)
        _, acts = forward(net, x, mode="train")
        if _margins_ok(net, acts):
            return net, x, y, l2_lambda
    raise RuntimeError(f"could not sample a kink-safe case for {kind} (seed {seed})")


def run_check(kind, seed, h=1e-5, tol=1e-5):
    """Finite-difference check of one layer kind at one seed."""
    net, x, y, l2_lambda = _build_case(kind, seed)
    _, acts = forward(net, x, mode="train")
    _, grads, dinput = backward(net, acts, y, l2_lambda=l2_lambda, return_input_grad=True)
    analytic = [{k: v.copy() for k, v in g.items()} for g in grads]
    analytic_input = dinput.copy()

    def loss_fn():
        probs, _ = forward(net, x, mode="train")
        return bce_loss(probs, y) + l2_penalty(net, l2_lambda)

    worst = 0.0
    for par, ana in zip(net.params, analytic):
        for name in par:
            numeric = numeric_gradient(loss_fn, par[name], h=h)
            worst = max(worst, relative_error(ana[name], numeric))
    numeric_input = numeric_gradient(loss_fn, x, h=h)
    worst = max(worst, relative_error(analytic_input, numeric_input))
    return CheckResult(kind=kind, seed=seed, max_rel_error=worst, tol=tol)


def run_suite(kinds=CHECK_KINDS, seeds=20, seed_base=0, h=1e-5, tol=1e-5):
    """Every layer-kind check over a range of seeds."""
    results = []
    for kind in kinds:
        for offset in range(seeds):
            results.append(run_check(kind, seed_base + offset, h=h, tol=tol))
    return results
