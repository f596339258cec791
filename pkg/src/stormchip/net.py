"""Layer specs, the network container, forward/backward, and builders.

A network is an ordered list of LayerSpec plus per-layer parameter and
gradient arrays.  Convolution and dense layers may fuse an elementwise
activation so that the layer list maps one-to-one onto the architecture
rows reported by summaries and checkpoints; a standalone "activation"
layer kind is also supported.

The forward pass returns the per-layer activation trace that backward,
the dead-filter diagnostic, and the activation-map export all consume.
Entry i+1 of the trace is the output of layer i (entry 0 is the input
batch).
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .ops import ShapeError

LAYER_KINDS = ("conv3x3", "maxpool2x2", "activation", "flatten", "dropout", "dense")
ACTIVATION_KINDS = ("relu", "leaky_relu", "sigmoid")

# Probabilities are clamped to this range before any log.
PROB_EPS = 1e-7


@dataclass
class LayerSpec:
    """One layer of the network.

    out_channels applies to conv3x3, out_units to dense.  activation_kind
    on a conv/dense layer fuses the nonlinearity into that layer; on a
    kind="activation" layer it is the layer itself.  alpha is the leaky
    slope and must accompany leaky_relu (and nothing else).  padding is
    the zero-padding of a conv3x3 layer (0 = valid, 1 = same).
    """

    kind: str
    out_channels: int = 0
    out_units: int = 0
    activation_kind: str | None = None
    alpha: float | None = None
    dropout_rate: float = 0.0
    padding: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation_kind is not None and self.activation_kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.activation_kind!r}")
        if self.kind == "activation" and self.activation_kind is None:
            raise ValueError("activation layer needs activation_kind")
        if self.activation_kind == "leaky_relu":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError("leaky_relu needs alpha in (0, 1)")
        elif self.alpha is not None:
            raise ValueError("alpha is only valid with leaky_relu")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.kind == "conv3x3" and self.out_channels < 1:
            raise ValueError("conv3x3 needs out_channels >= 1")
        if self.kind == "dense" and self.out_units < 1:
            raise ValueError("dense needs out_units >= 1")
        if self.padding not in (0, 1):
            raise ValueError("padding must be 0 or 1")


def shape_trace(layers, input_shape):
    """Per-layer output shape (no batch axis) for the given input shape."""
    shapes = []
    cur = tuple(input_shape)
    for spec in layers:
        if spec.kind == "conv3x3":
            if len(cur) != 3:
                raise ShapeError(f"conv3x3 needs C x H x W input, got {cur}")
            c, h, w = cur
            oh, ow = h + 2 * spec.padding - 2, w + 2 * spec.padding - 2
            if oh < 1 or ow < 1:
                raise ShapeError(f"conv3x3 output collapses on {h}x{w} input")
            cur = (spec.out_channels, oh, ow)
        elif spec.kind == "maxpool2x2":
            if len(cur) != 3:
                raise ShapeError(f"maxpool2x2 needs C x H x W input, got {cur}")
            c, h, w = cur
            if h < 2 or w < 2:
                raise ShapeError(f"maxpool2x2 output collapses on {h}x{w} input")
            cur = (c, h // 2, w // 2)
        elif spec.kind == "flatten":
            cur = (int(np.prod(cur)),)
        elif spec.kind == "dense":
            if len(cur) != 1:
                raise ShapeError("dense needs flattened input")
            cur = (spec.out_units,)
        # activation and dropout keep the shape
        shapes.append(cur)
    return shapes


class Network:
    """Ordered layers with their parameters and gradients.

    params[i] is {} for parameterless layers and {"w": ..., "b": ...} for
    conv3x3/dense layers; grads mirrors the shapes.  Parameters start at
    zero; see optim.initialize_network for the uniform fan-scaled init.
    """

    def __init__(self, layers, input_shape, dtype=np.float32):
        self.layers = list(layers)
        self.input_shape = tuple(int(e) for e in input_shape)
        self.dtype = np.dtype(dtype)
        self._trace = shape_trace(self.layers, self.input_shape)
        self.params = []
        self.grads = []
        prev = self.input_shape
        for spec, out_shape in zip(self.layers, self._trace):
            if spec.kind == "conv3x3":
                w = np.zeros((spec.out_channels, prev[0], 3, 3), dtype=self.dtype)
                b = np.zeros(spec.out_channels, dtype=self.dtype)
                self.params.append({"w": w, "b": b})
            elif spec.kind == "dense":
                w = np.zeros((prev[0], spec.out_units), dtype=self.dtype)
                b = np.zeros(spec.out_units, dtype=self.dtype)
                self.params.append({"w": w, "b": b})
            else:
                self.params.append({})
            self.grads.append({k: np.zeros_like(v) for k, v in self.params[-1].items()})
            prev = out_shape
        # Filled in by optim.fit: parameter snapshot of the best validation epoch.
        self.best_params = None
        self.best_epoch = None

    def shape_trace(self):
        return list(self._trace)

    def param_counts(self):
        """Trainable parameter count of every layer, in layer order."""
        return [sum(v.size for v in p.values()) for p in self.params]

    def total_params(self):
        return sum(self.param_counts())

    def astype(self, dtype):
        """Copy of this network with parameters cast to dtype."""
        other = Network(self.layers, self.input_shape, dtype=dtype)
        for dst, src in zip(other.params, self.params):
            for k in dst:
                dst[k][...] = src[k]
        return other

    def copy_params(self):
        return [{k: v.copy() for k, v in p.items()} for p in self.params]

    def set_params(self, params):
        for dst, src in zip(self.params, params):
            for k in dst:
                dst[k][...] = src[k]


def build_damage_cnn(dropout="DO", activation="relu", alpha=0.1):
    """The custom damage classifier: four conv/pool blocks and a dense head.

    Convolutions are 3x3 valid stride 1 with 32/64/128/128 filters, each
    followed by 2x2 max pooling, then flatten, dropout, a 512-unit dense
    layer, and a single sigmoid output giving the probability of damage.
    dropout: "none", "DO" (50% before the dense head), or "FDO" (25%
    after every pool plus the 50%).  activation: "relu" or "leaky".
    """
    act, a = _variant_activation(activation, alpha)
    layers = []
    for channels in (32, 64, 128, 128):
        layers.append(LayerSpec("conv3x3", out_channels=channels, activation_kind=act, alpha=a))
        layers.append(LayerSpec("maxpool2x2"))
        if dropout == "FDO":
            layers.append(LayerSpec("dropout", dropout_rate=0.25))
    layers.append(LayerSpec("flatten"))
    if dropout in ("DO", "FDO"):
        layers.append(LayerSpec("dropout", dropout_rate=0.5))
    elif dropout != "none":
        raise ValueError(f"unknown dropout variant {dropout!r}")
    layers.append(LayerSpec("dense", out_units=512, activation_kind=act, alpha=a))
    layers.append(LayerSpec("dense", out_units=1, activation_kind="sigmoid"))
    return Network(layers, (3, 150, 150))


# Conv channel plan of the 13-layer VGG-16 feature stack.
VGG16_BLOCKS = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))


def build_vgg16_like(input_shape=(3, 150, 150), dropout="DO", activation="relu", alpha=0.1):
    """A VGG-16-shaped comparison network with the same dense head.

    Thirteen 3x3 same-padded convolutions in 2-2-3-3-3 blocks of
    64/128/256/512/512 channels, a 2x2 pool after each block, then
    flatten, dropout, dense-512, and the sigmoid output.  Weights are
    random-initialized; no pretrained values are involved.
    """
    act, a = _variant_activation(activation, alpha)
    layers = []
    for channels, repeats in VGG16_BLOCKS:
        for _ in range(repeats):
            layers.append(LayerSpec("conv3x3", out_channels=channels, activation_kind=act,
                                    alpha=a, padding=1))
        layers.append(LayerSpec("maxpool2x2"))
        if dropout == "FDO":
            layers.append(LayerSpec("dropout", dropout_rate=0.25))
    layers.append(LayerSpec("flatten"))
    if dropout in ("DO", "FDO"):
        layers.append(LayerSpec("dropout", dropout_rate=0.5))
    elif dropout != "none":
        raise ValueError(f"unknown dropout variant {dropout!r}")
    layers.append(LayerSpec("dense", out_units=512, activation_kind=act, alpha=a))
    layers.append(LayerSpec("dense", out_units=1, activation_kind="sigmoid"))
    return Network(layers, input_shape)


def build_lr_head(in_features):
    """Logistic regression over a precomputed feature vector."""
    layers = [LayerSpec("dense", out_units=1, activation_kind="sigmoid")]
    return Network(layers, (in_features,))


def _variant_activation(activation, alpha):
    if activation == "relu":
        return "relu", None
    if activation in ("leaky", "leaky_relu"):
        return "leaky_relu", alpha
    raise ValueError(f"unknown activation variant {activation!r}")


def activation_apply(kind, alpha, x):
    """Apply relu / leaky_relu / sigmoid elementwise."""
    x = np.asarray(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "leaky_relu":
        if alpha is None or not 0.0 < alpha < 1.0:
            raise ValueError("leaky_relu needs alpha in (0, 1)")
        return np.where(x > 0, x, alpha * x)
    if kind == "sigmoid":
        return _sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def _sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activation_grad(kind, alpha, out):
    # Derivative written in terms of the stored post-activation output.
    if kind == "relu":
        return (out > 0).astype(out.dtype)
    if kind == "leaky_relu":
        return np.where(out > 0, out.dtype.type(1.0), out.dtype.type(alpha))
    if kind == "sigmoid":
        return out * (1.0 - out)
    raise ValueError(f"unknown activation {kind!r}")


def maxpool2x2(x):
    """2x2 stride-2 max pooling with the argmax map for backward.

    Odd trailing rows/columns are dropped.  Ties inside a window resolve
    to the first occurrence in row-major scan order.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected N x C x H x W input, got shape {x.shape}")
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"maxpool2x2 needs at least 2x2 input, got {h}x{w}")
    windows = (x[:, :, :h2 * 2, :w2 * 2]
               .reshape(n, c, h2, 2, w2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, h2, w2, 4))
    arg = windows.argmax(axis=4)
    y = np.take_along_axis(windows, arg[..., None], axis=4)[..., 0]
    return y, arg


def maxpool2x2_backward(dy, arg, in_shape):
    """Route each output gradient to the argmax position of its window."""
    n, c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    windows = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(windows, arg[..., None], dy[..., None], axis=4)
    dx = np.zeros(in_shape, dtype=dy.dtype)
    dx[:, :, :h2 * 2, :w2 * 2] = (windows
                                  .reshape(n, c, h2, w2, 2, 2)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(n, c, h2 * 2, w2 * 2))
    return dx


def dropout_forward(x, rate, mode, rng=None):
    """Inverted dropout: zero with probability rate, scale survivors.

    Train mode needs a seeded numpy Generator; eval mode (and rate 0) is
    the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    y, _ = _dropout_train(np.asarray(x), rate, rng)
    return y


def _dropout_train(x, rate, rng):
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep.astype(x.dtype) * scale
    return x * mask, mask


def forward(net, batch, mode="eval", rng=None):
    """Run the network, returning (probabilities, activation trace).

    The trace is a list of dicts: entry 0 is {"kind": "input", "out":
    batch}; entry i+1 holds layer i's output under "out" plus whatever
    that layer's backward needs ("cols" for conv, "arg" for pooling,
    "mask" for train-mode dropout).  Eval mode is deterministic and
    dropout-free.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    batch = np.asarray(batch)
    if batch.shape[1:] != net.input_shape:
        raise ShapeError(f"batch shape {batch.shape[1:]} does not match input {net.input_shape}")
    if batch.dtype != net.dtype:
        batch = batch.astype(net.dtype)
    if mode == "train" and rng is None and any(
            s.kind == "dropout" and s.dropout_rate > 0 for s in net.layers):
        raise ValueError("train-mode forward through dropout needs an rng")

    acts = [{"kind": "input", "out": batch}]
    cur = batch
    for spec, par in zip(net.layers, net.params):
        entry = {"kind": spec.kind}
        if spec.kind == "conv3x3":
            x = cur
            if spec.padding:
                p = spec.padding
                x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
            n, c, h, w = x.shape
            cols = ops.im2col_batch(x)
            f = spec.out_channels
            wmat = par["w"].reshape(f, c * 9)
            out = np.matmul(wmat, cols) + par["b"][:, None]
            cur = out.reshape(n, f, h - 2, w - 2)
            if spec.activation_kind:
                cur = activation_apply(spec.activation_kind, spec.alpha, cur)
            entry["cols"] = cols
            entry["padded_shape"] = x.shape
        elif spec.kind == "maxpool2x2":
            cur, arg = maxpool2x2(cur)
            entry["arg"] = arg
        elif spec.kind == "activation":
            cur = activation_apply(spec.activation_kind, spec.alpha, cur)
        elif spec.kind == "flatten":
            cur = cur.reshape(cur.shape[0], -1)
        elif spec.kind == "dropout":
            if mode == "train" and spec.dropout_rate > 0:
                cur, mask = _dropout_train(cur, spec.dropout_rate, rng)
                entry["mask"] = mask
        elif spec.kind == "dense":
            cur = cur @ par["w"] + par["b"]
            if spec.activation_kind:
                cur = activation_apply(spec.activation_kind, spec.alpha, cur)
        entry["out"] = cur
        acts.append(entry)
    return cur, acts


def bce_loss(probabilities, labels):
    """Mean binary cross-entropy with probabilities clamped to (0, 1)."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def l2_penalty(net, l2_lambda):
    """l2_lambda times the squared norm of all weight matrices (not biases)."""
    if l2_lambda == 0.0:
        return 0.0
    total = 0.0
    for par in net.params:
        if "w" in par:
            w = par["w"].ravel()
            total += float(w @ w)
    return l2_lambda * total


def backward(net, activations, labels, l2_lambda=0.0, return_input_grad=False):
    """Backpropagate mean BCE + L2 loss through a forward trace.

    Fills net.grads layerwise (weight grads include the 2*lambda*W decay
    term) and returns (loss_value, grads).  labels is N x 1 with values
    in [0, 1].
    """
    labels = np.asarray(labels, dtype=net.dtype)
    if labels.ndim == 1:
        labels = labels[:, None]
    probs = activations[-1]["out"]
    if labels.shape != probs.shape:
        raise ShapeError(f"labels shape {labels.shape} does not match output {probs.shape}")
    if np.any(labels < 0) or np.any(labels > 1):
        raise ValueError("labels must lie in [0, 1]")

    n = probs.shape[0]
    pc = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    data_loss = float(np.mean(-(labels * np.log(pc) + (1.0 - labels) * np.log(1.0 - pc))))
    loss = data_loss + l2_penalty(net, l2_lambda)

    dcur = ((pc - labels) / (pc * (1.0 - pc)) / n).astype(net.dtype)
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        par = net.params[i]
        grad = net.grads[i]
        entry = activations[i + 1]
        below = activations[i]["out"]
        if spec.kind == "conv3x3":
            if spec.activation_kind:
                dcur = dcur * _activation_grad(spec.activation_kind, spec.alpha, entry["out"])
            nb, f, oh, ow = dcur.shape
            dmat = dcur.reshape(nb, f, oh * ow)
            cols = entry["cols"]
            grad["w"][...] = np.tensordot(dmat, cols, axes=([0, 2], [0, 2])).reshape(par["w"].shape)
            grad["b"][...] = dmat.sum(axis=(0, 2))
            wmat = par["w"].reshape(f, -1)
            dcols = np.matmul(wmat.T, dmat)
            _, cpad, hpad, wpad = entry["padded_shape"]
            dx = ops.col2im_batch_accumulate(dcols, cpad, hpad, wpad)
            if spec.padding:
                p = spec.padding
                dx = dx[:, :, p:-p, p:-p]
            dcur = dx
        elif spec.kind == "maxpool2x2":
            dcur = maxpool2x2_backward(dcur, entry["arg"], below.shape)
        elif spec.kind == "activation":
            dcur = dcur * _activation_grad(spec.activation_kind, spec.alpha, entry["out"])
        elif spec.kind == "flatten":
            dcur = dcur.reshape(below.shape)
        elif spec.kind == "dropout":
            if "mask" in entry:
                dcur = dcur * entry["mask"]
        elif spec.kind == "dense":
            if spec.activation_kind:
                dcur = dcur * _activation_grad(spec.activation_kind, spec.alpha, entry["out"])
            grad["w"][...] = below.T @ dcur
            grad["b"][...] = dcur.sum(axis=0)
            dcur = dcur @ par["w"].T
        if l2_lambda and "w" in grad:
            grad["w"] += (2.0 * l2_lambda) * par["w"]
    if return_input_grad:
        return loss, net.grads, dcur
    return loss, net.grads


def predict_probs(net, x, batch_size=64):
    """Eval-mode probabilities over x in deterministic batches."""
    x = np.asarray(x)
    out = []
    for start in range(0, x.shape[0], batch_size):
        probs, _ = forward(net, x[start:start + batch_size], mode="eval")
        out.append(probs)
    return np.concatenate(out, axis=0)


def extract_features(net, batch):
    """Eval-mode output of the flatten layer (the conv-stack feature vector)."""
    flat = [i for i, s in enumerate(net.layers) if s.kind == "flatten"]
    if not flat:
        raise ValueError("network has no flatten layer")
    _, acts = forward(net, batch, mode="eval")
    return acts[flat[0] + 1]["out"]


def dead_filter_report(activations, layer_index):
    """Count filters whose activation map is exactly zero across the batch.

    layer_index addresses the network's layer list (the conv output sits
    at activations[layer_index + 1]).  Returns (dead, total, fraction).
    """
    entry = activations[layer_index + 1]
    if entry["kind"] != "conv3x3":
        raise ValueError(f"layer {layer_index} is {entry['kind']}, not a convolution")
    maps = entry["out"]
    dead = int(np.sum(np.all(maps == 0.0, axis=(0, 2, 3))))
    total = maps.shape[1]
    return dead, total, dead / total


def export_activation_maps(activations, layer_index, out_dir, layer_label=None):
    """Write one min-max normalized 8-bit grayscale PNG per filter map.

    Maps come from the first sample of the batch; files are named
    layer{L}_filter{F}.png.  A constant map exports as all black.
    Returns the written paths.
    """
    from PIL import Image
    import os

    entry = activations[layer_index + 1]
    if entry["kind"] != "conv3x3":
        raise ValueError(f"layer {layer_index} is {entry['kind']}, not a convolution")
    label = layer_index if layer_label is None else layer_label
    maps = entry["out"][0]
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for f in range(maps.shape[0]):
        amap = maps[f].astype(np.float64)
        lo, hi = amap.min(), amap.max()
        norm = np.zeros_like(amap) if hi == lo else (amap - lo) / (hi - lo)
        img = Image.fromarray(np.round(norm * 255).astype(np.uint8), mode="L")
        path = os.path.join(out_dir, f"layer{label}_filter{f}.png")
        img.save(path)
        paths.append(path)
    return paths
