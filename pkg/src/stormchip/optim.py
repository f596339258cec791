"""Initialization, RMSprop/Adam, and the epoch-level training loop."""

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment_batch
from .net import backward, forward

# Sub-stream tags so shuffling, augmentation, and dropout draw from
# independent deterministic streams of the run seed.
_AUG_TAG = 17
_DROP_TAG = 29


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-4
    rmsprop_decay: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epsilon: float | None = None  # default 1e-8 for adam, 1e-7 for rmsprop
    l2_lambda: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        for beta in (self.adam_beta1, self.adam_beta2, self.rmsprop_decay):
            if not 0.0 < beta < 1.0:
                raise ValueError("decay factors must lie in (0, 1)")
        if self.epsilon is None:
            self.epsilon = 1e-8 if self.kind == "adam" else 1e-7
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dropout_variant: str = "DO"       # none | DO | FDO (consumed by the builders)
    activation_variant: str = "relu"  # relu | leaky

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class OptimizerState:
    """Per-parameter moment buffers mirroring the network's params."""

    slots: list
    step_count: int = 0


def xavier_init(shape, fan_in, fan_out, rng, dtype=np.float32):
    """Uniform draw from [-L, L] with L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(dtype)


def initialize_network(net, rng):
    """Fan-scaled uniform weights, zero biases, in layer order."""
    for spec, par in zip(net.layers, net.params):
        if spec.kind == "conv3x3":
            fan_in = par["w"].shape[1] * 9
            fan_out = par["w"].shape[0] * 9
        elif spec.kind == "dense":
            fan_in, fan_out = par["w"].shape
        else:
            continue
        par["w"][...] = xavier_init(par["w"].shape, fan_in, fan_out, rng, dtype=net.dtype)
        par["b"][...] = 0.0
    return net


def init_optimizer_state(net, cfg):
    slots = []
    for par in net.params:
        slot = {}
        for name, value in par.items():
            if cfg.kind == "adam":
                slot[name] = {"m": np.zeros_like(value), "v": np.zeros_like(value), "t": 0}
            else:
                slot[name] = {"v": np.zeros_like(value)}
        slots.append(slot)
    return OptimizerState(slots=slots)


def rmsprop_step(param, grad, state, cfg):
    """v <- rho*v + (1-rho)*g^2 ; theta <- theta - lr*g/(sqrt(v)+eps)."""
    rho = cfg.rmsprop_decay
    v = state["v"]
    v *= rho
    v += (1.0 - rho) * grad * grad
    param -= cfg.learning_rate * grad / (np.sqrt(v) + cfg.epsilon)
    return param, state


def adam_step(param, grad, state, cfg):
    """Bias-corrected Adam update."""
    state["t"] += 1
    t = state["t"]
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m, v = state["m"], state["v"]
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    param -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.epsilon)
    return param, state


def apply_gradients(net, state, cfg):
    """One optimizer step over every parameter tensor of the network."""
    step = adam_step if cfg.kind == "adam" else rmsprop_step
    state.step_count += 1
    for par, grad, slot in zip(net.params, net.grads, state.slots):
        for name in par:
            step(par[name], grad[name], slot[name], cfg)
    return state


def _as_float_batch(x, dtype):
    # Datasets may be stored as uint8 to save memory; scale on the fly.
    if np.issubdtype(x.dtype, np.integer):
        return x.astype(dtype) / dtype.type(255.0)
    return x.astype(dtype, copy=False)


def _eval_pass(net, x, y, batch_size, l2_lambda):
    """Eval-mode loss (incl. the L2 penalty) and accuracy over a dataset."""
    from .net import bce_loss, l2_penalty

    n = x.shape[0]
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb = _as_float_batch(x[start:start + batch_size], net.dtype)
        yb = y[start:start + batch_size].reshape(-1, 1)
        probs, _ = forward(net, xb, mode="eval")
        loss_sum += bce_loss(probs, yb) * xb.shape[0]
        correct += int(np.sum((probs >= 0.5) == (yb >= 0.5)))
    return loss_sum / n + l2_penalty(net, l2_lambda), correct / n


def fit(net, train_set, val_set, cfg):
    """Train the network, returning (net, per-epoch history).

    train_set and val_set are (images, labels) pairs; images are
    N x C x H x W float in [0, 1] (or uint8, scaled on the fly) and
    labels are N (or N x 1) in {0, 1}.  Each epoch re-shuffles the
    training set from the run seed; the trailing partial batch is used.
    Augmentation applies to training batches only.  Training loss and
    accuracy are the running values seen during the epoch (dropout and
    augmentation active); validation runs in eval mode.  The parameter
    snapshot of the best validation epoch lands in net.best_params.
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    x_train = np.asarray(x_train)
    y_train = np.asarray(y_train)
    x_val = np.asarray(x_val)
    y_val = np.asarray(y_val)
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("train and validation sets must be non-empty")

    opt = cfg.optimizer
    state = init_optimizer_state(net, opt)
    shuffle_rng = np.random.default_rng(cfg.seed)
    history = []
    best_acc = -1.0
    n = x_train.shape[0]
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for b_idx, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            xb = _as_float_batch(x_train[idx], net.dtype)
            yb = y_train[idx].reshape(-1, 1)
            if cfg.augmentation.enabled:
                aug_rng = np.random.default_rng([cfg.seed, _AUG_TAG, epoch, b_idx])
                xb = augment_batch(xb, cfg.augmentation, aug_rng)
            drop_rng = np.random.default_rng([cfg.seed, _DROP_TAG, epoch, b_idx])
            probs, acts = forward(net, xb, mode="train", rng=drop_rng)
            loss, _ = backward(net, acts, yb, l2_lambda=opt.l2_lambda)
            apply_gradients(net, state, opt)
            loss_sum += loss * xb.shape[0]
            correct += int(np.sum((probs >= 0.5) == (yb >= 0.5)))
        val_loss, val_acc = _eval_pass(net, x_val, y_val, cfg.batch_size, opt.l2_lambda)
        history.append(EpochStats(epoch=epoch + 1,
                                  train_loss=loss_sum / n,
                                  train_acc=correct / n,
                                  val_loss=val_loss,
                                  val_acc=val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            net.best_params = net.copy_params()
            net.best_epoch = epoch + 1
    return net, history


def write_history_csv(history, path):
    """epoch,train_loss,train_acc,val_loss,val_acc rows, one per epoch."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for row in history:
            fh.write(f"{row.epoch},{row.train_loss:.6f},{row.train_acc:.6f},"
                     f"{row.val_loss:.6f},{row.val_acc:.6f}\n")
