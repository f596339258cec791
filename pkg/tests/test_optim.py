import numpy as np
import pytest

from stormchip.augment import AugmentConfig
from stormchip.net import LayerSpec, Network
from stormchip.optim import (EpochStats, OptimizerConfig, TrainConfig, adam_step, fit,
                             init_optimizer_state, initialize_network, rmsprop_step,
                             write_history_csv, xavier_init)


def adam_scalar_reference(g_seq, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8, theta=0.0):
    """Independent scalar Adam, float64 throughout."""
    m = v = 0.0
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta -= lr * mhat / (np.sqrt(vhat) + eps)
    return theta


def rmsprop_scalar_reference(g_seq, lr=1e-4, rho=0.9, eps=1e-7, theta=1.0):
    v = 0.0
    for g in g_seq:
        v = rho * v + (1 - rho) * g * g
        theta -= lr * g / (np.sqrt(v) + eps)
    return theta


class TestXavierInit:
    def test_bound_is_one_for_fans_of_three(self):
        rng = np.random.default_rng(0)
        t = xavier_init((1000,), 3, 3, rng, dtype=np.float64)
        assert np.all(t >= -1.0) and np.all(t <= 1.0)
        assert t.max() > 0.9 and t.min() < -0.9  # actually fills the interval

    def test_variance_matches_uniform_formula(self):
        rng = np.random.default_rng(1)
        t = xavier_init((100_000,), 100, 100, rng, dtype=np.float64)
        target = 2.0 / (100 + 100)  # L^2 / 3 with L = sqrt(6/200)
        assert abs(t.var() - target) < 0.1 * target

    def test_same_seed_bitwise_identical(self):
        a = xavier_init((4, 4), 5, 7, np.random.default_rng(42))
        b = xavier_init((4, 4), 5, 7, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_bad_fans(self):
        with pytest.raises(ValueError):
            xavier_init((2,), 0, 3, np.random.default_rng(0))


class TestRmsprop:
    def test_zero_gradient_is_noop(self):
        cfg = OptimizerConfig(kind="rmsprop")
        param = np.array([1.0, -2.0])
        state = {"v": np.zeros(2)}
        rmsprop_step(param, np.zeros(2), state, cfg)
        assert param.tolist() == [1.0, -2.0]

    def test_scalar_hand_computation(self):
        cfg = OptimizerConfig(kind="rmsprop", learning_rate=1e-4)
        assert cfg.epsilon == 1e-7
        param = np.array(1.0)
        state = {"v": np.zeros(())}
        rmsprop_step(param, np.array(1.0), state, cfg)
        assert abs(float(state["v"]) - 0.1) < 1e-15
        expected = 1.0 - 1e-4 / (np.sqrt(0.1) + 1e-7)
        assert abs(float(param) - expected) < 1e-15
        assert abs(float(param) - 0.99968377) < 1e-8

    def test_ten_steps_match_scalar_reference(self):
        cfg = OptimizerConfig(kind="rmsprop", learning_rate=1e-4)
        param = np.array(1.0)
        state = {"v": np.zeros(())}
        for _ in range(10):
            rmsprop_step(param, np.array(1.0), state, cfg)
        assert abs(float(param) - rmsprop_scalar_reference([1.0] * 10)) < 1e-12

    def test_step_magnitude_approaches_lr_for_constant_gradient(self):
        # v converges to g^2, so each step tends to lr in magnitude.
        cfg = OptimizerConfig(kind="rmsprop", learning_rate=1e-4)
        param = np.array(1.0)
        state = {"v": np.zeros(())}
        prev = float(param)
        for _ in range(200):
            prev = float(param)
            rmsprop_step(param, np.array(1.0), state, cfg)
        assert abs((prev - float(param)) - 1e-4) < 1e-6


class TestAdam:
    def test_zero_gradient_fresh_state_is_noop(self):
        cfg = OptimizerConfig(kind="adam")
        param = np.array([0.5])
        state = {"m": np.zeros(1), "v": np.zeros(1), "t": 0}
        adam_step(param, np.zeros(1), state, cfg)
        assert param.tolist() == [0.5]

    def test_first_step_hand_computation(self):
        cfg = OptimizerConfig(kind="adam", learning_rate=1e-4)
        assert cfg.epsilon == 1e-8
        param = np.array(0.0)
        state = {"m": np.zeros(()), "v": np.zeros(()), "t": 0}
        adam_step(param, np.array(1.0), state, cfg)
        assert abs(float(param) - (-1e-4 / (1.0 + 1e-8))) < 1e-15
        assert abs(float(param) - (-9.9999e-5)) < 1e-8

    def test_ten_steps_match_scalar_reference(self):
        cfg = OptimizerConfig(kind="adam", learning_rate=1e-4)
        param = np.array(0.0)
        state = {"m": np.zeros(()), "v": np.zeros(()), "t": 0}
        for _ in range(10):
            adam_step(param, np.array(1.0), state, cfg)
        assert abs(float(param) - adam_scalar_reference([1.0] * 10)) < 1e-12

    def test_two_steps_varied_gradients(self):
        cfg = OptimizerConfig(kind="adam", learning_rate=1e-4)
        param = np.array(0.0)
        state = {"m": np.zeros(()), "v": np.zeros(()), "t": 0}
        for g in (1.0, -0.3):
            adam_step(param, np.array(g), state, cfg)
        assert abs(float(param) - adam_scalar_reference([1.0, -0.3])) < 1e-12


class TestOptimizerConfigValidation:
    def test_bad_learning_rate(self):
        with pytest.raises(ValueError):
            OptimizerConfig(learning_rate=-1e-4)

    def test_bad_beta(self):
        with pytest.raises(ValueError):
            OptimizerConfig(adam_beta1=1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            OptimizerConfig(kind="sgd")


def tiny_dataset(n=16, size=12, seed=0):
    """Linearly separable chips: bright square on dark vs dark square on bright."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(n):
        label = i % 2
        base = 0.15 if label else 0.85
        square = 0.9 if label else 0.1
        img = np.full((3, size, size), base, dtype=np.float32)
        img += rng.normal(0, 0.02, img.shape).astype(np.float32)
        lo, hi = size // 4, 3 * size // 4
        img[:, lo:hi, lo:hi] = square
        xs.append(np.clip(img, 0.0, 1.0))
        ys.append(float(label))
    return np.stack(xs), np.asarray(ys, dtype=np.float32)


def tiny_net(size=12):
    layers = [LayerSpec("conv3x3", out_channels=4, activation_kind="relu"),
              LayerSpec("maxpool2x2"),
              LayerSpec("flatten"),
              LayerSpec("dense", out_units=8, activation_kind="relu"),
              LayerSpec("dense", out_units=1, activation_kind="sigmoid")]
    return Network(layers, (3, size, size))


def quick_config(epochs, lr=1e-3, seed=0):
    return TrainConfig(batch_size=8, epochs=epochs, seed=seed,
                       augmentation=AugmentConfig(enabled=False),
                       optimizer=OptimizerConfig(kind="adam", learning_rate=lr, l2_lambda=0.0))


class TestFit:
    @pytest.mark.parametrize("kind", ["adam", "rmsprop"])
    def test_zero_learning_rate_keeps_weights(self, kind):
        x, y = tiny_dataset()
        net = tiny_net()
        initialize_network(net, np.random.default_rng(1))
        before = net.copy_params()
        cfg = TrainConfig(batch_size=8, epochs=1, seed=0,
                          augmentation=AugmentConfig(enabled=False),
                          optimizer=OptimizerConfig(kind=kind, learning_rate=0.0,
                                                    l2_lambda=0.0))
        fit(net, (x, y), (x, y), cfg)
        for b, p in zip(before, net.params):
            for k in b:
                assert np.array_equal(b[k], p[k])

    def test_overfits_separable_chips(self):
        x, y = tiny_dataset()
        net = tiny_net()
        initialize_network(net, np.random.default_rng(2))
        reached = False
        for _ in range(20):  # up to 200 epochs in chunks of 10
            _, history = fit(net, (x, y), (x, y), quick_config(epochs=10))
            from stormchip.net import predict_probs
            probs = predict_probs(net, x).ravel()
            if np.all((probs >= 0.5) == (y >= 0.5)):
                reached = True
                break
        assert reached

    def test_same_seed_identical_history_and_weights(self):
        x, y = tiny_dataset()
        histories = []
        nets = []
        for _ in range(2):
            net = tiny_net()
            initialize_network(net, np.random.default_rng(3))
            _, history = fit(net, (x, y), (x, y), quick_config(epochs=3, seed=11))
            histories.append([(h.train_loss, h.train_acc, h.val_loss, h.val_acc)
                              for h in history])
            nets.append(net)
        assert histories[0] == histories[1]
        for a, b in zip(nets[0].params, nets[1].params):
            for k in a:
                assert np.array_equal(a[k], b[k])

    def test_augmented_training_is_deterministic(self):
        x, y = tiny_dataset()
        cfg = TrainConfig(batch_size=8, epochs=2, seed=5,
                          augmentation=AugmentConfig(),  # augmentation on
                          optimizer=OptimizerConfig(kind="rmsprop", learning_rate=1e-3,
                                                    l2_lambda=1e-6))
        results = []
        for _ in range(2):
            net = tiny_net()
            initialize_network(net, np.random.default_rng(6))
            _, history = fit(net, (x, y), (x, y), cfg)
            results.append([h.train_loss for h in history])
        assert results[0] == results[1]

    def test_history_has_one_row_per_epoch(self):
        x, y = tiny_dataset()
        net = tiny_net()
        initialize_network(net, np.random.default_rng(4))
        _, history = fit(net, (x, y), (x, y), quick_config(epochs=4))
        assert [h.epoch for h in history] == [1, 2, 3, 4]
        for h in history:
            assert 0.0 <= h.train_acc <= 1.0
            assert 0.0 <= h.val_acc <= 1.0

    def test_empty_dataset_rejected(self):
        net = tiny_net()
        x, y = tiny_dataset()
        empty = (np.zeros((0, 3, 12, 12), dtype=np.float32), np.zeros(0, dtype=np.float32))
        with pytest.raises(ValueError):
            fit(net, empty, (x, y), quick_config(epochs=1))

    def test_best_epoch_snapshot_recorded(self):
        x, y = tiny_dataset()
        net = tiny_net()
        initialize_network(net, np.random.default_rng(5))
        _, history = fit(net, (x, y), (x, y), quick_config(epochs=3))
        assert net.best_params is not None
        assert 1 <= net.best_epoch <= 3

    def test_l2_shrinks_weights_without_data_signal(self):
        # Gradient contribution 2*lambda*W alone must strictly shrink weights.
        cfg = OptimizerConfig(kind="adam", learning_rate=1e-3, l2_lambda=1e-2)
        w = np.array(0.5)
        state = {"m": np.zeros(()), "v": np.zeros(()), "t": 0}
        prev = float(abs(w))
        for _ in range(5):
            adam_step(w, 2 * cfg.l2_lambda * w, state, cfg)
            assert abs(float(w)) < prev
            prev = abs(float(w))

    def test_optimizer_state_shapes_mirror_params(self):
        net = tiny_net()
        state = init_optimizer_state(net, OptimizerConfig(kind="adam"))
        for slot, par in zip(state.slots, net.params):
            assert set(slot) == set(par)
            for name in par:
                assert slot[name]["m"].shape == par[name].shape
                assert slot[name]["v"].shape == par[name].shape


class TestHistoryCsv:
    def test_round_trip_format(self, tmp_path):
        rows = [EpochStats(1, 0.5, 0.75, 0.6, 0.7), EpochStats(2, 0.4, 0.8, 0.5, 0.75)]
        path = tmp_path / "history.csv"
        write_history_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
        assert lines[1].startswith("1,0.500000,0.750000")
        assert len(lines) == 3
