"""Splits, RMSE, the builtin forecaster, optimizers, and the trainer protocol."""

import json
import math
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaopt.dataset import SeriesDataset, save_csv
from metaopt.errors import (
    ConstantFeature,
    EmptyInput,
    LengthMismatch,
    NonFiniteLoss,
    NonZeroExit,
    ProtocolViolation,
    TooShort,
    TrainerTimeout,
)
from metaopt.objective import (
    Adam,
    AdamW,
    Adamax,
    RmsProp,
    Sgd,
    TrainerSpec,
    WindowForecaster,
    evaluate_subprocess,
    make_split,
    make_optimizer,
    persistence_rmse,
    rmse,
    train_builtin_forecaster,
)
from metaopt.search_space import HyperparamConfig
from metaopt.synthetic import make_ar2_dataset


def _dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return SeriesDataset(
        feature_names=["y", "x"],
        values={"y": rng.normal(size=n).cumsum() + 10,
                "x": rng.normal(size=n)},
    )


class TestSplit:
    def test_floor_boundary(self):
        ds = _dataset(10)
        split = make_split(ds, 0.7, 1, "y")
        assert split.boundary == 7  # train rows 0..6, test rows 7..9

    def test_scaling_from_train_segment(self):
        values = {"y": np.array([2.0, 8.0, 5.0, 4.0, 6.0, 3.0, 7.0, 11.0, 1.0, 9.0])}
        ds = SeriesDataset(["y"], values)
        split = make_split(ds, 0.7, 1, "y")
        assert split.scaling["y"] == (2.0, 8.0)
        assert split.scale("y", np.array([5.0]))[0] == pytest.approx(0.5)
        # no clipping outside the train range
        assert split.scale("y", np.array([11.0]))[0] == pytest.approx(1.5)

    def test_scaling_round_trip(self):
        ds = _dataset(50, seed=3)
        split = make_split(ds, 0.7, 2, "y")
        train = ds.values["y"][:split.boundary]
        back = split.unscale("y", split.scale("y", train))
        assert np.allclose(back, train, atol=1e-12)

    def test_constant_feature_rejected(self):
        ds = SeriesDataset(["y", "c"], {"y": np.arange(20.0), "c": np.ones(20)})
        with pytest.raises(ConstantFeature):
            make_split(ds, 0.7, 1, "y")

    def test_too_short(self):
        with pytest.raises(TooShort):
            make_split(_dataset(8), 0.7, 1, "y")


class TestRmse:
    def test_identity(self):
        assert rmse([1, 2, 3], [1, 2, 3]) == 0.0

    def test_hand_value(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))

    def test_single_element(self):
        assert rmse([5], [2]) == 3.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rmse([1, 2], [1])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            rmse([], [])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30),
           st.floats(-1e3, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_sign_symmetry(self, values, r):
        a = np.array(values)
        assert rmse(a, a + r) == pytest.approx(rmse(a, a - r), rel=1e-9, abs=1e-9)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30),
           st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_scales_linearly(self, values, k):
        a = np.array(values)
        b = a + 1.5
        assert rmse(k * a, k * b) == pytest.approx(abs(k) * rmse(a, b),
                                                   rel=1e-9, abs=1e-9)


class TestOptimizers:
    def test_adam_single_step_hand_arithmetic(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        theta = np.array([1.0, -2.0])
        grad = 2.0 * theta  # gradient of theta_1^2 + theta_2^2
        params = [theta.copy()]
        opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps)
        opt.step(params, [grad.copy()])

        m = (1 - b1) * grad
        v = (1 - b2) * grad ** 2
        m_hat = m / (1 - b1)
        v_hat = v / (1 - b2)
        expected = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        assert np.all(np.abs(params[0] - expected) <= 1e-12)

    def test_sgd_step(self):
        theta = np.array([1.0, 1.0])
        params = [theta.copy()]
        Sgd(lr=0.5).step(params, [np.array([2.0, -2.0])])
        assert np.allclose(params[0], [0.0, 2.0])

    def test_adamax_first_step_magnitude(self):
        # u = max(0, |g|) = |g|, so the first step is lr * sign(g) (eps aside)
        theta = np.array([0.0])
        params = [theta.copy()]
        Adamax(lr=0.01).step(params, [np.array([3.0])])
        assert params[0][0] == pytest.approx(-0.01, rel=1e-6)

    def test_rmsprop_first_step(self):
        lr, alpha, eps = 0.01, 0.99, 1e-8
        g = np.array([4.0])
        params = [np.array([0.0])]
        RmsProp(lr=lr, alpha=alpha, eps=eps).step(params, [g])
        v = (1 - alpha) * g ** 2
        assert params[0][0] == pytest.approx(-lr * 4.0 / (math.sqrt(v[0]) + eps))

    def test_adamw_decay_is_decoupled(self):
        params = [np.array([1.0])]
        AdamW(lr=0.1, weight_decay=0.5).step(params, [np.array([0.0])])
        # zero gradient: only the decay term moves the weight
        assert params[0][0] == pytest.approx(1.0 - 0.1 * 0.5)

    @pytest.mark.parametrize("name", ["SGD", "Adam", "AdamW", "Adamax", "RMSprop"])
    def test_zero_lr_freezes_weights(self, name):
        rng = np.random.default_rng(0)
        params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
        snapshot = [p.copy() for p in params]
        opt = make_optimizer(name, lr=0.0)
        for _ in range(5):
            opt.step(params, [rng.normal(size=p.shape) for p in params])
        for p, s in zip(params, snapshot):
            assert np.array_equal(p, s)


@pytest.fixture(scope="module")
def ar2():
    ds = make_ar2_dataset(n=2000, seed=7)
    return ds, make_split(ds, 0.7, 4, "y")


class TestBuiltinTrainer:

    def test_beats_persistence(self, ar2):
        ds, split = ar2
        cfg = HyperparamConfig({"lag": 8, "hidden_size": 32, "num_layers": 1,
                                "dropout": 0.0, "lr": 1e-3, "batch_size": 32,
                                "epochs": 30, "optimizer": "Adam"})
        result = train_builtin_forecaster(cfg, split, ds, seed=0)
        baseline = persistence_rmse(ds, split, lag=8)
        assert result.loss <= 0.9 * baseline

    def test_deterministic(self, ar2):
        ds, split = ar2
        cfg = HyperparamConfig({"lag": 6, "hidden_size": 16, "num_layers": 1,
                                "dropout": 0.2, "lr": 1e-3, "batch_size": 64,
                                "epochs": 3, "optimizer": "Adam"})
        r1 = train_builtin_forecaster(cfg, split, ds, seed=11)
        r2 = train_builtin_forecaster(cfg, split, ds, seed=11)
        assert r1.loss == r2.loss

    def test_weak_lr_is_no_learning(self):
        # drift per weight is bounded by steps * lr, so the trained model must
        # match the untrained oracle to high relative precision
        ds = make_ar2_dataset(n=300, seed=7)
        split = make_split(ds, 0.7, 4, "y")
        weak = HyperparamConfig({"lag": 3, "hidden_size": 5, "num_layers": 6,
                                 "dropout": 0.5, "lr": 1e-9, "batch_size": 128,
                                 "epochs": 10, "optimizer": "Adam"})
        untrained = HyperparamConfig({**weak.assignments, "epochs": 0})
        r_weak = train_builtin_forecaster(weak, split, ds, seed=0)
        r_zero = train_builtin_forecaster(untrained, split, ds, seed=0)
        assert abs(r_weak.loss - r_zero.loss) <= 1e-6 * max(1.0, r_zero.loss)

    def test_zero_lr_equals_untrained_exactly(self):
        ds = make_ar2_dataset(n=300, seed=7)
        split = make_split(ds, 0.7, 4, "y")
        frozen = HyperparamConfig({"lag": 4, "hidden_size": 8, "num_layers": 2,
                                   "dropout": 0.3, "lr": 0.0, "batch_size": 32,
                                   "epochs": 5, "optimizer": "SGD"})
        untrained = HyperparamConfig({**frozen.assignments, "epochs": 0})
        r1 = train_builtin_forecaster(frozen, split, ds, seed=4)
        r2 = train_builtin_forecaster(untrained, split, ds, seed=4)
        assert r1.loss == r2.loss

    def test_high_dropout_still_finite(self):
        ds = make_ar2_dataset(n=400, seed=9)
        split = make_split(ds, 0.7, 4, "y")
        for rate in (0.0, 0.6):
            cfg = HyperparamConfig({"lag": 4, "hidden_size": 8, "num_layers": 1,
                                    "dropout": rate, "lr": 1e-3, "batch_size": 32,
                                    "epochs": 3, "optimizer": "Adam"})
            result = train_builtin_forecaster(cfg, split, ds, seed=0)
            assert math.isfinite(result.loss)

    def test_divergence_fails_trial(self):
        ds = make_ar2_dataset(n=400, seed=9)
        split = make_split(ds, 0.7, 4, "y")
        cfg = HyperparamConfig({"lag": 4, "hidden_size": 8, "num_layers": 1,
                                "dropout": 0.0, "lr": 1e9, "batch_size": 32,
                                "epochs": 10, "optimizer": "SGD"})
        with pytest.raises(NonFiniteLoss):
            train_builtin_forecaster(cfg, split, ds, seed=0)

    def test_backprop_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        model = WindowForecaster(input_dim=4, hidden_size=3, num_layers=2, rng=rng)
        x = rng.normal(size=(5, 4))
        y = rng.normal(size=5)

        def loss_value():
            pred, _ = model.forward(x)
            return float(np.mean((pred - y) ** 2))

        pred, cache = model.forward(x)
        grads = model.backward(cache, 2.0 * (pred - y) / len(y))
        eps = 1e-6
        for p, g in zip(model.params, grads):
            it = np.nditer(p, flags=["multi_index"])
            for _ in range(min(p.size, 4)):
                idx = it.multi_index
                old = p[idx]
                p[idx] = old + eps
                up = loss_value()
                p[idx] = old - eps
                down = loss_value()
                p[idx] = old
                numeric = (up - down) / (2 * eps)
                assert g[idx] == pytest.approx(numeric, rel=1e-4, abs=1e-6)
                it.iternext()


ECHO_TRAINER = textwrap.dedent("""
    import json, sys
    request = json.loads(sys.stdin.readline())
    print(json.dumps({"loss": 1.0, "t_train": 0.5, "t_eval": 0.1, "n_test": 10}))
""")

GARBAGE_TRAINER = 'print("this is not json at all")'

SLEEPY_TRAINER = textwrap.dedent("""
    import sys, time
    sys.stdin.readline()
    time.sleep(30)
""")

ERROR_TRAINER = textwrap.dedent("""
    import json, sys
    sys.stdin.readline()
    print(json.dumps({"error": "bad request"}))
    sys.exit(1)
""")

CHATTY_TRAINER = textwrap.dedent("""
    import json, sys
    sys.stdin.readline()
    print("log line on stdout")
    print(json.dumps({"loss": 1.0, "t_train": 0.1, "t_eval": 0.1, "n_test": 5}))
""")


class TestSubprocessProtocol:
    @pytest.fixture()
    def env(self, tmp_path):
        ds = _dataset(40, seed=1)
        data_path = tmp_path / "data.csv"
        save_csv(ds, data_path)
        split = make_split(ds, 0.7, 1, "y")
        cfg = HyperparamConfig({"lag": 3, "hidden_size": 8, "num_layers": 1,
                                "dropout": 0.0, "lr": 1e-3, "batch_size": 16,
                                "epochs": 1, "optimizer": "Adam"})

        def run_with(script: str, timeout: float = 20.0):
            script_path = tmp_path / "trainer.py"
            script_path.write_text(script, encoding="utf-8")
            spec = TrainerSpec(kind="subprocess",
                               command=(sys.executable, str(script_path)),
                               timeout=timeout, data_path=str(data_path))
            return evaluate_subprocess(spec, cfg, split, ds, seed=0)

        return run_with

    def test_conformant_round_trip(self, env):
        result = env(ECHO_TRAINER)
        assert result.loss == 1.0 and result.n_test == 10

    def test_non_json_reply(self, env):
        with pytest.raises(ProtocolViolation):
            env(GARBAGE_TRAINER)

    def test_timeout(self, env):
        with pytest.raises(TrainerTimeout):
            env(SLEEPY_TRAINER, timeout=1.0)

    def test_error_object_and_exit(self, env):
        with pytest.raises(NonZeroExit) as info:
            env(ERROR_TRAINER)
        assert "bad request" in str(info.value)

    def test_extra_stdout_lines_rejected(self, env):
        with pytest.raises(ProtocolViolation):
            env(CHATTY_TRAINER)

    def test_request_shape_on_the_wire(self, tmp_path):
        ds = _dataset(40, seed=1)
        data_path = tmp_path / "data.csv"
        save_csv(ds, data_path)
        split = make_split(ds, 0.7, 1, "y")
        echo_request = textwrap.dedent("""
            import json, sys
            request = json.loads(sys.stdin.readline())
            keys = sorted(request.keys())
            print(json.dumps({"loss": float(len(keys)), "t_train": 0,
                              "t_eval": 0, "n_test": 1,
                              "diagnostics": {"keys": keys,
                                              "protocol": request["protocol"]}}))
        """)
        script = tmp_path / "echo.py"
        script.write_text(echo_request, encoding="utf-8")
        spec = TrainerSpec(kind="subprocess", command=(sys.executable, str(script)),
                           timeout=20.0, data_path=str(data_path))
        cfg = HyperparamConfig({"lag": 3})
        result = evaluate_subprocess(spec, cfg, split, ds, seed=0)
        assert result.diagnostics["protocol"] == "metaopt-trainer/1"
        assert result.diagnostics["keys"] == [
            "config", "data_path", "horizon", "protocol", "seed",
            "target_feature", "train_fraction",
        ]
