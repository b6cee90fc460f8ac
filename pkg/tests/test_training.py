import json
import math

import numpy as np
import pytest

from ailsr.data import Dataset, extract_patches, load_eval_images, make_pair
from ailsr.importance import AilConfig, ImportanceStore
from ailsr.model import ModelSpec, build_network, parameter_digest, zero_network
from ailsr.numcore import ShapeError, numerical_gradient
from ailsr.samples import sample_dir
from ailsr.training import (
    DistillConfig,
    MissingTeacherError,
    TrainConfig,
    TrainLog,
    compute_residual_maps,
    distill_loss,
    lr_at,
    predict,
    run_ail,
    run_distill,
    run_traditional,
    train_epochs,
    weighted_mse,
)

from oracles import loop_weighted_mse

SPEC = ModelSpec(depth=3, base_width=4, seed=1)
FAST = dict(batch_size=4, lr_initial=0.5, lr_decay_every=3, weight_decay=1e-5, clip=0.05, clip_mode="norm")


def toy_data(n=8, size=16, scale=2):
    pairs = []
    for name, hr in load_eval_images(sample_dir("val"))[:2]:
        pairs.extend(extract_patches(make_pair(hr, scale, f"{name}:s1r0f0"), size, size))
    return Dataset.from_pairs(pairs[:n])


@pytest.fixture(scope="module")
def data():
    return toy_data()


class TestSchedule:
    @pytest.mark.parametrize("epoch,lr", [(0, 0.1), (9, 0.1), (10, 0.01), (49, 1e-5)])
    def test_defaults(self, epoch, lr):
        assert lr_at(epoch, TrainConfig()) == pytest.approx(lr, rel=1e-12)

    def test_negative(self):
        with pytest.raises(ValueError):
            lr_at(-1, TrainConfig())

    def test_config_defaults(self):
        c = TrainConfig()
        assert (c.epochs_per_round, c.batch_size, c.momentum, c.weight_decay, c.clip) == (50, 128, 0.9, 1e-4, 0.4)
        assert c.epochs_per_ail_round == 10
        assert TrainConfig(round_epochs=3).epochs_per_ail_round == 3
        assert DistillConfig().beta == 0.1

    @pytest.mark.parametrize("kw", [{"scheme": "x"}, {"batch_size": 0}, {"lr_initial": 0}, {"round_epochs": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            DistillConfig(beta=-0.1)


class TestLosses:
    def test_unit_weights_plain_mse(self):
        r = np.random.default_rng(0)
        y, yh = r.uniform(size=(2, 1, 4, 4)), r.uniform(size=(2, 1, 4, 4))
        l1, g1 = weighted_mse(y, yh, np.ones_like(y))
        l0, g0 = weighted_mse(y, yh)
        assert l1 == pytest.approx(np.mean((y - yh) ** 2), abs=1e-15) and l1 == l0
        np.testing.assert_allclose(g1, 2 * (yh - y) / y.size, atol=1e-16)
        np.testing.assert_array_equal(g0, g1)

    def test_zero_weights(self):
        r = np.random.default_rng(1)
        l, g = weighted_mse(r.uniform(size=(4, 4)), r.uniform(size=(4, 4)), np.zeros((4, 4)))
        assert l == 0.0 and not g.any()

    def test_against_loop_and_fd(self):
        r = np.random.default_rng(2)
        y, yh, w = r.uniform(size=(4, 4)), r.uniform(size=(4, 4)), r.uniform(size=(4, 4))
        loss, grad = weighted_mse(y, yh, w)
        assert loss == pytest.approx(loop_weighted_mse(y, yh, w), abs=1e-15)
        num = numerical_gradient(lambda: weighted_mse(y, yh, w)[0], yh, 1e-5)
        assert np.max(np.abs(num - grad) / np.maximum(np.abs(grad), 1e-6)) <= 1e-6

    def test_distill_fd(self):
        r = np.random.default_rng(3)
        y, yh, t = (r.uniform(size=(1, 1, 4, 4)) for _ in range(3))
        loss, grad = distill_loss(y, yh, t, 0.1)
        assert loss == pytest.approx(np.mean((y - yh) ** 2) + 0.1 * np.mean((t - yh) ** 2), abs=1e-15)
        num = numerical_gradient(lambda: distill_loss(y, yh, t, 0.1)[0], yh, 1e-5)
        assert np.max(np.abs(num - grad) / np.maximum(np.abs(grad), 1e-6)) <= 1e-4

    def test_doubling_weight_increases_gradient(self):
        y, yh = np.array([[0.2, 0.4]]), np.array([[0.5, 0.1]])
        _, g1 = weighted_mse(y, yh, np.array([[0.3, 0.3]]))
        _, g2 = weighted_mse(y, yh, np.array([[0.6, 0.3]]))
        assert abs(g2[0, 0]) > abs(g1[0, 0]) and g2[0, 1] == g1[0, 1]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_mse(np.zeros((2, 2)), np.zeros((2, 3)))


class TestResidualMaps:
    def test_perfect_predictor(self, data):
        perfect = Dataset(data.ids, data.x, data.x.copy(), data.scale)
        assert not compute_residual_maps(zero_network(SPEC), perfect).any()

    def test_identity_net(self, data):
        d = compute_residual_maps(zero_network(SPEC), data)
        np.testing.assert_allclose(d, ((data.y - data.x) ** 2)[:, 0], atol=0)

    def test_spot_pixel(self, data):
        net = build_network(SPEC)
        d = compute_residual_maps(net, data)
        out = net.forward(data.x[3:4])
        assert d[3, 5, 7] == pytest.approx((out[0, 0, 5, 7] - data.y[3, 0, 5, 7]) ** 2, abs=1e-15)


class TestTraditional:
    def test_constant_pair_loss_does_not_rise(self):
        ds = Dataset.from_pairs([make_pair(np.full((16, 16), 0.5), 2, "c:s1r0f0:0_0")])
        spec = ModelSpec(depth=3, base_width=4, output_init="zero")
        cfg = TrainConfig(epochs_per_round=2, batch_size=1, lr_initial=0.01)
        start = compute_residual_maps(build_network(spec), ds).mean()
        _, log = run_traditional(spec, ds, cfg)
        assert log.epochs[1]["loss"] <= log.epochs[0]["loss"] <= start + 1e-15

    def test_deterministic(self, data):
        cfg = TrainConfig(epochs_per_round=2, **FAST)
        a, la = run_traditional(SPEC, data, cfg)
        b, lb = run_traditional(SPEC, data, cfg)
        assert parameter_digest(a) == parameter_digest(b)
        assert la.records() == lb.records()

    def test_loss_smoke_first_five_epochs(self):
        ds = toy_data(n=4)
        cfg = TrainConfig(epochs_per_round=5, batch_size=2, lr_initial=0.3, lr_decay_every=100,
                          weight_decay=0.0, clip=0.05, clip_mode="norm")
        _, log = run_traditional(ModelSpec(depth=3, base_width=4, output_init="zero"), ds, cfg)
        losses = [e["loss"] for e in log.epochs]
        ups = sum(b > a for a, b in zip(losses, losses[1:]))
        assert ups <= 1, losses

    def test_empty(self, data):
        empty = Dataset([], data.x[:0], data.y[:0], 2)
        with pytest.raises(ValueError):
            run_traditional(SPEC, empty, TrainConfig(epochs_per_round=1))

    def test_log_numbering(self, data):
        _, log = run_traditional(SPEC, data, TrainConfig(epochs_per_round=4, **FAST))
        assert [e["epoch"] for e in log.epochs] == [0, 1, 2, 3]
        assert [e["lr"] for e in log.epochs] == [0.5, 0.5, 0.5, 0.5 / 10]


class TestAil:
    def test_degenerates_to_traditional(self, data):
        cfg = TrainConfig(epochs_per_round=2, **FAST)
        trad, _ = run_traditional(SPEC, data, cfg)
        ail, _, w = run_ail(SPEC, data, cfg, AilConfig(iterations=0, init="ones"))
        assert parameter_digest(trad) == parameter_digest(ail)
        assert np.all(w == 1.0)

    def test_needs_teacher(self, data):
        with pytest.raises(MissingTeacherError):
            run_ail(SPEC, data, TrainConfig(epochs_per_round=1), AilConfig(init="teacher"))

    def test_t0_only_initial_phase(self, data):
        teacher = build_network(ModelSpec(depth=3, base_width=6, seed=5))
        _, log, _ = run_ail(SPEC, data, TrainConfig(epochs_per_round=2, **FAST), AilConfig(iterations=0), teacher)
        assert len(log.rounds) == 1 and len(log.epochs) == 2

    def test_monotone_store_and_log(self, data, tmp_path):
        teacher = build_network(ModelSpec(depth=3, base_width=6, seed=5))
        store = ImportanceStore(tmp_path / "imp")
        cfg = TrainConfig(epochs_per_round=2, round_epochs=1, **FAST)
        _, log, final = run_ail(SPEC, data, cfg, AilConfig(iterations=3), teacher, store=store)
        assert store.rounds() == [0, 1, 2, 3]
        prev = None
        for t in store.rounds():
            ids, w = store.read_round(t)
            assert ids == data.ids
            if prev is not None:
                assert np.all(w >= prev)
                assert w.mean() > prev.mean()
            prev = w
        np.testing.assert_array_equal(prev, final)
        means = [r["mean_importance"] for r in log.rounds]
        assert all(b > a for a, b in zip(means, means[1:]))
        assert [e["epoch"] for e in log.epochs] == list(range(5))
        assert [e["round"] for e in log.epochs] == [0, 0, 1, 2, 3]

    def test_cold_start_retrains_from_scratch(self, data):
        cfg = TrainConfig(epochs_per_round=1, round_epochs=1, warm_start=False, **FAST)
        net, _, w = run_ail(SPEC, data, cfg, AilConfig(iterations=1, init="ones"))
        ref = build_network(SPEC)
        train_epochs(ref, data, cfg, 1, rnd=1, weights=w)
        assert parameter_digest(net) == parameter_digest(ref)

    @pytest.mark.parametrize("init", ["zeros", "random"])
    def test_other_inits(self, data, init):
        _, log, w = run_ail(SPEC, data, TrainConfig(epochs_per_round=1, round_epochs=1, **FAST),
                            AilConfig(iterations=1, init=init))
        assert w.min() > 0 and w.max() <= 1


class TestDistill:
    def test_beta_zero_equals_traditional(self, data):
        cfg = TrainConfig(epochs_per_round=2, **FAST)
        trad, _ = run_traditional(SPEC, data, cfg)
        teacher = build_network(ModelSpec(depth=3, base_width=6, seed=5))
        dist, log = run_distill(SPEC, data, cfg, DistillConfig(beta=0.0), teacher)
        assert parameter_digest(trad) == parameter_digest(dist)
        assert log.rounds[0]["beta"] == 0.0

    def test_large_beta_tracks_teacher(self, data):
        tspec = ModelSpec(depth=3, base_width=2)
        teacher = zero_network(tspec)
        teacher.layers[-1].biases[:] = 0.05
        spec = ModelSpec(depth=3, base_width=4, output_init="zero")
        cfg = TrainConfig(epochs_per_round=6, batch_size=2, lr_initial=0.5, lr_decay_every=3,
                          weight_decay=0.0, clip=0.05, clip_mode="norm")
        net, _ = run_distill(spec, data, cfg, DistillConfig(beta=1e6), teacher)
        out = predict(net, data.x)
        to_teacher = np.mean((out - predict(teacher, data.x)) ** 2)
        to_truth = np.mean((out - data.y) ** 2)
        assert to_teacher < to_truth

    def test_missing_teacher(self, data):
        with pytest.raises(MissingTeacherError):
            run_distill(SPEC, data, TrainConfig(epochs_per_round=1), DistillConfig(), None)


class TestLogFiles:
    def test_jsonl_has_no_wall_time(self, data, tmp_path):
        _, log = run_traditional(SPEC, data, TrainConfig(epochs_per_round=1, **FAST))
        log.write_jsonl(tmp_path / "log.jsonl")
        log.write_timings(tmp_path / "t.jsonl")
        recs = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert {r["type"] for r in recs} == {"epoch", "round"}
        assert all("seconds" not in r for r in recs)
        t = [json.loads(l) for l in (tmp_path / "t.jsonl").read_text().splitlines()]
        assert t[0]["seconds"] > 0 and math.isfinite(t[0]["seconds"])

    def test_validation_series(self):
        log = TrainLog(rounds=[{"val_psnr": 1.0}, {"val_psnr": None}, {"val_psnr": 2.0}])
        assert log.validation_series() == [1.0, 2.0]
