import csv
import math

import numpy as np
import pytest
import torch

from atpmil.config import TrainConfig
from atpmil.engine import (
    NonFiniteLossError,
    evaluate,
    lr_at,
    mae,
    pearson,
    predict,
    report_from_predictions,
    train,
    weights_for_epoch,
)
from atpmil.loss import LossTerms
from atpmil.model import load_checkpoint

from conftest import tiny_config


class TestSchedule:
    def test_paper_values(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 0.002
        assert lr_at(9, cfg) == 0.002
        assert lr_at(10, cfg) == pytest.approx(0.0002, rel=1e-12)
        assert lr_at(200, cfg) == 1e-6

    def test_no_floor(self):
        cfg = TrainConfig(lr_floor=0.0)
        assert lr_at(30, cfg) == pytest.approx(2e-6, rel=1e-12)


def _brute_mae(p, t):
    return sum(abs(a - b) for a, b in zip(p, t)) / len(p)


def _brute_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


class TestMetrics:
    def test_hand_example(self):
        assert mae([2, 4, 6], [1, 2, 3]) == 2.0
        assert pearson([2, 4, 6], [1, 2, 3]) == pytest.approx(1.0, abs=1e-15)

    def test_identity(self):
        y = np.random.default_rng(0).random(20)
        assert mae(y, y) == 0.0
        assert pearson(y, y) == pytest.approx(1.0)

    def test_anti(self):
        y = np.random.default_rng(1).random(20)
        assert pearson(-y + 3.0, y) == pytest.approx(-1.0)

    def test_single_sample(self):
        assert mae([5.0], [5.0]) == 0.0
        assert pearson([1.0], [2.0]) is None

    def test_two_samples(self):
        assert mae([0.0, 4.0], [1.0, 1.0]) == 2.0

    def test_constant_undefined(self):
        assert pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) is None

    def test_against_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 50))
            p, t = rng.normal(size=n) * 1e5, rng.normal(size=n) * 1e5
            assert mae(p, t) == pytest.approx(_brute_mae(p, t), rel=1e-9)
            assert pearson(p, t) == pytest.approx(_brute_pearson(p, t), rel=1e-9)

    def test_report_groups(self):
        rep = report_from_predictions(list("abcdef"), [1, 2, 3, 1, 2, 3], [1, 2, 3, 3, 2, 1],
                                      ["x", "x", "x", "y", "y", "z"])
        assert rep.per_group_pearson["x"] == pytest.approx(1.0)
        assert rep.per_group_pearson["y"] == pytest.approx(-1.0)
        assert rep.per_group_pearson["z"] is None
        assert rep.per_sample[3]["abs_error"] == 2.0


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    result = train(tiny_dataset, None, tiny_config(), out)
    return result, out


class TestTrain:
    def test_outputs(self, trained):
        result, out = trained
        assert len(result.history) == 2
        for name in ("best.ckpt", "last.ckpt", "history.csv", "config.yaml"):
            assert (out / name).is_file()
        with open(out / "history.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["epoch", "lr", "loss_total", "loss_cls", "loss_reg", "val_mae"]
        assert all(math.isfinite(float(r["loss_total"])) for r in rows)

    def test_best_is_min(self, trained):
        result, _ = trained
        maes = [h["val_mae"] for h in result.history]
        _, _, meta = load_checkpoint(result.best_checkpoint)
        assert meta["val_mae"] == min(maes)
        assert result.best_epoch == int(np.argmin(maes))

    def test_weights_wiring(self, trained):
        result, _ = trained
        cfg = tiny_config()
        for row in result.history:
            assert row["weights"] == weights_for_epoch(row["epoch"], cfg).tolist()

    def test_deterministic(self, trained, tiny_dataset, tmp_path):
        result, _ = trained
        again = train(tiny_dataset, None, tiny_config(), tmp_path)
        assert again.history == result.history

    @pytest.mark.parametrize("scheme,aggregator", [("mesh", "attention"), ("learned", "sum"),
                                                   ("learned", "concat"), ("whole", "attention")])
    def test_variants_train(self, tiny_dataset, tmp_path, scheme, aggregator):
        cfg = tiny_config(model={"scheme": scheme, "aggregator": aggregator, "grid": [4, 4]},
                          train={"epochs": 1}, sampler={"balanced": False}, augment={"enabled": False})
        result = train(tiny_dataset, tiny_dataset, cfg, tmp_path)
        assert len(result.history) == 1

    def test_non_finite_aborts(self, tiny_dataset, tmp_path, monkeypatch):
        import atpmil.engine as engine

        def bad_loss(bits, *a, **k):
            nan = bits.sum() * float("nan")
            return LossTerms(nan, nan, nan)

        monkeypatch.setattr(engine, "composite_loss", bad_loss)
        with pytest.raises(NonFiniteLossError) as info:
            train(tiny_dataset, None, tiny_config(), tmp_path)
        assert len(info.value.batch) == 8
        assert info.value.dump_path.is_file()

    def test_codec_must_cover_data(self, tiny_dataset, tmp_path):
        cfg = tiny_config(codec={"atp_max": 1000.0, "r_bin": 100.0})
        if max(tiny_dataset.atp) <= 1000:
            pytest.skip("dataset happens to fit")
        with pytest.raises(ValueError, match="does not cover"):
            train(tiny_dataset, None, cfg, tmp_path)


class TestEvaluatePredict:
    def test_evaluate(self, trained, tiny_dataset):
        result, _ = trained
        rep = evaluate(result.best_checkpoint, tiny_dataset)
        assert len(rep.per_sample) == len(tiny_dataset)
        assert rep.mae == pytest.approx(_brute_mae([r["prediction"] for r in rep.per_sample], tiny_dataset.atp), rel=1e-9)
        assert set(rep.per_group_pearson) == {s.group_id for s in tiny_dataset.samples}

    def test_predict(self, trained, tiny_dataset, tmp_path):
        result, _ = trained
        path = tiny_dataset[0].image_path
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"nope")
        out = predict(result.best_checkpoint, [path, path, bad])
        assert out[0][1] == out[1][1]
        assert out[2][1] is None and out[2][2]
        capacity = tiny_config().codec.capacity
        assert 0 <= out[0][1] < capacity
        assert predict(result.best_checkpoint, []) == []

    def test_predict_matches_evaluate(self, trained, tiny_dataset):
        result, _ = trained
        rep = evaluate(result.best_checkpoint, tiny_dataset)
        preds = predict(result.best_checkpoint, [s.image_path for s in tiny_dataset.samples[:4]])
        for (_, est, _), row in zip(preds, rep.per_sample[:4]):
            assert est == pytest.approx(row["prediction"], rel=1e-6)
