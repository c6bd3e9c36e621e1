import pytest

from atpmil.config import ConfigError, ModelConfig, RunConfig, apply_overrides, dump_config, load_config


def test_defaults_follow_training_recipe():
    cfg = RunConfig()
    assert cfg.train.lr == 0.002 and cfg.train.epochs == 200
    assert cfg.train.lr_decay_factor == 0.1 and cfg.train.lr_decay_period == 10
    assert cfg.sampler.batch_size == 15
    assert cfg.loss.decay_w == 0.9 and cfg.loss.epoch_scale == 30.0
    assert cfg.codec.n_bits == 5 and cfg.sampler_r_bin == 20_000


def test_roundtrip(tmp_path):
    cfg = RunConfig().replace(model={"scheme": "mesh", "grid": [4, 4]}, loss={"alpha": 0.25})
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_unknown_keys_rejected(tmp_path):
    (tmp_path / "c.yaml").write_text("model:\n  schem: mesh\nbogus: {}\n")
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "c.yaml")
    text = str(info.value)
    assert "schem" in text and "bogus" in text


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict({"loss": {"alpha": 2.0, "decay_w": 0.0}, "train": {"epochs": 0},
                             "codec": {"r_bin": -1.0}})
    assert len(info.value.errors) >= 4


def test_type_errors():
    with pytest.raises(ConfigError, match="integer"):
        RunConfig.from_dict({"train": {"epochs": "ten"}})
    with pytest.raises(ConfigError, match="boolean"):
        RunConfig.from_dict({"augment": {"enabled": "yes"}})


def test_codec_must_cover_range():
    with pytest.raises(ConfigError, match="cannot represent"):
        RunConfig.from_dict({"codec": {"n_bits": 4}})


def test_paper_example_width_usable_with_smaller_range():
    cfg = RunConfig.from_dict({"codec": {"n_bits": 4, "atp_max": 320_000.0}})
    assert cfg.codec.n_bits == 4


def test_overrides_win():
    cfg = apply_overrides(RunConfig(), ["model.scheme=mesh", "train.lr=0.01", "model.grid=[4, 4]"])
    assert cfg.model.scheme == "mesh" and cfg.train.lr == 0.01 and cfg.model.grid == (4, 4)
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["nonsense"])


def test_nonstandard_resolution_warns(caplog):
    ModelConfig(input_resolution=640)
    assert "not one of" in caplog.text


def test_concat_instances_fixed_by_config():
    assert ModelConfig(scheme="learned", input_resolution=256).n_instances == 64
    assert ModelConfig(scheme="mesh", grid=(8, 8)).n_instances == 64
