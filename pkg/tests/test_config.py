"""Run configuration files and overrides."""

import pytest

from cnsf.config import ConfigError, RunConfig, apply_overrides, load_config, parse_pairs


class TestDefaults:
    def test_every_field_has_a_default(self):
        cfg = RunConfig().validate()
        assert cfg.win_length == 512 and cfg.hop == 256 and cfg.n_fft == 512
        assert cfg.mode == "cnsf"

    def test_ini_round_trip(self, tmp_path):
        cfg = RunConfig(mode="cnsf-mvdr", learning_rate=5e-4, pairs="0-1", out="x y")
        p = tmp_path / "run.ini"
        p.write_text(cfg.to_ini())
        assert load_config(p) == cfg

    def test_ini_has_comments_and_sections(self):
        text = RunConfig().to_ini()
        for sec in ("[stft]", "[array]", "[model]", "[train]", "[simulate]", "[paths]"):
            assert sec in text
        assert "# hop size in samples" in text

    def test_dict_round_trip(self):
        cfg = RunConfig(batch_size=8, time_budget=12.5)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg


class TestValidation:
    @pytest.mark.parametrize(
        "kw",
        [
            {"mode": "mvdr"},
            {"profile": "huge"},
            {"hop": 600},
            {"n_fft": 256},
            {"batch_size": 1},
            {"chunk_seconds": 0.01},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**kw).validate()


class TestFiles:
    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nlearning_rat = 0.1\n")
        with pytest.raises(ConfigError, match="learning_rat"):
            load_config(p)

    def test_wrong_section(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[stft]\nlearning_rate = 0.1\n")
        with pytest.raises(ConfigError, match=r"\[train\]"):
            load_config(p)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nbatch_size = four\n")
        with pytest.raises(ConfigError, match="batch_size"):
            load_config(p)

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("batch_size = 4\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_partial_file_keeps_defaults(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[model]\nmode = cnsf-mvdr\n")
        cfg = load_config(p)
        assert cfg.mode == "cnsf-mvdr" and cfg.hop == 256


class TestOverrides:
    def test_command_line_wins(self):
        cfg = apply_overrides(RunConfig(batch_size=8), {"batch_size": "2", "learning_rate": None})
        assert cfg.batch_size == 2 and cfg.learning_rate == 1e-3

    def test_unknown_override(self):
        with pytest.raises(ConfigError, match="nonsense"):
            apply_overrides(RunConfig(), {"nonsense": 1})

    def test_int_field_accepts_int(self):
        assert apply_overrides(RunConfig(), {"hop": 128}).hop == 128


class TestPairs:
    def test_parse(self):
        assert parse_pairs("0-1, 2-5") == [(0, 1), (2, 5)]
        assert parse_pairs("") == []

    @pytest.mark.parametrize("bad", ["0:1", "a-b", "1-2-3"])
    def test_malformed(self, bad):
        with pytest.raises(ConfigError):
            parse_pairs(bad)
