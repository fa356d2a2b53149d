"""Tests for cst_seld.config module."""

import pytest

from cst_seld.config import (
    CtaiConfig,
    ModelConfig,
    RunConfig,
    default_kernels,
    load_run_config,
    parse_kernels,
    preset,
    read_config_file,
    run_config_from_mapping,
    write_config_file,
)
from cst_seld.enums import AttentionDomain, LossKind, PoolingProfile, Precision
from cst_seld.errors import ConfigurationError


class TestModelConfig:

    def test_presets(self):
        """Presets fix pooling, depth and width."""
        small, base, large, huge = (preset(n) for n in ("small", "base", "large", "huge"))

        assert (small.pooling, small.n_cst, small.channels) == (PoolingProfile.FRONT, 2, 64)
        assert (base.pooling, base.n_cst, base.channels) == (PoolingProfile.MIDDLE, 2, 64)
        assert (large.pooling, large.n_cst, large.channels) == (PoolingProfile.END, 4, 128)
        assert (huge.pooling, huge.n_cst, huge.channels) == (PoolingProfile.END, 6, 128)

    def test_encoder_shapes(self):
        """Every profile ends at 50 output frames for 5 s input."""
        assert preset("small").encoder_shape() == (50, 16)
        assert preset("base").encoder_shape() == (50, 16)
        assert preset("large").encoder_shape() == (250, 16)
        for name in ("small", "base", "large", "huge"):
            assert preset(name).output_frames() == 50

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError, match="micro"):
            preset("giant")

    def test_default_kernels(self):
        assert default_kernels(2) == [(10, 4), (10, 4)]
        assert default_kernels(4) == [(25, 4)] * 4
        assert default_kernels(3, multiscale=True) == [(25, 4), (10, 4), (5, 4)]
        assert default_kernels(6, multiscale=True)[3:] == [(5, 2)] * 3

    def test_parse_kernels(self):
        assert parse_kernels("25x4, 10x4") == [(25, 4), (10, 4)]
        assert parse_kernels([[5, 2]]) == [(5, 2)]
        with pytest.raises(ConfigurationError):
            parse_kernels("25by4")
        with pytest.raises(ConfigurationError, match="positive"):
            parse_kernels("0x4")

    def test_ule_kernel_must_divide_time_axis(self):
        """A kernel that does not divide T' names the time axis."""
        with pytest.raises(ConfigurationError, match="time axis"):
            ModelConfig(ule_kernels=[(20, 4), (10, 4)])

    def test_seven_frame_kernel_rejected_at_full_resolution(self):
        with pytest.raises(ConfigurationError, match="time axis extent 250"):
            preset("large", ule_kernels=[(7, 4)] * 4)

    @pytest.mark.parametrize("multiscale", [False, True])
    @pytest.mark.parametrize("name", ["small", "base", "large", "huge"])
    def test_every_preset_validates(self, name, multiscale):
        cfg = preset(name, multiscale=multiscale)

        cfg.validate()
        assert cfg.output_frames() == 50

    def test_ule_kernel_must_divide_frequency_axis(self):
        with pytest.raises(ConfigurationError, match="frequency axis"):
            ModelConfig(ule_kernels=[(10, 3), (10, 4)])

    def test_ule_kernels_ignored_without_channel_attention(self):
        """Kernels only constrain models that use channel attention."""
        cfg = ModelConfig(ule_kernels=[(7, 3), (7, 3)], attention_order="ST")

        assert cfg.attention_order == [AttentionDomain.SPECTRAL, AttentionDomain.TEMPORAL]

    def test_kernel_count_must_match_blocks(self):
        with pytest.raises(ConfigurationError, match="n_cst"):
            ModelConfig(n_cst=3, ule_kernels=[(10, 4)])

    def test_attention_order_validation(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(attention_order="CC")
        with pytest.raises(ConfigurationError):
            ModelConfig(attention_order="")
        with pytest.raises(ConfigurationError):
            ModelConfig(attention_order="CSX")

    def test_head_pool_must_divide(self):
        """End pooling needs T' divisible by 5."""
        with pytest.raises(ConfigurationError, match="Head time pooling"):
            preset("large", attention_order="ST").validate(frames=252)

    def test_longer_sequences_validate(self):
        for frames in (250, 500, 1000):
            preset("base").validate(frames)

    def test_value_ranges(self):
        with pytest.raises(ConfigurationError, match="dropout"):
            ModelConfig(dropout=1.0)
        with pytest.raises(ConfigurationError, match="heads"):
            ModelConfig(heads=0)


class TestRunConfig:

    def test_learning_rate_follows_width(self):
        """1e-3 up to 64 channels, 1e-4 above, unless set."""
        assert RunConfig().learning_rate == 1e-3
        assert RunConfig(model=preset("large")).learning_rate == 1e-4
        assert RunConfig(lr_peak=5e-4).learning_rate == 5e-4

    def test_sequence_length(self):
        assert RunConfig(seq_len_s=10).seq_frames == 500
        with pytest.raises(ConfigurationError, match="seq_len_s"):
            RunConfig(seq_len_s=7)

    def test_io_hop_range(self):
        with pytest.raises(ConfigurationError, match="io_hop_s"):
            RunConfig(io_hop_s=6)

    def test_ctai_ranges(self):
        with pytest.raises(ConfigurationError, match="acs_count"):
            CtaiConfig(acs_count=17)
        with pytest.raises(ConfigurationError, match="ctai_threshold"):
            CtaiConfig(ctai_threshold=0.0)

    def test_enum_strings(self):
        cfg = RunConfig(loss="vtm", precision="float64")

        assert cfg.loss is LossKind.VTM
        assert cfg.precision is Precision.FLOAT64
        with pytest.raises(ConfigurationError):
            RunConfig(loss="focal")


class TestMapping:

    def test_routes_keys_to_sections(self):
        cfg = run_config_from_mapping(
            {
                "preset": "large",
                "multiscale": "true",
                "lr-peak": "2e-4",
                "acsCount": "8",
                "mixup_alpha": "0.3",
                "io": "yes",
            }
        )

        assert cfg.model.channels == 128
        assert cfg.model.ule_kernels == [(25, 4), (10, 4), (5, 4), (5, 2)]
        assert cfg.learning_rate == 2e-4
        assert cfg.ctai_params.acs_count == 8
        assert cfg.augment.mixup_alpha == 0.3
        assert cfg.io is True

    def test_unknown_keys_are_listed(self):
        with pytest.raises(ConfigurationError, match="bogus"):
            run_config_from_mapping({"bogus": 1, "epochs": 2})

    def test_bad_values(self):
        with pytest.raises(ConfigurationError, match="epochs"):
            run_config_from_mapping({"epochs": "many"})
        with pytest.raises(ConfigurationError, match="io"):
            run_config_from_mapping({"io": "maybe"})
        with pytest.raises(ConfigurationError, match="expects a number"):
            run_config_from_mapping({"ramp_fraction": "a tenth"})

    def test_echo_reproduces_configuration(self):
        """Parsing the key/value echo gives an equal configuration."""
        cfg = run_config_from_mapping(
            {
                "preset": "micro",
                "mel_bands": 16,
                "input_frames": 50,
                "lr_peak": 3e-4,
                "attention_order": "TC",
                "io": True,
                "ctai_threshold": 2e-3,
            }
        )

        again = run_config_from_mapping(dict(cfg.to_pairs()))

        assert again == cfg
        assert again.fingerprint() == cfg.fingerprint()

    def test_fingerprint_changes_with_values(self):
        assert RunConfig().fingerprint() != RunConfig(epochs=11).fingerprint()


class TestConfigFiles:

    def test_file_and_overrides(self, tmp_path):
        """Overrides win over file values and None overrides are ignored."""
        path = tmp_path / "run.conf"
        path.write_text("# toy run\npreset = micro\nepochs = 3\nbatch-size = 4\n")

        cfg = load_run_config(path, {"epochs": 5, "seed": None})

        assert cfg.model.channels == 8
        assert cfg.epochs == 5
        assert cfg.batch_size == 4
        assert cfg.seed == 0

    def test_write_then_load(self, tmp_path, micro_run):
        write_config_file(micro_run, tmp_path / "echo.txt")

        assert load_run_config(tmp_path / "echo.txt") == micro_run

    def test_malformed_lines(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("epochs 3\n")

        with pytest.raises(ConfigurationError, match=":1:"):
            read_config_file(path)

    def test_repeated_keys(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("epochs = 3\nepochs = 4\n")

        with pytest.raises(ConfigurationError, match="repeated"):
            read_config_file(path)

    def test_keys_repeated_in_another_case(self, tmp_path):
        """Two spellings of one key in a file are a configuration error."""
        path = tmp_path / "bad.conf"
        path.write_text("lr-peak = 1e-3\nlrPeak = 2e-3\n")

        with pytest.raises(ConfigurationError, match="lr_peak"):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_run_config(tmp_path / "none.conf")
