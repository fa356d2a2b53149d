"""Tests for cst_seld.features module."""

import numpy as np
import pytest

from cst_seld.errors import DataError, EmptyInputError
from cst_seld.features import (
    FEATURE_CHANNELS,
    LOG_EPS,
    SAMPLE_RATE,
    FeatureTensor,
    MultichannelAudio,
    extract_features,
    intensity_vectors,
    load_feature_cache,
    mel_filterbank,
    save_feature_cache,
    stft,
)
from cst_seld.synth import encode_foa


def plane_wave(azimuth_deg, elevation_deg, seconds=1.0, seed=0):
    mono = np.random.default_rng(seed).normal(size=int(seconds * SAMPLE_RATE))
    return MultichannelAudio(encode_foa(mono, azimuth_deg, elevation_deg))


class TestMultichannelAudio:

    def test_rejects_wrong_channel_count(self):
        with pytest.raises(DataError, match="shape"):
            MultichannelAudio(np.zeros((2, 100)))

    def test_rejects_other_sample_rates(self):
        """Resampling is not performed."""
        with pytest.raises(DataError, match="48000"):
            MultichannelAudio(np.zeros((4, 100)), 48000)

    def test_wav_round_trip(self, tmp_path):
        audio = plane_wave(30.0, 10.0, seconds=0.1)
        audio.samples *= 0.1
        audio.write(tmp_path / "clip.wav")
        back = MultichannelAudio.read(tmp_path / "clip.wav")

        assert back.sample_rate == SAMPLE_RATE
        np.testing.assert_allclose(back.samples, audio.samples, atol=1e-6)

    def test_read_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            MultichannelAudio.read(tmp_path / "missing.wav")


class TestStft:

    def test_frame_count(self):
        """Five seconds hold 249 full windows of 481 bins."""
        spectrum = stft(MultichannelAudio(np.zeros((4, 5 * SAMPLE_RATE))))

        assert spectrum.shape == (4, 249, 481)

    def test_frames_do_not_reach_past_the_clip(self):
        """The last frame starts 960 samples before the end; trailing samples are ignored."""
        samples = np.zeros((4, 1440 + 479))
        samples[:, 1440:] = 1.0

        spectrum = stft(MultichannelAudio(samples))

        assert spectrum.shape[1] == 2
        np.testing.assert_array_equal(spectrum, 0.0)

    def test_short_input_rejected(self):
        with pytest.raises(EmptyInputError):
            stft(MultichannelAudio(np.zeros((4, 959))))

    def test_mel_filterbank_shape(self):
        bank = mel_filterbank()

        assert bank.shape == (64, 481)
        assert np.all(bank >= 0)
        assert not bank.flags.writeable


class TestExtractFeatures:

    def test_shape_and_channels(self):
        features = extract_features(plane_wave(0.0, 0.0))

        assert features.data.shape == (FEATURE_CHANNELS, 50, 64)
        assert features.frame_hop_s == pytest.approx(0.02)

    def test_tail_is_zero_padded_to_label_grid(self):
        """Five seconds give 249 analysed frames padded to 250."""
        features = extract_features(plane_wave(30.0, 0.0, seconds=5.0))

        assert features.num_frames == 250
        assert np.all(features.data[:4, 248] != 0.0)
        np.testing.assert_array_equal(features.data[:, 249], 0.0)

    def test_silence_floor(self):
        """Silent input gives the log floor and zero intensity."""
        features = extract_features(MultichannelAudio(np.zeros((4, SAMPLE_RATE))))

        np.testing.assert_allclose(features.data[:4, :49], np.log(LOG_EPS))
        np.testing.assert_array_equal(features.data[4:], 0.0)

    def test_intensity_points_at_source(self):
        """A plane wave from the left puts all intensity on the Y channel."""
        features = extract_features(plane_wave(90.0, 0.0))
        iv_y, iv_z, iv_x = features.data[4:, :49, 8:]

        np.testing.assert_allclose(iv_y, 0.5, atol=1e-6)
        np.testing.assert_allclose(iv_z, 0.0, atol=1e-6)
        np.testing.assert_allclose(iv_x, 0.0, atol=1e-6)

    def test_intensity_is_bounded(self):
        """Per-bin intensity magnitude never exceeds one half."""
        rng = np.random.default_rng(3)
        spectrum = stft(MultichannelAudio(rng.normal(size=(4, SAMPLE_RATE))))

        assert np.max(np.abs(intensity_vectors(spectrum))) <= 0.5 + 1e-9

    def test_fit_frames(self):
        features = extract_features(plane_wave(0.0, 0.0))

        assert features.fit_frames(60).num_frames == 60
        assert features.fit_frames(40).num_frames == 40
        np.testing.assert_array_equal(features.fit_frames(60).data[:, 50:], 0.0)

    def test_feature_tensor_validates_shape(self):
        with pytest.raises(DataError):
            FeatureTensor(np.zeros((4, 10, 64)))
        with pytest.raises(DataError, match="mel_bands"):
            FeatureTensor(np.zeros((7, 10, 32)))


class TestFeatureCache:

    def test_round_trip(self, tmp_path):
        features = extract_features(plane_wave(45.0, 20.0))
        save_feature_cache(features, tmp_path / "clip")
        back = load_feature_cache(tmp_path / "clip")

        assert (tmp_path / "clip.manifest.txt").exists()
        assert (tmp_path / "clip.f32").stat().st_size == features.data.size * 4
        np.testing.assert_array_equal(back.data, features.data)
        assert back.data.dtype == features.data.dtype == np.float32

    def test_truncated_payload(self, tmp_path):
        save_feature_cache(extract_features(plane_wave(0.0, 0.0)), tmp_path / "clip")
        payload = tmp_path / "clip.f32"
        payload.write_bytes(payload.read_bytes()[:-4])

        with pytest.raises(DataError, match="payload"):
            load_feature_cache(tmp_path / "clip")

    def test_missing_cache(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_feature_cache(tmp_path / "nothing")
