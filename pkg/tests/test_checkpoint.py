"""Tests for cst_seld.checkpoint module."""

import numpy as np
import pytest

from cst_seld.checkpoint import (
    MANIFEST_NAME,
    PAYLOAD_NAME,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
)
from cst_seld.errors import ConfigurationError, DataError
from cst_seld.model import forward, init_parameters


@pytest.fixture
def saved(tmp_path, micro_run):
    params = init_parameters(micro_run.model, seed=5)
    params.bn_states["encoder.1.bn"].running_var[...] = 2.5
    save_checkpoint(tmp_path / "ckpt", params, micro_run)
    return tmp_path / "ckpt", params


class TestCheckpoint:

    def test_round_trip_restores_values_and_config(self, saved, micro_run):
        """Weights, running statistics and configuration come back unchanged."""
        path, params = saved
        loaded, config = load_checkpoint(path)

        assert config == micro_run
        assert list(loaded) == list(params)
        for name, tensor in params.items():
            np.testing.assert_array_equal(loaded[name].data, tensor.data)
            assert loaded[name].dtype == tensor.dtype
        np.testing.assert_array_equal(loaded.bn_states["encoder.1.bn"].running_var, 2.5)

    def test_loaded_model_predicts_identically(self, saved, micro_run, rng):
        path, params = saved
        loaded, config = load_checkpoint(path)
        x = rng.normal(size=(1, 7, 50, 16))

        np.testing.assert_array_equal(
            forward(x, config.model, loaded).data, forward(x, micro_run.model, params).data
        )

    def test_manifest_layout(self, saved, micro_run):
        path, params = saved
        header, _, table = read_manifest(path)

        assert header["format_version"] == "1"
        assert header["fingerprint"] == micro_run.fingerprint()
        assert set(table["kind"]) == {"param", "state"}
        assert table["nbytes"].sum() == (path / PAYLOAD_NAME).stat().st_size
        assert list(table["offset"]) == list(np.cumsum([0, *table["nbytes"][:-1]]))

    def test_expected_model_must_match(self, saved, micro_run):
        path, _ = saved

        load_checkpoint(path, expected=micro_run)
        other = micro_run.__class__(model=micro_run.model.__class__())
        with pytest.raises(ConfigurationError, match="different model"):
            load_checkpoint(path, expected=other)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_checkpoint(tmp_path)

    def test_truncated_payload(self, saved):
        path, _ = saved
        payload = path / PAYLOAD_NAME
        payload.write_bytes(payload.read_bytes()[:-8])

        with pytest.raises(DataError, match="payload"):
            load_checkpoint(path)

    def test_unexpected_tensor_set(self, saved):
        """A manifest listing other tensors than the model needs is rejected."""
        path, _ = saved
        manifest = path / MANIFEST_NAME
        manifest.write_text(manifest.read_text().replace("head.fc2.bias", "head.fc3.bias"))

        with pytest.raises(DataError, match="head.fc3.bias"):
            load_checkpoint(path)

    def test_format_version(self, saved):
        path, _ = saved
        manifest = path / MANIFEST_NAME
        text = manifest.read_text().replace("format_version = 1", "format_version = 9")
        manifest.write_text(text)

        with pytest.raises(DataError, match="format version"):
            load_checkpoint(path)
