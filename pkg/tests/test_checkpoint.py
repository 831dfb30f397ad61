"""
Unit tests for the checkpoint module.
"""
import pytest
import numpy as np

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.checkpoint import (
    HEADER,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from app.core.errors import CheckpointError, NumericalError
from app.core.numerics import RngStream
from app.core.scoring import ModelParams
from app.models.schemas import TrainConfig


def tucker_model():
    cfg = TrainConfig(model_kind="tucker", entity_dim=4, relation_dim=3, method="kg_mixup", seed=3)
    params = ModelParams.initialize("tucker", 7, 4, 4, 3, RngStream(3, "init"))
    return params, cfg


class TestCheckpointRoundTrip:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        params, cfg = tucker_model()
        first = save_checkpoint(str(tmp_path / "a.kgmx"), params, cfg, epoch=12)
        ckpt = load_checkpoint(first)
        second = save_checkpoint(str(tmp_path / "b.kgmx"), ckpt.params, ckpt.config, ckpt.epoch)
        assert Path(first).read_bytes() == Path(second).read_bytes()

    def test_restores_values_at_float32_precision(self, tmp_path):
        params, cfg = tucker_model()
        ckpt = decode_checkpoint(encode_checkpoint(params, cfg, 5))
        assert ckpt.epoch == 5
        assert ckpt.config == cfg
        assert np.allclose(ckpt.params.core, params.core, atol=1e-7)
        assert np.array_equal(ckpt.params.entity, params.entity.astype(np.float32).astype(np.float64))

    def test_distmult_has_no_core(self):
        cfg = TrainConfig(entity_dim=2, relation_dim=2)
        params = ModelParams.initialize("distmult", 3, 2, 2, 2, RngStream(0, "init"))
        ckpt = decode_checkpoint(encode_checkpoint(params, cfg, 1))
        assert ckpt.params.kind == "distmult" and ckpt.params.core is None


class TestCheckpointErrors:
    def test_bad_magic_rejected(self):
        params, cfg = tucker_model()
        data = b"XXXX" + encode_checkpoint(params, cfg, 1)[4:]
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(data)

    def test_truncation_rejected(self):
        params, cfg = tucker_model()
        data = encode_checkpoint(params, cfg, 1)
        for cut in (10, HEADER.size + 8, len(data) - 3):
            with pytest.raises(CheckpointError, match="truncated"):
                decode_checkpoint(data[:cut])

    def test_trailing_bytes_rejected(self):
        params, cfg = tucker_model()
        with pytest.raises(CheckpointError):
            decode_checkpoint(encode_checkpoint(params, cfg, 1) + b"\x00")

    def test_echo_shape_mismatch_rejected(self):
        params, _ = tucker_model()
        wrong = TrainConfig(model_kind="tucker", entity_dim=5, relation_dim=3)
        with pytest.raises(CheckpointError, match="header"):
            decode_checkpoint(encode_checkpoint(params, wrong, 1))

    def test_dataset_mismatch_rejected(self):
        params, cfg = tucker_model()
        ckpt = decode_checkpoint(encode_checkpoint(params, cfg, 1))
        ckpt.check_dataset(7, 4)
        with pytest.raises(CheckpointError):
            ckpt.check_dataset(8, 4)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "nope.kgmx"))

    def test_non_finite_parameters_not_saved(self, tmp_path):
        params, cfg = tucker_model()
        params.entity[0, 0] = np.inf
        with pytest.raises(NumericalError):
            save_checkpoint(str(tmp_path / "bad.kgmx"), params, cfg, 1)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
