import numpy as np
import pytest

from cesa import checkpoint as ck
from cesa.coevolution import CesaModel, new_optimizer

from conftest import tiny_config


def _ckpt(with_opt=True):
    cfg = tiny_config()
    model = CesaModel(cfg.model, 0)
    model.assign_names()
    opt = new_optimizer(model, cfg.train) if with_opt else None
    if opt is not None:
        opt.step = 7
        for k in opt.m:
            opt.m[k] += 0.25
    return model, ck.from_model(model, cfg, opt, {"note": "x"})


def test_write_read_write_identical(tmp_path):
    _, c = _ckpt()
    a = ck.save(tmp_path / "a.ckpt", c).read_bytes()
    b = ck.save(tmp_path / "b.ckpt", ck.load(tmp_path / "a.ckpt")).read_bytes()
    assert a == b and a.startswith(b"CESA1")


def test_round_trip_restores_model_and_optimizer(tmp_path):
    model, c = _ckpt()
    back = ck.load(ck.save(tmp_path / "a.ckpt", c))
    rebuilt = back.build_model()
    ref = model.state_dict()
    got = rebuilt.state_dict()
    assert all(np.array_equal(ref[k], got[k]) for k in ref)
    assert back.optimizer.step == 7 and back.meta == {"note": "x"}
    assert all(np.array_equal(back.optimizer.m[k], c.optimizer.m[k]) for k in c.optimizer.m)
    assert back.config == c.config


def test_buffers_round_trip_without_moments(tmp_path):
    model, _ = _ckpt()
    model.analyzer.motion.channel_mask.data[3:7] = 0.0
    c = ck.from_model(model, tiny_config(), new_optimizer(model, tiny_config().train))
    back = ck.load(ck.save(tmp_path / "a.ckpt", c))
    mask = back.build_model().analyzer.motion.channel_mask.data
    assert np.array_equal(mask, model.analyzer.motion.channel_mask.data)
    assert not any("channel_mask" in k for k in back.optimizer.m)


def test_without_optimizer(tmp_path):
    _, c = _ckpt(with_opt=False)
    assert ck.load(ck.save(tmp_path / "a.ckpt", c)).optimizer is None


def test_corruption_detected(tmp_path):
    _, c = _ckpt()
    data = bytearray(c.to_bytes())
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(ck.CheckpointError, match="CRC"):
        ck.Checkpoint.from_bytes(bytes(data))
    with pytest.raises(ck.CheckpointError):
        ck.Checkpoint.from_bytes(bytes(data[:40]))
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.Checkpoint.from_bytes(b"XXXXX" + bytes(data[5:]))


def test_missing_parameter_detected():
    _, c = _ckpt(with_opt=False)
    c.params.pop(next(iter(c.params)))
    back = ck.Checkpoint.from_bytes(c.to_bytes())
    with pytest.raises(ck.CheckpointError, match="missing"):
        back.build_model()


def test_encode_layout():
    data = ck.encode({"a": 1}, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    header, records = ck.decode(data)
    assert header == {"a": 1}
    np.testing.assert_array_equal(records["w"], np.arange(6).reshape(2, 3))
    # magic + u32 + header + u32 count + (u16 + name + u8 + u8 + 2*u32 + 24 bytes) + crc
    assert len(data) == 5 + 4 + len(b'{"a":1}') + 4 + (2 + 1 + 2 + 8 + 24) + 4
