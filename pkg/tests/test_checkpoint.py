import json
import struct

import numpy as np
import pytest

import wideffn as w
from wideffn.checkpoint import (
    checkpoint_bytes,
    load_checkpoint,
    load_model_checkpoint,
    restore_into,
    save_checkpoint,
    save_model_checkpoint,
    sidecar_path,
)
from wideffn.errors import DataError
from wideffn.transformer import encoder_forward

from conftest import tiny_config


def test_round_trip_preserves_bytes_exactly(tmp_path):
    m = w.build_model(tiny_config(), seed=3)
    p = tmp_path / "m.ckpt"
    save_checkpoint(m.store, str(p))
    loaded = load_checkpoint(str(p))
    assert set(loaded.physical) == set(m.store.physical)
    for name, t in m.store.physical.items():
        assert loaded.physical[name].data.tobytes() == t.data.tobytes(), name
    assert loaded.aliases == {k: m.store.canonical_of(k) for k in m.store.aliases}


def test_serialization_is_deterministic():
    m = w.build_model(tiny_config(), seed=3)
    assert checkpoint_bytes(m.store) == checkpoint_bytes(m.store)


def test_header_magic_and_layout():
    m = w.build_model(tiny_config(n_enc=1, n_dec=1), seed=0)
    blob = checkpoint_bytes(m.store)
    assert blob[:4] == b"WFN1"
    (n_physical,) = struct.unpack("<I", blob[4:8])
    assert n_physical == len(m.store.physical)


def test_corrupt_magic_rejected(tmp_path):
    m = w.build_model(tiny_config(), seed=0)
    blob = bytearray(checkpoint_bytes(m.store))
    blob[:4] = b"JUNK"
    p = tmp_path / "bad.ckpt"
    p.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        load_checkpoint(str(p))


def test_truncated_payload_rejected(tmp_path):
    m = w.build_model(tiny_config(), seed=0)
    blob = checkpoint_bytes(m.store)
    p = tmp_path / "short.ckpt"
    p.write_bytes(blob[:-8])
    with pytest.raises(DataError):
        load_checkpoint(str(p))


def test_trailing_garbage_rejected(tmp_path):
    m = w.build_model(tiny_config(), seed=0)
    p = tmp_path / "long.ckpt"
    p.write_bytes(checkpoint_bytes(m.store) + b"\x00\x00")
    with pytest.raises(DataError):
        load_checkpoint(str(p))


def test_restore_preserves_tying(tmp_path):
    cfg = w.apply_preset(tiny_config(), "SharedEncDec")
    src = w.build_model(cfg, seed=1)
    p = tmp_path / "tied.ckpt"
    save_checkpoint(src.store, str(p))

    dst = w.build_model(cfg, seed=9)
    restore_into(load_checkpoint(str(p)), dst.store)
    # values came over
    for name, t in src.store.physical.items():
        assert np.array_equal(dst.store.physical[name].data, t.data)
    # tying survives: one object behind both layers, still the build-time object
    a = dst.store.resolve("enc.layer0.ffn.w1")
    assert a is dst.store.resolve("dec.layer1.ffn.w1")
    assert a is dst.enc_ffn[0].w1


def test_restore_rejects_shape_mismatch(tmp_path):
    src = w.build_model(tiny_config(), seed=0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(src.store, str(p))
    other = w.build_model(tiny_config(d_ff=64), seed=0)
    with pytest.raises(DataError):
        restore_into(load_checkpoint(str(p)), other.store)


def test_restore_rejects_name_mismatch(tmp_path):
    src = w.build_model(tiny_config(), seed=0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(src.store, str(p))
    other = w.build_model(w.apply_preset(tiny_config(), "NoDec"), seed=0)
    with pytest.raises(DataError):
        restore_into(load_checkpoint(str(p)), other.store)


def test_model_checkpoint_sidecar_round_trip(tmp_path):
    cfg = w.apply_preset(tiny_config(), "SharedEnc")
    m = w.build_model(cfg, seed=4)
    p = tmp_path / "model.ckpt"
    save_model_checkpoint(m, str(p))
    side = sidecar_path(str(p))
    assert json.loads(open(side).read())["d_model"] == cfg.d_model

    m2 = load_model_checkpoint(str(p))
    assert m2.config == cfg
    src = [4, 5, 6]
    a, _ = encoder_forward(m, src)
    b, _ = encoder_forward(m2, src)
    assert np.array_equal(a.data, b.data)


def test_sharing_shrinks_checkpoint_by_predicted_bytes():
    cfg = tiny_config(n_enc=4, n_dec=4)
    shared = w.apply_preset(cfg, "SharedEnc")
    blob_a = checkpoint_bytes(w.build_model(cfg, seed=0).store)
    blob_b = checkpoint_bytes(w.build_model(shared, seed=0).store)
    predicted = 4 * (w.count_params(cfg)[0] - w.count_params(shared)[0])
    # payload shrinks by exactly 4 bytes per dropped weight; the header
    # shrinks a little too (fewer physical records, more alias records)
    assert 0 <= (len(blob_a) - len(blob_b)) - predicted < 1024 or \
           0 <= predicted - (len(blob_a) - len(blob_b)) < 1024
