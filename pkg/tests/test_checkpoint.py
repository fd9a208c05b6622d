import os

import numpy as np
import pytest

from drivelab import checkpoint, encoding, nn
from drivelab.checkpoint import CheckpointBundle, CheckpointError, \
    load_checkpoint, save_checkpoint

from conftest import tiny_nets


def make_bundle(rng, rep="dp", d3=8):
    enc, pol, val = tiny_nets(rng, d3=d3)
    if rep == "fp":
        pol = nn.init_mlp([encoding.FP_DIM, 4, 2], rng, input_scale=encoding.fp_scale())
        val = nn.init_mlp([encoding.FP_DIM, 4, 1], rng, input_scale=encoding.fp_scale())
        return CheckpointBundle(pol, val, None, "fp", 7, 42, 0)
    return CheckpointBundle(pol, val, enc, "dp", 7, 42, d3)


def test_round_trip_exact(tmp_path, rng=np.random.default_rng(0)):
    bundle = make_bundle(rng)
    save_checkpoint(str(tmp_path / "ck"), bundle)
    back = load_checkpoint(str(tmp_path / "ck"))
    assert back.representation == "dp"
    assert back.iteration == 7 and back.seed == 42 and back.d3 == 8
    for a, b in zip(bundle.policy.arrays() + bundle.value.arrays()
                    + bundle.encoder.arrays(),
                    back.policy.arrays() + back.value.arrays()
                    + back.encoder.arrays()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.encoder.input_scale,
                                  encoding.PARTICIPANT_SCALE)


def test_manifest_contents(tmp_path):
    bundle = make_bundle(np.random.default_rng(1))
    save_checkpoint(str(tmp_path / "ck"), bundle)
    text = (tmp_path / "ck" / "manifest.txt").read_text()
    assert "format_version=1" in text
    assert "d1=7" in text and "d2=24" in text and "d3=8" in text
    assert "policy_widths=32,4,4,2" in text
    assert "seed=42" in text and "iteration=7" in text


def test_blob_layout_little_endian_float64(tmp_path):
    bundle = make_bundle(np.random.default_rng(2))
    save_checkpoint(str(tmp_path / "ck"), bundle)
    blob = (tmp_path / "ck" / "policy.bin").read_bytes()
    w0 = bundle.policy.weights[0]
    vals = np.frombuffer(blob, dtype="<f8", count=w0.size)
    np.testing.assert_array_equal(vals.reshape(w0.shape), w0)
    total = sum(w.size + b.size for w, b in zip(bundle.policy.weights,
                                                bundle.policy.biases))
    assert len(blob) == total * 8


def test_fp_checkpoint_has_no_encoder(tmp_path):
    bundle = make_bundle(np.random.default_rng(3), rep="fp")
    save_checkpoint(str(tmp_path / "ck"), bundle)
    assert not os.path.exists(tmp_path / "ck" / "encoder.bin")
    back = load_checkpoint(str(tmp_path / "ck"))
    assert back.encoder is None
    assert back.policy.n_in == encoding.FP_DIM


def test_missing_manifest_raises(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "nothing"))


def test_corrupt_widths_rejected(tmp_path):
    bundle = make_bundle(np.random.default_rng(4))
    save_checkpoint(str(tmp_path / "ck"), bundle)
    mf = tmp_path / "ck" / "manifest.txt"
    text = mf.read_text().replace("policy_widths=32,4,4,2",
                                  "policy_widths=32,9,4,2")
    mf.write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "ck"))


def test_wrong_d3_rejected(tmp_path):
    bundle = make_bundle(np.random.default_rng(5))
    save_checkpoint(str(tmp_path / "ck"), bundle)
    mf = tmp_path / "ck" / "manifest.txt"
    text = mf.read_text().replace("d3=8", "d3=16")
    mf.write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "ck"))
