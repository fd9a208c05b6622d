"""Checkpoint store: a field=value manifest plus one flat float64
little-endian blob per network (layer weights row-major, then biases).
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import encoding, nn

FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    policy: nn.MlpParams
    value: nn.MlpParams
    encoder: nn.MlpParams | None
    representation: str
    iteration: int
    seed: int
    d3: int


class CheckpointError(RuntimeError):
    pass


def _atomic_write(path: str, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _net_blob(net: nn.MlpParams) -> bytes:
    chunks = []
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def _net_from_blob(data: bytes, widths, input_scale) -> nn.MlpParams:
    vals = np.frombuffer(data, dtype="<f8")
    expected = sum(n_in * n_out + n_out for n_in, n_out in zip(widths[:-1], widths[1:]))
    if vals.size != expected:
        raise CheckpointError("blob holds %d values, manifest widths imply %d"
                              % (vals.size, expected))
    ws, bs = [], []
    off = 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        ws.append(vals[off:off + n_in * n_out].reshape(n_in, n_out).copy())
        off += n_in * n_out
        bs.append(vals[off:off + n_out].copy())
        off += n_out
    return nn.MlpParams(ws, bs, input_scale)


def save_checkpoint(path: str, bundle: CheckpointBundle):
    os.makedirs(path, exist_ok=True)
    fields = [
        ("format_version", FORMAT_VERSION),
        ("representation", bundle.representation),
        ("seed", bundle.seed),
        ("iteration", bundle.iteration),
        ("d1", encoding.D1),
        ("d2", encoding.D2),
        ("d3", bundle.d3),
        ("policy_widths", ",".join(str(w) for w in bundle.policy.widths)),
        ("value_widths", ",".join(str(w) for w in bundle.value.widths)),
        ("encoder_widths", ",".join(str(w) for w in bundle.encoder.widths)
         if bundle.encoder is not None else ""),
    ]
    manifest = "".join("%s=%s\n" % kv for kv in fields)
    _atomic_write(os.path.join(path, "manifest.txt"), manifest.encode())
    _atomic_write(os.path.join(path, "policy.bin"), _net_blob(bundle.policy))
    _atomic_write(os.path.join(path, "value.bin"), _net_blob(bundle.value))
    if bundle.encoder is not None:
        _atomic_write(os.path.join(path, "encoder.bin"), _net_blob(bundle.encoder))


def load_checkpoint(path: str) -> CheckpointBundle:
    mf = os.path.join(path, "manifest.txt")
    if not os.path.isfile(mf):
        raise CheckpointError("no manifest at %s" % path)
    fields = {}
    with open(mf) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            fields[key] = val
    if int(fields.get("format_version", -1)) != FORMAT_VERSION:
        raise CheckpointError("unsupported format version %r" % fields.get("format_version"))
    rep = fields["representation"]
    d3 = int(fields["d3"])
    if int(fields["d1"]) != encoding.D1 or int(fields["d2"]) != encoding.D2:
        raise CheckpointError("feature widths in manifest do not match this build")

    def widths(key):
        return [int(x) for x in fields[key].split(",") if x]

    state_dim = d3 + encoding.D2 if rep == "dp" else encoding.FP_DIM
    pol_scale = encoding.state_scale(d3) if rep == "dp" else encoding.fp_scale()
    pw = widths("policy_widths")
    vw = widths("value_widths")
    if pw[0] != state_dim or vw[0] != state_dim:
        raise CheckpointError("network input widths inconsistent with representation")
    with open(os.path.join(path, "policy.bin"), "rb") as f:
        policy = _net_from_blob(f.read(), pw, pol_scale)
    with open(os.path.join(path, "value.bin"), "rb") as f:
        value = _net_from_blob(f.read(), vw, pol_scale.copy())
    enc = None
    if rep == "dp":
        ew = widths("encoder_widths")
        if ew[0] != encoding.D1 or ew[-1] != d3:
            raise CheckpointError("encoder widths inconsistent with manifest d1/d3")
        with open(os.path.join(path, "encoder.bin"), "rb") as f:
            enc = _net_from_blob(f.read(), ew, encoding.PARTICIPANT_SCALE)
    return CheckpointBundle(policy, value, enc, rep, int(fields["iteration"]),
                            int(fields["seed"]), d3)
