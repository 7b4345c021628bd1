#!/usr/bin/env python3
"""Writes the checkpoint fixtures used by the C++ tests.

Independent of the C++ writer on purpose: only struct and json are used, so
the reader is checked against bytes it did not produce itself.

    python3 tests/data/make_fixtures.py
"""
import json
import math
import os
import struct

HERE = os.path.dirname(os.path.abspath(__file__))


def checkpoint(path, tensors, metadata=None, header_len_override=None):
    """tensors: list of (name, dtype, shape, payload bytes)."""
    header = {}
    if metadata:
        header["__metadata__"] = metadata
    offset = 0
    for name, dtype, shape, payload in tensors:
        header[name] = {"dtype": dtype, "shape": shape,
                        "data_offsets": [offset, offset + len(payload)]}
        offset += len(payload)
    text = json.dumps(header, separators=(",", ":")).encode()
    n = len(text) if header_len_override is None else header_len_override
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", n))
        f.write(text)
        for _, _, _, payload in tensors:
            f.write(payload)


def f32(values):
    return struct.pack("<%df" % len(values), *values)


def f64(values):
    return struct.pack("<%dd" % len(values), *values)


def u16(bits):
    return struct.pack("<%dH" % len(bits), *bits)


def attention_layer(prefix, i, d, scale):
    # Deterministic, non-symmetric entries so transposition bugs show up.
    def mat(rows, cols, salt):
        return [scale * math.sin(1.0 + salt + 0.37 * r + 0.11 * c * (r + 1))
                for r in range(rows) for c in range(cols)]
    out = []
    for k, p in enumerate("qkvo"):
        out.append((f"{prefix}.layers.{i}.self_attn.{p}_proj.weight", "F32",
                    [d, d], f32(mat(d, d, 10 * i + k))))
    return out


def main():
    # One F32 [2,2] tensor, 16 payload bytes.
    checkpoint(os.path.join(HERE, "tiny_f32.safetensors"),
               [("w", "F32", [2, 2], f32([1.0, 2.0, 3.0, 4.0]))],
               metadata={"format": "pt"})

    checkpoint(os.path.join(HERE, "mixed_dtypes.safetensors"), [
        ("half", "F16", [1, 3], u16([0x3C00, 0xC000, 0x0001])),
        ("brain", "BF16", [1, 2], u16([0x3F80, 0x4049])),
        ("double", "F64", [2, 1], f64([0.1, -1e-300])),
        ("vector", "F32", [3], f32([1.0, 2.0, 3.0])),
    ])

    checkpoint(os.path.join(HERE, "nan_tensor.safetensors"),
               [("bad", "F32", [2, 2], f32([1.0, 2.0, float("nan"), 4.0]))])

    # Declared header length far beyond the end of the file.
    checkpoint(os.path.join(HERE, "truncated_header.safetensors"),
               [("w", "F32", [1, 1], f32([1.0]))], header_len_override=4096)

    # Two-layer model split over two shards, plus a config sidecar.
    shard_dir = os.path.join(HERE, "sharded")
    os.makedirs(shard_dir, exist_ok=True)
    d = 4
    layer0 = attention_layer("model", 0, d, 0.5)
    layer1 = attention_layer("model", 1, d, 0.25)
    checkpoint(os.path.join(shard_dir, "model-00001-of-00002.safetensors"), layer0)
    checkpoint(os.path.join(shard_dir, "model-00002-of-00002.safetensors"), layer1)
    weight_map = {name: "model-00001-of-00002.safetensors" for name, *_ in layer0}
    weight_map.update({name: "model-00002-of-00002.safetensors" for name, *_ in layer1})
    with open(os.path.join(shard_dir, "model.safetensors.index.json"), "w") as f:
        json.dump({"metadata": {}, "weight_map": weight_map}, f, indent=1, sort_keys=True)
    with open(os.path.join(shard_dir, "config.json"), "w") as f:
        json.dump({"num_hidden_layers": 2, "hidden_size": d, "num_attention_heads": 2,
                   "num_key_value_heads": 2}, f, indent=1)

    missing_dir = os.path.join(HERE, "missing_shard")
    os.makedirs(missing_dir, exist_ok=True)
    checkpoint(os.path.join(missing_dir, "present.safetensors"),
               [("a", "F32", [1, 1], f32([1.0]))])
    with open(os.path.join(missing_dir, "model.safetensors.index.json"), "w") as f:
        json.dump({"weight_map": {"a": "present.safetensors", "b": "absent.safetensors"}}, f)


if __name__ == "__main__":
    main()
