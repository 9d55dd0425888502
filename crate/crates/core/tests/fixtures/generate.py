#!/usr/bin/env python3
"""Regenerates the committed test fixtures.

The TinyCNN triple (weights, input, expected features) is produced here with a
numpy forward pass written independently of the Rust backbone, so the Rust test
comparing against it is a cross-implementation check. Image fixtures are written
and decoded back with Pillow.

Usage: python3 generate.py [out_dir]
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np
from PIL import Image


def write_weight_file(path, topology, mean, std, layers):
    out = bytearray()
    out += b"MCGW"
    out += struct.pack("<I", 1)
    topo = topology.encode("utf-8")
    out += struct.pack("<I", len(topo)) + topo
    out += struct.pack("<I", len(mean))
    out += struct.pack(f"<{len(mean)}f", *mean)
    out += struct.pack(f"<{len(std)}f", *std)
    out += struct.pack("<I", len(layers))
    for name, kind, w, b in layers:
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<B", {"conv": 0, "linear": 1}[kind])
        out += struct.pack("<B", w.ndim) + struct.pack(f"<{w.ndim}I", *w.shape)
        if b is None:
            out += struct.pack("<B", 0)
        else:
            out += struct.pack("<B", b.ndim) + struct.pack(f"<{b.ndim}I", *b.shape)
        out += w.astype("<f4").tobytes(order="C")
        if b is not None:
            out += b.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def conv3x3(x, w, b):
    # x: C_in x H x W (float64); w: C_out x C_in x 3 x 3
    c_in, h, wd = x.shape
    padded = np.zeros((c_in, h + 2, wd + 2))
    padded[:, 1:-1, 1:-1] = x
    out = np.zeros((w.shape[0], h, wd))
    for ky in range(3):
        for kx in range(3):
            patch = padded[:, ky:ky + h, kx:kx + wd]
            out += np.einsum("oc,chw->ohw", w[:, :, ky, kx], patch)
    return out + b[:, None, None]


def maxpool2(x):
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    x = x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2)
    return x.max(axis=(2, 4))


def tinycnn_forward(img, mean, std, layers):
    x = (img - np.asarray(mean)[:, None, None]) / np.asarray(std)[:, None, None]
    (_, _, w1, b1), (_, _, w2, b2) = layers
    x = np.maximum(conv3x3(x, w1.astype(np.float64), b1.astype(np.float64)), 0.0)
    x = maxpool2(x)
    x = np.maximum(conv3x3(x, w2.astype(np.float64), b2.astype(np.float64)), 0.0)
    return x.mean(axis=(1, 2))


def tinycnn_fixture(out, seed=42):
    rng = np.random.default_rng(seed)
    mean = [0.5, 0.5, 0.5]
    std = [0.25, 0.25, 0.25]
    w1 = (rng.standard_normal((8, 3, 3, 3)) * np.sqrt(2.0 / 27)).astype(np.float32)
    b1 = (rng.standard_normal(8) * 0.01).astype(np.float32)
    w2 = (rng.standard_normal((32, 8, 3, 3)) * np.sqrt(2.0 / 72)).astype(np.float32)
    b2 = (rng.standard_normal(32) * 0.01).astype(np.float32)
    layers = [("conv1", "conv", w1, b1), ("conv2", "conv", w2, b2)]
    write_weight_file(out / "tinycnn.mcgw", "TinyCNN", mean, std, layers)

    yy, xx = np.mgrid[0:224, 0:224] / 224.0
    base = np.stack([
        0.5 + 0.4 * np.sin(2 * np.pi * 3 * xx),
        0.5 + 0.4 * np.cos(2 * np.pi * 5 * yy),
        0.5 + 0.4 * np.sin(2 * np.pi * 2 * (xx + yy)),
    ])
    noise = rng.uniform(-0.1, 0.1, size=base.shape)
    img = np.clip(base + noise, 0.0, 1.0).astype(np.float32)
    (out / "tinycnn_input.bin").write_bytes(img.astype("<f4").tobytes(order="C"))

    feats = tinycnn_forward(img.astype(np.float64), mean, std, layers)
    (out / "tinycnn_expected.json").write_text(
        json.dumps({"dim": int(feats.size), "values": [float(v) for v in feats]}, indent=1) + "\n"
    )


def image_fixtures(out):
    Image.new("RGB", (2, 2), (255, 255, 255)).save(out / "white_2x2.png")
    Image.new("RGB", (1, 1), (0, 0, 0)).save(out / "black_1x1.jpg", quality=95)
    rng = np.random.default_rng(7)
    px = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    Image.fromarray(px, "RGB").save(out / "rgb_4x4.png")
    decoded = np.asarray(Image.open(out / "rgb_4x4.png").convert("RGB"))
    (out / "rgb_4x4_expected.txt").write_text(" ".join(str(int(v)) for v in decoded.reshape(-1)) + "\n")
    Image.fromarray(np.arange(16, dtype=np.uint8).reshape(4, 4) * 16, "L").save(out / "gray_4x4.png")
    (out / "corrupt.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    out.mkdir(parents=True, exist_ok=True)
    tinycnn_fixture(out)
    image_fixtures(out)
