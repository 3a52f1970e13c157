"""Regenerates the oracle fixtures in this directory.

NPY files come straight from numpy. The RNG vectors come from a standalone
Python implementation of the counter-based streams, written independently of
the Rust code.
"""

import json
import math
import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
M64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
NOISE = 0x4E4F495345000000
STRENGTH = 0x535452454E475448


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def splitmix_sequence(seed, n):
    out, state = [], seed
    for _ in range(n):
        state = (state + GOLDEN) & M64
        out.append(mix64(state))
    return out


def fnv1a64(data):
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & M64
    return h


def derive(seed, domain, item):
    return mix64(mix64(seed ^ domain) ^ fnv1a64(item.encode()))


def uniform(key, i):
    return (splitmix_sequence(key, i + 1)[i] >> 11) / float(1 << 53)


def normal(key, i):
    pair = i - (i % 2)
    u1 = 1.0 - uniform(key, pair)
    u2 = uniform(key, pair + 1)
    r = math.sqrt(-2.0 * math.log(u1))
    t = 2.0 * math.pi * u2
    return r * math.cos(t) if i % 2 == 0 else r * math.sin(t)


def rng_vectors():
    key = 0x0123456789ABCDEF
    spec_seed = 42
    lo, hi = 0.01, 0.05
    images = ["img000", "img001", "a", "", "scene/17"]
    field_key = derive(spec_seed, NOISE, "img000")
    return {
        "splitmix_seed": 1234567,
        "splitmix": [str(v) for v in splitmix_sequence(1234567, 5)],
        "fnv1a64": {s: str(fnv1a64(s.encode())) for s in ["", "a", "img000", "foobar"]},
        "stream_key": str(key),
        "uniform": [uniform(key, i) for i in range(8)],
        "normal": [normal(key, i) for i in range(8)],
        "spec": {"seed": spec_seed, "lo": lo, "hi": hi},
        "strength_keys": {im: str(derive(spec_seed, STRENGTH, im)) for im in images},
        "strengths": {im: lo + (hi - lo) * uniform(derive(spec_seed, STRENGTH, im), 0) for im in images},
        "noise_key_img000": str(field_key),
        "gauss_field_img000": [normal(field_key, i) for i in range(12)],
    }


def npy_fixtures():
    rng = np.random.default_rng(0)
    np.save(os.path.join(HERE, "labels_u8.npy"), np.array([[0, 1, 2], [2, 1, 0]], dtype=np.uint8))
    np.save(os.path.join(HERE, "labels_u16.npy"), rng.integers(0, 300, size=(4, 4)).astype(np.uint16))
    np.save(os.path.join(HERE, "labels_u32.npy"), rng.integers(0, 70000, size=(3, 5)).astype(np.uint32))
    np.save(os.path.join(HERE, "labels_i64.npy"), rng.integers(0, 9, size=(2, 2)).astype(np.int64))
    p = rng.random((3, 2, 4))
    np.save(os.path.join(HERE, "probs_f32.npy"), (p / p.sum(axis=0)).astype(np.float32))
    np.save(os.path.join(HERE, "probs_f64.npy"), rng.random((5, 3)))
    np.save(os.path.join(HERE, "vector_f64.npy"), np.array([0.5, -1.25, 3.0]))


if __name__ == "__main__":
    npy_fixtures()
    with open(os.path.join(HERE, "rng_vectors.json"), "w") as f:
        json.dump(rng_vectors(), f, indent=2)
        f.write("\n")
