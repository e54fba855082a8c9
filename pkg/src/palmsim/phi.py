"""Run-interleaving bijection between ``[0, n)^d`` and ``[0, 1)``.

Each coordinate ``s_k / n`` is written in binary (terminating expansion) and
cut into blocks, each block a possibly empty run of 1s closed by a single 0.
The code emits block 1 of every coordinate, then block 2 of every
coordinate, and so on.  With ``B`` bits per coordinate the code never needs
more than ``2 d B`` bits, so encoding at that length is lossless.

Everything here works on bit matrices so that whole point clouds are
processed at once.
"""

from __future__ import annotations

import numpy as np

from .errors import IncompleteBlocks


def code_length(dim, bits):
    return 2 * dim * bits


def _suffix_runs(bits):
    """Length of the run of 1s starting at every position (one extra trailing 0)."""
    dtype = np.int16 if bits.shape[-1] < 2 ** 15 else np.int64
    out = np.zeros(bits.shape[:-1] + (bits.shape[-1] + 1,), dtype=dtype)
    b = bits.astype(dtype)
    for p in range(bits.shape[-1] - 1, -1, -1):
        out[..., p] = (out[..., p + 1] + 1) * b[..., p]
    return out


def uint_to_bits(values, width):
    """MSB-first bit matrix of unsigned integers (``width <= 64``)."""
    v = np.asarray(values, dtype=np.uint64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((v[..., None] >> shifts) & np.uint64(1)).astype(np.uint8)


def bits_to_uint(bits):
    width = bits.shape[-1]
    if width > 64:
        raise ValueError("bits_to_uint handles at most 64 bits")
    weights = np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64)
    return (bits.astype(np.uint64) * weights).sum(axis=-1, dtype=np.uint64)


def bits_to_ints(bits):
    """Arbitrary-width bit rows to Python integers."""
    bits = np.asarray(bits, dtype=np.uint8)
    width = bits.shape[-1]
    pad = (-width) % 8
    packed = np.packbits(np.pad(bits, ((0, 0), (pad, 0))), axis=1)
    return [int.from_bytes(row.tobytes(), "big") for row in packed]


def ints_to_bits(codes, width):
    nbytes = (width + 7) // 8
    raw = np.frombuffer(b"".join(int(c).to_bytes(nbytes, "big") for c in codes), dtype=np.uint8)
    bits = np.unpackbits(raw.reshape(len(codes), nbytes), axis=1)
    return bits[:, nbytes * 8 - width:]


def bits_to_fraction(bits):
    """Binary fraction ``0.b1 b2 ...`` as a float (digits past 64 are ignored)."""
    b = bits[..., :64].astype(float)
    x = np.zeros(b.shape[:-1])
    for i in range(b.shape[-1] - 1, -1, -1):
        x = (x + b[..., i]) * 0.5
    return x


def fraction_to_bits(x, width):
    """First ``width`` binary digits of fractions in ``[0, 1)``."""
    x = np.array(x, dtype=float, copy=True)
    out = np.zeros(x.shape + (width,), dtype=np.uint8)
    for i in range(width):
        x = x * 2.0
        digit = np.floor(x)
        out[..., i] = digit.astype(np.uint8)
        x -= digit
    return out


def encode_bits(coord_bits):
    """Interleave runs: ``(N, d, B)`` coordinate bits -> ``(N, 2dB)`` code bits."""
    coord_bits = np.asarray(coord_bits, dtype=np.uint8)
    n_pts, dim, bits = coord_bits.shape
    width = code_length(dim, bits)
    runs = _suffix_runs(coord_bits)
    rows = np.arange(n_pts)
    pos = np.zeros((n_pts, dim), dtype=np.int64)
    q = np.zeros(n_pts, dtype=np.int64)
    diff = np.zeros((n_pts, width + 1), dtype=np.int8)
    flat = diff.reshape(-1)
    base = rows * (width + 1)
    for _ in range(bits):
        if np.all(pos >= bits):
            break
        for k in range(dim):
            r = runs[rows, k, np.minimum(pos[:, k], bits)]
            on = np.flatnonzero(r)
            # run starts and ends never collide within a row, so plain assignment is enough
            flat[base[on] + q[on]] = 1
            flat[base[on] + q[on] + r[on]] = -1
            q += r + 1
            pos[:, k] += r + 1
    return np.cumsum(diff, axis=1, dtype=np.int8)[:, :width].astype(np.uint8)


def decode_bits(code_bits, dim, bits):
    """Inverse of :func:`encode_bits`.

    Returns ``(coord_bits, incomplete)``; ``incomplete`` marks codes whose
    digits ran out inside a run (the missing digits are read as 0).
    """
    code_bits = np.asarray(code_bits, dtype=np.uint8)
    n_pts, width = code_bits.shape
    runs = _suffix_runs(code_bits)
    rows = np.arange(n_pts)
    q = np.zeros(n_pts, dtype=np.int64)
    pos = np.zeros((n_pts, dim), dtype=np.int64)
    diff = np.zeros((n_pts, dim, bits + 1), dtype=np.int8)
    flat = diff.reshape(-1)
    incomplete = np.zeros(n_pts, dtype=bool)
    for _ in range(bits):
        if np.all(pos >= bits):
            break
        for k in range(dim):
            r = runs[rows, np.minimum(q, width)]
            incomplete |= (r > 0) & (q + r >= width)
            start = np.minimum(pos[:, k], bits)
            stop = np.minimum(pos[:, k] + r, bits)
            on = np.flatnonzero(stop > start)
            base = (on * dim + k) * (bits + 1)
            flat[base + start[on]] = 1
            flat[base + stop[on]] = -1
            q += r + 1
            pos[:, k] += r + 1
    return np.cumsum(diff, axis=2, dtype=np.int8)[:, :, :bits].astype(np.uint8), incomplete


def points_to_ints(s, n, bits):
    """Scale ``[0, n)^d`` points to ``bits``-bit integers (truncating)."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    scaled = np.floor(s / n * 2.0 ** bits)
    return np.clip(scaled, 0, 2.0 ** bits - 1).astype(np.uint64)


def ints_to_points(ints, n, bits):
    return np.asarray(ints, dtype=float) * (n / 2.0 ** bits)


def phi_encode_code(s, n=1, bits=32):
    """Exact codes as Python integers of ``2 d bits`` binary digits."""
    ints = points_to_ints(s, n, bits)
    return bits_to_ints(encode_bits(uint_to_bits(ints, bits)))


def phi_encode(s, n=1, bits=32):
    """Code value(s) in ``[0, 1)`` as floats.

    ``s`` is one point of shape ``(d,)`` or a stack ``(N, d)``.
    """
    s_arr = np.asarray(s, dtype=float)
    ints = points_to_ints(s_arr, n, bits)
    x = bits_to_fraction(encode_bits(uint_to_bits(ints, bits)))
    return float(x[0]) if s_arr.ndim == 1 else x


def phi_decode(x, dim, n=1, bits=32, strict=False, return_flags=False):
    """Decode code value(s) back to points of ``[0, n)^dim``.

    ``x`` may be floats in ``[0, 1)`` or Python integer codes of length
    ``2 * dim * bits``.  Codes whose digits run out mid-run are zero-padded
    and flagged; with ``strict`` they raise :class:`IncompleteBlocks`.
    """
    width = code_length(dim, bits)
    scalar = np.ndim(x) == 0
    items = [x] if scalar else list(x)
    if all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) for v in items):
        code_bits = ints_to_bits(items, width)
    else:
        code_bits = fraction_to_bits(np.asarray(items, dtype=float), width)
    coord_bits, flags = decode_bits(code_bits, dim, bits)
    if strict and flags.any():
        raise IncompleteBlocks(f"{int(flags.sum())} code(s) ended inside a run")
    pts = ints_to_points(bits_to_uint(coord_bits), n, bits)
    out = pts[0] if scalar else pts
    return (out, flags) if return_flags else out
