"""Havoc mutation and splicing, AFL style.

Everything is driven by one ``random.Random`` so a mutation is fully
determined by (input, rng state, stack count).
"""

from __future__ import annotations

import random

MAX_INPUT_LEN = 1 << 20
ARITH_MAX = 35

INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
INTERESTING_16 = INTERESTING_8 + (-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767)
INTERESTING_32 = INTERESTING_16 + (-2147483648, -100663046, -32769, 32768, 65535, 65536, 100663045, 2147483647)
_INTERESTING = {1: INTERESTING_8, 2: INTERESTING_16, 4: INTERESTING_32}

FLIP, SET, ARITH, INTEREST, DELETE, INSERT, DUPLICATE = range(7)
# delete listed twice to keep inputs from growing without bound
_OPS = (FLIP, SET, ARITH, INTEREST, DELETE, DELETE, INSERT, DUPLICATE)
_OPS_SHORT = (FLIP, SET, ARITH, INTEREST, INSERT, DUPLICATE)


def _block_len(rand, limit: int) -> int:
    r = rand()
    if r < 0.6:
        lo, hi = 1, 32
    elif r < 0.9:
        lo, hi = 32, 128
    else:
        lo, hi = 128, 1500
    hi = max(1, min(hi, limit))
    lo = min(lo, hi)
    return lo + int(rand() * (hi - lo + 1))


def havoc_mutate(
    data: bytes, rng: random.Random, stack_count: int, max_len: int = MAX_INPUT_LEN
) -> bytes:
    """Apply ``stack_count`` randomly chosen operators to a copy of ``data``."""
    if stack_count < 1:
        raise ValueError(f"stack_count must be at least 1, got {stack_count}")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    rand = rng.random
    buf = bytearray(data[:max_len])
    for _ in range(stack_count):
        n = len(buf)
        if n == 0:
            op = INSERT
        elif n == 1:
            op = _OPS_SHORT[int(rand() * 6)]
        else:
            op = _OPS[int(rand() * 8)]

        if op == FLIP:
            bit = int(rand() * n * 8)
            buf[bit >> 3] ^= 128 >> (bit & 7)
        elif op == SET:
            buf[int(rand() * n)] = int(rand() * 256)
        elif op == ARITH or op == INTEREST:
            width = 1 if n < 2 else (1, 2, 4)[int(rand() * 3)] if n >= 4 else (1, 2)[int(rand() * 2)]
            pos = int(rand() * (n - width + 1))
            order = "little" if rand() < 0.5 else "big"
            if op == ARITH:
                value = int.from_bytes(buf[pos : pos + width], order)
                delta = 1 + int(rand() * ARITH_MAX)
                value = value + delta if rand() < 0.5 else value - delta
            else:
                table = _INTERESTING[width]
                value = table[int(rand() * len(table))]
            value %= 1 << (8 * width)
            buf[pos : pos + width] = value.to_bytes(width, order)
        elif op == DELETE:
            count = _block_len(rand, n - 1)
            pos = int(rand() * (n - count + 1))
            del buf[pos : pos + count]
        elif op == INSERT:
            room = max_len - n
            if room <= 0:
                continue
            count = _block_len(rand, room)
            if rand() < 0.5:
                block = rng.randbytes(count)
            else:
                fill = buf[int(rand() * n)] if n and rand() < 0.5 else int(rand() * 256)
                block = bytes((fill,)) * count
            pos = int(rand() * (n + 1))
            buf[pos:pos] = block
        else:  # DUPLICATE
            room = max_len - n
            if room <= 0:
                continue
            count = _block_len(rand, min(n, room))
            src = int(rand() * (n - count + 1))
            dst = int(rand() * (n + 1))
            buf[dst:dst] = buf[src : src + count]

    if not buf:
        buf.append(int(rand() * 256))
    return bytes(buf)


def splice(a: bytes, b: bytes, rng: random.Random) -> bytes:
    """Head of ``a`` joined to tail of ``b``, cut at independent positions.

    Cuts that give an empty result or plain ``a + b`` are redrawn.
    """
    if not a or not b:
        out = a or b
        return out if out else bytes((rng.randrange(256),))
    while True:
        i = rng.randrange(len(a) + 1)
        j = rng.randrange(len(b) + 1)
        out = a[:i] + b[j:]
        if 0 < len(out) < len(a) + len(b):
            return out
