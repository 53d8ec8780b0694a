"""Bit-string helpers shared by the key, hash and reconciliation code.

Bulk key material is carried as 1-D ``numpy.uint8`` arrays holding 0/1.
Short strings (polynomials, LFSR states, tags) are carried as Python
ints together with an explicit length; bit 0 of the string is the most
significant bit of the int.
"""

from __future__ import annotations

import numpy as np


def as_bits(value) -> np.ndarray:
    """Coerce a '0101' string, a sequence of 0/1 or an array to uint8 bits."""
    if isinstance(value, str):
        s = value.replace(" ", "").replace("_", "")
        if s and set(s) - {"0", "1"}:
            raise ValueError(f"not a bit string: {value!r}")
        return np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")
    arr = np.asarray(value, dtype=np.uint8).ravel()
    if arr.size and arr.max() > 1:
        raise ValueError("bit arrays may only contain 0 and 1")
    return arr


def bits_to_str(bits) -> str:
    return "".join("1" if b else "0" for b in as_bits(bits))


def bits_to_int(bits) -> int:
    bits = as_bits(bits)
    if bits.size == 0:
        return 0
    packed = np.packbits(bits)
    pad = packed.size * 8 - bits.size
    return int.from_bytes(packed.tobytes(), "big") >> pad


def int_to_bits(value: int, length: int) -> np.ndarray:
    if value < 0 or value >> length:
        raise ValueError(f"{value:#x} does not fit in {length} bits")
    nbytes = (length + 7) // 8
    pad = nbytes * 8 - length
    raw = np.frombuffer((value << pad).to_bytes(nbytes, "big"), dtype=np.uint8)
    return np.unpackbits(raw)[:length]


def bytes_to_bits(data: bytes) -> np.ndarray:
    """MSB-first expansion of a byte string."""
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    """Pack bits MSB-first; a ragged tail is zero-padded on the right."""
    return np.packbits(as_bits(bits)).tobytes()


def bits_to_hex(bits) -> str:
    bits = as_bits(bits)
    return format(bits_to_int(bits), "0{}x".format(max(1, (bits.size + 3) // 4)))


def hex_to_bits(text: str, length: int) -> np.ndarray:
    return int_to_bits(int(text, 16), length)
