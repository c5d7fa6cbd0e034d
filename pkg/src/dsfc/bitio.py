"""Bit-level I/O for codeword assembly.

Writers accumulate into a Python int (MSB-first within the stream), readers
walk the same layout. Padding only happens once, at the very end of a
stream, and the reader can certify that any leftover bits are zero.
"""

from __future__ import annotations

from .errors import MalformedStream, TrailingBits


class BitWriter:
    def __init__(self) -> None:
        self._acc = 0
        self._nbits = 0

    def __len__(self) -> int:
        return self._nbits

    def write_bit(self, bit: int) -> None:
        self._acc = (self._acc << 1) | (bit & 1)
        self._nbits += 1

    def write_uint(self, value: int, width: int) -> None:
        """width bits of value, MSB first; width 0 writes nothing."""
        if width < 0 or value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        self._acc = (self._acc << width) | value
        self._nbits += width

    def write_bits(self, bits: str) -> None:
        for b in bits:
            self.write_bit(1 if b == "1" else 0)

    def to_bytes(self) -> bytes:
        """Byte-aligned dump, zero-padded on the right."""
        pad = (-self._nbits) % 8
        acc = self._acc << pad
        return acc.to_bytes((self._nbits + pad) // 8, "big") if self._nbits else b""

    def bit_string(self) -> str:
        return format(self._acc, f"0{self._nbits}b") if self._nbits else ""


class BitReader:
    def __init__(self, data: bytes, nbits: int = -1):
        self._data = data
        self._pos = 0
        self._nbits = len(data) * 8 if nbits < 0 else nbits
        if self._nbits > len(data) * 8:
            raise MalformedStream("declared bit length exceeds the buffer")

    @property
    def position(self) -> int:
        return self._pos

    @property
    def remaining(self) -> int:
        return self._nbits - self._pos

    def read_bit(self) -> int:
        if self._pos >= self._nbits:
            raise MalformedStream("read past end of stream")
        byte = self._data[self._pos >> 3]
        bit = (byte >> (7 - (self._pos & 7))) & 1
        self._pos += 1
        return bit

    def read_uint(self, width: int) -> int:
        value = 0
        for _ in range(width):
            value = (value << 1) | self.read_bit()
        return value

    def seek(self, bit_position: int) -> None:
        if not 0 <= bit_position <= self._nbits:
            raise MalformedStream("seek outside the stream")
        self._pos = bit_position

    def expect_exhausted(self) -> None:
        """Fail with TrailingBits when any 1-bit lives past the cursor."""
        pos = self._pos
        for p in range(pos, len(self._data) * 8):
            byte = self._data[p >> 3]
            if (byte >> (7 - (p & 7))) & 1:
                raise TrailingBits(f"nonzero bit at position {p} past logical end")


def write_varint(w: BitWriter, value: int) -> None:
    """LEB128-style 8-bit groups, written through the bit writer."""
    if value < 0:
        raise ValueError("varint is unsigned")
    while True:
        group = value & 0x7F
        value >>= 7
        w.write_uint((0x80 | group) if value else group, 8)
        if not value:
            return


def read_varint(r: BitReader) -> int:
    shift = 0
    out = 0
    while True:
        byte = r.read_uint(8)
        out |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return out
        shift += 7
        if shift > 63:
            raise MalformedStream("varint too long")
