"""Bit-exact integer range coder over 16-bit-total frequency tables.

Carry-propagating design: 64-bit low accumulator, 32-bit range, byte-wise
renormalization that keeps range >= 2^24, so the per-symbol truncation loss
stays below log2(257/256) bits.  The total is always 2^16, so the range
division is a shift.  Out-of-support symbols are coded as the escape bucket
followed by the value's low 16 bits (two's complement) at exactly 16 bits.

Decoding with a pmf sequence that differs from the encoder's is undefined
beyond the container checksum; mismatches are only detected probabilistically.
"""

from __future__ import annotations

import numpy as np

from .errors import StreamError
from .probability import QuantizedPmf

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_TOTAL_BITS = 16


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._flushed: bytes | None = None

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            byte = self._cache + carry
            while self._cache_size:
                self._out.append(byte & 0xFF)
                byte = 0xFF + carry
                self._cache_size -= 1
            self._cache = (self.low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def _encode(self, cum_low: int, freq: int) -> None:
        if self._flushed is not None:
            raise StreamError("encoder already flushed")
        r = self.range >> _TOTAL_BITS
        self.low += cum_low * r
        self.range = freq * r
        while self.range < _TOP:
            self._shift_low()
            self.range = (self.range << 8) & _MASK32

    def encode_symbol(self, pmf: QuantizedPmf, symbol: int) -> None:
        idx = pmf.symbol_index(symbol)
        freq = int(pmf.freqs[idx])
        if freq <= 0:
            raise StreamError(f"symbol {symbol} has zero frequency")
        self._encode(int(pmf.cum[idx]), freq)
        if idx == pmf.escape_index:
            self._encode(symbol & 0xFFFF, 1)  # raw 16-bit two's complement

    def flush(self) -> bytes:
        """Drain the pending bytes; idempotent once called."""
        if self._flushed is None:
            for _ in range(5):
                self._shift_low()
            self._flushed = bytes(self._out)
        return self._flushed


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.range = _MASK32
        self.code = 0
        if data[:1] not in (b"", b"\x00"):
            raise StreamError("corrupt stream head")
        for _ in range(5):
            self.code = ((self.code << 8) | self._next_byte()) & 0xFFFFFFFFFF
        self.code &= _MASK32

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise StreamError("truncated entropy-coded stream")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def _renorm(self) -> None:
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range = (self.range << 8) & _MASK32

    def _decode_raw16(self) -> int:
        r = self.range >> _TOTAL_BITS
        value = self.code // r
        if value > 0xFFFF:
            value = 0xFFFF
        self.code -= value * r
        self.range = r
        self._renorm()
        return value

    def decode_symbol(self, pmf: QuantizedPmf) -> int:
        r = self.range >> _TOTAL_BITS
        dv = self.code // r
        if dv > 0xFFFF:
            dv = 0xFFFF
        idx = int(np.searchsorted(pmf.cum, dv, side="right")) - 1
        freq = int(pmf.freqs[idx])
        self.code -= int(pmf.cum[idx]) * r
        self.range = freq * r
        self._renorm()
        if idx == pmf.escape_index:
            raw = self._decode_raw16()
            return raw - 0x10000 if raw >= 0x8000 else raw
        return idx - pmf.support
