"""Atomic file writes and the checksum used by the checkpoint format."""

from __future__ import annotations

import os
import tempfile

_CRC64_POLY = 0x42F0E1EBA9EA3693  # ECMA-182, MSB first, init 0, no xor-out
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _build_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 56
        for _ in range(8):
            if crc & (1 << 63):
                crc = ((crc << 1) ^ _CRC64_POLY) & _MASK64
            else:
                crc = (crc << 1) & _MASK64
        table.append(crc)
    return table


_CRC64_TABLE = _build_table()


def crc64(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc = (_CRC64_TABLE[((crc >> 56) ^ byte) & 0xFF] ^ ((crc << 8) & _MASK64))
    return crc


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename.

    Readers never observe a partially written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
