#!/usr/bin/env python3
"""Writes the tiny IDX fixture pair used by the dataset loader tests.

Run from the repository root:
    python3 tools/scripts/make_idx_fixture.py
Prints the scaled pixel sum that the tests freeze as a reference.
"""
import struct
from pathlib import Path

OUT = Path(__file__).resolve().parents[2] / "tests" / "fixtures"
COUNT, ROWS, COLS = 4, 28, 28
LABELS = [3, 0, 2, 1]


def pixel(i, r, c):
    return (i * 7 + r * 3 + c) % 256


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    img = struct.pack(">IIII", 0x803, COUNT, ROWS, COLS)
    body = bytes(pixel(i, r, c) for i in range(COUNT) for r in range(ROWS) for c in range(COLS))
    (OUT / "tiny-images.idx").write_bytes(img + body)
    lab = struct.pack(">II", 0x801, COUNT) + bytes(LABELS)
    (OUT / "tiny-labels.idx").write_bytes(lab)

    total = sum(b / 255.0 for b in body)
    print(f"images: {COUNT}x{ROWS}x{COLS}, labels: {LABELS}")
    print(f"scaled pixel sum: {total!r}")
    print(f"first row of image 0, scaled: {[pixel(0, 0, c) / 255.0 for c in range(4)]!r}")


if __name__ == "__main__":
    main()
