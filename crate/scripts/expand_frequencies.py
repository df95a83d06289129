#!/usr/bin/env python3
"""Expand a frequency table into one count per line.

Input is CSV with two columns, value and frequency, and an optional header.
Output is suitable for `cmpdak fit`.

    python3 scripts/expand_frequencies.py table.csv > counts.txt
"""

import argparse
import csv
import sys


def expand(rows):
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 2:
            raise ValueError(f"line {lineno}: expected value,frequency, got {row!r}")
        value, freq = (cell.strip() for cell in row)
        try:
            v, f = int(value), int(freq)
        except ValueError:
            if lineno == 1:
                continue
            raise ValueError(f"line {lineno}: non-integer entry in {row!r}") from None
        if v < 0 or f < 0:
            raise ValueError(f"line {lineno}: negative entry in {row!r}")
        yield from [v] * f


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("table", type=argparse.FileType("r"), help="value,frequency CSV; - for stdin")
    args = parser.parse_args()
    try:
        for v in expand(csv.reader(args.table)):
            print(v)
    except ValueError as e:
        sys.exit(f"error: {e}")


if __name__ == "__main__":
    main()
