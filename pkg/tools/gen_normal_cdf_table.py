"""Regenerate tests/data/normal_cdf_reference.csv.

High-precision standard normal CDF values on z in [-8, 8] at 1/16 steps,
computed with mpmath at 50 decimal digits and rounded to float64. The table
is committed so the CDF used by the z-test can be checked without adding a
statistics dependency to the package itself.
"""

from pathlib import Path

from mpmath import mp

mp.dps = 50

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "normal_cdf_reference.csv"


def main() -> None:
    OUT.parent.mkdir(parents=True, exist_ok=True)
    lines = ["z,phi"]
    for i in range(-128, 129):
        z = mp.mpf(i) / 16
        phi = (mp.erfc(-z / mp.sqrt(2))) / 2
        lines.append(f"{float(z)!r},{float(phi)!r}")
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({len(lines) - 1} rows)")


if __name__ == "__main__":
    main()
