#!/usr/bin/env python3
"""Re-derive the embedded Daubechies-8 filter and verify it digit-for-digit.

The minimum-phase 16-tap lowpass comes from spectral factorization of the
degree-7 half-band residue polynomial P(y) = sum_{k<8} C(7+k,k) y^k: its
roots map to z-plane pairs via y = (2 - z - 1/z)/4, the in-circle root of
each pair is kept, an 8-fold zero at z = -1 is appended, and the result is
normalized to sum sqrt(2). Runs at 60-digit precision and compares against
the constants embedded in bpnet.wavelet.

Usage: python scripts/derive_db8.py
"""

import sys

import mpmath as mp
import numpy as np

from bpnet.wavelet import DB8_LOWPASS

VANISHING_MOMENTS = 8


def derive_taps() -> list[mp.mpf]:
    mp.mp.dps = 60
    n = VANISHING_MOMENTS
    residue = [mp.binomial(n - 1 + k, k) for k in range(n)]
    roots_y = mp.polyroots(list(reversed(residue)), maxsteps=200, extraprec=200)

    poly = [mp.mpf(1)]
    for _ in range(n):  # (1 + z^-1)^8
        poly = [a + b for a, b in zip(poly + [mp.mpf(0)], [mp.mpf(0)] + poly)]
    for y in roots_y:
        b = 2 - 4 * y
        disc = mp.sqrt(b * b - 4)
        z = (b + disc) / 2
        if abs(z) >= 1:
            z = (b - disc) / 2
        assert abs(z) < 1, "expected the minimum-phase root"
        poly = [a - z * c for a, c in zip(poly + [mp.mpf(0)], [mp.mpf(0)] + poly)]

    taps = [mp.re(c) for c in poly]
    total = sum(taps)
    return [t * mp.sqrt(2) / total for t in taps]


def main() -> int:
    taps = derive_taps()
    print(f"derived {len(taps)} taps at {mp.mp.dps}-digit precision")

    checks = {
        "sum - sqrt(2)": sum(taps) - mp.sqrt(2),
        "energy - 1": sum(t * t for t in taps) - 1,
    }
    for k in range(1, VANISHING_MOMENTS):
        checks[f"shift-{2 * k} orthogonality"] = sum(
            taps[i] * taps[i + 2 * k] for i in range(len(taps) - 2 * k)
        )
    g = [(-1) ** k * taps[15 - k] for k in range(16)]
    for p in range(VANISHING_MOMENTS):
        checks[f"highpass moment {p}"] = sum(g[i] * mp.mpf(i) ** p for i in range(16))

    worst = max(abs(v) for v in checks.values())
    for name, value in checks.items():
        print(f"  {name}: {mp.nstr(value, 3)}")
    if worst > mp.mpf("1e-50"):
        print("FAIL: defining identities not satisfied", file=sys.stderr)
        return 1

    drift = max(
        abs(float(t) - e) for t, e in zip(taps, DB8_LOWPASS, strict=True)
    )
    print(f"max |derived - embedded| = {drift:.3e}")
    if drift > 1e-16:
        print("FAIL: embedded constants drifted from the derivation", file=sys.stderr)
        return 1
    print("embedded constants verified")
    for t in taps:
        print(f"  {mp.nstr(t, 22)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
