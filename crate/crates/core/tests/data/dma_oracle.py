"""Reference values for the simplified DMA sweep, at 40 significant digits.

Writes 100,000 little-endian f64 values to dma_oracle.bin, ordered
(mu, theta_s, order, theta) with theta varying fastest. Every input is
built with the same f64 operations as the Rust test, so both sides see
bit-identical arguments.
"""

import math
import struct
from pathlib import Path

from mpmath import mp, mpf, cos, fabs

mp.dps = 40

values = []
for k in range(10):
    mu = k / 9
    for m in range(10):
        theta_s = 2 * math.pi * m / 10
        for j in range(1, 6):
            for n in range(200):
                theta = 2 * math.pi * (n + 0.5) / 200 - math.pi
                v = fabs(mpf(mu) + (1 - mpf(mu)) * cos(mpf(theta) - mpf(theta_s))) ** j
                values.append(float(v))

out = Path(__file__).with_name("dma_oracle.bin")
out.write_bytes(struct.pack(f"<{len(values)}d", *values))
print(f"wrote {len(values)} values to {out}")
