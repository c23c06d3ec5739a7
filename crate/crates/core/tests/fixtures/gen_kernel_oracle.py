"""Regenerates kernel_oracle.csv: random sub-kernel parameters and lags with
kernel values evaluated at 50 significant digits by mpmath."""

import random

import mpmath as mp

mp.mp.dps = 50
rng = random.Random(20240611)

rows = []
for _ in range(1000):
    p = {
        "per_var": rng.uniform(0.1, 5.0),
        "per_len": rng.uniform(0.1, 2.0),
        "period": rng.uniform(0.3, 2.0),
        "se_var": rng.uniform(0.1, 5.0),
        "se_len": rng.uniform(0.1, 2.0),
        "mat_var": rng.uniform(0.1, 5.0),
        "mat_len": rng.uniform(0.1, 2.0),
        "t": rng.uniform(0.0, 1.0),
        "tp": rng.uniform(0.0, 1.0),
    }
    m = {k: mp.mpf(v) for k, v in p.items()}
    r = abs(m["t"] - m["tp"])
    per = m["per_var"] * mp.exp(-2 * mp.sin(mp.pi * r / m["period"]) ** 2 / m["per_len"] ** 2)
    se = m["se_var"] * mp.exp(-(r ** 2) / (2 * m["se_len"] ** 2))
    z = mp.sqrt(3) * r / m["mat_len"]
    mat = m["mat_var"] * (1 + z) * mp.exp(-z)
    rows.append([repr(v) for v in p.values()] + [mp.nstr(x, 30) for x in (per, se, mat, per + se + mat)])

with open("kernel_oracle.csv", "w") as f:
    f.write("per_var,per_len,period,se_var,se_len,mat_var,mat_len,t,tp,periodic,se,matern32,composite\n")
    for row in rows:
        f.write(",".join(row) + "\n")
