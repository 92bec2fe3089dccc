"""Independent slow reference implementations used by the tests."""

import math

import numpy as np


def naive_ssim(x, y):
    """Explicit sliding 11x11 window with a directly built 2-D Gaussian."""
    k = 11
    w2 = np.array([[math.exp(-((i - 5) ** 2 + (j - 5) ** 2) / (2 * 1.5**2)) for j in range(k)] for i in range(k)])
    w2 /= w2.sum()
    c1, c2 = 0.01**2, 0.03**2
    per_channel = []
    for c in range(x.shape[2]):
        vals = []
        for i in range(x.shape[0] - k + 1):
            for j in range(x.shape[1] - k + 1):
                a = x[i:i + k, j:j + k, c]
                b = y[i:i + k, j:j + k, c]
                ma, mb = (w2 * a).sum(), (w2 * b).sum()
                va = (w2 * (a - ma) ** 2).sum()
                vb = (w2 * (b - mb) ** 2).sum()
                cov = (w2 * (a - ma) * (b - mb)).sum()
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))


def naive_psnr(x, y):
    mse = sum((a - b) ** 2 for a, b in zip(np.ravel(x), np.ravel(y))) / np.size(x)
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(1 / mse))


def naive_bit_reduce(x, bits):
    L = 2**bits - 1
    return np.array([min(L, max(0, math.floor(v * L + 0.5))) / L for v in np.ravel(x)]).reshape(np.shape(x))
