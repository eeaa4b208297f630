"""Independent reference implementations that pin expected test values.

Everything in this file is written in the most literal style available:
explicit sums, explicit loops, plain Python floats where speed allows.  The
oracles were authored against the written contracts before the corresponding
package implementations existed and must never import from speechbp, so the
two routes stay independent.
"""

import cmath
import math


# === discrete Fourier transforms, O(N^2) on purpose ===

def dft_loop(x):
    """Textbook DFT by double loop.  Only usable for small N."""
    n = len(x)
    out = []
    for k in range(n):
        acc = complex(0.0, 0.0)
        for i in range(n):
            acc += x[i] * cmath.exp(-2j * cmath.pi * k * i / n)
        out.append(acc)
    return out


def dft_matrix(x):
    """O(N^2) DFT through an explicit exponent table.

    numpy is used only to make the N^2 products affordable at N=4096; there
    is no divide-and-conquer step anywhere, so this stays independent of any
    radix-2 code under test.
    """
    import numpy as np

    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    k = np.arange(n)
    table = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return table @ x


# === MFCC, every stage spelled out ===

def mel_from_hz(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def hz_from_mel(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mfcc_oracle(frame, sample_rate, n_filters=26, sigma=0.4, preemphasis=0.97,
                log_floor=1e-10, n_coefs=12):
    """Straight-line MFCC pipeline: pre-emphasis, Gaussian window, zero-padded
    DFT magnitudes, triangular mel filters, floored natural log, orthonormal
    DCT-II, coefficients 1..n_coefs."""
    n = len(frame)
    y = [float(frame[0])]
    for i in range(1, n):
        y.append(float(frame[i]) - preemphasis * float(frame[i - 1]))

    half = (n - 1) / 2.0
    for i in range(n):
        y[i] *= math.exp(-0.5 * ((i - half) / (sigma * half)) ** 2)

    nfft = 1
    while nfft < n:
        nfft *= 2
    padded = y + [0.0] * (nfft - n)
    spectrum = dft_matrix(padded)
    mags = [abs(spectrum[k]) for k in range(nfft // 2 + 1)]
    bin_hz = sample_rate / nfft

    lo = mel_from_hz(0.0)
    hi = mel_from_hz(sample_rate / 2.0)
    edges = [hz_from_mel(lo + (hi - lo) * j / (n_filters + 1))
             for j in range(n_filters + 2)]

    energies = []
    for m in range(1, n_filters + 1):
        left, center, right = edges[m - 1], edges[m], edges[m + 1]
        acc = 0.0
        for k in range(len(mags)):
            f = k * bin_hz
            if left < f < right:
                if f <= center:
                    resp = (f - left) / (center - left)
                else:
                    resp = (right - f) / (right - center)
                acc += resp * mags[k]
        energies.append(acc)

    log_e = [math.log(max(e, log_floor)) for e in energies]

    coefs = []
    scale = math.sqrt(2.0 / n_filters)
    for j in range(1, n_coefs + 1):
        s = 0.0
        for m in range(n_filters):
            s += log_e[m] * math.cos(math.pi * j * (2 * m + 1) / (2 * n_filters))
        coefs.append(scale * s)
    return coefs


# === moment features ===

def skewness_oracle(xs):
    xs = [float(v) for v in xs]
    n = len(xs)
    mean = math.fsum(xs) / n
    m2 = math.fsum((v - mean) ** 2 for v in xs) / n
    m3 = math.fsum((v - mean) ** 3 for v in xs) / n
    return m3 / m2 ** 1.5


def kurtosis_oracle(xs):
    xs = [float(v) for v in xs]
    n = len(xs)
    mean = math.fsum(xs) / n
    m2 = math.fsum((v - mean) ** 2 for v in xs) / n
    m4 = math.fsum((v - mean) ** 4 for v in xs) / n
    return m4 / m2 ** 2 - 3.0


def trapezoid_abs_oracle(xs, sample_rate):
    """Rectified trapezoid rule, summed term by term."""
    dt = 1.0 / sample_rate
    acc = 0.0
    for i in range(len(xs) - 1):
        acc += 0.5 * (abs(float(xs[i])) + abs(float(xs[i + 1]))) * dt
    return acc


def zcr_oracle(xs):
    """Sign changes per adjacent pair; zero counts as positive."""
    signs = [1 if float(v) >= 0.0 else -1 for v in xs]
    flips = 0
    for i in range(len(signs) - 1):
        if signs[i] != signs[i + 1]:
            flips += 1
    return flips / (len(xs) - 1)


def spectral_descriptors_oracle(mags, bin_hz, flatness_floor=1e-12):
    mags = [float(m) for m in mags]
    total = math.fsum(mags)
    centroid = math.fsum(k * bin_hz * m for k, m in enumerate(mags)) / total
    var = math.fsum((k * bin_hz - centroid) ** 2 * m
                    for k, m in enumerate(mags)) / total
    floored = [max(m, flatness_floor) for m in mags]
    log_mean = math.fsum(math.log(m) for m in floored) / len(floored)
    geo = math.exp(log_mean)
    arith = math.fsum(floored) / len(floored)
    return centroid, math.sqrt(var), geo / arith


# === ReliefF, exhaustive by definition ===

def relieff_oracle(X, y, k):
    """Two-class ReliefF over every instance, explicit loops throughout.

    Manhattan distance on range-normalized features, distance ties broken by
    lower index, miss contributions weighted by prior(miss class) divided by
    (1 - prior(own class)), one division at the very end.
    """
    X = [[float(v) for v in row] for row in X]
    y = [int(c) for c in y]
    n = len(X)
    d = len(X[0])

    ranges = []
    for f in range(d):
        col = [X[i][f] for i in range(n)]
        ranges.append(max(col) - min(col))

    def diff(f, a, b):
        if ranges[f] == 0.0:
            return 0.0
        return abs(X[a][f] - X[b][f]) / ranges[f]

    def dist(a, b):
        return sum(diff(f, a, b) for f in range(d))

    counts = {}
    for c in y:
        counts[c] = counts.get(c, 0) + 1

    hit_acc = [0.0] * d
    miss_acc = [0.0] * d
    for r in range(n):
        order = sorted((i for i in range(n) if i != r),
                       key=lambda i: (dist(r, i), i))
        hits = [i for i in order if y[i] == y[r]][:k]
        misses = [i for i in order if y[i] != y[r]][:k]
        for h in hits:
            for f in range(d):
                hit_acc[f] += diff(f, r, h)
        for mi in misses:
            prior_ratio = counts[y[mi]] / (n - counts[y[r]])
            for f in range(d):
                miss_acc[f] += prior_ratio * diff(f, r, mi)

    return [(miss_acc[f] - hit_acc[f]) / (n * k) for f in range(d)]


# === regression metrics, Kahan-grade accumulation via fsum ===

def mse_oracle(y, yhat):
    return math.fsum((float(a) - float(b)) ** 2
                     for a, b in zip(y, yhat)) / len(y)


def mae_oracle(y, yhat):
    return math.fsum(abs(float(a) - float(b))
                     for a, b in zip(y, yhat)) / len(y)


def r2_oracle(y, yhat):
    y = [float(v) for v in y]
    mean = math.fsum(y) / len(y)
    rss = math.fsum((a - float(b)) ** 2 for a, b in zip(y, yhat))
    tss = math.fsum((a - mean) ** 2 for a in y)
    return 1.0 - rss / tss


def pearson_oracle(xs, ys):
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = math.fsum((a - mx) ** 2 for a in xs)
    syy = math.fsum((b - my) ** 2 for b in ys)
    return sxy / math.sqrt(sxx * syy)


# === classification tallies ===

def hypertensive_oracle(sbp, dbp):
    return sbp > 115.0 or dbp > 72.0


def confusion_oracle(pred_classes, true_classes):
    tp = fp = fn = tn = 0
    for p, t in zip(pred_classes, true_classes):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


# === optimizer and gradient references ===

def adam_single_step_oracle(theta, g, lr=2e-5, beta1=0.9, beta2=0.999,
                            eps=1e-8):
    """One Adam update from zeroed moments (t = 1), scalar by scalar."""
    m = (1.0 - beta1) * g
    v = (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1)          # == g at t=1
    v_hat = v / (1.0 - beta2)          # == g^2 at t=1
    return theta - lr * m_hat / (math.sqrt(v_hat) + eps)


def central_difference(f, get, put, h=1e-4):
    """d f / d coordinate via central differences.

    `get()` reads the coordinate, `put(v)` writes it.  f must be a pure
    function of the stored value.  Uses the symmetric quotient so truncation
    error is O(h^2); f is expected to accumulate its own sums with fsum.
    """
    orig = get()
    put(orig + h)
    f_plus = f()
    put(orig - h)
    f_minus = f()
    put(orig)
    return (f_plus - f_minus) / (2.0 * h)
