"""Differentiable depth-robustification kernels.

Two operators with analytic gradients, checked against finite differences:

* Chamfer distance loss between a decoded point set and a reference set,
  squared-distance form, gradients taken with correspondences held fixed.
* Geometric feature filtering: real FFT along the point axis, a per-frequency
  complex gain per channel, inverse FFT, real part.

The FFT here is self-contained (mixed-radix Cooley-Tukey, direct DFT for
small prime lengths, Bluestein for large primes). Convention: unnormalized
forward, 1/N on the inverse. Desk scale; correctness over speed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InputError

_DIRECT_DFT_MAX = 64  # prime lengths up to this use the O(N^2) transform


# -- complex FFT core --------------------------------------------------------

def _smallest_prime_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def _dft_direct(x: np.ndarray, sign: int) -> np.ndarray:
    n = len(x)
    idx = np.arange(n)
    w = np.exp(sign * 2j * np.pi * np.outer(idx, idx) / n)
    return w @ x


def _fft_rec(x: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized transform, sign=-1 forward, +1 for the inverse kernel."""
    n = len(x)
    if n == 1:
        return x.copy()
    r = _smallest_prime_factor(n)
    if r == n:
        if n <= _DIRECT_DFT_MAX:
            return _dft_direct(x, sign)
        return _bluestein(x, sign)
    m = n // r
    subs = [_fft_rec(x[j::r], sign) for j in range(r)]
    k = np.arange(n)
    out = np.zeros(n, dtype=np.complex128)
    for j, s in enumerate(subs):
        out += np.exp(sign * 2j * np.pi * j * k / n) * s[k % m]
    return out


def _bluestein(x: np.ndarray, sign: int) -> np.ndarray:
    # nk = (n^2 + k^2 - (k-n)^2) / 2 turns the DFT into a convolution with a
    # quadratic chirp; the chirp exponent is periodic in n^2 mod 2N.
    n = len(x)
    idx = np.arange(n, dtype=np.int64)
    quad = (idx * idx) % (2 * n)
    w = np.exp(sign * 1j * np.pi * quad / n)
    m = 1
    while m < 2 * n - 1:
        m *= 2
    a = np.zeros(m, dtype=np.complex128)
    a[:n] = x * w
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(w)
    b[m - (n - 1):] = np.conj(w[1:][::-1])
    conv = _fft_rec(_fft_rec(a, -1) * _fft_rec(b, -1), +1) / m
    return w * conv[:n]


def _as_real_signal(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.size < 1:
        raise InputError("signal must have length >= 1")
    if not np.all(np.isfinite(x)):
        raise InputError("signal must be finite")
    return x


def fft_real(signal) -> np.ndarray:
    """Forward DFT of a real signal; returns bins 0 .. floor(N/2)."""
    x = _as_real_signal(signal)
    n = x.size
    return _fft_rec(x.astype(np.complex128), -1)[: n // 2 + 1]


def ifft_real(spectrum, n: int) -> np.ndarray:
    """Inverse of fft_real onto a length-n real signal.

    The half spectrum is extended Hermitian-symmetrically and the real part
    is taken at the end, so spectra whose DC/Nyquist bins carry imaginary
    parts (for example after a complex gain) still map to a real signal.
    """
    s = np.asarray(spectrum, dtype=np.complex128).ravel()
    if n < 1:
        raise InputError("n must be >= 1")
    if s.size != n // 2 + 1:
        raise InputError(f"spectrum length {s.size} inconsistent with n={n}")
    full = np.zeros(n, dtype=np.complex128)
    full[: s.size] = s
    if n > 1:
        tail = s[1: (n + 1) // 2]
        full[n - len(tail):] = np.conj(tail[::-1])
    return np.real(_fft_rec(full, +1)) / n


def spectral_energy(spectrum, n: int) -> float:
    """Signal-domain energy implied by a half spectrum (for Parseval checks)."""
    s = np.asarray(spectrum, dtype=np.complex128).ravel()
    weights = np.full(s.size, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return float(np.sum(weights * np.abs(s) ** 2) / n)


# -- geometric feature filtering ---------------------------------------------

def check_features(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError("features must be a (N, C) matrix with N, C >= 1")
    if not np.all(np.isfinite(arr)):
        raise InputError("features must be finite")
    return arr


def check_gains(g, n: int, channels: int) -> np.ndarray:
    arr = np.asarray(g, dtype=np.complex128)
    want = (n // 2 + 1, channels)
    if arr.shape != want:
        raise InputError(f"gains shape {arr.shape} does not match {want}")
    if not np.all(np.isfinite(arr)):
        raise InputError("gains must be finite")
    return arr


def identity_gains(n: int, channels: int) -> np.ndarray:
    return np.ones((n // 2 + 1, channels), dtype=np.complex128)


def _bin_weights(n: int) -> np.ndarray:
    # contribution multiplicity of each half-spectrum bin in the real signal
    c = np.full(n // 2 + 1, 2.0)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    return c


def gff_forward(x, g) -> np.ndarray:
    """Filter (N, C) features per channel in the frequency domain."""
    x = check_features(x)
    n, channels = x.shape
    g = check_gains(g, n, channels)
    out = np.empty_like(x)
    for c in range(channels):
        out[:, c] = ifft_real(g[:, c] * fft_real(x[:, c]), n)
    return out


def gff_backward(x, g, upstream):
    """Gradients of sum(upstream * gff_forward(x, g)).

    Returns (dx, dg) where dg packs d/dRe + i*d/dIm per gain. The map is
    linear, so these are exact.
    """
    x = check_features(x)
    n, channels = x.shape
    g = check_gains(g, n, channels)
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != x.shape:
        raise InputError(f"upstream shape {u.shape} does not match {x.shape}")
    c = _bin_weights(n)
    dx = np.empty_like(x)
    dg = np.empty_like(g)
    k = n // 2 + 1
    for ch in range(channels):
        s = fft_real(x[:, ch])
        dy = c * fft_real(u[:, ch]) / n
        dg[:, ch] = np.conj(s) * dy
        ds = np.conj(g[:, ch]) * dy
        full = np.zeros(n, dtype=np.complex128)
        full[:k] = ds
        dx[:, ch] = np.real(_fft_rec(full, +1))
    return dx, dg


# -- chamfer distance loss -----------------------------------------------------

def _check_cloud(points, name) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
        raise InputError(f"{name} must be a non-empty (N, 3) array")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} must be finite")
    return arr


def _nearest_sq(src: np.ndarray, dst: np.ndarray, chunk: int = 256):
    """Per source point: (index of nearest dst point, squared distance)."""
    idx = np.empty(len(src), dtype=np.int64)
    d2 = np.empty(len(src))
    for start in range(0, len(src), chunk):
        block = src[start:start + chunk]
        diff = block[:, None, :] - dst[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        best = np.argmin(dist2, axis=1)
        rows = np.arange(len(block))
        idx[start:start + chunk] = best
        d2[start:start + chunk] = dist2[rows, best]
    return idx, d2


def chamfer_loss(decoded, reference):
    """Symmetric squared-distance Chamfer loss and its gradient w.r.t. decoded."""
    a = _check_cloud(decoded, "decoded")
    b = _check_cloud(reference, "reference")
    fwd_idx, fwd_d2 = _nearest_sq(a, b)
    bwd_idx, bwd_d2 = _nearest_sq(b, a)
    loss = float(np.mean(fwd_d2) + np.mean(bwd_d2))
    grad = (2.0 / len(a)) * (a - b[fwd_idx])
    back = (2.0 / len(b)) * (a[bwd_idx] - b)
    np.add.at(grad, bwd_idx, back)
    return loss, grad


# -- conformance vectors -------------------------------------------------------

def write_test_vector(path, x, g):
    """Persist {input, gains, expected_output} for cross-implementation checks."""
    x = check_features(x)
    g = check_gains(g, x.shape[0], x.shape[1])
    payload = {
        "input": x.tolist(),
        "gains": [[[float(v.real), float(v.imag)] for v in row] for row in g],
        "expected_output": gff_forward(x, g).tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_test_vector(path):
    with open(path) as f:
        d = json.load(f)
    x = np.asarray(d["input"], dtype=np.float64)
    g = np.asarray([[complex(re, im) for re, im in row] for row in d["gains"]])
    expected = np.asarray(d["expected_output"], dtype=np.float64)
    return x, g, expected
