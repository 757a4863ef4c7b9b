"""Real-argument Bessel functions J0, Y0, J1, Y1 and second-kind Hankel functions.

These are the only special functions the 2D Helmholtz physics needs: the
free-space Green's function and the line-source incident field are both
scaled evaluations of H0/H1 of the second kind at k_b * distance.

Evaluation scheme, per order:

* ``x <= 17``: ascending power series summed in 80-bit extended precision,
  which keeps the alternating-series cancellation (worst near the crossover,
  peak term ~4e5) below 1e-13 absolute.
* ``x > 17``: Hankel large-argument expansion J = sqrt(2/(pi x)) *
  (P cos(chi) - Q sin(chi)), Y = sqrt(2/(pi x)) * (P sin(chi) + Q cos(chi)),
  chi = x - nu*pi/2 - pi/4, with per-element optimal truncation of the P/Q
  series (first omitted term bounds the error, ~exp(-2x) < 2e-15 at x = 17).

Arguments are capped at 1e4; desk-scale scenes never produce larger
k_b * distance, and trigonometric argument reduction stays accurate there.
"""

import numpy as np

from .errors import InvalidInputError

DOMAIN_MAX = 1e4
_CROSSOVER = 17.0

_LD = np.longdouble
_EULER = _LD("0.5772156649015328606065120900824024")
_PI = _LD("3.1415926535897932384626433832795029")
_SERIES_MAX_TERMS = 80
_ASYM_MAX_TERMS = 40


def _validate(x, name, strictly_positive):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: argument must be finite")
    if strictly_positive:
        if np.any(arr <= 0.0):
            raise InvalidInputError(f"{name}: argument must be > 0")
    elif np.any(arr < 0.0):
        raise InvalidInputError(f"{name}: argument must be >= 0")
    if np.any(arr > DOMAIN_MAX):
        raise InvalidInputError(f"{name}: argument exceeds supported domain ({DOMAIN_MAX:g})")
    return arr, np.isscalar(x) or (hasattr(x, "ndim") and x.ndim == 0)


def _series_jy0(x, want_y):
    """(J0, Y0) by ascending series, x <= crossover, longdouble internally."""
    xl = x.astype(_LD)
    z = 0.25 * xl * xl
    term = np.ones_like(z)          # z^k / (k!)^2
    j = np.ones_like(z)
    s = np.zeros_like(z)            # sum_{k>=1} (-1)^{k+1} H_k z^k / (k!)^2
    harmonic = _LD(0.0)
    for k in range(1, _SERIES_MAX_TERMS):
        term = term * (-z) / _LD(k * k)
        harmonic = harmonic + _LD(1.0) / _LD(k)
        j = j + term
        s = s - term * harmonic     # (-1)^{k+1} = -(sign of term)
        if np.max(np.abs(term)) < _LD(1e-24):
            break
    if not want_y:
        return j, None
    y = (2.0 / _PI) * ((np.log(0.5 * xl) + _EULER) * j + s)
    return j, y


def _series_jy1(x, want_y):
    """(J1, Y1) by ascending series, x <= crossover, longdouble internally."""
    xl = x.astype(_LD)
    z = 0.25 * xl * xl
    term = np.ones_like(z)          # z^k / (k! (k+1)!)
    j = np.ones_like(z)
    s = np.ones_like(z)             # sum (-1)^k (H_k + H_{k+1}) z^k / (k!(k+1)!), H_0 + H_1 = 1
    for k in range(1, _SERIES_MAX_TERMS):
        term = term * (-z) / _LD(k * (k + 1))
        hsum = _LD(2.0) * _harmonic(k) + _LD(1.0) / _LD(k + 1)
        j = j + term
        s = s + term * hsum
        if np.max(np.abs(term)) < _LD(1e-24):
            break
    half_x = 0.5 * xl
    j1 = half_x * j
    if not want_y:
        return j1, None
    y1 = (2.0 / _PI) * ((np.log(half_x) + _EULER) * j1 - 1.0 / xl) - (half_x / _PI) * s
    return j1, y1


def _harmonic(k):
    h = _LD(0.0)
    for m in range(1, k + 1):
        h = h + _LD(1.0) / _LD(m)
    return h


def _asym_jy(nu, x):
    """(J_nu, Y_nu) by the Hankel expansion, x > crossover, per-element truncation."""
    xl = x.astype(_LD)
    two_x = 2.0 * xl
    four_nu_sq = _LD(4 * nu * nu)
    term = np.ones_like(xl)         # t_m = (nu, m) / (2x)^m
    p = np.ones_like(xl)            # P = t_0 - t_2 + t_4 - ...
    q = np.zeros_like(xl)
    prev_mag = np.abs(term)
    active = np.ones(xl.shape, dtype=bool)
    sign = 1.0
    for m in range(1, _ASYM_MAX_TERMS):
        term = term * (four_nu_sq - _LD((2 * m - 1) ** 2)) / (_LD(4 * m) * two_x)
        mag = np.abs(term)
        active = active & (mag <= prev_mag)   # stop before divergent tail
        prev_mag = mag
        if m % 2 == 1:
            q = np.where(active, q + sign * term, q)
            sign = -sign            # flips after each (P, Q) pair
        else:
            p = np.where(active, p + sign * term, p)
        if not np.any(active) or np.max(mag[active]) < _LD(1e-21):
            break
    chi = xl - _LD(nu) * (_PI / 2.0) - _PI / 4.0
    amp = np.sqrt(2.0 / (_PI * xl))
    cos_chi = np.cos(chi)
    sin_chi = np.sin(chi)
    j = amp * (p * cos_chi - q * sin_chi)
    y = amp * (p * sin_chi + q * cos_chi)
    return j, y


def _jy(nu, x, want_y):
    series = _series_jy0 if nu == 0 else _series_jy1
    j = np.empty_like(x)
    y = np.empty_like(x) if want_y else None
    small = x <= _CROSSOVER
    if np.any(small):
        js, ys = series(x[small], want_y)
        j[small] = js.astype(np.float64)
        if want_y:
            y[small] = ys.astype(np.float64)
    large = ~small
    if np.any(large):
        jl, yl = _asym_jy(nu, x[large])
        j[large] = jl.astype(np.float64)
        if want_y:
            y[large] = yl.astype(np.float64)
    return j, y


def _unpack(value, scalar):
    return value.item() if scalar else value


def bessel_j0(x):
    """Bessel function of the first kind, order zero, for x >= 0."""
    arr, scalar = _validate(x, "bessel_j0", strictly_positive=False)
    j, _ = _jy(0, arr, want_y=False)
    return _unpack(j, scalar)


def bessel_j1(x):
    """Bessel function of the first kind, order one, for x >= 0."""
    arr, scalar = _validate(x, "bessel_j1", strictly_positive=False)
    j, _ = _jy(1, arr, want_y=False)
    return _unpack(j, scalar)


def bessel_y0(x):
    """Bessel function of the second kind, order zero, for x > 0."""
    arr, scalar = _validate(x, "bessel_y0", strictly_positive=True)
    _, y = _jy(0, arr, want_y=True)
    return _unpack(y, scalar)


def bessel_y1(x):
    """Bessel function of the second kind, order one, for x > 0."""
    arr, scalar = _validate(x, "bessel_y1", strictly_positive=True)
    _, y = _jy(1, arr, want_y=True)
    return _unpack(y, scalar)


def hankel2_0(x):
    """Zero-order Hankel function of the second kind, J0(x) - i Y0(x), x > 0."""
    arr, scalar = _validate(x, "hankel2_0", strictly_positive=True)
    j, y = _jy(0, arr, want_y=True)
    return _unpack(j - 1j * y, scalar)


def hankel2_1(x):
    """First-order Hankel function of the second kind, J1(x) - i Y1(x), x > 0."""
    arr, scalar = _validate(x, "hankel2_1", strictly_positive=True)
    j, y = _jy(1, arr, want_y=True)
    return _unpack(j - 1j * y, scalar)
