"""Modified Bessel function of the second kind, K_nu(x), for real order.

Small arguments (x < 2) use Temme's series for the fractional order
mu in [-1/2, 1/2]; larger arguments use Steed's continued fraction. The
integer part of the order is then added by upward recurrence, which is
stable for K.
"""

import math

import numpy as np
from numba import njit

_EPS = 1e-16
_MAXIT = 10000
_XMIN = 2.0

# Taylor coefficients of 1/Gamma(1 + x) = sum_j c_j x^j
_RGAMMA = np.array([
    1.0, 0.5772156649015329, -0.6558780715202538, -0.0420026350340952,
    0.1665386113822915, -0.0421977345555443, -0.0096219715278770,
    0.0072189432466630, -0.0011651675918591, -0.0002152416741149,
    0.0001280502823882, -0.0000201348547807, -0.0000012504934821,
    0.0000011330272320, -0.0000002056338417, 0.0000000061160950,
    0.0000000050020075, -0.0000000011812746, 0.0000000001043427,
    0.0000000000077823, -0.0000000000036968, 0.0000000000005100,
    -0.0000000000000206, -0.0000000000000054, 0.0000000000000014,
    0.0000000000000001,
])


@njit(cache=True)
def _gamma_terms(mu):
    # 1/G(1+mu), 1/G(1-mu) and their mean
    gampl = 0.0
    gammi = 0.0
    p = 1.0
    for j in range(_RGAMMA.size):
        gampl += _RGAMMA[j] * p
        gammi += _RGAMMA[j] * p if j % 2 == 0 else -_RGAMMA[j] * p
        p *= mu
    return 0.5 * (gampl + gammi), gampl, gammi


@njit(cache=True)
def _gam1_stable(mu):
    # (1/G(1-mu) - 1/G(1+mu)) / (2 mu), summed without cancellation
    s = 0.0
    p = 1.0  # mu**(j-1) for odd j
    for j in range(1, _RGAMMA.size, 2):
        s -= _RGAMMA[j] * p
        p *= mu * mu
    return s


@njit(cache=True)
def _kmu_pair(mu, x):
    """Return (K_mu(x), K_{mu+1}(x)) for |mu| <= 1/2, x > 0."""
    xi = 1.0 / x
    xi2 = 2.0 * xi
    mu2 = mu * mu
    if x < _XMIN:
        x2 = 0.5 * x
        pimu = math.pi * mu
        fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
        d = -math.log(x2)
        e = mu * d
        fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
        gam2, gampl, gammi = _gamma_terms(mu)
        gam1 = _gam1_stable(mu)
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        total = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        d = x2 * x2
        sum1 = p
        for i in range(1, _MAXIT):
            ff = (i * ff + p + q) / (i * i - mu2)
            c *= d / i
            p /= i - mu
            q /= i + mu
            term = c * ff
            total += term
            sum1 += c * (p - i * ff)
            if abs(term) < abs(total) * _EPS:
                break
        return total, sum1 * xi2
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu2
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
    k1 = kmu * (mu + x + 0.5 - h) * xi
    return kmu, k1


@njit(cache=True)
def _kv_scalar(nu, x):
    if x <= 0.0:
        return math.inf
    nu = abs(nu)
    nl = int(nu + 0.5)
    mu = nu - nl
    kmu, k1 = _kmu_pair(mu, x)
    xi2 = 2.0 / x
    for i in range(1, nl + 1):
        tmp = (mu + i) * xi2 * k1 + kmu
        kmu = k1
        k1 = tmp
    return kmu


@njit(cache=True)
def _kv_array(nu, x, out):
    for i in range(x.size):
        out[i] = _kv_scalar(nu, x[i])


def kv(nu, x):
    """K_nu(x) for scalar order `nu` and array-like `x` (x > 0).

    Returns ``inf`` at x = 0, matching the singularity.
    """
    xa = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(xa.ravel())
    out = np.empty_like(flat)
    _kv_array(float(nu), flat, out)
    out = out.reshape(xa.shape)
    return out if xa.ndim else float(out)
