"""phi-divergences: generator, derivative, convex conjugate.

Three generators are supported, each convex on t >= 0 with phi(1) = 0:

* ``kl``          phi(t) = t ln t - t + 1
* ``jsd``         phi(t) = t ln t - (1 + t) ln((1 + t) / 2)
* ``alpha:<a>``   phi(t) = (t**a - a t + a - 1) / (a (a - 1)),  0 < a < 1

Conjugates are closed form. :func:`conjugate_sup_oracle` evaluates the
supremum by brute force on a grid and is kept independent of the closed
forms so the two can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

KINDS = ("kl", "jsd", "alpha")


@dataclass(frozen=True)
class PhiFamily:
    kind: str
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown phi family {self.kind!r}; expected one of {KINDS}")
        if self.kind == "alpha":
            if self.alpha is None or not 0.0 < float(self.alpha) < 1.0:
                raise ConfigError(f"alpha-divergence needs alpha in (0, 1), got {self.alpha}")
        elif self.alpha is not None:
            raise ConfigError(f"alpha is only meaningful for the alpha family, not {self.kind!r}")

    def __str__(self):
        return f"alpha:{self.alpha:g}" if self.kind == "alpha" else self.kind

    @property
    def conjugate_upper(self) -> float:
        """Supremum of the conjugate's (open) domain; +inf for KL."""
        if self.kind == "kl":
            return math.inf
        if self.kind == "jsd":
            return math.log(2.0)
        return 1.0 / (1.0 - self.alpha)


KL = PhiFamily("kl")
JSD = PhiFamily("jsd")


def parse_phi(text: str) -> PhiFamily:
    """Parse ``"kl"``, ``"jsd"`` or ``"alpha:<value>"``."""
    text = text.strip().lower()
    if text in ("kl", "jsd"):
        return PhiFamily(text)
    if text.startswith("alpha:"):
        try:
            value = float(text.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad alpha value in {text!r}") from exc
        return PhiFamily("alpha", value)
    raise ConfigError(f"cannot parse phi family {text!r}; use kl, jsd or alpha:<value>")


def _xlogx(t):
    t = np.asarray(t, dtype=np.float64)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, t * np.log(safe), 0.0)


def _phi(family: PhiFamily, t: np.ndarray) -> np.ndarray:
    if family.kind == "kl":
        return _xlogx(t) - t + 1.0
    if family.kind == "jsd":
        return _xlogx(t) - (1.0 + t) * np.log((1.0 + t) / 2.0)
    a = family.alpha
    return (np.power(t, a) - a * t + a - 1.0) / (a * (a - 1.0))


def phi_value(family: PhiFamily, t):
    """phi(t) for t >= 0; phi(0) is the continuous extension."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"phi is defined for t >= 0, got {t}")
    out = _phi(family, arr)
    return float(out) if out.ndim == 0 else out


def phi_derivative(family: PhiFamily, t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise DomainError(f"phi' is defined for t > 0, got {t}")
    if family.kind == "kl":
        out = np.log(arr)
    elif family.kind == "jsd":
        out = np.log(2.0 * arr / (1.0 + arr))
    else:
        a = family.alpha
        out = (np.power(arr, a - 1.0) - 1.0) / (a - 1.0)
    return float(out) if out.ndim == 0 else out


def conjugate_argmax(family: PhiFamily, s):
    """The t attaining sup_t {s t - phi(t)}, i.e. the inverse of phi'."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(~(s < family.conjugate_upper)):
        raise DomainError(f"s={s} outside the conjugate domain of {family} (s < {family.conjugate_upper})")
    if family.kind == "kl":
        out = np.exp(s)
    elif family.kind == "jsd":
        e = np.exp(s)
        out = e / (2.0 - e)
    else:
        a = family.alpha
        out = np.power(1.0 - (1.0 - a) * s, 1.0 / (a - 1.0))
    return float(out) if out.ndim == 0 else out


def phi_conjugate(family: PhiFamily, s):
    """Convex conjugate phi*(s) = sup_{t >= 0} {s t - phi(t)}."""
    arr = np.asarray(s, dtype=np.float64)
    if family.kind == "kl":
        out = np.expm1(arr)
    elif family.kind == "jsd":
        if np.any(~(arr < family.conjugate_upper)):
            raise DomainError(f"JSD conjugate needs s < ln 2, got {s}")
        out = -np.log(2.0 - np.exp(arr))
    else:
        t = np.asarray(conjugate_argmax(family, arr))
        out = arr * t - _phi(family, t)
    return float(out) if np.ndim(out) == 0 else out


def conjugate_sup_oracle(family: PhiFamily, s: float, t_grid=None, *, t_max: float = 10.0,
                         num: int = 100_001) -> float:
    """Brute-force max of ``s*t - phi(t)`` over a grid of t values.

    ``t_grid`` may be an explicit array; otherwise ``num`` points spanning
    [1e-6, t_max] are used. The result is a lower bound on the true supremum
    that tightens as the grid is refined and widened.
    """
    if t_grid is None:
        if num < 1:
            raise ConfigError("grid needs at least one point")
        t_grid = np.linspace(1e-6, t_max, num)
    grid = np.asarray(t_grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ConfigError("empty t grid")
    if np.any(grid < 0):
        raise DomainError("t grid must be non-negative")
    return float(np.max(s * grid - _phi(family, grid)))


def _as_distribution(p, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.size == 0 or np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be a non-empty vector of non-negative finite entries")
    if abs(arr.sum() - 1.0) > 1e-10:
        raise DomainError(f"{name} must sum to 1 (sum={arr.sum()!r})")
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    probs: np.ndarray

    def __init__(self, probs):
        arr = _as_distribution(probs, "probs").copy()
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @classmethod
    def uniform(cls, n: int) -> DiscreteDistribution:
        return cls(np.full(n, 1.0 / n))

    def __len__(self):
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


def phi_divergence(family: PhiFamily, q, q0) -> float:
    """D_phi(q || q0) = sum_i q0_i phi(q_i / q0_i).

    Returns ``math.inf`` when q puts mass where q0 has none.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    q0 = np.asarray(q0, dtype=np.float64).reshape(-1)
    if q.shape != q0.shape:
        raise DomainError(f"length mismatch: {q.size} vs {q0.size}")
    _as_distribution(q, "q")
    _as_distribution(q0, "q0")
    support = q0 > 0
    if np.any(q[~support] > 0):
        return math.inf
    ratio = q[support] / q0[support]
    total = float(np.sum(q0[support] * _phi(family, ratio)))
    return max(total, 0.0)
