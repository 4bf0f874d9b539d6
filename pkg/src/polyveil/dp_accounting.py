"""Closed-form privacy accounting for the compressed and full protocols.

All functions are pure and work in float64; rounding happens only when a
table is written out. The scalar mechanism is a Gaussian channel with
sensitivity ``Delta = alpha* n`` and noise ``sigma_eta``.

Conventions
-----------
The Renyi, zCDP and f-DP accountants share the Gaussian shift
``mu = 2 alpha* n sqrt(K) / (1 - alpha*)``. With ``leading_order=True`` the
``(1 - alpha*)`` factor is dropped, so ``mu = sqrt(K)/2`` at
``alpha* = 1/(4n)``; ``dp_table`` uses that form by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from scipy.optimize import brentq
from scipy.special import ndtr

__all__ = [
    "Framework",
    "DpQuery",
    "DpReport",
    "InfeasibleError",
    "C_BE",
    "var_X",
    "var_X_protocol",
    "sigma_eta",
    "sigma_eta_protocol",
    "snr_suite",
    "epsilon_berry_esseen",
    "renyi",
    "renyi_to_dp",
    "zcdp",
    "gdp_mu",
    "gdp_delta",
    "gdp_epsilon",
    "shuffle_amplify",
    "mmse_ratio",
    "full_protocol_dp",
    "evaluate",
    "dp_table",
    "TABLE_COLUMNS",
]

C_BE = 0.5
ALPHA_ORDER_FLOOR = 1.0 + 1e-6


class InfeasibleError(ValueError):
    """The requested privacy target cannot be met with the given parameters."""


class Framework:
    BE = "be"
    RENYI = "renyi"
    ZCDP = "zcdp"
    FDP = "fdp"
    SHUFFLE = "shuffle"
    MMSE = "mmse"
    FULL = "full"
    ALL = ("be", "renyi", "zcdp", "fdp", "shuffle", "mmse", "full")


@dataclass(frozen=True)
class DpQuery:
    n: int
    K: int
    alpha_star: float
    delta: float = 1e-6
    k: int = 1
    framework: str = Framework.BE
    epsilon0: Optional[float] = None
    epsilon: Optional[float] = None
    leading_order: bool = False

    def __post_init__(self) -> None:
        _check(self.n, self.K, self.alpha_star)
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.framework not in Framework.ALL:
            raise ValueError(f"unknown framework {self.framework!r}")


@dataclass
class DpReport:
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    mu: Optional[float] = None
    rho: Optional[float] = None
    alpha_order: Optional[float] = None
    sigma_eta: Optional[float] = None
    snr: Optional[float] = None
    snr_channel: Optional[float] = None
    mmse_ratio: Optional[float] = None
    beta: Optional[float] = None
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "diagnostics" and v is not None}
        out.update(self.diagnostics)
        return out


def _check(n: int, K: float, alpha_star: float) -> None:
    if n < 1:
        raise ValueError("n must be at least 1")
    if not K > 0:
        raise ValueError("K must be positive")
    if not 0.0 < alpha_star < 1.0:
        raise ValueError("alpha_star must lie in (0, 1)")


def var_X(n: int) -> float:
    """Variance of one decoy's contribution ``w^T P y`` for a uniform permutation."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return 0.25 + (n - 1) / (2.0 * (2 * n - 1))


def var_X_protocol(n: int) -> float:
    """Variance of ``w^T P y`` for the standard extraction pair.

    ``w^T P y`` counts the odd positions a uniform permutation sends to even
    positions, a hypergeometric count with variance ``n^2 / (4 (2n - 1))``.
    :func:`var_X` instead describes the within-block count
    ``sum_j 1[sigma(2j-1) = 2j]``; the accountant uses that closed form.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    return n * n / (4.0 * (2 * n - 1))


def sigma_eta(n: int, K: float, alpha_star: float) -> float:
    """Closed-form noise scale ``(1 - alpha*) sqrt(var_X(n) / K)`` under uniform decoy weights."""
    _check(n, K, alpha_star)
    return (1.0 - alpha_star) * math.sqrt(var_X(n) / K)


def sigma_eta_protocol(n: int, K: float, alpha_star: float) -> float:
    """Standard deviation of the protocol's ``eta = sum_i alpha_i w^T P_i y`` under uniform weights."""
    _check(n, K, alpha_star)
    return (1.0 - alpha_star) * math.sqrt(var_X_protocol(n) / K)


def _sigma_K(n: int, K: float) -> float:
    return math.sqrt((2 * n - 1) / ((2 * n) ** 2 * K))


def snr_suite(n: int, K: float, alpha_star: float) -> Dict[str, float]:
    """Scalar, per-entry, whole-matrix and channel signal-to-noise ratios.

    ``snr_matrix`` is the per-entry ratio scaled by ``sqrt(2n)``, the gain
    from matched filtering the ``2n`` signal entries of one permutation.
    """
    s = sigma_eta(n, K, alpha_star)
    snr_entry = alpha_star / ((1.0 - alpha_star) * _sigma_K(n, K))
    return {
        "snr": alpha_star * n / s,
        "snr_entry": snr_entry,
        "snr_matrix": snr_entry * math.sqrt(2 * n),
        "snr_channel": alpha_star**2 * (n / 4.0) / s**2,
    }


def _z(delta: float) -> float:
    return math.sqrt(2.0 * math.log(4.0 / delta))


def berry_esseen_beta(n: int, K: float) -> float:
    """CLT error ``C_BE * rho / sigma^3 / sqrt(K)`` with ``rho / sigma^3 <= 2 sqrt(n)``."""
    return C_BE * 2.0 * math.sqrt(n) / math.sqrt(K)


def epsilon_berry_esseen(n: int, K: float, alpha_star: float, delta: float) -> Dict[str, float]:
    """Gaussian-tail bound plus twice the Berry-Esseen CLT error.

    Examples
    --------
    >>> round(epsilon_berry_esseen(100, 10, 1 / 400, 1e-6)["epsilon"], 1)
    13.1
    """
    if n < 4:
        raise ValueError("the Berry-Esseen bound needs n >= 4")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    s = sigma_eta(n, K, alpha_star)
    z = _z(delta)
    beta = berry_esseen_beta(n, K)
    sens = alpha_star * n
    eps = sens**2 / (2 * s**2) + sens * z / s + 2 * beta
    return {"epsilon": eps, "beta": beta, "z": z, "sigma_eta": s}


def gdp_mu(n: int, K: float, alpha_star: float, *, leading_order: bool = False) -> float:
    """Gaussian shift ``mu = 2 alpha* n sqrt(K) / (1 - alpha*)``; drops ``1 - alpha*`` at leading order."""
    _check(n, K, alpha_star)
    mu = 2.0 * alpha_star * n * math.sqrt(K)
    return mu if leading_order else mu / (1.0 - alpha_star)


def renyi(n: int, K: float, alpha_star: float, alpha_order: float, *, leading_order: bool = False) -> float:
    """Renyi divergence of order ``alpha_order`` between neighbouring outputs."""
    if not alpha_order > 1.0:
        raise ValueError("Renyi order must exceed 1")
    mu = gdp_mu(n, K, alpha_star, leading_order=leading_order)
    return alpha_order * mu * mu / 2.0


def renyi_to_dp(n: int, K: float, alpha_star: float, delta: float, *, leading_order: bool = False) -> Dict[str, float]:
    """Optimal conversion ``eps = eps_alpha + log(1/delta)/(alpha - 1)`` over the order."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    mu = gdp_mu(n, K, alpha_star, leading_order=leading_order)
    rho = mu * mu / 2.0
    log_inv = math.log(1.0 / delta)
    a = max(1.0 + math.sqrt(log_inv / rho), ALPHA_ORDER_FLOOR)
    eps_a = a * rho
    return {"alpha_opt": a, "epsilon_alpha": eps_a, "epsilon": eps_a + log_inv / (a - 1.0)}


def zcdp(n: int, K: float, alpha_star: float, delta: float, *, leading_order: bool = False) -> Dict[str, float]:
    """``rho = mu^2 / 2`` and ``eps = rho + 2 sqrt(rho log(1/delta))``."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    mu = gdp_mu(n, K, alpha_star, leading_order=leading_order)
    rho = mu * mu / 2.0
    return {"rho": rho, "epsilon": rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))}


def gdp_delta(epsilon: float, mu: float) -> float:
    """``delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    a = ndtr(-epsilon / mu + mu / 2.0)
    b = ndtr(-epsilon / mu - mu / 2.0)
    # e^eps * Phi(...) can overflow/underflow separately; combine in log space when tiny
    if b > 0:
        return float(a - math.exp(epsilon + math.log(b)))
    return float(a)


def gdp_epsilon(delta: float, mu: float, *, upper: float = 1e3) -> float:
    """Invert :func:`gdp_delta` by bracketing root search on ``[0, upper]``."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    f = lambda e: gdp_delta(e, mu) - delta  # noqa: E731
    lo_val = f(0.0)
    if lo_val <= 0:
        return 0.0
    if f(upper) > 0:
        raise InfeasibleError(f"no epsilon in [0, {upper}] reaches delta = {delta!r}")
    return float(brentq(f, 0.0, upper, xtol=1e-12, rtol=1e-14, maxiter=500))


def shuffle_amplify(epsilon0: float, k: int, delta: float) -> float:
    """Central epsilon after shuffling ``k`` reports that are each ``epsilon0``-locally private."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if epsilon0 < 0:
        raise ValueError("epsilon0 must be non-negative")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return math.log1p(math.tanh(epsilon0 / 2.0) * math.sqrt(14.0 * math.log(2.0 / delta) / k))


def mmse_ratio(n: int, K: float, alpha_star: float) -> float:
    """Posterior-to-prior variance ratio ``1 / (1 + snr_channel)`` with ``Var[s] = n/4``."""
    return 1.0 / (1.0 + snr_suite(n, K, alpha_star)["snr_channel"])


def full_protocol_dp(n: int, epsilon: float, delta: float, beta: Optional[float] = None) -> Dict[str, float]:
    """Parameters of the full two-layer protocol for a target ``(epsilon, delta)``.

    ``beta`` defaults to the bound ``1/sqrt(n)``, which is what the worked
    numbers subtract. The Lipschitz constant is ``4 n^2 r / sigma_K^2`` and
    ``alpha*`` uses the small-``alpha*`` approximation ``(eps - 2 beta) / L_r``.
    """
    if n < 4:
        raise ValueError("the full-protocol bound needs n >= 4")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if beta is None:
        beta = 1.0 / math.sqrt(n)
    if epsilon <= 2 * beta:
        raise InfeasibleError(f"epsilon = {epsilon!r} must exceed 2*beta = {2 * beta!r}")
    K = (2 * n - 1) ** 2 + 1
    r = math.sqrt(math.log(16.0 * n * n / delta) / (2.0 * K))
    sigma_K = _sigma_K(n, K)
    L_r = 4.0 * n * n * r / sigma_K**2
    alpha_star = (epsilon - 2 * beta) / L_r
    snr_entry = alpha_star / ((1.0 - alpha_star) * sigma_K)
    return {
        "K": K,
        "r": r,
        "sigma_K": sigma_K,
        "L_r": L_r,
        "beta": beta,
        "alpha_star": alpha_star,
        "snr_entry": snr_entry,
    }


def evaluate(q: DpQuery) -> DpReport:
    """Dispatch one query to its framework and collect the report."""
    n, K, a, d = q.n, q.K, q.alpha_star, q.delta
    fw = q.framework
    if fw == Framework.BE:
        r = epsilon_berry_esseen(n, K, a, d)
        suite = snr_suite(n, K, a)
        return DpReport(
            epsilon=r["epsilon"], delta=d, sigma_eta=r["sigma_eta"], snr=suite["snr"],
            snr_channel=suite["snr_channel"], mmse_ratio=mmse_ratio(n, K, a), beta=r["beta"],
            diagnostics={"z": r["z"]},
        )
    if fw == Framework.RENYI:
        r = renyi_to_dp(n, K, a, d, leading_order=q.leading_order)
        return DpReport(epsilon=r["epsilon"], delta=d, alpha_order=r["alpha_opt"], diagnostics={"epsilon_alpha": r["epsilon_alpha"]})
    if fw == Framework.ZCDP:
        r = zcdp(n, K, a, d, leading_order=q.leading_order)
        return DpReport(epsilon=r["epsilon"], delta=d, rho=r["rho"])
    if fw == Framework.FDP:
        mu = gdp_mu(n, K, a, leading_order=q.leading_order)
        rep = DpReport(epsilon=gdp_epsilon(d, mu), delta=d, mu=mu)
        if q.epsilon is not None:
            rep.diagnostics["delta_at_epsilon"] = gdp_delta(q.epsilon, mu)
        return rep
    if fw == Framework.SHUFFLE:
        eps0 = q.epsilon0
        if eps0 is None:
            eps0 = renyi_to_dp(n, K, a, d, leading_order=q.leading_order)["epsilon"]
        return DpReport(epsilon=shuffle_amplify(eps0, q.k, d), delta=d, diagnostics={"epsilon0": eps0, "k": q.k})
    if fw == Framework.MMSE:
        suite = snr_suite(n, K, a)
        return DpReport(snr_channel=suite["snr_channel"], mmse_ratio=mmse_ratio(n, K, a), sigma_eta=sigma_eta(n, K, a))
    r = full_protocol_dp(n, q.epsilon if q.epsilon is not None else 1.0, d)
    return DpReport(epsilon=q.epsilon if q.epsilon is not None else 1.0, delta=d, beta=r["beta"],
                    diagnostics={k: v for k, v in r.items() if k != "beta"})


TABLE_COLUMNS = {
    Framework.BE: ["K", "sigma_eta", "snr", "beta", "epsilon", "mmse_ratio"],
    Framework.RENYI: ["K", "alpha_opt", "epsilon_alpha", "epsilon"],
    Framework.ZCDP: ["K", "rho", "epsilon"],
    Framework.FDP: ["K", "mu", "epsilon"],
    Framework.SHUFFLE: ["k", "epsilon0", "epsilon"],
    Framework.MMSE: ["K", "snr_channel", "mmse_ratio"],
    Framework.FULL: ["n", "epsilon", "K", "r", "sigma_K", "L_r", "beta", "alpha_star", "snr_entry"],
}


def dp_table(
    framework: str,
    grid: Iterable[float],
    *,
    n: int = 100,
    alpha_star: Optional[float] = None,
    delta: float = 1e-6,
    K: int = 9,
    epsilon0: float = 8.0,
    epsilon: float = 1.0,
    leading_order: bool = True,
) -> List[dict]:
    """Evaluate one framework over a grid of ``K`` (or ``k`` for shuffle, ``n`` for full).

    ``alpha_star`` defaults to ``1/(4n)``. The Renyi, zCDP and f-DP rows use
    the leading-order shift by default, the usual convention for such tables.
    """
    if framework not in TABLE_COLUMNS:
        raise ValueError(f"unknown framework {framework!r}")
    a = 1.0 / (4 * n) if alpha_star is None else alpha_star
    rows: List[dict] = []
    for g in grid:
        if framework == Framework.BE:
            r = epsilon_berry_esseen(n, g, a, delta)
            rows.append({"K": g, "sigma_eta": r["sigma_eta"], "snr": snr_suite(n, g, a)["snr"], "beta": r["beta"],
                         "epsilon": r["epsilon"], "mmse_ratio": mmse_ratio(n, g, a)})
        elif framework == Framework.RENYI:
            r = renyi_to_dp(n, g, a, delta, leading_order=leading_order)
            rows.append({"K": g, "alpha_opt": r["alpha_opt"], "epsilon_alpha": r["epsilon_alpha"], "epsilon": r["epsilon"]})
        elif framework == Framework.ZCDP:
            r = zcdp(n, g, a, delta, leading_order=leading_order)
            rows.append({"K": g, "rho": r["rho"], "epsilon": r["epsilon"]})
        elif framework == Framework.FDP:
            mu = gdp_mu(n, g, a, leading_order=leading_order)
            rows.append({"K": g, "mu": mu, "epsilon": gdp_epsilon(delta, mu)})
        elif framework == Framework.SHUFFLE:
            rows.append({"k": int(g), "epsilon0": epsilon0, "epsilon": shuffle_amplify(epsilon0, int(g), delta)})
        elif framework == Framework.MMSE:
            rows.append({"K": g, "snr_channel": snr_suite(n, g, a)["snr_channel"], "mmse_ratio": mmse_ratio(n, g, a)})
        else:
            r = full_protocol_dp(int(g), epsilon, delta)
            rows.append({"n": int(g), "epsilon": epsilon, **r})
    return rows
