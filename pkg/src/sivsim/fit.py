"""Damped least-squares (Levenberg-Marquardt) engine and curve adapters.

The engine is self-contained: numeric central-difference Jacobian,
multiplicative damping schedule, optional log-reparameterization for
positivity-constrained parameters.  Adapters cover every fitted curve in
this package: saturation, GE-shifted saturation, g2, and decay tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .correlation import G2Histogram, G2ModelParams
from .rates import SaturationParams


class SingularNormalMatrix(RuntimeError):
    """Normal equations unsolvable even at maximum damping."""


class NonFiniteModel(ValueError):
    """Model returned NaN/Inf where a finite value was required."""


class WindowTooShort(ValueError):
    """Decay fit window covers fewer than 10 bins."""


@dataclass(frozen=True)
class DataSeries:
    """(x, y, sigma) triples; sigma defaults to 1 (unweighted)."""

    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be 1-d arrays of equal length")
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            object.__setattr__(self, "sigma", s)
            if s.shape != y.shape:
                raise ValueError("sigma must match y in shape")
            if not np.all(s > 0):
                raise ValueError("sigma must be strictly positive")

    def weights(self) -> np.ndarray:
        return np.ones_like(self.y) if self.sigma is None else 1.0 / self.sigma


@dataclass
class FitResult:
    """Parameter estimates with covariance and convergence metadata."""

    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    n_iter: int
    converged: bool
    stderr: np.ndarray = field(default=None)  # type: ignore[assignment]
    cost_history: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.stderr is None:
            diag = np.clip(np.diag(self.covariance), 0.0, None)
            self.stderr = np.sqrt(diag)


def numeric_jacobian(fun, theta: np.ndarray, rel_step: float = 1e-6,
                     abs_floor: float = 1e-12) -> np.ndarray:
    """Central-difference Jacobian of fun at theta, one column per parameter."""
    theta = np.asarray(theta, dtype=float)
    f0 = np.asarray(fun(theta), dtype=float)
    jac = np.empty((f0.size, theta.size))
    for j in range(theta.size):
        h = max(rel_step * abs(theta[j]), abs_floor)
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h
        tm[j] -= h
        jac[:, j] = (np.asarray(fun(tp)) - np.asarray(fun(tm))) / (2.0 * h)
    return jac


def levenberg_marquardt(
    model,
    data: DataSeries,
    init,
    *,
    positive: np.ndarray | None = None,
    tol_cost: float = 1e-10,
    tol_grad: float = 1e-10,
    max_iter: int = 200,
) -> FitResult:
    """Minimize sum(((y - model(p, x))/sigma)^2) from init.

    positive marks parameters constrained to (0, inf); those are optimized as
    logarithms so trial steps can never leave the domain.  Accepted steps have
    strictly nonincreasing cost; termination on relative cost change below
    tol_cost, max-norm of the gradient below tol_grad, or max_iter.

    When the damped normal matrix stays singular the best-so-far result is
    returned with converged=False (flag "singular_normal_matrix") so batch
    pipelines survive degenerate inputs; a persistently non-finite model
    raises NonFiniteModel.
    """
    p0 = np.asarray(init, dtype=float)
    n_par = p0.size
    if data.y.size < n_par:
        raise ValueError("need at least as many data points as parameters")
    pos = np.zeros(n_par, dtype=bool) if positive is None else np.asarray(positive, dtype=bool)
    if np.any(pos & (p0 <= 0.0)):
        raise ValueError("positivity-constrained parameters need positive init")

    w = data.weights()
    x, y = data.x, data.y

    def to_external(theta):
        p = theta.copy()
        p[pos] = np.exp(theta[pos])
        return p

    def to_internal(p):
        theta = p.copy()
        theta[pos] = np.log(p[pos])
        return theta

    def residuals(theta):
        f = np.asarray(model(to_external(theta), x), dtype=float)
        return (y - f) * w

    theta = to_internal(p0)
    r = residuals(theta)
    if not np.all(np.isfinite(r)):
        raise NonFiniteModel("model is not finite at the initial point")
    cost = float(r @ r)
    history = [cost]
    flags: list[str] = []

    jac = -numeric_jacobian(residuals, theta)  # d(model)/d(theta), weighted
    if not np.all(np.isfinite(jac)):
        raise NonFiniteModel("model Jacobian is not finite at the initial point")
    jtj = jac.T @ jac
    grad = jac.T @ r
    lam = 1e-3 * max(np.max(np.diag(jtj)), 1e-300)
    converged = False
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol_grad:
            converged = True
            break
        accepted = False
        for _ in range(60):  # damping retries within one iteration
            try:
                step = np.linalg.solve(jtj + lam * np.eye(n_par), grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(step)):
                lam *= 10.0
                continue
            theta_try = theta + step
            r_try = residuals(theta_try)
            if not np.all(np.isfinite(r_try)):
                lam *= 10.0  # treat a non-finite trial as a rejected step
                continue
            cost_try = float(r_try @ r_try)
            if cost_try <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            flags.append("singular_normal_matrix")
            break
        rel_drop = (cost - cost_try) / max(cost, 1e-300)
        theta, r, cost = theta_try, r_try, cost_try
        history.append(cost)
        lam = max(lam / 10.0, 1e-300)
        jac = -numeric_jacobian(residuals, theta)
        jtj = jac.T @ jac
        grad = jac.T @ r
        if rel_drop < tol_cost:
            converged = True
            break

    params = to_external(theta)
    cov = _covariance(jtj, params, pos)
    return FitResult(
        params=params,
        covariance=cov,
        chi2=cost,
        n_iter=n_iter,
        converged=converged,
        cost_history=history,
        flags=flags,
    )


def _covariance(jtj: np.ndarray, params: np.ndarray, pos: np.ndarray) -> np.ndarray:
    try:
        cov_theta = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov_theta = np.linalg.pinv(jtj)
    scale = np.where(pos, params, 1.0)  # d(external)/d(internal) on the diagonal
    return cov_theta * np.outer(scale, scale)


# --------------------------------------------------------------------------
# model adapters
# --------------------------------------------------------------------------

def saturation_model(params: np.ndarray, p: np.ndarray) -> np.ndarray:
    i_inf, p_sat, k_bg = params
    return p * i_inf / (p + p_sat) + k_bg * p


def fit_saturation(data: DataSeries) -> tuple[SaturationParams, FitResult]:
    """Fit I(P) = P*I_inf/(P+P_sat) + k*P with automatic initialization.

    Flags "psat_poorly_conditioned" (not fatal) when the data never reach
    40% of the fitted plateau, in which case P_sat is barely identifiable.
    """
    if data.y.size < 4:
        raise ValueError("saturation fit needs at least 4 points")
    y_max = float(np.max(data.y))
    i_inf0 = 1.2 * y_max
    p_sat0 = float(data.x[np.argmin(np.abs(data.y - 0.5 * y_max))])
    p_sat0 = max(p_sat0, 1e-6)
    k0 = _tail_slope(data.x, data.y)
    res = levenberg_marquardt(
        saturation_model,
        data,
        np.array([i_inf0, p_sat0, k0]),
        positive=np.array([True, True, False]),
    )
    i_inf, p_sat, k_bg = res.params
    if y_max - max(k_bg, 0.0) * float(data.x[np.argmax(data.y)]) < 0.4 * i_inf:
        res.flags.append("psat_poorly_conditioned")
    params = SaturationParams(i_inf=i_inf, p_sat=p_sat, k_bg=max(k_bg, 0.0))
    return params, res


def _tail_slope(x: np.ndarray, y: np.ndarray) -> float:
    order = np.argsort(x)
    xt, yt = x[order][-2:], y[order][-2:]
    if xt[1] == xt[0]:
        return 0.0
    return float((yt[1] - yt[0]) / (xt[1] - xt[0]))


def shifted_saturation_model(params: np.ndarray, p: np.ndarray) -> np.ndarray:
    d_inf, p_sat = params
    return p * d_inf / (p + p_sat)


def fit_shifted_saturation(data: DataSeries, i_re: float) -> tuple[dict, FitResult]:
    """Fit dI(P_GE) = dI_inf*P_GE/(P_GE+P_sat) to y - i_re.

    i_re is the separately measured red-only count rate.  A response
    indistinguishable from zero is flagged "delta_unidentifiable".
    """
    delta = DataSeries(data.x, data.y - i_re, data.sigma)
    d_max = float(np.max(delta.y))
    scale = max(abs(d_max), 1e-9)
    init = np.array([max(1.2 * d_max, 1e-3 * scale), _half_power(delta.x, delta.y)])
    res = levenberg_marquardt(
        shifted_saturation_model, delta, init, positive=np.array([True, True])
    )
    d_inf, p_sat = res.params
    spread = float(np.max(np.abs(delta.y))) if delta.y.size else 0.0
    if spread <= 0.0 or d_inf < 1e-6 * max(i_re, 1.0):
        res.flags.append("delta_unidentifiable")
    return {"d_inf": d_inf, "p_sat": p_sat}, res


def _half_power(x: np.ndarray, y: np.ndarray) -> float:
    y_max = float(np.max(y))
    if y_max <= 0:
        return max(float(np.median(x)), 1e-6)
    return max(float(x[np.argmin(np.abs(y - 0.5 * y_max))]), 1e-6)


def _g2_full(params: np.ndarray, tau: np.ndarray) -> np.ndarray:
    a, tau1, tau2 = params
    at = np.abs(tau)
    return 1.0 - (1.0 + a) * np.exp(-at / tau1) + a * np.exp(-at / tau2)


def _g2_bunching(params: np.ndarray, tau: np.ndarray) -> np.ndarray:
    a, tau2 = params
    return 1.0 + a * np.exp(-np.abs(tau) / tau2)


def fit_g2_series(
    taus: np.ndarray,
    values: np.ndarray,
    sigma: np.ndarray | None = None,
    form: str = "full",
    min_tau: float = 0.0,
) -> tuple[G2ModelParams, FitResult]:
    """Fit the g2 model to (tau, g2) points; tau enters as |tau|.

    form="full" fits (a, tau1, tau2); form="bunching_only" fits the
    simplified 1 + a*exp(-tau/tau2) on points with |tau| > min_tau, where the
    unresolved antibunching dip would otherwise bias the bunching amplitude.
    """
    tau = np.abs(np.asarray(taus, dtype=float))
    g2 = np.asarray(values, dtype=float)
    sig = None if sigma is None else np.asarray(sigma, dtype=float)
    if form == "bunching_only":
        keep = tau > min_tau
        tau, g2 = tau[keep], g2[keep]
        sig = None if sig is None else sig[keep]
        data = DataSeries(tau, g2, sig)
        a0 = max(float(np.max(g2)) - 1.0, 1e-3)
        tau2_0 = _bunching_decay_scale(tau, g2)
        res = levenberg_marquardt(
            _g2_bunching, data, np.array([a0, tau2_0]), positive=np.array([True, True])
        )
        a, tau2 = res.params
        return G2ModelParams(a=a, tau1=max(min_tau, tau2 * 1e-3), tau2=tau2), res
    if form != "full":
        raise ValueError("form must be 'full' or 'bunching_only'")
    data = DataSeries(tau, g2, sig)
    a0 = max(float(np.max(g2)) - 1.0, 1e-3)
    nonzero = tau[tau > 0]
    tau1_0 = max(float(np.min(nonzero)) if nonzero.size else 1e-3, 1e-3)
    tau2_0 = _bunching_decay_scale(nonzero, g2[tau > 0])
    res = levenberg_marquardt(
        _g2_full, data, np.array([a0, tau1_0, tau2_0]),
        positive=np.array([True, True, True]),
    )
    a, tau1, tau2 = res.params
    return G2ModelParams(a=a, tau1=tau1, tau2=tau2), res


def fit_g2(hist: G2Histogram, form: str = "full") -> tuple[G2ModelParams, FitResult]:
    """Fit the g2 model to a histogram, folded onto |tau| first."""
    tau, g2, sig = hist.folded()
    return fit_g2_series(tau, g2, sig, form=form, min_tau=0.5 * hist.bin_width)


def _bunching_decay_scale(tau: np.ndarray, g2: np.ndarray) -> float:
    excess = g2 - 1.0
    pos = excess > 0.05 * max(float(np.max(excess)), 1e-12)
    if np.count_nonzero(pos) >= 2:
        return max(float(np.max(tau[pos])) / 3.0, 1e-3)
    return max(float(np.max(tau)) / 5.0, 1e-3)


def _decay_model(params: np.ndarray, t: np.ndarray) -> np.ndarray:
    amp, tau, floor = params
    return amp * np.exp(-t / tau) + floor


def fit_decay(
    hist_t: np.ndarray,
    hist_counts: np.ndarray,
    fit_window: tuple[float, float],
) -> tuple[dict, FitResult]:
    """Mono-exponential tail fit with a constant floor, Poisson weights.

    hist_t are bin centers (ns), hist_counts the photon counts; the window
    (t_start, t_end) should begin past the instrument-response region,
    typically 3 IRF sigmas after the histogram peak.
    """
    t = np.asarray(hist_t, dtype=float)
    y = np.asarray(hist_counts, dtype=float)
    keep = (t >= fit_window[0]) & (t <= fit_window[1])
    if np.count_nonzero(keep) < 10:
        raise WindowTooShort(
            f"fit window contains {np.count_nonzero(keep)} bins, need >= 10"
        )
    t, y = t[keep], y[keep]
    sigma = np.sqrt(np.clip(y, 1.0, None))
    floor0 = max(float(np.mean(y[-max(3, y.size // 20):])), 1e-3)
    amp0 = max(float(y[0]) - floor0, 1e-3)
    tau0 = _log_slope_tau(t, y, floor0)
    res = levenberg_marquardt(
        _decay_model,
        DataSeries(t, y, sigma),
        np.array([amp0, tau0, floor0]),
        positive=np.array([True, True, True]),
    )
    amp, tau, floor = res.params
    return {"tau": tau, "amplitude": amp, "floor": floor}, res


def _log_slope_tau(t: np.ndarray, y: np.ndarray, floor: float) -> float:
    z = y - floor
    good = z > 0
    if np.count_nonzero(good) >= 2:
        tg, zg = t[good], np.log(z[good])
        slope = np.polyfit(tg, zg, 1)[0]
        if slope < 0:
            return float(-1.0 / slope)
    return max(float(t[-1] - t[0]) / 3.0, 1e-3)
