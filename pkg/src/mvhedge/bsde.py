"""Backward solver for the claim's mean-value process under the
variance-optimal measure, plus its independent density-weighted oracle.

The unknown triple is (value V, Brownian loadings Vbar, jump loadings
Vtilde).  Backward induction uses cross-path least squares for the
conditional expectations; the driver couples the loadings to the market
price of risk and to the jump sensitivity of the opportunity surface.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .levy import ConfigurationError, jump_quadrature
from .market import PathBundle, market_price_of_risk
from .opportunity import OpportunitySurface, density_terminal


class ConstantPayoff:
    """Deterministic discounted payoff."""

    kind = "constant"

    def __init__(self, p: float):
        self.p = float(p)

    def __call__(self, bundle: PathBundle) -> np.ndarray:
        return np.full(bundle.n_paths, self.p)

    def basis_feature(self, d_prices, horizon, rate):
        return None

    def __repr__(self):
        return f"ConstantPayoff({self.p})"


class DiscountedCall:
    kind = "call"

    def __init__(self, strike: float, asset: int = 0):
        if strike <= 0:
            raise ConfigurationError("strike must be positive")
        self.strike = float(strike)
        self.asset = asset

    def __call__(self, bundle: PathBundle) -> np.ndarray:
        t_end = bundle.times[-1]
        s_t = bundle.s[:, -1, self.asset]
        return np.exp(-bundle.rate * t_end) * np.maximum(s_t - self.strike, 0.0)

    def basis_feature(self, d_prices, horizon, rate):
        # intrinsic value in discounted units
        return np.maximum(d_prices[:, self.asset] - self.strike * math.exp(-rate * horizon), 0.0)

    def __repr__(self):
        return f"DiscountedCall(strike={self.strike})"


class DiscountedPut:
    kind = "put"

    def __init__(self, strike: float, asset: int = 0):
        if strike <= 0:
            raise ConfigurationError("strike must be positive")
        self.strike = float(strike)
        self.asset = asset

    def __call__(self, bundle: PathBundle) -> np.ndarray:
        t_end = bundle.times[-1]
        s_t = bundle.s[:, -1, self.asset]
        return np.exp(-bundle.rate * t_end) * np.maximum(self.strike - s_t, 0.0)

    def basis_feature(self, d_prices, horizon, rate):
        return np.maximum(self.strike * math.exp(-rate * horizon) - d_prices[:, self.asset], 0.0)

    def __repr__(self):
        return f"DiscountedPut(strike={self.strike})"


def check_square_integrability(h_values: np.ndarray) -> dict:
    """Empirical moment diagnostics for the terminal payoff."""
    h4 = float(np.mean(h_values.astype(float) ** 4))
    out = {"mean": float(h_values.mean()), "fourth_moment": h4, "finite": bool(np.isfinite(h4))}
    if not out["finite"]:
        warnings.warn("terminal payoff has non-finite empirical fourth moment")
    return out


@dataclass
class BsdeConfig:
    """Regression and driver settings for the backward sweep."""

    basis: tuple = ("1", "D", "Y", "DY", "D2", "Y2", "logD", "payoff", "knots")
    n_knots: int = 6
    inner_sweeps: int = 2
    n_quad: int = 24
    tail_eps: float = 1e-8
    n_jump_buckets: int = 6
    min_bucket_count: int = 25
    rcond: float = 1e-10


@dataclass
class StepFit:
    """Per-step regression coefficients in standardized feature space."""

    keep: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    coef_value: np.ndarray
    coef_dw: np.ndarray  # (d, n_feat + 1) with intercept first
    r2: float
    cond: float
    knots: np.ndarray | None = None  # per-asset hinge positions


class RegressionTable:
    """Fitted per-step value and loading functions of the state."""

    def __init__(self, basis, payoff, horizon, rate):
        self.basis = basis
        self.payoff = payoff
        self.horizon = horizon
        self.rate = rate
        self.steps: list[StepFit | None] = []

    def feature_labels(self, d: int, h: int, n_knots: int = 0):
        labels = []
        for name in self.basis:
            if name == "1":
                continue
            elif name == "D":
                labels += [f"D{m}" for m in range(d)]
            elif name == "Y":
                labels += [f"Y{i}" for i in range(h)]
            elif name == "DY":
                labels += [f"D{m}Y{i}" for m in range(d) for i in range(h)]
            elif name == "D2":
                labels += [f"D{m}^2" for m in range(d)]
            elif name == "D3":
                labels += [f"D{m}^3" for m in range(d)]
            elif name == "Y2":
                labels += [f"Y{i}^2" for i in range(h)]
            elif name == "logD":
                labels += [f"logD{m}" for m in range(d)]
            elif name == "payoff":
                if not isinstance(self.payoff, ConstantPayoff):
                    labels.append("payoff")
            elif name == "knots":
                labels += [f"knot{j}_D{m}" for m in range(d) for j in range(n_knots)]
            else:
                raise ConfigurationError(f"unknown basis entry {name!r}")
        return labels

    def features(self, d_prices, y, knots=None):
        cols = []
        d_prices = np.atleast_2d(d_prices)
        y = np.atleast_2d(y)
        for name in self.basis:
            if name == "1":
                continue
            elif name == "D":
                cols.extend(d_prices.T)
            elif name == "Y":
                cols.extend(y.T)
            elif name == "DY":
                for m in range(d_prices.shape[1]):
                    for i in range(y.shape[1]):
                        cols.append(d_prices[:, m] * y[:, i])
            elif name == "D2":
                cols.extend((d_prices**2).T)
            elif name == "D3":
                cols.extend((d_prices**3).T)
            elif name == "Y2":
                cols.extend((y**2).T)
            elif name == "logD":
                cols.extend(np.log(np.maximum(d_prices, 1e-300)).T)
            elif name == "payoff":
                feat = self.payoff.basis_feature(d_prices, self.horizon, self.rate)
                if feat is not None:
                    cols.append(feat)
            elif name == "knots":
                if knots is not None:
                    for m in range(d_prices.shape[1]):
                        for q in knots[:, m]:
                            cols.append(np.maximum(d_prices[:, m] - q, 0.0))
            else:
                raise ConfigurationError(f"unknown basis entry {name!r}")
        if not cols:
            return np.empty((d_prices.shape[0], 0))
        return np.column_stack(cols)

    def value_and_loadings(self, k, d_prices, y):
        fit = self.steps[k]
        if fit is None:  # degenerate time-zero state
            raise ValueError("step has no regression fit")
        raw = self.features(d_prices, y, knots=fit.knots)
        x = (raw[:, fit.keep] - fit.mean) / fit.scale
        v = fit.coef_value[0] + x @ fit.coef_value[1:]
        vbar = fit.coef_dw[:, 0][None, :] + x @ fit.coef_dw[:, 1:].T
        return v, vbar


def _fit_ls(xs, targets, rcond):
    """Least squares with intercept on standardized columns.

    Returns (predictions per target, coefficients, r2 of first target,
    effective condition number, rank deficiency flag).  Collinear
    directions are truncated at ``rcond`` and reported, not fatal.
    """
    n = xs.shape[0]
    a = np.column_stack([np.ones(n), xs])
    stacked = np.column_stack(targets)
    coef, _, rank, sv = np.linalg.lstsq(a, stacked, rcond=rcond)
    preds = a @ coef
    used = sv[sv > sv[0] * rcond] if sv.size else sv
    cond = float(sv[0] / used[-1]) if used.size else math.inf
    deficient = rank < a.shape[1]
    y0 = stacked[:, 0]
    ss_res = float(np.sum((y0 - preds[:, 0]) ** 2))
    ss_tot = float(np.sum((y0 - y0.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return preds, coef, r2, cond, deficient


@dataclass
class BSDESolution:
    """Backward value process on the fit bundle plus reusable fits."""

    times: np.ndarray
    value: np.ndarray            # (n, K+1)
    dw_loadings: np.ndarray      # (n, K, d)
    jump_nodes: np.ndarray       # (nq,) per-component quadrature sizes
    jump_loading_mean: np.ndarray  # (K, nq) cross-path mean of Vtilde at nodes
    table: RegressionTable
    r2: np.ndarray
    cond: np.ndarray
    value_at_zero: float
    se_at_zero: float
    driver_at_zero: float
    diagnostics: dict = field(default_factory=dict)

    def export_csv(self, fname):
        with open(fname, "w") as f:
            f.write("t,mean_value,mean_loading,r2\n")
            for k in range(self.times.size - 1):
                f.write(
                    f"{self.times[k]:.12g},{self.value[:, k].mean():.12g},"
                    f"{self.dw_loadings[:, k].mean():.12g},{self.r2[k]:.6g}\n"
                )
            f.write(f"{self.times[-1]:.12g},{self.value[:, -1].mean():.12g},0,1\n")


def driver(value_left, dw_loadings, jump_loadings, jump_rel, mpr, density_ratio,
           z_weights, time_scales):
    """Driver of the backward equation at one time, vectorized over paths.

    g = sum_i Vbar_i * mpr_i - sum_components lambda * integral of
    Vtilde(z) * F(z) against the jump measure, with F the relative
    surface jump and the density ratio entering through the loadings.

    Parameters
    ----------
    value_left : (n,) current value (enters only through jump_loadings
        when the structural form is used; accepted for interface parity).
    dw_loadings : (n, d)
    jump_loadings : (n, nq) or list per component
    jump_rel : (n, nq) relative surface jumps F at the quadrature sizes
    mpr : (n, d) market price of risk
    density_ratio : (n,) left-to-value density ratio (one off jumps)
    z_weights : (nq,) quadrature weights against the jump measure
    time_scales : per-component calendar intensity multipliers
    """
    g = np.sum(np.atleast_2d(dw_loadings) * np.atleast_2d(mpr), axis=-1)
    if np.ndim(jump_loadings) and np.size(jump_loadings):
        lam = np.atleast_1d(time_scales)[0]
        g = g - lam * (jump_loadings * jump_rel) @ z_weights
    return g


def structural_jump_loading(value_left, jump_rel):
    """Surface-implied jump loading -V * F / (1 + F).

    This is the loading of the value process induced purely by the
    density's own jump; it is the fallback when the regression carries
    no factor signal.
    """
    f = jump_rel
    return -np.atleast_1d(value_left)[:, None] * f / (1.0 + f)


class _FactorShift:
    """Analytic change of a fitted value function under a factor jump.

    Only the factor-dependent basis columns move when y0 -> y0 + z, so
    the fitted-value difference is linear in their coefficients; means
    and the intercept cancel.
    """

    def __init__(self, labels, keep, coef, scale):
        self.terms = []
        for pos, col in enumerate(np.where(keep)[0]):
            lab = labels[col]
            c = coef[pos + 1] / scale[pos]
            if lab == "Y0":
                self.terms.append(("lin", None, c))
            elif lab == "Y0^2":
                self.terms.append(("quad", None, c))
            elif lab.startswith("D") and lab.endswith("Y0"):
                self.terms.append(("cross", int(lab[1:-2]), c))

    @property
    def has_signal(self):
        return bool(self.terms)

    def at(self, d_prices, y, z):
        """Shift for states (n,) against jump sizes z (n,) or (nq,)."""
        z = np.asarray(z)
        pathwise = z.shape == y.shape[:1]
        out = np.zeros(y.shape[0] if pathwise else (y.shape[0], z.size))
        for kind, m, c in self.terms:
            if kind == "lin":
                term = c * z
            elif kind == "quad":
                if pathwise:
                    term = c * (2.0 * y[:, 0] * z + z**2)
                else:
                    term = c * (2.0 * y[:, 0][:, None] * z[None, :] + (z**2)[None, :])
            else:
                dp = d_prices[:, m]
                term = c * (dp * z if pathwise else dp[:, None] * z[None, :])
            out += term
        return out


def solve_backward(bundle: PathBundle, surface: OpportunitySurface, payoff,
                   config: BsdeConfig | None = None) -> BSDESolution:
    """Regression-based backward induction for the mean-value process.

    Terminal data is the payoff path by path.  Each step regresses the
    next value (and its product with the Brownian increments) on state
    functions, estimates jump loadings from the structural surface term
    plus bucketed corrections from realized jumps, and applies the
    driver with a short inner fixed-point sweep.
    """
    config = config or BsdeConfig()
    if bundle.n_paths < 100:
        raise ConfigurationError("backward solve needs a sensible cross-path sample")
    n, nk = bundle.n_paths, bundle.n_steps
    d, h = bundle.model.d, bundle.ou.dim
    if h != 1:
        raise ConfigurationError("backward solve is implemented for one factor")
    spec = bundle.specs[0]
    dt = bundle.grid.step
    disc = bundle.discounted
    y = bundle.y
    yl = bundle.y_left
    h_term = np.asarray(payoff(bundle), dtype=float)
    diagnostics = {"payoff": check_square_integrability(h_term)}

    z_nodes, z_weights = jump_quadrature(spec, config.tail_eps, config.n_quad)
    nq = z_nodes.size
    lam_cal = spec.time_scale

    # realized jump records grouped by step for the bucket corrections
    rj = bundle.jumps
    pidx = np.repeat(np.arange(rj.n_paths), np.diff(rj.offsets))
    jump_step = rj.step_index
    if nq and rj.times.size:
        edges = np.quantile(z_nodes, np.linspace(0, 1, config.n_jump_buckets + 1))
        edges[0], edges[-1] = 0.0, max(z_nodes.max(), rj.sizes.max()) + 1e-12
        bucket_of_node = np.clip(np.searchsorted(edges, z_nodes, side="right") - 1, 0, config.n_jump_buckets - 1)
        jump_bucket = np.clip(np.searchsorted(edges, rj.sizes, side="right") - 1, 0, config.n_jump_buckets - 1)
        order = np.argsort(jump_step, kind="stable")
        js_sorted = jump_step[order]
        step_lo = np.searchsorted(js_sorted, np.arange(nk), side="left")
        step_hi = np.searchsorted(js_sorted, np.arange(nk), side="right")
    else:
        bucket_of_node = None

    table = RegressionTable(config.basis, payoff, bundle.times[-1], bundle.rate)
    table.steps = [None] * nk
    labels = table.feature_labels(d, h, config.n_knots if "knots" in config.basis else 0)

    value = np.empty((n, nk + 1))
    value[:, nk] = h_term
    dw_loadings = np.zeros((n, nk, d))
    jump_loading_mean = np.zeros((nk, nq))
    r2 = np.ones(nk)
    cond = np.zeros(nk)
    g_last = np.zeros(n)
    n_deficient = 0
    drift_acc = np.zeros(n)
    mart_acc = np.zeros(n)
    jump_mart_acc = np.zeros(n)

    for k in range(nk - 1, -1, -1):
        t_k = bundle.times[k]
        v_next = value[:, k + 1]
        mpr = np.atleast_2d(market_price_of_risk(bundle.model, yl[:, k]))
        if nq:
            base = surface.value_at_states(t_k, yl[:, k])
            shifted = np.empty((n, nq))
            for q in range(nq):
                yq = yl[:, k].copy()
                yq[:, 0] += z_nodes[q]
                shifted[:, q] = surface.value_at_states(t_k, yq)
            jump_rel = shifted / base[:, None] - 1.0
        else:
            jump_rel = np.zeros((n, 0))

        if k == 0:
            # all paths share the time-zero state: plain means
            v_hat = np.full(n, v_next.mean())
            centered = v_next - v_hat
            vbar = np.tile(centered @ bundle.dw[:, 0] / (n * dt), (n, 1))
            resid = centered - np.sum(vbar * bundle.dw[:, 0], axis=-1)
            r2[0] = 0.0
            cond[0] = 1.0
        else:
            knots = None
            if "knots" in config.basis and config.n_knots > 0:
                qs = np.linspace(0.0, 1.0, config.n_knots + 2)[1:-1]
                knots = np.quantile(disc[:, k], qs, axis=0)
            xs_raw = table.features(disc[:, k], y[:, k], knots=knots)
            std_raw = xs_raw.std(axis=0)
            keep = std_raw > 1e-10 * (1.0 + np.abs(xs_raw.mean(axis=0)))
            xs_kept = xs_raw[:, keep]
            mean = xs_kept.mean(axis=0)
            scale = xs_kept.std(axis=0)
            xs = (xs_kept - mean) / scale
            preds, coef_v, r2_k, cond_k, defic = _fit_ls(xs, [v_next], config.rcond)
            v_hat = preds[:, 0]
            # martingale-residual control variate: center before the
            # Brownian-loading regressions to kill the dW sample-mean noise
            centered = v_next - v_hat
            preds_w, coef_w, _, _, defic_w = _fit_ls(
                xs, [centered * bundle.dw[:, k, m] for m in range(d)], config.rcond
            )
            vbar = preds_w / dt
            n_deficient += int(defic or defic_w)
            table.steps[k] = StepFit(keep, mean, scale, coef_v[:, 0], coef_w.T / dt, r2_k, cond_k, knots)
            r2[k] = r2_k
            cond[k] = cond_k
            resid = centered - np.sum(vbar * bundle.dw[:, k], axis=-1)

        # regression-implied loading from the factor sensitivity of the
        # fitted value function; structural surface term as the fallback
        shift = None
        if nq and table.steps[k] is not None:
            cand = _FactorShift(labels, table.steps[k].keep, table.steps[k].coef_value, table.steps[k].scale)
            if cand.has_signal:
                shift = cand
        base_nodes = shift.at(disc[:, k], yl[:, k], z_nodes) if shift is not None else None

        corrections = np.zeros(nq)
        base_at_realized = corr_at_realized = None
        if bucket_of_node is not None:
            lo, hi = step_lo[k], step_hi[k]
            if hi > lo:
                rows = order[lo:hi]
                jp_paths = pidx[rows]
                jb = jump_bucket[rows]
                if shift is not None:
                    base_at_realized = shift.at(disc[jp_paths, k], yl[jp_paths, k], rj.sizes[rows])
                else:
                    y_at = yl[jp_paths, k]
                    y_shift = y_at.copy()
                    y_shift[:, 0] += rj.sizes[rows]
                    f_at = surface.value_at_states(t_k, y_shift) / surface.value_at_states(t_k, y_at) - 1.0
                    base_at_realized = -v_hat[jp_paths] * f_at / (1.0 + f_at)
                obs = resid[jp_paths] - base_at_realized
                csum = np.zeros(config.n_jump_buckets)
                ccount = np.zeros(config.n_jump_buckets)
                np.add.at(csum, jb, obs)
                np.add.at(ccount, jb, 1.0)
                per_bucket = np.where(ccount >= config.min_bucket_count, csum / np.maximum(ccount, 1), 0.0)
                corrections = per_bucket[bucket_of_node]
                corr_at_realized = per_bucket[jb]

        v_cur = v_hat
        for _ in range(max(1, config.inner_sweeps)):
            if nq:
                base = base_nodes if base_nodes is not None else structural_jump_loading(v_cur, jump_rel)
                jl = base + corrections[None, :]
            else:
                jl = np.zeros((n, 0))
            g = driver(v_cur, vbar, jl, jump_rel, mpr, np.ones(n), z_weights, lam_cal)
            v_cur = v_hat - g * dt
        value[:, k] = v_cur
        dw_loadings[:, k] = vbar
        drift_acc += g * dt
        mart_acc += np.sum(vbar * bundle.dw[:, k], axis=-1)
        if nq:
            jump_loading_mean[k] = jl.mean(axis=0)
            jump_mart_acc -= lam_cal * (jl @ z_weights) * dt
            if base_at_realized is not None:
                rows = order[step_lo[k]:step_hi[k]]
                np.add.at(jump_mart_acc, pidx[rows], base_at_realized + corr_at_realized)
        if k == 0:
            g_last = g

    if n_deficient:
        warnings.warn(f"collinear basis columns truncated at {n_deficient} steps")
        diagnostics["rank_deficient_steps"] = n_deficient
    # pathwise control-variate estimate: terminal value minus the fitted
    # martingale parts and driver integral (diagnostic companion)
    pathwise = h_term - drift_acc - mart_acc - jump_mart_acc
    diagnostics["value_at_zero_pathwise"] = float(pathwise.mean())
    diagnostics["se_at_zero_pathwise"] = float(pathwise.std(ddof=1) / math.sqrt(n))
    # the regression controls correlate in-sample residuals, so the raw
    # payoff dispersion is the trustworthy error scale for the estimate
    se0 = float(h_term.std(ddof=1) / math.sqrt(n))
    return BSDESolution(
        times=bundle.times,
        value=value,
        dw_loadings=dw_loadings,
        jump_nodes=z_nodes,
        jump_loading_mean=jump_loading_mean,
        table=table,
        r2=r2,
        cond=cond,
        value_at_zero=float(value[:, 0].mean()),
        se_at_zero=se0,
        driver_at_zero=float(np.mean(g_last)),
        diagnostics=diagnostics,
    )


def mc_value_at_zero(surface: OpportunitySurface, bundles, payoff):
    """Density-weighted Monte Carlo value E[Z(T) H] with standard error.

    Independent of the backward solver; accepts a single bundle or an
    iterable of chunks.
    """
    if isinstance(bundles, PathBundle):
        bundles = [bundles]
    total = 0.0
    total_sq = 0.0
    count = 0
    for bundle in bundles:
        zh = density_terminal(surface, bundle) * payoff(bundle)
        total += float(zh.sum())
        total_sq += float((zh**2).sum())
        count += zh.size
    mean = total / count
    var = max(total_sq / count - mean**2, 0.0) * count / max(count - 1, 1)
    return mean, math.sqrt(var / count)
