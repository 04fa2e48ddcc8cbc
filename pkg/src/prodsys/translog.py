"""Three-step estimation of a restricted translog production function.

The technology is log-quadratic with a homogeneity restriction on the
flexible inputs (materials ``m`` and labor ``l``) and two latent
productivity components: a factor-neutral term ``omega`` and a
labor-augmenting term ``phi`` that enters only through ``phi + l``:

    y = beta_k*k + 0.5*beta_kk*k^2 + beta_m*m + beta_l*(phi + l)
        - 0.5*beta_0*(m - phi - l)^2 + omega + eta,

with the single curvature parameter ``beta_0 = -beta_mm = -beta_ll =
beta_ml``.  Step one recovers the returns to scale in flexible inputs
``delta_lm = beta_l + beta_m`` and the transitory-shock scale ``theta =
E[exp(eta)]`` from the revenue-to-expenditure ratio.  Step two estimates
``(beta_0, beta_l)`` and the law of motion of ``phi`` by GMM, using the
fact that ``phi`` is an exact function of the labor-materials ratio and
the labor expenditure share.  Step three estimates the capital
coefficients and the law of motion of ``omega`` by nonlinear least
squares, proxying lagged ``omega`` through a first-order condition.

The default pipeline finishes with a joint refinement that stacks the
step-two moments with instrumented step-three moments and re-minimizes
over both parameter blocks at once; ``system_refine`` documents why the
sequential step-two criterion alone is nearly flat in the curvature
parameter.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .optim import GmmProblem, NlsProblem, OptimResult, _psd_sqrt, minimize_gmm, minimize_nls
from .panel import PanelDataset

__all__ = [
    "TranslogParams",
    "ProductivityLaws",
    "Step1Result",
    "Step2Result",
    "Step3Result",
    "SystemResult",
    "TranslogEstimate",
    "EstimateOptions",
    "step1_cost_share",
    "phi_proxy",
    "build_instruments",
    "build_level_instruments",
    "step2_gmm",
    "information_matrix",
    "omega_proxy",
    "step3_core",
    "step3_nls",
    "system_refine",
    "recover_productivity",
    "estimate",
    "stacked_moments",
]

#: warn when the implied labor elasticity is nonpositive for more than
#: this fraction of observations
ELASTICITY_WARN_FRACTION = 0.01


@dataclasses.dataclass
class TranslogParams:
    """Technology parameters; ``theta`` is the transitory-shock scale E[exp(eta)]."""

    beta_k: float
    beta_kk: float
    beta_l: float
    beta_m: float
    beta_0: float
    theta: float = 1.0

    @property
    def delta_lm(self) -> float:
        return self.beta_l + self.beta_m

    def validate(self) -> None:
        vals = dataclasses.astuple(self)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("non-finite translog parameter")
        if self.beta_l <= 0 or self.beta_m <= 0:
            raise ValueError("beta_l and beta_m must be positive")
        if self.theta <= 0:
            raise ValueError("theta must be positive")


@dataclasses.dataclass
class ProductivityLaws:
    """First-order autoregressive laws of motion for omega and phi.

    ``omega' = rho_omega_0 + rho_omega_1*omega + rho_omega_2'X + noise`` and
    ``phi' = rho_phi_1*phi + rho_phi_2'Z + noise`` (no intercept for phi).
    """

    rho_phi_1: float
    rho_omega_0: float
    rho_omega_1: float
    rho_phi_2: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))
    rho_omega_2: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.rho_phi_2 = np.atleast_1d(np.asarray(self.rho_phi_2, dtype=float))
        self.rho_omega_2 = np.atleast_1d(np.asarray(self.rho_omega_2, dtype=float))

    def validate(self) -> None:
        if not (abs(self.rho_phi_1) < 1 and abs(self.rho_omega_1) < 1):
            raise ValueError("autoregressive roots must lie strictly inside the unit circle")
        if not (np.all(np.isfinite(self.rho_phi_2)) and np.all(np.isfinite(self.rho_omega_2))
                and np.isfinite(self.rho_omega_0)):
            raise ValueError("non-finite law-of-motion parameter")


@dataclasses.dataclass
class Step1Result:
    delta_lm: float
    theta: float
    ln_theta_delta: float
    eta_hat: np.ndarray


@dataclasses.dataclass
class Step2Result:
    beta_0: float
    beta_l: float
    beta_m: float
    rho_phi_1: float
    rho_phi_2: np.ndarray
    phi_hat: np.ndarray
    objective: float
    converged: bool
    n_pairs: int
    instrument_names: tuple[str, ...]
    warnings: list[str] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class Step3Result:
    beta_k: float
    beta_kk: float
    rho_omega_0: float
    rho_omega_1: float
    rho_omega_2: np.ndarray
    objective: float
    converged: bool
    proxy: str
    n_pairs: int
    n_dropped: int
    warnings: list[str] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class SystemResult:
    """Joint refinement of the step-two and step-three parameter blocks."""

    beta_0: float
    beta_l: float
    beta_m: float
    rho_phi_1: float
    rho_phi_2: np.ndarray
    beta_k: float
    beta_kk: float
    rho_omega_0: float
    rho_omega_1: float
    rho_omega_2: np.ndarray
    objective: float
    converged: bool
    n_pairs: int
    instrument_names: tuple[str, ...]
    warnings: list[str] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class TranslogEstimate:
    params: TranslogParams
    laws: ProductivityLaws
    phi_hat: np.ndarray
    omega_hat: np.ndarray
    eta_hat: np.ndarray
    step1: Step1Result
    step2: Step2Result
    step3: Step3Result
    system: SystemResult | None = None
    warnings: list[str] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class EstimateOptions:
    """Knobs for the three-step run; defaults follow the benchmark setup."""

    proxy: str = "materials"  # materials | labor | average
    instruments: str = "default"  # default | exactly_identified
    step2_starts: Sequence[np.ndarray] | None = None
    refine: str = "system"  # system | none
    grad_tol: float = 1e-8
    max_iter: int = 500


# -- step one ----------------------------------------------------------------


def step1_cost_share(dataset: PanelDataset) -> Step1Result:
    """Recover flexible-input returns to scale and the shock scale.

    The log revenue-to-expenditure ratio satisfies ``ln R = ln(theta *
    delta_lm) - eta`` with ``E[eta] = 0`` and ``E[exp(eta)] = theta``, so

        ln(theta*delta) = mean(ln R),
        theta = mean(exp(mean(ln R) - ln R)),
        delta = exp(mean(ln R)) / theta.

    By construction the recovered shocks average to zero and satisfy
    ``mean(exp(eta_hat)) == theta_hat`` exactly.
    """
    ln_r = dataset.ln_r
    ln_theta_delta = float(np.mean(ln_r))
    eta_hat = ln_theta_delta - ln_r
    theta = float(np.mean(np.exp(eta_hat)))
    delta = float(np.exp(ln_theta_delta) / theta)
    return Step1Result(delta_lm=delta, theta=theta, ln_theta_delta=ln_theta_delta, eta_hat=eta_hat)


# -- step two ----------------------------------------------------------------


def phi_proxy(m_minus_l, s_l, beta_0: float, beta_l: float, delta_lm: float) -> np.ndarray:
    """Labor-augmenting productivity from observables.

    Ratio of the two flexible-input first-order conditions gives

        phi = (m - l) + beta_l/beta_0 - (delta_lm/beta_0) * s_l,

    which holds exactly on optimizing data regardless of prices, markups
    and the transitory shock (they cancel in the FOC ratio).
    """
    if beta_0 == 0.0:
        raise ValueError("phi proxy undefined at beta_0 = 0")
    return np.asarray(m_minus_l, dtype=float) + beta_l / beta_0 - (delta_lm / beta_0) * np.asarray(s_l, dtype=float)


def build_instruments(dataset: PanelDataset, *, kind: str = "default"):
    """Instrument matrix for the phi law-of-motion GMM.

    ``default`` stacks a constant, lagged ``m - l``, the lagged labor
    share, lagged modifiers ``Z`` and both current and lagged capital.
    ``exactly_identified`` drops the capital columns, leaving as many
    instruments as parameters.  Returns ``(Q, names)`` with ``Q`` aligned
    to the dataset's lag pairs.
    """
    pairs = dataset.lag_pairs()
    cur, prev = pairs.cur, pairs.prev
    ml_prev = dataset.m[prev] - dataset.l[prev]
    cols = [np.ones(cur.size), ml_prev, dataset.s_l[prev]]
    names = ["const", "ml_lag", "s_l_lag"]
    for j in range(dataset.z.shape[1]):
        cols.append(dataset.z[prev, j])
        names.append(f"{dataset.z_names[j]}_lag")
    if kind == "default":
        cols += [dataset.k[cur], dataset.k[prev]]
        names += ["k", "k_lag"]
    elif kind != "exactly_identified":
        raise ValueError(f"unknown instrument set {kind!r}")
    return np.column_stack(cols), tuple(names)


def _alpha_split(alpha: np.ndarray, pz: int):
    beta_0, beta_l, rho_1 = alpha[0], alpha[1], alpha[2]
    rho_2 = alpha[3:3 + pz]
    return beta_0, beta_l, rho_1, rho_2


def _step2_arrays(dataset: PanelDataset):
    pairs = dataset.lag_pairs()
    cur, prev = pairs.cur, pairs.prev
    return (
        dataset.m[cur] - dataset.l[cur],
        dataset.m[prev] - dataset.l[prev],
        dataset.s_l[cur],
        dataset.s_l[prev],
        dataset.z[prev],
    )


def step2_residual(alpha: np.ndarray, delta_lm: float, ml_cur, ml_prev, sl_cur, sl_prev, z_prev) -> np.ndarray:
    """Innovation of the phi law at candidate ``alpha = (beta_0, beta_l, rho)``."""
    beta_0, beta_l, rho_1, rho_2 = _alpha_split(alpha, z_prev.shape[1])
    phi_cur = phi_proxy(ml_cur, sl_cur, beta_0, beta_l, delta_lm)
    phi_prev = phi_proxy(ml_prev, sl_prev, beta_0, beta_l, delta_lm)
    return phi_cur - rho_1 * phi_prev - z_prev @ rho_2


def step2_residual_jacobian(alpha: np.ndarray, delta_lm: float, ml_cur, ml_prev, sl_cur, sl_prev, z_prev) -> np.ndarray:
    """Analytic derivative of the step-two innovation in each parameter."""
    beta_0, beta_l, rho_1, _ = _alpha_split(alpha, z_prev.shape[1])
    phi_prev = phi_proxy(ml_prev, sl_prev, beta_0, beta_l, delta_lm)
    d_beta0 = (-beta_l * (1.0 - rho_1) + delta_lm * (sl_cur - rho_1 * sl_prev)) / beta_0**2
    d_betal = (1.0 - rho_1) / beta_0 * np.ones_like(phi_prev)
    cols = [d_beta0, d_betal, -phi_prev] + [-z_prev[:, j] for j in range(z_prev.shape[1])]
    return np.column_stack(cols)


def default_step2_starts(delta_lm: float, pz: int) -> list[np.ndarray]:
    """Deterministic start grid: curvature magnitudes crossed with labor shares."""
    starts = []
    for b0 in (-0.2, -0.1, -0.05, -0.02, -0.005):
        for frac in (0.25, 0.5, 0.75):
            starts.append(np.array([b0, frac * delta_lm, 0.5] + [0.0] * pz))
    return starts


def step2_gmm(
    dataset: PanelDataset,
    step1: Step1Result,
    *,
    instruments: str = "default",
    starts: Sequence[np.ndarray] | None = None,
    weight: np.ndarray | None = None,
    grad_tol: float = 1e-8,
    max_iter: int = 500,
) -> Step2Result:
    """GMM estimation of the curvature, labor coefficient and phi law.

    Moments are ``E[Q_{t-1} * eps_t(alpha)] = 0`` where ``eps`` is the
    innovation of the phi law evaluated at proxied phi.  The default
    weight is ``(Q'Q/N)^{-1}``; parameters are ``(beta_0, beta_l,
    rho_phi_1, rho_phi_2)`` with ``beta_m`` recovered as ``delta_lm -
    beta_l``.
    """
    delta = step1.delta_lm
    arrays = _step2_arrays(dataset)
    z_prev = arrays[4]
    pz = z_prev.shape[1]
    q, names = build_instruments(dataset, kind=instruments)
    n_pairs = q.shape[0]
    if n_pairs <= q.shape[1]:
        raise ValueError("not enough lag pairs for the instrument count")

    warnings: list[str] = []
    if weight is None:
        qq = q.T @ q / n_pairs
        cond = np.linalg.cond(qq)
        if cond > 1e12:
            warnings.append(f"instrument Gram matrix ill-conditioned (cond={cond:.2e}); using pseudo-inverse")
            weight = np.linalg.pinv(qq)
        else:
            weight = np.linalg.inv(qq)

    def moments(alpha):
        return q.T @ step2_residual(alpha, delta, *arrays) / n_pairs

    def moments_jac(alpha):
        return q.T @ step2_residual_jacobian(alpha, delta, *arrays) / n_pairs

    lo = np.concatenate(([-10.0, 1e-10, -0.999999], np.full(pz, -50.0)))
    hi = np.concatenate(([-1e-10, delta * (1 - 1e-10), 0.999999], np.full(pz, 50.0)))
    problem = GmmProblem(moments=moments, jacobian=moments_jac, weight=weight, bounds=(lo, hi))

    start_list = list(starts) if starts is not None else default_step2_starts(delta, pz)
    result = minimize_gmm(problem, start_list[0], starts=start_list[1:], grad_tol=grad_tol, max_iter=max_iter)

    beta_0, beta_l, rho_1, rho_2 = _alpha_split(result.params, pz)
    beta_m = delta - beta_l
    phi_hat = phi_proxy(dataset.m - dataset.l, dataset.s_l, beta_0, beta_l, delta)

    # with proxied phi the implied labor elasticity equals delta*s_l, so this
    # literal check can only fire on degenerate shares or parameter values
    labor_el = beta_l + beta_0 * (dataset.m - phi_hat - dataset.l)
    frac_bad = float(np.mean(labor_el <= 0.0))
    if frac_bad > ELASTICITY_WARN_FRACTION:
        warnings.append(f"implied labor elasticity nonpositive for {frac_bad:.1%} of observations")
    # the criterion has a rescaling valley: (beta_0, beta_l) can be moved so
    # that proxied phi becomes nearly constant, which mechanically shrinks the
    # innovation; flag that degenerate configuration rather than hiding it
    var_ratio = float(np.var(phi_hat) / max(np.var(dataset.m - dataset.l), 1e-300))
    if var_ratio < 0.01:
        warnings.append(
            f"proxied phi variance is {var_ratio:.1e} of the m - l variance; "
            "point is likely in the degenerate rescaling valley (see system_refine)"
        )
    if not result.converged:
        warnings.append(f"step-2 GMM did not converge: {result.status}")

    return Step2Result(
        beta_0=float(beta_0),
        beta_l=float(beta_l),
        beta_m=float(beta_m),
        rho_phi_1=float(rho_1),
        rho_phi_2=np.asarray(rho_2, dtype=float),
        phi_hat=phi_hat,
        objective=result.objective,
        converged=result.converged,
        n_pairs=n_pairs,
        instrument_names=names,
        warnings=warnings,
    )


def information_matrix(dataset: PanelDataset, step1: Step1Result, alpha, *, instruments: str = "default", weight: np.ndarray | None = None):
    """Curvature of the GMM criterion at ``alpha``: ``G'WG`` with rank and condition.

    A full-rank matrix signals local identification of the step-two
    parameters; rank deficiency arises, for example, when the labor share
    carries no independent variation.
    """
    arrays = _step2_arrays(dataset)
    q, _ = build_instruments(dataset, kind=instruments)
    n_pairs = q.shape[0]
    if weight is None:
        weight = np.linalg.pinv(q.T @ q / n_pairs)
    g = q.T @ step2_residual_jacobian(np.asarray(alpha, dtype=float), step1.delta_lm, *arrays) / n_pairs
    info = g.T @ weight @ g
    svals = np.linalg.svd(info, compute_uv=False)
    tol = max(info.shape) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > tol))
    cond = float(svals[0] / svals[-1]) if svals.size and svals[-1] > 0 else float("inf")
    return info, rank, cond


# -- step three --------------------------------------------------------------


def omega_proxy(
    dataset: PanelDataset,
    beta_0: float,
    beta_l: float,
    beta_m: float,
    theta: float,
    phi: np.ndarray,
    *,
    which: str = "materials",
):
    """Proxy for ``omega + beta_k*k + 0.5*beta_kk*k^2`` from a flexible-input FOC.

    The materials version is

        m* = ln(P^M/P^Y) - ln(theta) - ln(beta_m - beta_0*x)
             + (1 - beta_m)*m - beta_l*(phi + l) + 0.5*beta_0*x^2,

    with ``x = m - phi - l``; the labor version uses the labor FOC and the
    average takes the mean of the two.  Observations where a log argument
    is nonpositive are flagged invalid and reported, not raised.

    Returns ``(proxy, valid_mask, n_dropped)``.
    """
    x = dataset.m - phi - dataset.l
    common = 0.5 * beta_0 * x**2 - beta_l * phi
    valid = np.ones(dataset.n_obs, dtype=bool)

    def materials():
        arg = beta_m - beta_0 * x
        ok = arg > 0
        out = np.full(dataset.n_obs, np.nan)
        out[ok] = (
            dataset.ln_price_m[ok]
            - np.log(theta)
            - np.log(arg[ok])
            + (1.0 - beta_m) * dataset.m[ok]
            - beta_l * dataset.l[ok]
            + common[ok]
        )
        return out, ok

    def labor():
        arg = beta_l + beta_0 * x
        ok = arg > 0
        out = np.full(dataset.n_obs, np.nan)
        out[ok] = (
            dataset.ln_price_l[ok]
            - np.log(theta)
            - np.log(arg[ok])
            + (1.0 - beta_l) * dataset.l[ok]
            - beta_m * dataset.m[ok]
            + common[ok]
        )
        return out, ok

    if which == "materials":
        proxy, valid = materials()
    elif which == "labor":
        proxy, valid = labor()
    elif which == "average":
        pm, okm = materials()
        pl, okl = labor()
        valid = okm & okl
        proxy = np.full(dataset.n_obs, np.nan)
        proxy[valid] = 0.5 * (pm[valid] + pl[valid])
    else:
        raise ValueError(f"unknown omega proxy {which!r}")
    return proxy, valid, int(np.sum(~valid))


def _ystar(dataset: PanelDataset, beta_0: float, beta_l: float, beta_m: float, phi: np.ndarray) -> np.ndarray:
    x = dataset.m - phi - dataset.l
    return dataset.y - beta_m * dataset.m - beta_l * (phi + dataset.l) + 0.5 * beta_0 * x**2


def step3_core(
    y_cur,
    k_cur,
    k_prev,
    mstar_prev,
    x_prev,
    *,
    grad_tol: float = 1e-8,
    max_iter: int = 500,
) -> OptimResult:
    """Shared step-three least squares on pre-assembled pair arrays.

    Parameter order is ``(beta_k, beta_kk, rho_0, rho_1, rho_2)``; the
    model is documented on :func:`step3_nls`, which assembles the arrays
    from a dataset.  Kept separate so resampled targets can reuse the
    identical objective and start rule.
    """
    k2_cur, k2_prev = 0.5 * k_cur**2, 0.5 * k_prev**2
    px = x_prev.shape[1]

    def split(gamma):
        return gamma[0], gamma[1], gamma[2], gamma[3], gamma[4:4 + px]

    def residual(gamma):
        bk, bkk, r0, r1, r2 = split(gamma)
        lag_omega = mstar_prev - bk * k_prev - bkk * k2_prev
        return y_cur - bk * k_cur - bkk * k2_cur - r0 - r1 * lag_omega - x_prev @ r2

    def jacobian(gamma):
        bk, bkk, r0, r1, r2 = split(gamma)
        lag_omega = mstar_prev - bk * k_prev - bkk * k2_prev
        cols = [
            -k_cur + r1 * k_prev,
            -k2_cur + r1 * k2_prev,
            -np.ones_like(y_cur),
            -lag_omega,
        ] + [-x_prev[:, j] for j in range(px)]
        return np.column_stack(cols)

    # profile start: capital terms by least squares at a few fixed rho_1 values
    design = np.column_stack([k_cur, k2_cur, np.ones_like(y_cur)])
    coef, *_ = np.linalg.lstsq(design, y_cur, rcond=None)
    starts = [np.concatenate(([coef[0], coef[1], coef[2], r1], np.zeros(px))) for r1 in (0.5, 0.2, 0.8)]

    lo = np.concatenate(([-np.inf, -np.inf, -np.inf, -0.999999], np.full(px, -np.inf)))
    hi = np.concatenate(([np.inf, np.inf, np.inf, 0.999999], np.full(px, np.inf)))
    problem = NlsProblem(residual=residual, jacobian=jacobian, bounds=(lo, hi))
    return minimize_nls(problem, starts[0], starts=starts[1:], grad_tol=grad_tol, max_iter=max_iter)


def step3_nls(
    dataset: PanelDataset,
    step1: Step1Result,
    step2: Step2Result,
    *,
    proxy: str = "materials",
    grad_tol: float = 1e-8,
    max_iter: int = 500,
) -> Step3Result:
    """Nonlinear least squares for the capital coefficients and the omega law.

    Regresses the flexible-input-purged output ``y*`` on the capital terms
    and the autoregression of proxied lagged omega:

        y*_t = beta_k*k_t + 0.5*beta_kk*k_t^2 + rho_0
               + rho_1*(m*_{t-1} - beta_k*k_{t-1} - 0.5*beta_kk*k_{t-1}^2)
               + rho_2'X_{t-1} + error.
    """
    mstar, valid, n_dropped = omega_proxy(
        dataset, step2.beta_0, step2.beta_l, step2.beta_m, step1.theta, step2.phi_hat, which=proxy
    )
    ystar = _ystar(dataset, step2.beta_0, step2.beta_l, step2.beta_m, step2.phi_hat)
    pairs = dataset.lag_pairs()
    keep = valid[pairs.prev]
    cur, prev = pairs.cur[keep], pairs.prev[keep]
    if cur.size < 4 + dataset.x.shape[1]:
        raise ValueError("too few usable lag pairs for step three")

    px = dataset.x.shape[1]
    result = step3_core(
        ystar[cur], dataset.k[cur], dataset.k[prev], mstar[prev], dataset.x[prev],
        grad_tol=grad_tol, max_iter=max_iter,
    )
    bk, bkk, r0, r1 = result.params[0], result.params[1], result.params[2], result.params[3]
    r2 = result.params[4:4 + px]
    warnings = []
    if n_dropped:
        warnings.append(f"omega proxy invalid for {n_dropped} observations (dropped from step three)")
    if not result.converged:
        warnings.append(f"step-3 NLS did not converge: {result.status}")
    return Step3Result(
        beta_k=float(bk),
        beta_kk=float(bkk),
        rho_omega_0=float(r0),
        rho_omega_1=float(r1),
        rho_omega_2=np.asarray(r2, dtype=float),
        objective=result.objective,
        converged=result.converged,
        proxy=proxy,
        n_pairs=int(cur.size),
        n_dropped=n_dropped,
        warnings=warnings,
    )


# -- joint refinement ----------------------------------------------------------


def build_level_instruments(dataset: PanelDataset):
    """Instrument matrix for the output-level block of the joint system.

    Everything here is either current/lagged capital (predetermined) or a
    lagged flexible-input observable, so all columns are orthogonal to the
    period-``t`` productivity innovation and transitory shock.  Returns
    ``(H, names)`` aligned to the dataset's lag pairs.
    """
    pairs = dataset.lag_pairs()
    cur, prev = pairs.cur, pairs.prev
    k_cur, k_prev = dataset.k[cur], dataset.k[prev]
    cols = [
        np.ones(cur.size),
        k_cur,
        k_cur**2,
        k_prev,
        k_prev**2,
        dataset.m[prev],
        dataset.m[prev] - dataset.l[prev],
        dataset.s_l[prev],
    ]
    names = ["const", "k", "k_sq", "k_lag", "k_sq_lag", "m_lag", "ml_lag", "s_l_lag"]
    for j in range(dataset.x.shape[1]):
        cols.append(dataset.x[prev, j])
        names.append(f"{dataset.x_names[j]}_lag")
    for j in range(dataset.z.shape[1]):
        cols.append(dataset.z[prev, j])
        names.append(f"{dataset.z_names[j]}_lag")
    return np.column_stack(cols), tuple(names)


def _gram_weight(mat: np.ndarray, label: str, warnings: list[str]) -> np.ndarray:
    gram = mat.T @ mat / mat.shape[0]
    cond = np.linalg.cond(gram)
    if cond > 1e12:
        warnings.append(f"{label} Gram matrix ill-conditioned (cond={cond:.2e}); using pseudo-inverse")
        return np.linalg.pinv(gram)
    return np.linalg.inv(gram)


def system_refine(
    dataset: PanelDataset,
    step1: Step1Result,
    step2: Step2Result,
    step3: Step3Result,
    *,
    proxy: str = "materials",
    instruments: str = "default",
    grad_tol: float = 1e-8,
    max_iter: int = 500,
) -> SystemResult:
    """Joint GMM over the step-two and step-three blocks on stacked moments.

    Under stable prices both ``m - l`` and the labor share are functions
    of ``phi`` alone, so the step-two innovation can be written as the
    true innovation plus a multiple of a curvature term whose coefficient
    vanishes at the truth.  Moving ``(beta_0, beta_l)`` along a particular
    ray rescales the proxied phi toward a constant and shrinks the
    innovation mechanically, which leaves the step-two criterion nearly
    flat in ``beta_0`` and can even place its global minimum at a
    degenerate point with collapsed phi variance.

    The cure is more information, not a better optimizer: the output-level
    autoregression residual of step three also depends on ``(beta_0,
    beta_l)`` through the proxies, and projecting it on its own
    predetermined instruments (``build_level_instruments``) yields moments
    that move sharply along the flat ray.  This routine stacks

        E[Q_{t-1} * eps_t(alpha)] = 0  and  E[H_{t-1} * r_t(alpha, gamma)] = 0

    and minimizes the sum of the two quadratic forms, each weighted by its
    inverse instrument Gram matrix and normalized by the residual standard
    deviation at the candidate point so that neither block can be improved
    by pure rescaling.  Step-one quantities stay frozen at their closed
    form.  Starts are the sequential solution plus a coarse grid over the
    step-two block.
    """
    if proxy not in ("materials", "labor", "average"):
        raise ValueError(f"unknown omega proxy {proxy!r}")
    delta, theta = step1.delta_lm, step1.theta
    pairs = dataset.lag_pairs()
    cur, prev = pairs.cur, pairs.prev
    ml_cur, ml_prev, s_cur, s_prev, z_prev = _step2_arrays(dataset)
    m_cur, m_prev = dataset.m[cur], dataset.m[prev]
    l_cur, l_prev = dataset.l[cur], dataset.l[prev]
    y_cur = dataset.y[cur]
    k_cur, k_prev = dataset.k[cur], dataset.k[prev]
    k2_cur, k2_prev = 0.5 * k_cur**2, 0.5 * k_prev**2
    x_prev = dataset.x[prev]
    pz, px = z_prev.shape[1], x_prev.shape[1]

    # on proxied phi the flexible FOCs give beta_m - beta_0*x = delta*(1 - s)
    # and beta_l + beta_0*x = delta*s, so the log term of the lagged omega
    # proxy is free of the candidate point and can be computed once
    log_m = dataset.ln_price_m[prev] - np.log(theta) - np.log(delta * (1.0 - s_prev))
    log_l = dataset.ln_price_l[prev] - np.log(theta) - np.log(delta * s_prev)

    warnings: list[str] = []
    needed = {"materials": (log_m,), "labor": (log_l,), "average": (log_m, log_l)}[proxy]
    usable = np.ones(cur.size, dtype=bool)
    for term in needed:
        usable &= np.isfinite(term)
    n_dropped = int(np.sum(~usable))
    if n_dropped:
        warnings.append(f"omega proxy invalid for {n_dropped} lag pairs (dropped from joint refinement)")
        (ml_cur, ml_prev, s_cur, s_prev, m_cur, m_prev, l_cur, l_prev, y_cur,
         k_cur, k_prev, k2_cur, k2_prev, log_m, log_l) = (
            a[usable] for a in (ml_cur, ml_prev, s_cur, s_prev, m_cur, m_prev, l_cur, l_prev, y_cur,
                                k_cur, k_prev, k2_cur, k2_prev, log_m, log_l))
        z_prev, x_prev = z_prev[usable], x_prev[usable]

    q, _ = build_instruments(dataset, kind=instruments)
    h, h_names = build_level_instruments(dataset)
    q, h = q[usable], h[usable]
    n = int(usable.sum())
    if n <= max(q.shape[1], h.shape[1]):
        raise ValueError("not enough usable lag pairs for the joint refinement")
    half_q = _psd_sqrt(_gram_weight(q, "step-2 instrument", warnings))
    half_h = _psd_sqrt(_gram_weight(h, "output-level instrument", warnings))

    def lag_proxy(b0, bl, bm, phi_p, x_p):
        common = 0.5 * b0 * x_p**2 - bl * phi_p
        pm = log_m + (1.0 - bm) * m_prev - bl * l_prev + common
        if proxy == "materials":
            return pm
        pl = log_l + (1.0 - bl) * l_prev - bm * m_prev + common
        if proxy == "labor":
            return pl
        return 0.5 * (pm + pl)

    def split(lam):
        return lam[:3 + pz], lam[3 + pz], lam[4 + pz], lam[5 + pz], lam[6 + pz], lam[7 + pz:]

    scale_floor = 1e-8  # keeps noiseless panels from dividing by ~eps

    def residual(lam):
        alpha, bk, bkk, g0, g1, g2 = split(lam)
        b0, bl, r1, r2 = _alpha_split(alpha, pz)
        bm = delta - bl
        phi_cur = phi_proxy(ml_cur, s_cur, b0, bl, delta)
        phi_prev = phi_proxy(ml_prev, s_prev, b0, bl, delta)
        eps = phi_cur - r1 * phi_prev - z_prev @ r2
        ystar = y_cur - bm * m_cur - bl * (phi_cur + l_cur) + 0.5 * b0 * (ml_cur - phi_cur) ** 2
        lag_omega = lag_proxy(b0, bl, bm, phi_prev, ml_prev - phi_prev) - bk * k_prev - bkk * k2_prev
        r = ystar - bk * k_cur - bkk * k2_cur - g0 - g1 * lag_omega - x_prev @ g2
        s_eps = max(float(np.std(eps)), scale_floor)
        s_r = max(float(np.std(r)), scale_floor)
        return np.concatenate([half_q @ (q.T @ eps) / (n * s_eps), half_h @ (h.T @ r) / (n * s_r)])

    lo = np.concatenate(([-10.0, 1e-10, -0.999999], np.full(pz, -50.0),
                         [-5.0, -5.0, -50.0, -0.999999], np.full(px, -50.0)))
    hi = np.concatenate(([-1e-10, delta * (1 - 1e-10), 0.999999], np.full(pz, 50.0),
                         [5.0, 5.0, 50.0, 0.999999], np.full(px, 50.0)))
    problem = NlsProblem(residual=residual, bounds=(lo, hi))

    seq = np.concatenate((
        [step2.beta_0, step2.beta_l, step2.rho_phi_1], step2.rho_phi_2,
        [step3.beta_k, step3.beta_kk, step3.rho_omega_0, step3.rho_omega_1], step3.rho_omega_2,
    ))
    starts = [np.clip(seq, lo + 1e-9, hi - 1e-9)]
    for b0, frac in ((-0.05, 0.5), (-0.1, 0.25), (-0.02, 0.75), (-0.2, 0.5)):
        starts.append(np.concatenate(([b0, frac * delta, 0.5], np.zeros(pz),
                                      [0.1, 0.0, 0.0, 0.5], np.zeros(px))))
    result = minimize_nls(problem, starts[0], starts=starts[1:], grad_tol=grad_tol, max_iter=max_iter)

    alpha, bk, bkk, g0, g1, g2 = split(result.params)
    b0, bl, r1, r2 = _alpha_split(alpha, pz)
    if not result.converged:
        warnings.append(f"joint refinement did not converge: {result.status}")
    return SystemResult(
        beta_0=float(b0),
        beta_l=float(bl),
        beta_m=float(delta - bl),
        rho_phi_1=float(r1),
        rho_phi_2=np.asarray(r2, dtype=float),
        beta_k=float(bk),
        beta_kk=float(bkk),
        rho_omega_0=float(g0),
        rho_omega_1=float(g1),
        rho_omega_2=np.asarray(g2, dtype=float),
        objective=result.objective,
        converged=result.converged,
        n_pairs=n,
        instrument_names=h_names,
        warnings=warnings,
    )


# -- assembly ----------------------------------------------------------------


def recover_productivity(dataset: PanelDataset, params: TranslogParams, phi_hat: np.ndarray, eta_hat: np.ndarray) -> np.ndarray:
    """Factor-neutral productivity implied by the technology and estimates."""
    x = dataset.m - phi_hat - dataset.l
    return (
        dataset.y
        - params.beta_k * dataset.k
        - 0.5 * params.beta_kk * dataset.k**2
        - params.beta_m * dataset.m
        - params.beta_l * (phi_hat + dataset.l)
        + 0.5 * params.beta_0 * x**2
        - eta_hat
    )


def estimate(dataset: PanelDataset, options: EstimateOptions | None = None) -> TranslogEstimate:
    """Run the full estimator on a panel.

    Steps one to three run sequentially; unless ``options.refine`` is
    ``"none"`` the step-two/step-three blocks are then re-minimized
    jointly (``system_refine``) and the refined point is reported, with
    the sequential step records kept for diagnostics.
    """
    opts = options or EstimateOptions()
    if opts.refine not in ("system", "none"):
        raise ValueError(f"unknown refine option {opts.refine!r}")
    step1 = step1_cost_share(dataset)
    step2 = step2_gmm(
        dataset,
        step1,
        instruments=opts.instruments,
        starts=opts.step2_starts,
        grad_tol=opts.grad_tol,
        max_iter=opts.max_iter,
    )
    step3 = step3_nls(dataset, step1, step2, proxy=opts.proxy, grad_tol=opts.grad_tol, max_iter=opts.max_iter)

    system = None
    if opts.refine == "system":
        system = system_refine(
            dataset, step1, step2, step3,
            proxy=opts.proxy,
            instruments=opts.instruments,
            grad_tol=opts.grad_tol,
            max_iter=opts.max_iter,
        )
        point = system
    else:
        point = None

    params = TranslogParams(
        beta_k=point.beta_k if point else step3.beta_k,
        beta_kk=point.beta_kk if point else step3.beta_kk,
        beta_l=point.beta_l if point else step2.beta_l,
        beta_m=point.beta_m if point else step2.beta_m,
        beta_0=point.beta_0 if point else step2.beta_0,
        theta=step1.theta,
    )
    laws = ProductivityLaws(
        rho_phi_1=point.rho_phi_1 if point else step2.rho_phi_1,
        rho_phi_2=point.rho_phi_2 if point else step2.rho_phi_2,
        rho_omega_0=point.rho_omega_0 if point else step3.rho_omega_0,
        rho_omega_1=point.rho_omega_1 if point else step3.rho_omega_1,
        rho_omega_2=point.rho_omega_2 if point else step3.rho_omega_2,
    )
    if point:
        phi_hat = phi_proxy(dataset.m - dataset.l, dataset.s_l, params.beta_0, params.beta_l, step1.delta_lm)
    else:
        phi_hat = step2.phi_hat
    omega_hat = recover_productivity(dataset, params, phi_hat, step1.eta_hat)
    warnings = step2.warnings + step3.warnings + (system.warnings if system else [])
    return TranslogEstimate(
        params=params,
        laws=laws,
        phi_hat=phi_hat,
        omega_hat=omega_hat,
        eta_hat=step1.eta_hat,
        step1=step1,
        step2=step2,
        step3=step3,
        system=system,
        warnings=warnings,
    )


def stacked_moments(dataset: PanelDataset, est: TranslogEstimate, *, instruments: str = "default") -> np.ndarray:
    """Sample moment vector of the equivalent one-shot system at an estimate.

    Stacks the two step-one moments, the step-two instrument
    orthogonality conditions and the step-three least-squares normal
    equations.  At the sequential solution every block is numerically
    zero except for the over-identified part of the step-two block.
    """
    p = est.params
    ln_theta_delta = np.log(p.theta * p.delta_lm)
    block1 = np.array(
        [
            np.mean(dataset.ln_r - ln_theta_delta),
            np.mean(np.exp(ln_theta_delta - dataset.ln_r)) - p.theta,
        ]
    )

    arrays = _step2_arrays(dataset)
    q, _ = build_instruments(dataset, kind=instruments)
    alpha = np.concatenate(([p.beta_0, p.beta_l, est.laws.rho_phi_1], est.laws.rho_phi_2))
    eps = step2_residual(alpha, p.delta_lm, *arrays)
    block2 = q.T @ eps / q.shape[0]

    mstar, valid, _ = omega_proxy(
        dataset, p.beta_0, p.beta_l, p.beta_m, p.theta, est.phi_hat, which=est.step3.proxy
    )
    ystar = _ystar(dataset, p.beta_0, p.beta_l, p.beta_m, est.phi_hat)
    pairs = dataset.lag_pairs()
    keep = valid[pairs.prev]
    cur, prev = pairs.cur[keep], pairs.prev[keep]
    k_cur, k_prev = dataset.k[cur], dataset.k[prev]
    k2_cur, k2_prev = 0.5 * k_cur**2, 0.5 * k_prev**2
    lag_omega = mstar[prev] - est.step3.beta_k * k_prev - est.step3.beta_kk * k2_prev
    resid = (
        ystar[cur]
        - est.step3.beta_k * k_cur
        - est.step3.beta_kk * k2_cur
        - est.step3.rho_omega_0
        - est.step3.rho_omega_1 * lag_omega
        - dataset.x[prev] @ est.step3.rho_omega_2
    )
    r1 = est.step3.rho_omega_1
    jac_cols = [
        -k_cur + r1 * k_prev,
        -k2_cur + r1 * k2_prev,
        -np.ones_like(resid),
        -lag_omega,
    ] + [-dataset.x[prev][:, j] for j in range(dataset.x.shape[1])]
    block3 = np.column_stack(jac_cols).T @ resid / resid.size
    return np.concatenate([block1, block2, block3])
