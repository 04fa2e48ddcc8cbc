"""Wild residual block bootstrap for the three-step estimator.

Residuals from each estimation step are scaled by a single two-point
weight per firm (the block), synthetic outcomes are rebuilt step by step
(the revenue ratio directly, the flexible-input gap through its
autoregressive recursion, the purged output through the omega law), and
the full estimator is re-run on each synthetic panel.  Labor shares and
all right-hand-side observables stay at their observed values by design;
only the step outcomes are resampled.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .panel import PanelDataset
from .translog import (
    EstimateOptions,
    Step3Result,
    TranslogEstimate,
    _ystar,
    omega_proxy,
    phi_proxy,
    step1_cost_share,
    step2_gmm,
    step3_core,
    system_refine,
)

__all__ = [
    "GOLDEN",
    "GOLDEN_PROB",
    "BootstrapConfig",
    "BootstrapResult",
    "ResidualSet",
    "mammen_weights",
    "compute_residuals",
    "synthetic_outcomes",
    "bootstrap_replicate",
    "parameter_names",
    "pack_parameters",
    "run_bootstrap",
]

#: two-point weight values: golden ratio and its negative reciprocal,
#: giving E[w] = 0, E[w^2] = 1
GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0
GOLDEN_PROB = (np.sqrt(5.0) - 1.0) / (2.0 * np.sqrt(5.0))


@dataclasses.dataclass
class BootstrapConfig:
    """Replication count B, master seed and reporting levels.

    ``weight_override`` fixes every firm's weight to a constant, which is
    only useful for testing (1 reproduces the original sample relations,
    0 gives the noiseless refit).
    """

    n_reps: int = 200
    seed: int = 0
    weight_override: float | None = None
    levels: tuple = (0.90, 0.95, 0.99)

    def validate(self) -> None:
        if self.n_reps < 1:
            raise ValueError("need at least one replication")
        for level in self.levels:
            if not 0.0 < level < 1.0:
                raise ValueError(f"interval level {level} outside (0, 1)")


@dataclasses.dataclass
class BootstrapResult:
    """Draws are stacked replicate parameter vectors, one row per success."""

    draws: np.ndarray
    names: tuple[str, ...]
    standard_errors: np.ndarray
    intervals: dict[float, tuple[np.ndarray, np.ndarray]]
    n_reps: int
    n_failures: int
    failures: list[str]
    unreliable: bool
    warnings: list[str] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class ResidualSet:
    """Recentered step residuals at the reported point estimates.

    ``zeta_phi`` lives on lag-pair rows; ``resid_omega`` on the subset of
    pairs whose lagged omega proxy is valid (``omega_pair_mask``).
    ``mstar`` is the flexible-input-based omega proxy on the observed
    data, reused by every replicate when rebuilding the purged output.
    """

    eta: np.ndarray
    zeta_phi: np.ndarray
    resid_omega: np.ndarray
    omega_pair_mask: np.ndarray
    mstar: np.ndarray
    valid: np.ndarray


def mammen_weights(firm_ids, seed=None) -> np.ndarray:
    """One two-point weight per firm.

    ``firm_ids`` is an integer count or a sequence of per-observation
    identifiers; with a sequence the result has one entry per distinct
    identifier, so expanding by firm code keeps the weight constant
    within firm.  Values are (1+sqrt(5))/2 with probability
    (sqrt(5)-1)/(2 sqrt(5)) and (1-sqrt(5))/2 otherwise.
    """
    if np.ndim(firm_ids) == 0:
        n = int(firm_ids)
    else:
        n = int(np.unique(np.asarray(firm_ids)).size)
    rng = np.random.default_rng(seed)
    return np.where(rng.random(n) < GOLDEN_PROB, GOLDEN, 1.0 - GOLDEN)


def compute_residuals(dataset: PanelDataset, estimate: TranslogEstimate) -> ResidualSet:
    """Step residuals at the reported parameters, each recentered to mean zero."""
    params, laws = estimate.params, estimate.laws
    pairs = dataset.lag_pairs()
    eta = estimate.eta_hat - np.mean(estimate.eta_hat)

    phi = estimate.phi_hat
    zeta = phi[pairs.cur] - laws.rho_phi_1 * phi[pairs.prev] - dataset.z[pairs.prev] @ laws.rho_phi_2
    zeta = zeta - np.mean(zeta)

    mstar, valid, _ = omega_proxy(
        dataset, params.beta_0, params.beta_l, params.beta_m, params.theta, phi,
        which=estimate.step3.proxy,
    )
    ystar = _ystar(dataset, params.beta_0, params.beta_l, params.beta_m, phi)
    mask = valid[pairs.prev]
    cur, prev = pairs.cur[mask], pairs.prev[mask]
    lag_omega = mstar[prev] - params.beta_k * dataset.k[prev] - 0.5 * params.beta_kk * dataset.k[prev] ** 2
    resid = (
        ystar[cur]
        - params.beta_k * dataset.k[cur]
        - 0.5 * params.beta_kk * dataset.k[cur] ** 2
        - laws.rho_omega_0
        - laws.rho_omega_1 * lag_omega
        - dataset.x[prev] @ laws.rho_omega_2
    )
    resid = resid - np.mean(resid)
    return ResidualSet(
        eta=eta, zeta_phi=zeta, resid_omega=resid,
        omega_pair_mask=mask, mstar=mstar, valid=valid,
    )


def synthetic_outcomes(dataset: PanelDataset, estimate: TranslogEstimate, residuals: ResidualSet, weights):
    """Step outcomes for one replicate, before any re-estimation.

    Returns ``(lnr_b, ml_b, ystar_b)``: the resampled revenue ratio (all
    rows), the flexible-input gap rebuilt through the phi-law recursion
    (all rows; non-pair rows keep their observed values, which also
    restarts the recursion after panel gaps), and the purged output on
    the pair rows selected by ``residuals.omega_pair_mask``.
    """
    params, laws = estimate.params, estimate.laws
    pairs = dataset.lag_pairs()
    w_obs = np.asarray(weights, dtype=float)[dataset.firm]

    lnr_b = estimate.step1.ln_theta_delta - w_obs * residuals.eta

    delta = params.beta_l + params.beta_m
    ratio = params.beta_l / params.beta_0
    slope = delta / params.beta_0
    z_term = dataset.z[pairs.prev] @ laws.rho_phi_2
    shock = w_obs[pairs.cur] * residuals.zeta_phi
    ml_b = (dataset.m - dataset.l).copy()
    s = dataset.s_l
    # pairs are ordered by (firm, year), so each firm's run chains left to right
    for i in range(len(pairs)):
        c, p = pairs.cur[i], pairs.prev[i]
        ml_b[c] = (
            -ratio + slope * s[c]
            + laws.rho_phi_1 * (ml_b[p] + ratio - slope * s[p])
            + z_term[i] + shock[i]
        )

    mask = residuals.omega_pair_mask
    cur, prev = pairs.cur[mask], pairs.prev[mask]
    k_cur, k_prev = dataset.k[cur], dataset.k[prev]
    lag_omega = residuals.mstar[prev] - params.beta_k * k_prev - 0.5 * params.beta_kk * k_prev**2
    ystar_b = (
        params.beta_k * k_cur
        + 0.5 * params.beta_kk * k_cur**2
        + laws.rho_omega_0
        + laws.rho_omega_1 * lag_omega
        + dataset.x[prev] @ laws.rho_omega_2
        + w_obs[cur] * residuals.resid_omega
    )
    return lnr_b, ml_b, ystar_b


def _replicate_options(estimate: TranslogEstimate, options: EstimateOptions | None) -> EstimateOptions:
    if options is not None:
        return options
    return EstimateOptions(
        proxy=estimate.step3.proxy,
        refine="system" if estimate.system is not None else "none",
    )


def bootstrap_replicate(
    dataset: PanelDataset,
    estimate: TranslogEstimate,
    residuals: ResidualSet,
    weights,
    *,
    options: EstimateOptions | None = None,
) -> np.ndarray:
    """Re-run the estimator on one synthetic panel; returns a parameter vector.

    The synthetic panel replaces the revenue ratio, the flexible-input
    gap (hence materials, holding labor and shares fixed) and output.
    Output is rebuilt by inverting the purged-output identity at the
    reported parameters, so that re-deriving ``y*`` on the synthetic
    panel returns exactly the resampled ``y*``; first-period rows keep
    observed output, which no step consumes.  Vector layout matches
    :func:`parameter_names`.
    """
    opts = _replicate_options(estimate, options)
    params = estimate.params
    pairs = dataset.lag_pairs()
    lnr_b, ml_b, ystar_b = synthetic_outcomes(dataset, estimate, residuals, weights)

    mask = residuals.omega_pair_mask
    cur, prev = pairs.cur[mask], pairs.prev[mask]
    m_b = dataset.l + ml_b
    delta = params.beta_l + params.beta_m
    phi_rep = phi_proxy(ml_b, dataset.s_l, params.beta_0, params.beta_l, delta)
    x_rep = ml_b - phi_rep
    y_b = dataset.y.copy()
    y_b[cur] = (
        ystar_b
        + params.beta_m * m_b[cur]
        + params.beta_l * (phi_rep[cur] + dataset.l[cur])
        - 0.5 * params.beta_0 * x_rep[cur] ** 2
    )
    ds_b = PanelDataset(
        dataset.labels, dataset.year, y_b, dataset.k, dataset.l, m_b, dataset.s_l, lnr_b,
        x=dataset.x, z=dataset.z, x_names=dataset.x_names, z_names=dataset.z_names,
        ln_price_l=dataset.ln_price_l, ln_price_m=dataset.ln_price_m,
    )

    step1_b = step1_cost_share(ds_b)
    step2_b = step2_gmm(
        ds_b, step1_b, instruments=opts.instruments, starts=opts.step2_starts,
        grad_tol=opts.grad_tol, max_iter=opts.max_iter,
    )

    # third step: resampled y* against the omega proxy rebuilt from the
    # observed inputs at the replicate's second-step parameters
    phi_b = phi_proxy(dataset.m - dataset.l, dataset.s_l, step2_b.beta_0, step2_b.beta_l, step1_b.delta_lm)
    mstar_b, valid_b, _ = omega_proxy(
        dataset, step2_b.beta_0, step2_b.beta_l, step2_b.beta_m, step1_b.theta, phi_b,
        which=opts.proxy,
    )
    keep = valid_b[prev]
    if np.sum(keep) < 4 + dataset.x.shape[1]:
        raise ValueError("too few valid pairs in replicate third step")
    core = step3_core(
        ystar_b[keep], dataset.k[cur[keep]], dataset.k[prev[keep]],
        mstar_b[prev[keep]], dataset.x[prev[keep]],
        grad_tol=opts.grad_tol, max_iter=opts.max_iter,
    )
    px = dataset.x.shape[1]
    step3_b = Step3Result(
        beta_k=float(core.params[0]),
        beta_kk=float(core.params[1]),
        rho_omega_0=float(core.params[2]),
        rho_omega_1=float(core.params[3]),
        rho_omega_2=np.asarray(core.params[4:4 + px], dtype=float),
        objective=core.objective,
        converged=core.converged,
        proxy=opts.proxy,
        n_pairs=int(np.sum(keep)),
        n_dropped=int(np.sum(~keep)),
    )

    if opts.refine == "system":
        sys_b = system_refine(
            ds_b, step1_b, step2_b, step3_b, proxy=opts.proxy,
            instruments=opts.instruments, grad_tol=opts.grad_tol, max_iter=opts.max_iter,
        )
        return np.concatenate((
            [sys_b.beta_k, sys_b.beta_kk, sys_b.beta_l, sys_b.beta_m, sys_b.beta_0,
             step1_b.theta, sys_b.rho_phi_1], sys_b.rho_phi_2,
            [sys_b.rho_omega_0, sys_b.rho_omega_1], sys_b.rho_omega_2,
        ))
    return np.concatenate((
        [step3_b.beta_k, step3_b.beta_kk, step2_b.beta_l, step2_b.beta_m, step2_b.beta_0,
         step1_b.theta, step2_b.rho_phi_1], step2_b.rho_phi_2,
        [step3_b.rho_omega_0, step3_b.rho_omega_1], step3_b.rho_omega_2,
    ))


def parameter_names(dataset: PanelDataset) -> tuple[str, ...]:
    """Column labels for replicate parameter vectors."""
    return (
        "beta_k", "beta_kk", "beta_l", "beta_m", "beta_0", "theta", "rho_phi_1",
        *[f"rho_phi_2[{name}]" for name in dataset.z_names],
        "rho_omega_0", "rho_omega_1",
        *[f"rho_omega_2[{name}]" for name in dataset.x_names],
    )


def pack_parameters(params, laws) -> np.ndarray:
    """Point estimates stacked in the layout of :func:`parameter_names`."""
    return np.concatenate(
        (
            [params.beta_k, params.beta_kk, params.beta_l, params.beta_m, params.beta_0,
             params.theta, laws.rho_phi_1],
            np.asarray(laws.rho_phi_2, dtype=float).ravel(),
            [laws.rho_omega_0, laws.rho_omega_1],
            np.asarray(laws.rho_omega_2, dtype=float).ravel(),
        )
    )


def run_bootstrap(
    dataset: PanelDataset,
    estimate: TranslogEstimate,
    config: BootstrapConfig,
    options: EstimateOptions | None = None,
) -> BootstrapResult:
    """B replicates with per-replicate seeds spawned from the master seed.

    Failed replicates are recorded and skipped, never resampled; more
    than 20% failures flags the result unreliable.  Standard errors are
    sample standard deviations across successful replicates, intervals
    are equal-tailed percentile intervals at the configured levels.
    """
    config.validate()
    residuals = compute_residuals(dataset, estimate)
    names = parameter_names(dataset)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_reps)

    rows: list[np.ndarray] = []
    failures: list[str] = []
    for b, seq in enumerate(seeds):
        if config.weight_override is not None:
            w = np.full(dataset.n_firms, float(config.weight_override))
        else:
            w = mammen_weights(dataset.n_firms, seq)
        try:
            rows.append(bootstrap_replicate(dataset, estimate, residuals, w, options=options))
        except Exception as exc:  # noqa: BLE001 - replicate failure is an outcome, not a bug
            failures.append(f"replicate {b}: {exc}")
    if not rows:
        raise ValueError("all bootstrap replicates failed")

    draws = np.vstack(rows)
    warnings: list[str] = []
    unreliable = len(failures) > 0.2 * config.n_reps
    if unreliable:
        warnings.append(f"{len(failures)} of {config.n_reps} replicates failed; results unreliable")
    if draws.shape[0] < 2:
        warnings.append("single successful replicate; standard errors degenerate at zero")
        se = np.zeros(draws.shape[1])
    else:
        se = np.std(draws, axis=0, ddof=1)
    intervals = {}
    for level in config.levels:
        tail = 100.0 * (1.0 - level) / 2.0
        intervals[float(level)] = (
            np.percentile(draws, tail, axis=0),
            np.percentile(draws, 100.0 - tail, axis=0),
        )
    return BootstrapResult(
        draws=draws,
        names=names,
        standard_errors=se,
        intervals=intervals,
        n_reps=config.n_reps,
        n_failures=len(failures),
        failures=failures,
        unreliable=unreliable,
        warnings=warnings,
    )
