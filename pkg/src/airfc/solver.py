"""Alternating optimization of the precoder, combiner, and relay gains.

Each block has a closed-form minimizer: the precoder is a power-constrained
ridge solution (multiplier found by bisection), the combiner is a
noise-penalized least-squares solve, and each relay group's gain vector comes
from Khatri-Rao normal equations solved without materializing the Khatri-Rao
matrix, followed by a per-relay magnitude projection onto its power cap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet
from .errors import (DimensionMismatch, InvalidArgument, NumericalGuardWarning,
                     SolverDiverged)
from .system import (AirFcParams, NoiseModel, ObjectiveValue, PowerBudget,
                     effective_channel, max_power_ratio, noise_covariance,
                     objective)

REGULARIZER_MODES = ("noise-aware", "fixed-epsilon", "off")

# Relative eigenvalue cutoff below which a direction is treated as null space.
_RANK_CUTOFF = 1e-14

# Condition-number estimate above which the gain solve adds a trace ridge.
_GAIN_COND_LIMIT = 1e12

# Consecutive stalled sweeps required before declaring convergence. The first
# sweeps after a small-gain start can leave the objective flat while the gain
# ramp has not yet reached the combiner, so a single stalled sweep is not
# proof of a stationary point.
_STALL_SWEEPS = 2


@dataclass(frozen=True)
class AoConfig:
    """Knobs of the alternating solver."""

    max_iters: int = 100
    rel_tolerance: float = 1e-6
    bisection_tolerance: float = 1e-8
    bisection_max_steps: int = 100
    init_gain_rho: float = 1e-2
    regularizer_mode: str = "noise-aware"
    fixed_epsilon: float = 1e-9

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if self.rel_tolerance <= 0 or self.bisection_tolerance <= 0:
            raise InvalidArgument("tolerances must be positive")
        if self.bisection_max_steps < 1:
            raise InvalidArgument("bisection_max_steps must be >= 1")
        if self.init_gain_rho <= 0:
            raise InvalidArgument("init_gain_rho must be positive")
        if self.regularizer_mode not in REGULARIZER_MODES:
            raise InvalidArgument(
                f"regularizer_mode must be one of {REGULARIZER_MODES}")
        if self.fixed_epsilon < 0:
            raise InvalidArgument("fixed_epsilon must be >= 0")


@dataclass
class AoTrace:
    """Per-iteration record of the solver run.

    Entry 0 is the initialization point; entry t is the state after full
    sweep t. ``notes`` collects numerical-guard events raised inside the
    block updates.
    """

    objectives: list[ObjectiveValue] = field(default_factory=list)
    max_violations: list[float] = field(default_factory=list)
    iterations: int = 0
    termination: str = "unset"
    notes: list[str] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [o.total for o in self.objectives]


@dataclass(frozen=True)
class BlockFold:
    """Factors around one relay group in the end-to-end map.

    ``u`` is the combiner times every hop after the group (N x K_l), ``v``
    every hop before it times the precoder (K_l x N), so the group's
    contribution to the realized map is u diag(a) v.
    """

    u: np.ndarray
    v: np.ndarray


def update_f1(xi: np.ndarray, w: np.ndarray, p_max: float,
              config: AoConfig | None = None) -> tuple[np.ndarray, float]:
    """Minimize ||xi F1 - w||_F^2 subject to ||F1||_F^2 <= p_max.

    The minimizer is the ridge solution F1 = (xi^H xi + lam I)^{-1} xi^H w
    with lam = 0 when the unconstrained (minimum-norm) solution already fits
    the budget, otherwise the unique lam > 0 placing the norm on the budget,
    found by bisection. Returns (F1, lam); F1 is always feasible.
    """
    config = config or AoConfig()
    if p_max <= 0:
        raise InvalidArgument("p_max must be positive")
    if xi.shape[0] != w.shape[0]:
        raise DimensionMismatch("xi and w must have the same number of rows")
    n_in = xi.shape[1]

    gram = xi.conj().T @ xi
    evals, basis = np.linalg.eigh(gram)
    evals = np.maximum(evals, 0.0)
    cutoff = evals[-1] * _RANK_CUTOFF
    keep = evals > cutoff
    if not np.any(keep):
        if np.linalg.norm(w) > 0:
            warnings.warn("design matrix is numerically zero; returning a "
                          "zero precoder", NumericalGuardWarning)
        return np.zeros((n_in, w.shape[1]), dtype=complex), 0.0

    # Rotated right-hand side; rows outside the row space are numerical dust
    # and are masked so lam=0 reproduces the pseudoinverse solution.
    z = basis.conj().T @ (xi.conj().T @ w)
    z[~keep, :] = 0.0
    row_power = np.sum(np.abs(z) ** 2, axis=1)

    def norm_sq(lam: float) -> float:
        denom = np.where(keep, evals + lam, 1.0)
        return float(np.sum(row_power[keep] / denom[keep] ** 2))

    def build(lam: float) -> np.ndarray:
        denom = np.where(keep, evals + lam, 1.0)
        scaled = np.where(keep[:, None], z / denom[:, None], 0.0)
        return basis @ scaled

    if norm_sq(0.0) <= p_max:
        f1, lam = build(0.0), 0.0
    else:
        lo = 0.0
        hi = max(float(np.real(np.trace(gram))) / max(gram.shape[0], 1), 1e-300)
        while norm_sq(hi) > p_max:
            hi *= 4.0
        for _ in range(config.bisection_max_steps):
            mid = 0.5 * (lo + hi)
            ns = norm_sq(mid)
            if ns > p_max:
                lo = mid
            else:
                hi = mid
                if p_max - ns <= config.bisection_tolerance * p_max:
                    break
        lam = hi
        f1 = build(lam)

    # Hard feasibility guard against bisection slack.
    nrm_sq = float(np.sum(np.abs(f1) ** 2))
    if nrm_sq > p_max:
        f1 = f1 * np.sqrt(p_max / nrm_sq)
    return f1, lam


def update_f2(u: np.ndarray, r_n: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Minimize ||F2 u - w||_F^2 + tr(F2 r_n F2^H) in closed form.

    The unique minimizer is w u^H (u u^H + r_n)^{-1}. A singular system
    (possible only with zero receiver noise and rank-deficient u) is solved
    with a small trace-scaled ridge and flagged with a warning.
    """
    if u.shape[1] != w.shape[1]:
        raise DimensionMismatch("u and w must have the same column count")
    a = u @ u.conj().T + r_n
    a = 0.5 * (a + a.conj().T)
    evals = np.linalg.eigvalsh(a)
    if evals[-1] <= 0.0:
        if np.linalg.norm(w) > 0:
            warnings.warn("combining system is numerically zero; returning a "
                          "zero combiner", NumericalGuardWarning)
        return np.zeros((w.shape[0], u.shape[0]), dtype=complex)
    if evals[0] <= evals[-1] * _RANK_CUTOFF:
        eps = 1e-12 * float(np.real(np.trace(a)))
        a = a + eps * np.eye(a.shape[0])
        warnings.warn("singular combining system; solved with a "
                      f"{eps:.3e} ridge", NumericalGuardWarning)
    rhs = w @ u.conj().T
    # a is Hermitian, so F2 a = rhs transposes into a F2^H = rhs^H.
    return np.linalg.solve(a, rhs.conj().T).conj().T


def fold_chain(channels: ChannelSet, params: AirFcParams,
               group_index: int) -> BlockFold:
    """Factor the relayed map around one group's diagonal gains.

    With the chain written as u diag(a_g) v, ``u`` collects the combiner and
    every hop and gain after group ``group_index`` while ``v`` collects every
    hop and gain before it and the precoder.
    """
    n_groups = channels.n_groups
    if not 0 <= group_index < n_groups:
        raise InvalidArgument(f"group_index {group_index} out of range")
    v = channels.h_hops[0] @ params.f1
    for l in range(group_index):
        v = channels.h_hops[l + 1] @ (params.gains[l][:, None] * v)
    u = params.f2 @ channels.h_hops[n_groups]
    for l in range(n_groups - 1, group_index, -1):
        u = (u * params.gains[l][None, :]) @ channels.h_hops[l]
    return BlockFold(u=u, v=v)


def residual_target(w: np.ndarray, realized: np.ndarray, fold: BlockFold,
                    gains: np.ndarray) -> np.ndarray:
    """Residual the group should explain: w minus every other contribution.

    ``realized`` is the full current end-to-end map; subtracting it and
    adding back the group's own term u diag(gains) v leaves the part of w
    this group's update is allowed to fit.
    """
    own = fold.u @ (gains[:, None] * fold.v)
    return w - (realized - own)


def noise_aware_regularizer(u: np.ndarray, sigma_u_sq: float) -> np.ndarray:
    """Diagonal penalty discouraging gains with strong downstream reach.

    Entry k is sigma_u_sq times the squared norm of column k of the suffix
    factor u, i.e. the receiver-side power a unit noise sample at relay k
    would pick up. Returned as the diagonal vector.
    """
    if sigma_u_sq < 0:
        raise InvalidArgument("sigma_u_sq must be >= 0")
    return sigma_u_sq * np.sum(np.abs(u) ** 2, axis=0)


def solve_relay_gains(fold: BlockFold, e_target: np.ndarray,
                      d_diag: np.ndarray | None = None) -> np.ndarray:
    """Minimize ||u diag(a) v - e||_F^2 + a^H diag(d) a over the gain vector.

    Writing the misfit through the Khatri-Rao matrix B = v^T (col-wise kron) u
    gives normal equations (B^H B + diag(d)) a = B^H vec(e). B^H B collapses
    to conj(v v^H) * (u^H u) entrywise and B^H vec(e) to diag(u^H e v^H), so
    neither B nor vec(e) is ever materialized. A conditioning estimate above
    1e12 triggers a flagged trace-scaled ridge.
    """
    u, v = fold.u, fold.v
    k = u.shape[1]
    if v.shape[0] != k:
        raise DimensionMismatch("fold factors disagree on the group size")
    gram = (v @ v.conj().T).conj() * (u.conj().T @ u)
    eta = np.einsum("ik,ij,kj->k", u.conj(), e_target, v.conj())
    if d_diag is not None:
        gram = gram + np.diag(np.asarray(d_diag, dtype=float))
    gram = 0.5 * (gram + gram.conj().T)

    evals = np.linalg.eigvalsh(gram)
    if evals[-1] <= 0.0:
        return np.zeros(k, dtype=complex)
    if evals[-1] / max(evals[0], 1e-300) > _GAIN_COND_LIMIT:
        ridge = 1e-10 * float(np.real(np.trace(gram)))
        gram = gram + ridge * np.eye(k)
        warnings.warn(f"ill-conditioned gain system; added a {ridge:.3e} "
                      "ridge", NumericalGuardWarning)
    return np.linalg.solve(gram, eta)


def project_gains(gains: np.ndarray, p_in: np.ndarray,
                  p_budget: np.ndarray) -> np.ndarray:
    """Clip each gain magnitude so |a_k|^2 p_in_k <= p_budget_k, keeping phase."""
    p_in = np.asarray(p_in, dtype=float)
    p_budget = np.asarray(p_budget, dtype=float)
    if np.any(p_in <= 0):
        raise InvalidArgument("p_in entries must be positive")
    cap = np.sqrt(p_budget / p_in)
    mag = np.abs(gains)
    scale = np.where(mag > cap, cap / np.maximum(mag, 1e-300), 1.0)
    return gains * scale


def _regularizer(config: AoConfig, u: np.ndarray,
                 sigma_u_sq: float) -> np.ndarray | None:
    if config.regularizer_mode == "off":
        return None
    if config.regularizer_mode == "fixed-epsilon":
        return np.full(u.shape[1], config.fixed_epsilon)
    return noise_aware_regularizer(u, sigma_u_sq)


def _initial_params(channels: ChannelSet, n_streams: int, noise: NoiseModel,
                    budget: PowerBudget, config: AoConfig) -> AirFcParams:
    """Feasible start: scaled identity precoder/combiner, small uniform gains.

    The identity precoder is scaled down when it would exceed the transmit
    budget. Gains start at rho * ones per group, with rho shrunk greedily
    (group by group, since each group's input power depends on the earlier
    ones) so every relay starts strictly feasible.
    """
    n_tx, n_rx = channels.n_tx, channels.n_rx
    f1 = np.eye(n_tx, n_streams, dtype=complex)
    norm_sq = float(np.sum(np.abs(f1) ** 2))
    if norm_sq > budget.p_max_tx:
        f1 *= np.sqrt(budget.p_max_tx / norm_sq)
    f2 = np.eye(n_streams, n_rx, dtype=complex)

    gains = []
    v = channels.h_hops[0] @ f1
    for g in range(channels.n_groups):
        p_in = np.sum(np.abs(v) ** 2, axis=1) + noise.sigma_u_sq[g]
        with np.errstate(divide="ignore"):
            rho = min(config.init_gain_rho,
                      float(np.min(np.sqrt(budget.p_relay[g] / p_in))))
        a = np.full(channels.group_sizes[g], rho, dtype=complex)
        gains.append(a)
        if g + 1 < channels.n_groups:
            v = channels.h_hops[g + 1] @ (a[:, None] * v)
    return AirFcParams(f1=f1, f2=f2, gains=gains)


def run_ao(channels: ChannelSet, w: np.ndarray, noise: NoiseModel,
           budget: PowerBudget, config: AoConfig | None = None
           ) -> tuple[AirFcParams, AoTrace]:
    """Alternate the three block updates until the objective stalls.

    Per sweep: rebuild the effective channel, update the precoder (bisection
    on the power multiplier), update the combiner, then walk the relay groups
    front to back solving and projecting each gain vector. Suffix factors are
    cached once per sweep (they only involve not-yet-updated groups) and the
    prefix factor is advanced incrementally with each freshly updated group.

    Every block update is monotone-safeguarded: the candidate is kept only if
    it does not worsen that block's objective, otherwise the incumbent stays.
    In exact arithmetic the closed-form candidates always win, so the guard
    only engages near convergence, where the normal-equation solves amplify
    roundoff quadratically with the conditioning and would otherwise make the
    trace bounce at the solve-accuracy floor instead of decreasing.

    Returns the final parameters and the full trace. Raises SolverDiverged,
    with the partial trace attached, if the objective turns non-finite.
    """
    config = config or AoConfig()
    w = np.asarray(w, dtype=complex)
    if w.ndim != 2:
        raise DimensionMismatch("w must be a matrix")
    if len(budget.p_relay) != channels.n_groups:
        raise DimensionMismatch("budget group count mismatch")
    if len(noise.sigma_u_sq) != channels.n_groups:
        raise DimensionMismatch("noise model group count mismatch")

    n_streams = w.shape[0]
    if w.shape[1] != n_streams:
        raise DimensionMismatch("w must be square")
    params = _initial_params(channels, n_streams, noise, budget, config)
    trace = AoTrace()

    def record(tag: str, caught: list[warnings.WarningMessage]) -> None:
        for item in caught:
            trace.notes.append(f"{tag}: {item.message}")

    def log_state() -> ObjectiveValue:
        obj = objective(params, channels, w, noise)
        trace.objectives.append(obj)
        trace.max_violations.append(
            max_power_ratio(params, channels, noise, budget))
        return obj

    obj = log_state()
    n_groups = channels.n_groups
    hops = channels.h_hops
    stalled = 0

    def fit_sq(lhs: np.ndarray, f1: np.ndarray) -> float:
        return float(np.linalg.norm(lhs @ f1 - w, "fro") ** 2)

    for iteration in range(1, config.max_iters + 1):
        prev_total = obj.total
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NumericalGuardWarning)

            h_eff = effective_channel(channels, params.gains)
            xi = params.f2 @ h_eff
            cand_f1, _ = update_f1(xi, w, budget.p_max_tx, config)
            if fit_sq(xi, cand_f1) <= fit_sq(xi, params.f1):
                params.f1 = cand_f1

            u = h_eff @ params.f1
            r_n = noise_covariance(channels, params.gains, noise)
            cand_f2 = update_f2(u, r_n, w)

            def combiner_cost(f2: np.ndarray) -> float:
                penalty = np.real(np.trace(f2 @ r_n @ f2.conj().T))
                return float(np.linalg.norm(f2 @ u - w, "fro") ** 2 + penalty)

            if combiner_cost(cand_f2) <= combiner_cost(params.f2):
                params.f2 = cand_f2

            # Suffix factors per group, valid for the whole front-to-back
            # sweep because they only involve groups not yet updated.
            suffix = [None] * n_groups
            suffix[n_groups - 1] = params.f2 @ hops[n_groups]
            for g in range(n_groups - 2, -1, -1):
                suffix[g] = ((suffix[g + 1] * params.gains[g + 1][None, :])
                             @ hops[g + 1])

            base = np.zeros((n_streams, n_streams), dtype=complex)
            if channels.h_direct is not None:
                base = params.f2 @ channels.h_direct @ params.f1

            v = hops[0] @ params.f1
            for g in range(n_groups):
                fold = BlockFold(u=suffix[g], v=v)
                realized = base + fold.u @ (params.gains[g][:, None] * fold.v)
                e_target = residual_target(w, realized, fold, params.gains[g])
                d_diag = _regularizer(config, fold.u, noise.sigma_u_sq[g])
                a = solve_relay_gains(fold, e_target, d_diag)
                p_in = np.sum(np.abs(v) ** 2, axis=1) + noise.sigma_u_sq[g]
                cand = project_gains(a, p_in, budget.p_relay[g])
                # Earlier groups changed p_in, so the incumbent is re-projected
                # before the comparison to keep both candidates feasible.
                kept = project_gains(params.gains[g], p_in, budget.p_relay[g])

                def gain_cost(a_vec: np.ndarray) -> float:
                    misfit = np.linalg.norm(
                        fold.u @ (a_vec[:, None] * fold.v) - e_target,
                        "fro") ** 2
                    if d_diag is not None:
                        misfit = misfit + np.sum(d_diag * np.abs(a_vec) ** 2)
                    return float(misfit)

                params.gains[g] = (cand if gain_cost(cand) <= gain_cost(kept)
                                   else kept)
                if g + 1 < n_groups:
                    v = hops[g + 1] @ (params.gains[g][:, None] * v)

        record(f"iter {iteration}", caught)
        obj = log_state()
        trace.iterations = iteration
        if not np.isfinite(obj.total):
            trace.termination = "diverged"
            raise SolverDiverged(
                f"objective became non-finite at iteration {iteration}",
                trace=trace)
        if abs(prev_total - obj.total) <= config.rel_tolerance * max(
                prev_total, 1e-300):
            stalled += 1
            if stalled >= _STALL_SWEEPS:
                trace.termination = "tolerance"
                return params, trace
        else:
            stalled = 0

    trace.termination = "max_iters"
    return params, trace
