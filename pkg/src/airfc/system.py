"""Forward model of the relayed matrix computation.

A transmit precoder F1 maps an N-dimensional input onto the transmit array,
the signal crosses L amplify-and-forward relay groups (diagonal complex gain
per group, additive input noise per relay), and a receive combiner F2 maps
the array output back to N dimensions. The end-to-end linear map is

    F2 (H_direct + H_{L+1} A_L H_L ... A_1 H_1) F1

and the design goal is making it match a target weight matrix W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet
from .errors import DimensionMismatch, InvalidArgument

BOLTZMANN_NOISE_PSD_DBM_HZ = -174.0


def thermal_noise_variance(bandwidth_hz: float,
                           psd_dbm_hz: float = BOLTZMANN_NOISE_PSD_DBM_HZ,
                           noise_figure_db: float = 0.0) -> float:
    """Thermal noise power in watts over the given bandwidth."""
    if bandwidth_hz <= 0:
        raise InvalidArgument("bandwidth must be positive")
    return 10.0 ** ((psd_dbm_hz + noise_figure_db - 30.0) / 10.0) * bandwidth_hz


@dataclass(frozen=True)
class NoiseModel:
    """Per-group relay input noise variances and receiver noise variance.

    All variances are total complex noise powers in watts (real and
    imaginary parts each carry half).
    """

    sigma_u_sq: tuple[float, ...]
    sigma_c_sq: float

    @classmethod
    def uniform(cls, variance: float, n_groups: int) -> "NoiseModel":
        return cls(sigma_u_sq=(float(variance),) * n_groups,
                   sigma_c_sq=float(variance))

    @classmethod
    def thermal(cls, bandwidth_hz: float, n_groups: int,
                noise_figure_db: float = 0.0) -> "NoiseModel":
        return cls.uniform(
            thermal_noise_variance(bandwidth_hz, noise_figure_db=noise_figure_db),
            n_groups)

    def __post_init__(self):
        if self.sigma_c_sq < 0 or any(s < 0 for s in self.sigma_u_sq):
            raise InvalidArgument("noise variances must be non-negative")


@dataclass(frozen=True)
class PowerBudget:
    """Transmit power budget and per-relay transmit power caps (watts)."""

    p_max_tx: float
    p_relay: tuple[np.ndarray, ...]

    @classmethod
    def uniform(cls, p_max_tx: float, p_relay_w: float,
                group_sizes: tuple[int, ...]) -> "PowerBudget":
        return cls(p_max_tx=float(p_max_tx),
                   p_relay=tuple(np.full(k, float(p_relay_w))
                                 for k in group_sizes))

    def __post_init__(self):
        if self.p_max_tx <= 0:
            raise InvalidArgument("p_max_tx must be positive")
        for g, caps in enumerate(self.p_relay):
            if np.any(np.asarray(caps) <= 0):
                raise InvalidArgument(
                    f"relay power caps in group {g} must be positive")


@dataclass
class AirFcParams:
    """Designable parameters: precoder, combiner, per-relay complex gains."""

    f1: np.ndarray
    f2: np.ndarray
    gains: list[np.ndarray]

    @property
    def n_streams(self) -> int:
        return self.f1.shape[1]

    def copy(self) -> "AirFcParams":
        return AirFcParams(self.f1.copy(), self.f2.copy(),
                           [a.copy() for a in self.gains])

    def validate(self, channels: ChannelSet | None = None) -> None:
        if self.f1.ndim != 2 or self.f2.ndim != 2:
            raise DimensionMismatch("f1 and f2 must be matrices")
        if self.f1.shape[1] != self.f2.shape[0]:
            raise DimensionMismatch(
                f"f1 maps {self.f1.shape[1]} streams but f2 outputs "
                f"{self.f2.shape[0]}")
        if not np.all(np.isfinite(self.f1)) or not np.all(np.isfinite(self.f2)):
            raise InvalidArgument("precoder or combiner is non-finite")
        for g, a in enumerate(self.gains):
            if not np.all(np.isfinite(a)):
                raise InvalidArgument(f"group {g} gains are non-finite")
        if channels is not None:
            if self.f1.shape[0] != channels.n_tx:
                raise DimensionMismatch(
                    "f1 rows must equal the transmit array size")
            if self.f2.shape[1] != channels.n_rx:
                raise DimensionMismatch(
                    "f2 columns must equal the receive array size")
            _check_gains(channels, self.gains)


def _check_gains(channels: ChannelSet, gains) -> None:
    if len(gains) != channels.n_groups:
        raise DimensionMismatch(
            f"{channels.n_groups} relay groups need {channels.n_groups} "
            f"gain vectors, got {len(gains)}")
    for g, (a, k) in enumerate(zip(gains, channels.group_sizes)):
        if np.asarray(a).shape != (k,):
            raise DimensionMismatch(
                f"group {g} has {k} relays but gain shape {np.asarray(a).shape}")


@dataclass(frozen=True)
class ObjectiveValue:
    """Split objective: squared imitation error plus amplified-noise power."""

    imitation_error: float
    noise_penalty: float

    @property
    def total(self) -> float:
        return self.imitation_error + self.noise_penalty


def effective_channel(channels: ChannelSet, gains) -> np.ndarray:
    """End-to-end array-to-array matrix: direct path plus the relayed chain."""
    _check_gains(channels, gains)
    chain = channels.h_hops[0]
    for a, hop in zip(gains, channels.h_hops[1:]):
        chain = hop @ (np.asarray(a)[:, None] * chain)
    if channels.h_direct is not None:
        return channels.h_direct + chain
    return chain


def transfer_matrix(channels: ChannelSet, gains, group_index: int) -> np.ndarray:
    """Map from noise injected at one relay group's input to the receive array.

    Noise entering group ``group_index`` is scaled by that group's gains and
    then rides the remaining hops, so the matrix is
    H_{L+1} A_L ... H_{g+2} A_{g+1} for 0-based g.
    """
    _check_gains(channels, gains)
    n_groups = channels.n_groups
    if not 0 <= group_index < n_groups:
        raise InvalidArgument(f"group_index {group_index} out of range")
    t = np.diag(np.asarray(gains[group_index])).astype(complex)
    for l in range(group_index + 1, n_groups):
        t = np.asarray(gains[l])[:, None] * (channels.h_hops[l] @ t)
    return channels.h_hops[n_groups] @ t


def noise_covariance(channels: ChannelSet, gains,
                     noise: NoiseModel) -> np.ndarray:
    """Covariance of the aggregate noise at the receive array.

    Receiver noise is white; each relay group's input noise arrives through
    its transfer matrix, giving R = sigma_c^2 I + sum_g sigma_u^2[g] T_g T_g^H.
    """
    if len(noise.sigma_u_sq) != channels.n_groups:
        raise DimensionMismatch("noise model group count mismatch")
    n_rx = channels.n_rx
    r = noise.sigma_c_sq * np.eye(n_rx, dtype=complex)
    for g in range(channels.n_groups):
        if noise.sigma_u_sq[g] == 0.0:
            continue
        t = transfer_matrix(channels, gains, g)
        r += noise.sigma_u_sq[g] * (t @ t.conj().T)
    return r


def relay_input_power(channels: ChannelSet, gains, f1: np.ndarray,
                      noise: NoiseModel, group_index: int) -> np.ndarray:
    """Per-relay input power surrogate for one group (watts).

    Assumes unit-power uncorrelated input streams: entry k is the squared
    norm of row k of the forward map reaching group ``group_index`` (through
    the precoder and all earlier gains) plus that group's own input noise
    variance. Upstream relay noise is deliberately not part of the surrogate;
    the power constraint uses this same quantity.
    """
    if not 0 <= group_index < channels.n_groups:
        raise InvalidArgument(f"group_index {group_index} out of range")
    prefix = channels.h_hops[0] @ f1
    for l in range(group_index):
        prefix = channels.h_hops[l + 1] @ (np.asarray(gains[l])[:, None] * prefix)
    signal = np.sum(np.abs(prefix) ** 2, axis=1)
    return signal + noise.sigma_u_sq[group_index]


def max_power_ratio(params: AirFcParams, channels: ChannelSet,
                    noise: NoiseModel, budget: PowerBudget) -> float:
    """Largest consumed/allowed power ratio across all constraints.

    Covers the precoder Frobenius budget and every per-relay cap
    |a|^2 p_in <= P; a return value <= 1 means the point is feasible.
    """
    ratios = [float(np.sum(np.abs(params.f1) ** 2)) / budget.p_max_tx]
    for g in range(channels.n_groups):
        p_in = relay_input_power(channels, params.gains, params.f1, noise, g)
        used = np.abs(params.gains[g]) ** 2 * p_in
        ratios.append(float(np.max(used / budget.p_relay[g])))
    return max(ratios)


def chain_rank_bound(n_tx: int, n_rx: int, group_sizes, hop_ranks) -> int:
    """Upper bound on the rank of the relayed (chain-only) end-to-end map.

    The chain is a product through every hop matrix and every diagonal gain
    matrix, so its rank cannot exceed any array size, any group size, or any
    hop matrix rank.
    """
    values = [int(n_tx), int(n_rx)]
    values += [int(k) for k in group_sizes]
    values += [int(r) for r in hop_ranks]
    if any(v < 0 for v in values):
        raise InvalidArgument("dimensions and ranks must be non-negative")
    return min(values)


def objective(params: AirFcParams, channels: ChannelSet, w: np.ndarray,
              noise: NoiseModel) -> ObjectiveValue:
    """Imitation objective: ||F2 H_eff F1 - W||_F^2 + tr(F2 R F2^H)."""
    h_eff = effective_channel(channels, params.gains)
    fitted = params.f2 @ h_eff @ params.f1
    if fitted.shape != w.shape:
        raise DimensionMismatch(
            f"target shape {w.shape} does not match the end-to-end map "
            f"{fitted.shape}")
    err = float(np.linalg.norm(fitted - w, "fro") ** 2)
    r = noise_covariance(channels, params.gains, noise)
    penalty = float(np.real(np.trace(params.f2 @ r @ params.f2.conj().T)))
    return ObjectiveValue(imitation_error=err, noise_penalty=penalty)


def _cn_samples(shape: tuple[int, ...], variance: float,
                rng: np.random.Generator) -> np.ndarray:
    if variance == 0.0:
        return np.zeros(shape, dtype=complex)
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_forward(params: AirFcParams, channels: ChannelSet,
                     noise: NoiseModel, x: np.ndarray,
                     rng: np.random.Generator | int | None) -> np.ndarray:
    """Run inputs through the physical chain with fresh noise draws.

    ``x`` is one input vector (N,) or a batch (N, S). Noise is injected at
    every relay group input and at the receiver, so with zero noise variances
    the output equals F2 H_eff F1 x exactly. The aggregate received noise is
    built by propagation, not by sampling its covariance, which makes the
    analytic covariance independently checkable against this function.
    """
    params.validate(channels)
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=complex)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    if x.shape[0] != params.f1.shape[1]:
        raise DimensionMismatch(
            f"input dimension {x.shape[0]} does not match the "
            f"{params.f1.shape[1]}-stream precoder")
    n_samples = x.shape[1]

    s = params.f1 @ x
    signal = channels.h_hops[0] @ s
    for g in range(channels.n_groups):
        signal = signal + _cn_samples(signal.shape, noise.sigma_u_sq[g], rng)
        signal = params.gains[g][:, None] * signal
        signal = channels.h_hops[g + 1] @ signal
    if channels.h_direct is not None:
        signal = signal + channels.h_direct @ s
    signal = signal + _cn_samples((channels.n_rx, n_samples),
                                  noise.sigma_c_sq, rng)
    out = params.f2 @ signal
    return out[:, 0] if single else out
