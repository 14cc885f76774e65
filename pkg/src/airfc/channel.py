"""Topology and random channel generation for the multi-hop relay network.

The network is a transmitter (``bs``), ``L`` groups of single-antenna relays,
and a receiver (``rx``) inside a square deployment area. Large-scale gains
follow the 3GPP street-canyon pathloss tables; small-scale fading is i.i.d.
Rayleigh on every link except the direct bs-rx link, which is Rician.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidArgument, ResourceLimit, UnsupportedModel

SPEED_OF_LIGHT = 299_792_458.0

# Distances below this are clamped before the log10 terms.
MIN_DISTANCE_M = 1.0

# Hard cap on the total relay count of one topology.
MAX_TOTAL_RELAYS = 10_000

LINK_KINDS = ("bs-relay", "relay-relay", "relay-rx", "bs-rx")
LOS_STATES = ("los", "nlos", "probabilistic")


@dataclass(frozen=True)
class PathlossTable:
    """Coefficient table for the supported pathloss models.

    Every entry is (intercept_db, distance_slope, frequency_slope) for a
    ``A + B*log10(d_3d_m) + C*log10(f_ghz)`` term. The street-canyon LoS model
    is dual slope; its far branch additionally subtracts
    ``breakpoint_correction * log10(d_bp^2 + dh^2)``.
    """

    umi_los_near: tuple[float, float, float] = (32.4, 21.0, 20.0)
    umi_los_far: tuple[float, float, float] = (32.4, 40.0, 20.0)
    umi_breakpoint_correction: float = 9.5
    umi_nlos: tuple[float, float, float] = (22.4, 35.3, 21.3)
    umi_nlos_height_slope: float = 0.3  # dB per meter of (rx_height - 1.5)
    sidelink_los: tuple[float, float, float] = (38.77, 16.7, 18.2)
    sidelink_nlos: tuple[float, float, float] = (36.85, 30.0, 18.9)
    # Effective environment height subtracted from both endpoints in the
    # breakpoint distance.
    effective_env_height: float = 1.0


DEFAULT_PATHLOSS_TABLE = PathlossTable()

PATHLOSS_MODELS = ("umi-street-canyon", "sidelink-street-canyon")


@dataclass(frozen=True)
class LinkParams:
    """Static propagation parameters of one link class."""

    link_kind: str
    pathloss_model: str = "umi-street-canyon"
    los_state: str = "nlos"
    rician_kappa: float = 1.0  # linear power ratio, bs-rx only
    tx_height: float = 5.0  # meters
    rx_height: float = 1.5  # meters

    def __post_init__(self):
        if self.link_kind not in LINK_KINDS:
            raise InvalidArgument(f"unknown link kind {self.link_kind!r}")
        if self.pathloss_model not in PATHLOSS_MODELS:
            raise UnsupportedModel(f"unknown pathloss model {self.pathloss_model!r}")
        if self.los_state not in LOS_STATES:
            raise InvalidArgument(f"unknown los state {self.los_state!r}")
        if not (self.rician_kappa >= 0.0):  # rejects NaN too
            raise InvalidArgument("rician_kappa must be >= 0")


def default_links(rician_kappa: float = 1.0) -> dict[str, LinkParams]:
    """Default link classes: forced NLoS everywhere except relay-relay.

    Relay-to-relay links resolve LoS per pair from the street-canyon LoS
    probability curve; the direct bs-rx link is Rician with the given
    ``rician_kappa`` (linear).
    """
    return {
        "bs-relay": LinkParams("bs-relay", "umi-street-canyon", "nlos",
                               tx_height=5.0, rx_height=1.5),
        "relay-relay": LinkParams("relay-relay", "sidelink-street-canyon",
                                  "probabilistic", tx_height=1.5, rx_height=1.5),
        "relay-rx": LinkParams("relay-rx", "umi-street-canyon", "nlos",
                               tx_height=1.5, rx_height=5.0),
        "bs-rx": LinkParams("bs-rx", "umi-street-canyon", "nlos",
                            rician_kappa=rician_kappa, tx_height=5.0, rx_height=5.0),
    }


@dataclass(frozen=True)
class Topology:
    """Node placement for one network realization.

    ``relay_positions[l]`` is a (K_l, 3) array of xyz coordinates in meters
    for relay group l; groups are ordered from the transmitter to the
    receiver.
    """

    bs_position: np.ndarray
    rx_position: np.ndarray
    relay_positions: tuple[np.ndarray, ...]
    area_length: float

    @property
    def n_groups(self) -> int:
        return len(self.relay_positions)

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return tuple(p.shape[0] for p in self.relay_positions)

    def validate(self) -> None:
        if self.area_length <= 0:
            raise InvalidArgument("area_length must be positive")
        for name, pos in (("bs_position", self.bs_position),
                          ("rx_position", self.rx_position)):
            if np.asarray(pos).shape != (3,):
                raise DimensionMismatch(f"{name} must have shape (3,)")
        for idx, pos in enumerate(self.relay_positions):
            arr = np.asarray(pos)
            if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
                raise DimensionMismatch(
                    f"relay group {idx} positions must have shape (K, 3)")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"relay group {idx} has non-finite positions")


def generate_topology(d_max: float, n_groups: int, relays_per_group: int,
                      heights: tuple[float, float, float] = (5.0, 5.0, 1.5),
                      rng: np.random.Generator | int | None = 0) -> Topology:
    """Place the endpoints and relay groups inside a d_max x d_max area.

    The transmitter sits at (0, d_max/2), the receiver at (d_max, d_max/2),
    and group l is dropped uniformly inside the vertical slab
    x in [(l-1) d_max / L, l d_max / L], so consecutive groups progress from
    the transmitter toward the receiver. ``heights`` is (bs, rx, relay) in
    meters.
    """
    if d_max <= 0:
        raise InvalidArgument("d_max must be positive")
    if n_groups < 1 or relays_per_group < 1:
        raise InvalidArgument("n_groups and relays_per_group must be >= 1")
    if n_groups * relays_per_group > MAX_TOTAL_RELAYS:
        raise ResourceLimit(
            f"{n_groups * relays_per_group} relays exceeds the "
            f"{MAX_TOTAL_RELAYS} limit")
    h_bs, h_rx, h_relay = heights
    if min(heights) < 0:
        raise InvalidArgument("heights must be non-negative")
    rng = np.random.default_rng(rng)

    slab = d_max / n_groups
    groups = []
    for l in range(n_groups):
        x = rng.uniform(l * slab, (l + 1) * slab, size=relays_per_group)
        y = rng.uniform(0.0, d_max, size=relays_per_group)
        z = np.full(relays_per_group, h_relay)
        groups.append(np.column_stack([x, y, z]))

    topo = Topology(
        bs_position=np.array([0.0, d_max / 2.0, h_bs]),
        rx_position=np.array([d_max, d_max / 2.0, h_rx]),
        relay_positions=tuple(groups),
        area_length=float(d_max),
    )
    topo.validate()
    return topo


def _dual_slope_db(d_3d, f_ghz: float, near: tuple[float, float, float],
                   far: tuple[float, float, float], correction: float,
                   tx_height: float, rx_height: float, env_height: float):
    """Two-slope LoS pathloss, monotonized as max(near, far).

    The raw far branch dips slightly below the near branch at the breakpoint
    whenever the breakpoint correction is positive; taking the pointwise max
    keeps the curve continuous and non-decreasing while matching the near
    branch below the crossing distance and the far branch above it.
    """
    log_d = np.log10(d_3d)
    log_f = np.log10(f_ghz)
    pl_near = near[0] + near[1] * log_d + near[2] * log_f

    # Breakpoint from the effective antenna heights; clamp both factors so
    # low-mounted nodes never yield a degenerate breakpoint.
    h_tx = max(tx_height - env_height, 0.05)
    h_rx = max(rx_height - env_height, 0.05)
    d_bp = max(4.0 * h_tx * h_rx * (f_ghz * 1e9) / SPEED_OF_LIGHT, MIN_DISTANCE_M)
    dh_sq = (tx_height - rx_height) ** 2
    pl_far = (far[0] + far[1] * log_d + far[2] * log_f
              - correction * np.log10(d_bp ** 2 + dh_sq))
    return np.maximum(pl_near, pl_far)


def pathloss_db(link: LinkParams, distance_m, f_c_hz: float,
                table: PathlossTable = DEFAULT_PATHLOSS_TABLE):
    """Large-scale pathloss in dB at 3D distance ``distance_m``.

    ``link.los_state`` must be resolved to "los" or "nlos"; probabilistic
    links are resolved per node pair during channel generation. Distances
    below 1 m are clamped to 1 m. Accepts scalar or array distances.
    """
    if link.los_state == "probabilistic":
        raise InvalidArgument(
            "resolve the LoS state before evaluating the pathloss")
    if f_c_hz <= 0:
        raise InvalidArgument("carrier frequency must be positive")
    d = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M)
    if np.any(~np.isfinite(d)) or np.any(np.asarray(distance_m) < 0):
        raise InvalidArgument("distances must be finite and non-negative")
    f_ghz = f_c_hz / 1e9

    if link.pathloss_model == "umi-street-canyon":
        los = _dual_slope_db(d, f_ghz, table.umi_los_near, table.umi_los_far,
                             table.umi_breakpoint_correction,
                             link.tx_height, link.rx_height,
                             table.effective_env_height)
        if link.los_state == "los":
            out = los
        else:
            a, b, c = table.umi_nlos
            raw = (a + b * np.log10(d) + c * np.log10(f_ghz)
                   - table.umi_nlos_height_slope * (link.rx_height - 1.5))
            out = np.maximum(los, raw)
    elif link.pathloss_model == "sidelink-street-canyon":
        a, b, c = table.sidelink_los
        los = a + b * np.log10(d) + c * np.log10(f_ghz)
        if link.los_state == "los":
            out = los
        else:
            a, b, c = table.sidelink_nlos
            out = np.maximum(los, a + b * np.log10(d) + c * np.log10(f_ghz))
    else:  # pragma: no cover - rejected in LinkParams already
        raise UnsupportedModel(f"unknown pathloss model {link.pathloss_model!r}")
    if np.isscalar(distance_m):
        return float(out)
    return out


def los_probability(distance_2d_m):
    """Street-canyon LoS probability at horizontal distance d (meters).

    Equals 1 up to 18 m and decays as (18/d)(1 - exp(-d/36)) + exp(-d/36)
    beyond. Accepts scalar or array distances.
    """
    d = np.asarray(distance_2d_m, dtype=float)
    if np.any(d < 0) or np.any(~np.isfinite(d)):
        raise InvalidArgument("distances must be finite and non-negative")
    d_safe = np.maximum(d, 1e-12)
    tail = (18.0 / d_safe) * (1.0 - np.exp(-d_safe / 36.0)) + np.exp(-d_safe / 36.0)
    out = np.where(d <= 18.0, 1.0, np.minimum(tail, 1.0))
    if np.isscalar(distance_2d_m):
        return float(out)
    return out


def _cn_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. CN(0, 1) entries with unit per-entry second moment."""
    return (rng.standard_normal((rows, cols))
            + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)


def draw_small_scale(link: LinkParams, rows: int, cols: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Small-scale fading matrix with unit per-entry average power.

    Rich-scattering links are i.i.d. CN(0, 1). The direct bs-rx link is
    Rician: sqrt(k/(1+k)) deterministic all-ones plus sqrt(1/(1+k)) CN(0, 1)
    scatter, so every entry keeps E|h|^2 = 1. An infinite kappa returns the
    deterministic part exactly.
    """
    if rows < 1 or cols < 1:
        raise InvalidArgument("matrix dimensions must be >= 1")
    if link.link_kind != "bs-rx":
        return _cn_matrix(rows, cols, rng)
    kappa = link.rician_kappa
    if np.isinf(kappa):
        return np.ones((rows, cols), dtype=complex)
    los_part = np.sqrt(kappa / (1.0 + kappa)) * np.ones((rows, cols))
    scatter = np.sqrt(1.0 / (1.0 + kappa)) * _cn_matrix(rows, cols, rng)
    return los_part + scatter


@dataclass
class ChannelSet:
    """One realization of every channel matrix in the chain.

    ``h_hops[0]`` maps the transmit array into group 1, ``h_hops[l]`` maps
    group l into group l+1, and ``h_hops[-1]`` maps the last group into the
    receive array. ``h_direct`` is the bs-rx matrix, or None when the direct
    path is disabled.
    """

    h_hops: list[np.ndarray]
    h_direct: np.ndarray | None
    carrier_frequency: float
    realization_seed: int | None = None

    @property
    def n_tx(self) -> int:
        return self.h_hops[0].shape[1]

    @property
    def n_rx(self) -> int:
        return self.h_hops[-1].shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.h_hops) - 1

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return tuple(h.shape[0] for h in self.h_hops[:-1])

    def validate(self) -> None:
        if len(self.h_hops) < 2:
            raise DimensionMismatch("need at least one relay group (two hops)")
        for l in range(len(self.h_hops) - 1):
            rows = self.h_hops[l].shape[0]
            cols_next = self.h_hops[l + 1].shape[1]
            if rows != cols_next:
                raise DimensionMismatch(
                    f"hop {l} outputs {rows} nodes but hop {l + 1} "
                    f"expects {cols_next}")
        for l, h in enumerate(self.h_hops):
            if not np.all(np.isfinite(h)):
                raise InvalidArgument(f"hop {l} matrix has non-finite entries")
        if self.h_direct is not None:
            if self.h_direct.shape != (self.n_rx, self.n_tx):
                raise DimensionMismatch(
                    f"direct matrix shape {self.h_direct.shape} does not match "
                    f"({self.n_rx}, {self.n_tx})")
            if not np.all(np.isfinite(self.h_direct)):
                raise InvalidArgument("direct matrix has non-finite entries")
        if self.carrier_frequency <= 0:
            raise InvalidArgument("carrier frequency must be positive")


def _link_matrix(tx_positions: np.ndarray, rx_positions: np.ndarray,
                 link: LinkParams, f_c_hz: float, rng: np.random.Generator,
                 table: PathlossTable) -> np.ndarray:
    """One (n_rx_nodes, n_tx_nodes) channel matrix with resolved LoS states."""
    tx = np.atleast_2d(tx_positions)
    rx = np.atleast_2d(rx_positions)
    diff = rx[:, None, :] - tx[None, :, :]
    d_3d = np.linalg.norm(diff, axis=2)
    if link.los_state == "probabilistic":
        d_2d = np.linalg.norm(diff[:, :, :2], axis=2)
        los_mask = rng.uniform(size=d_3d.shape) < los_probability(d_2d)
    elif link.los_state == "los":
        los_mask = np.ones(d_3d.shape, dtype=bool)
    else:
        los_mask = np.zeros(d_3d.shape, dtype=bool)

    pl = np.where(
        los_mask,
        pathloss_db(dataclasses.replace(link, los_state="los"), d_3d, f_c_hz, table),
        pathloss_db(dataclasses.replace(link, los_state="nlos"), d_3d, f_c_hz, table),
    )
    amplitude = 10.0 ** (-pl / 20.0)
    fading = draw_small_scale(link, d_3d.shape[0], d_3d.shape[1], rng)
    return amplitude * fading


def generate_channel_set(topology: Topology, links: dict[str, LinkParams],
                         n_tx: int, n_rx: int, f_c_hz: float,
                         direct_link: bool, rng: np.random.Generator | int | None,
                         table: PathlossTable = DEFAULT_PATHLOSS_TABLE,
                         realization_seed: int | None = None) -> ChannelSet:
    """Draw every channel matrix for one network realization.

    Each link gets its own child stream of ``rng`` (one per hop plus one for
    the direct path, which is always drawn last), so toggling ``direct_link``
    never perturbs the hop channels of the same seed. Antennas are co-located
    at their endpoint positions; rows and columns of one link therefore share
    the large-scale gain of that node pair.
    """
    topology.validate()
    if n_tx < 1 or n_rx < 1:
        raise InvalidArgument("antenna counts must be >= 1")
    for kind in LINK_KINDS:
        if kind not in links:
            raise InvalidArgument(f"links table is missing {kind!r}")
    if sum(topology.group_sizes) > MAX_TOTAL_RELAYS:
        raise ResourceLimit("topology exceeds the relay-count limit")
    rng = np.random.default_rng(rng)
    n_groups = topology.n_groups
    streams = rng.spawn(n_groups + 2)

    def heights(kind: str, tx_z: float, rx_z: float) -> LinkParams:
        return dataclasses.replace(links[kind], tx_height=tx_z, rx_height=rx_z)

    bs = topology.bs_position
    rx_pos = topology.rx_position
    bs_points = np.repeat(bs[None, :], n_tx, axis=0)
    rx_points = np.repeat(rx_pos[None, :], n_rx, axis=0)

    h_hops = []
    # Transmitter into the first group.
    first = topology.relay_positions[0]
    h_hops.append(_link_matrix(bs_points, first,
                               heights("bs-relay", bs[2], first[0, 2]),
                               f_c_hz, streams[0], table))
    # Group l into group l+1.
    for l in range(n_groups - 1):
        src = topology.relay_positions[l]
        dst = topology.relay_positions[l + 1]
        h_hops.append(_link_matrix(src, dst,
                                   heights("relay-relay", src[0, 2], dst[0, 2]),
                                   f_c_hz, streams[l + 1], table))
    # Last group into the receiver.
    last = topology.relay_positions[-1]
    h_hops.append(_link_matrix(last, rx_points,
                               heights("relay-rx", last[0, 2], rx_pos[2]),
                               f_c_hz, streams[n_groups], table))

    h_direct = None
    if direct_link:
        h_direct = _link_matrix(bs_points, rx_points,
                                heights("bs-rx", bs[2], rx_pos[2]),
                                f_c_hz, streams[n_groups + 1], table)

    chan = ChannelSet(h_hops=h_hops, h_direct=h_direct,
                      carrier_frequency=float(f_c_hz),
                      realization_seed=realization_seed)
    chan.validate()
    return chan
