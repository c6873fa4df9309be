import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np
import yaml
from scipy.signal import lfilter

from intent_rrs.intent_rrs import (
    BadMagicError,
    DimensionOverflowError,
    GridFormatError,
    TruncatedGridError,
)
from intent_rrs.scenario.scenario import NetworkScenario

from . import settings

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299792458.0

_HEADER = struct.Struct("<8s3I")


@dataclass
class ChannelParams:
    """
    Parameters of the synthetic channel generator.

    Frequencies in GHz, bandwidth in MHz, powers in W, losses and
    standard deviations in dB, distances in m.
    """

    carrier_frequency: float = settings.carrier_frequency
    bandwidth: float = settings.bandwidth
    total_tx_power: float = settings.total_tx_power
    rb_count: int = settings.rb_count
    tti: float = settings.tti
    noise_figure: float = settings.noise_figure
    thermal_noise_density: float = settings.thermal_noise_density
    pathloss_intercept_los: float = settings.pathloss_intercept_los
    pathloss_intercept_nlos: float = settings.pathloss_intercept_nlos
    pathloss_exponent_los: float = settings.pathloss_exponent_los
    pathloss_exponent_nlos: float = settings.pathloss_exponent_nlos
    pathloss_exponent_far: float = settings.pathloss_exponent_far
    bs_height: float = settings.bs_height
    ue_height: float = settings.ue_height
    environment_height: float = settings.environment_height
    shadowing_sigma_los: float = settings.shadowing_sigma_los
    shadowing_sigma_nlos: float = settings.shadowing_sigma_nlos
    shadowing_decorrelation_los: float = settings.shadowing_decorrelation_los
    shadowing_decorrelation_distance: float = (
        settings.shadowing_decorrelation_distance
    )
    rician_k_los: float = settings.rician_k_los
    frequency_correlation: float = settings.frequency_correlation
    doppler_shape: float = settings.doppler_shape
    shadowing: bool = True
    fading: bool = True

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.total_tx_power <= 0:
            raise ValueError("transmission power must be > 0")
        if self.rb_count <= 0:
            raise ValueError("rb_count must be > 0")
        if not 0 <= self.frequency_correlation < 1:
            raise ValueError("frequency_correlation must be in [0, 1)")
        if not self.ue_height > self.environment_height:
            raise ValueError("UE height must exceed the environment height")
        if not self.bs_height > self.ue_height:
            raise ValueError("base station must be above the UEs")

    @property
    def rb_bandwidth(self) -> float:
        """Bandwidth of one RB in Hz."""
        return self.bandwidth * 1e6 / self.rb_count

    @property
    def breakpoint_distance(self) -> float:
        """LOS breakpoint distance in m."""
        h_bs = self.bs_height - self.environment_height
        h_ut = self.ue_height - self.environment_height
        return 4 * h_bs * h_ut * self.carrier_frequency * 1e9 / SPEED_OF_LIGHT

    @property
    def tx_power_per_rb(self) -> float:
        return self.total_tx_power / self.rb_count

    @property
    def noise_power(self) -> float:
        """Noise power over one RB in W."""
        dbm = (
            self.thermal_noise_density
            + 10 * math.log10(self.rb_bandwidth)
            + self.noise_figure
        )
        return 10 ** ((dbm - 30) / 10)


@dataclass
class UETrajectory:
    """
    Positions of one UE, one (x, y) row in metres per step, with the base
    station at the origin.
    """

    positions: np.ndarray
    speed: float
    turn_probability: float = settings.turn_probability

    @property
    def distances(self) -> np.ndarray:
        return np.hypot(self.positions[:, 0], self.positions[:, 1])


@dataclass
class SEGrid:
    """
    Spectral efficiency in bits/s/Hz indexed ``[step][ue][rb]``.

    Attributes
    ----------
    values : np.ndarray
        float32 array of shape (step_count, ue_count, rb_count).
    metadata : dict
        Provenance written to the sidecar file (scenario_id, seed, params).
    """

    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("SE grid must be [step][ue][rb]")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("SE values must be finite and non-negative")

    @property
    def step_count(self) -> int:
        return self.values.shape[0]

    @property
    def ue_count(self) -> int:
        return self.values.shape[1]

    @property
    def rb_count(self) -> int:
        return self.values.shape[2]


def snr(
    alpha: Union[float, np.ndarray],
    tx_power_per_rb: float,
    h: Union[complex, np.ndarray],
    noise_power: float,
) -> Union[float, np.ndarray]:
    """
    SNR perceived by a UE on one RB, ``alpha * p * |h|^2 / noise``.

    Parameters
    ----------
    alpha : Union[float, np.ndarray]
        Linear large-scale gain (path loss and shadowing).
    tx_power_per_rb : float
        Transmit power on the RB in W.
    h : Union[complex, np.ndarray]
        Small-scale fading coefficient.
    noise_power : float
        Noise power over the RB in W, > 0.
    """
    if noise_power <= 0:
        raise ValueError("noise power must be > 0")
    return alpha * tx_power_per_rb * np.abs(h) ** 2 / noise_power


def spectral_efficiency(
    snr_linear: Union[float, np.ndarray],
) -> Union[float, np.ndarray]:
    """Shannon spectral efficiency ``log2(1 + snr)`` in bits/s/Hz."""
    return np.log2(1 + snr_linear)


def _heading_is_valid(
    position: np.ndarray, heading: float, step: float
) -> bool:
    nxt = position + step * np.array([math.cos(heading), math.sin(heading)])
    r = math.hypot(nxt[0], nxt[1])
    return settings.min_distance <= r <= settings.max_distance


def simulate_mobility(
    scenario: NetworkScenario,
    rng: np.random.Generator,
    steps: int = settings.step_count,
    tti: float = settings.tti,
    turn_interval: int = settings.turn_interval,
    turn_probability: float = settings.turn_probability,
) -> list[UETrajectory]:
    """
    Simulate the positions of every UE of a scenario.

    Each UE starts uniformly in the annulus between `settings.min_distance`
    and `settings.max_distance` around the base station and moves in a
    straight line at its slice's speed. Every `turn_interval` steps it
    redraws its heading with probability `turn_probability`; it also
    redraws whenever the next move would leave the annulus.

    Parameters
    ----------
    scenario : NetworkScenario
        Scenario whose UEs move, in global UE order.
    rng : np.random.Generator
        Source of randomness.
    steps : int
        Number of steps, >= 1.

    Returns
    -------
    list[UETrajectory]
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")

    r_min, r_max = settings.min_distance, settings.max_distance
    trajectories = []
    for spec in scenario.ue_specs():
        radius = math.sqrt(rng.uniform(r_min**2, r_max**2))
        angle = rng.uniform(0, 2 * math.pi)
        heading = rng.uniform(0, 2 * math.pi)
        step = spec.speed / 3.6 * tti

        positions = np.empty((steps, 2))
        positions[0] = (radius * math.cos(angle), radius * math.sin(angle))
        for t in range(1, steps):
            current = positions[t - 1]
            if step == 0:
                positions[t] = current
                continue
            if t % turn_interval == 0 and rng.random() < turn_probability:
                heading = rng.uniform(0, 2 * math.pi)
            tries = 0
            while not _heading_is_valid(current, heading, step):
                heading = rng.uniform(0, 2 * math.pi)
                tries += 1
                if tries > 100:
                    break
            if tries > 100:
                positions[t] = current
                continue
            positions[t] = current + step * np.array(
                [math.cos(heading), math.sin(heading)]
            )
        trajectories.append(
            UETrajectory(
                positions=positions,
                speed=spec.speed,
                turn_probability=turn_probability,
            )
        )
    return trajectories


def los_probability(distance: np.ndarray) -> np.ndarray:
    """Distance-dependent LOS probability of an urban macro cell."""
    d = np.maximum(distance, 1e-9)
    p = 18 / d + np.exp(-d / 63) * (1 - 18 / d)
    return np.where(d <= 18, 1.0, p)


def path_loss(
    distance: np.ndarray, los: np.ndarray, params: ChannelParams
) -> np.ndarray:
    """
    Urban macro-cell path loss in dB.

    Parameters
    ----------
    distance : np.ndarray
        Ground distance to the base station in m.
    los : np.ndarray
        LOS state per entry.
    params : ChannelParams
        Intercepts, exponents and antenna heights.

    Returns
    -------
    np.ndarray
        Dual-slope LOS loss over the 3D distance; NLOS entries take the
        larger of the LOS and the NLOS loss.
    """
    fc_term = 20 * np.log10(params.carrier_frequency)
    d = np.maximum(distance, 1.0)
    dh = params.bs_height - params.ue_height
    d3 = np.hypot(d, dh)
    d_bp = params.breakpoint_distance
    near = (
        params.pathloss_intercept_los
        + 10 * params.pathloss_exponent_los * np.log10(d3)
        + fc_term
    )
    far = (
        params.pathloss_intercept_los
        + 10 * params.pathloss_exponent_far * np.log10(d3)
        + fc_term
        - 9 * np.log10(d_bp**2 + dh**2)
    )
    pl_los = np.where(d <= d_bp, near, far)
    pl_nlos = (
        params.pathloss_intercept_nlos
        + 10 * params.pathloss_exponent_nlos * np.log10(d3)
        + fc_term
        - 0.6 * (params.ue_height - 1.5)
    )
    return np.where(los, pl_los, np.maximum(pl_los, pl_nlos))


def _ar1(z: np.ndarray, rho: float, axis: int) -> np.ndarray:
    """Unit-variance AR(1) process driven by the unit-variance noise `z`."""
    if rho >= 1 - 1e-12:
        first = np.take(z, [0], axis=axis)
        return np.broadcast_to(first, z.shape).copy()
    scale = math.sqrt(1 - rho**2)
    x = z.copy()
    index = [slice(None)] * z.ndim
    index[axis] = 0
    x[tuple(index)] = x[tuple(index)] / scale
    return lfilter([scale], [1, -rho], x, axis=axis)


def generate_se_grid(
    trajectories: list[UETrajectory],
    params: ChannelParams,
    rng: np.random.Generator,
) -> SEGrid:
    """
    Generate the spectral efficiency grid of a set of UE trajectories.

    Per UE, the LOS state is drawn once from the distance-dependent LOS
    probability at the start position. Large-scale gain combines the
    dual-slope path loss with log-normal shadowing correlated over the
    travelled distance. Small-scale fading is Rician (LOS) or Rayleigh
    (NLOS), correlated across RBs and, through the Doppler shift of the UE,
    across steps.

    Parameters
    ----------
    trajectories : list[UETrajectory]
        UE trajectories with equal step counts.
    params : ChannelParams
        Channel parameters.
    rng : np.random.Generator
        Source of randomness.

    Returns
    -------
    SEGrid
    """
    if not trajectories:
        raise ValueError("no trajectories")

    steps = trajectories[0].positions.shape[0]
    n_rb = params.rb_count
    wavelength = SPEED_OF_LIGHT / (params.carrier_frequency * 1e9)
    k_lin = 10 ** (params.rician_k_los / 10)
    noise = params.noise_power
    p_rb = params.tx_power_per_rb

    values = np.empty((steps, len(trajectories), n_rb), dtype=np.float32)
    for u, trajectory in enumerate(trajectories):
        distances = trajectory.distances
        los = rng.random() < los_probability(distances[:1])[0]
        pl = path_loss(distances, np.full(steps, los), params)

        speed = trajectory.speed / 3.6
        if params.shadowing:
            sigma = (
                params.shadowing_sigma_los
                if los
                else params.shadowing_sigma_nlos
            )
            decorrelation = (
                params.shadowing_decorrelation_los
                if los
                else params.shadowing_decorrelation_distance
            )
            rho_s = math.exp(-speed * params.tti / decorrelation)
            shadow = sigma * _ar1(rng.standard_normal(steps), rho_s, axis=0)
        else:
            shadow = np.zeros(steps)
        alpha = 10 ** (-(pl + shadow) / 10)

        if params.fading:
            z = (
                rng.standard_normal((steps, n_rb))
                + 1j * rng.standard_normal((steps, n_rb))
            ) / math.sqrt(2)
            z = _ar1(z, params.frequency_correlation, axis=1)
            doppler = speed / wavelength
            rho_t = math.exp(
                -2 * math.pi * doppler * params.tti * params.doppler_shape
            )
            scatter = _ar1(z, rho_t, axis=0)
            if los:
                phase = rng.uniform(0, 2 * math.pi)
                h = math.sqrt(k_lin / (k_lin + 1)) * np.exp(
                    1j * phase
                ) + math.sqrt(1 / (k_lin + 1)) * scatter
            else:
                h = scatter
        else:
            h = np.ones((steps, n_rb))

        gain = snr(alpha[:, None], p_rb, h, noise)
        values[:, u, :] = spectral_efficiency(gain)

    return SEGrid(values=values)


def save_se_grid(
    grid: SEGrid, path: str, metadata: Union[None, dict] = None
) -> None:
    """
    Save an SE grid to a trace file.

    The file holds the magic bytes ``SEGRID01``, three little-endian uint32
    counts (UEs, RBs, steps) and little-endian float32 values ordered
    ``[step][ue][rb]``. Metadata, if any, goes to a YAML sidecar
    ``<path>.yaml``.

    Parameters
    ----------
    grid : SEGrid
        Grid to save.
    path : str
        Destination file.
    metadata : Union[None, dict]
        Sidecar content; defaults to `grid.metadata`.
    """
    header = _HEADER.pack(
        settings.grid_magic, grid.ue_count, grid.rb_count, grid.step_count
    )
    payload = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    with open(path, "wb") as dst:
        dst.write(header)
        dst.write(payload)

    metadata = grid.metadata if metadata is None else metadata
    if metadata:
        with open(path + ".yaml", "w") as dst:
            yaml.safe_dump(metadata, dst, sort_keys=False)


def load_se_grid(path: str) -> SEGrid:
    """
    Load an SE grid from a trace file written by `save_se_grid()` or by an
    external channel generator using the same layout.
    """
    with open(path, "rb") as src:
        raw = src.read()

    if len(raw) < len(settings.grid_magic):
        raise TruncatedGridError(f"{path}: truncated header")
    if raw[: len(settings.grid_magic)] != settings.grid_magic:
        raise BadMagicError(f"{path}: bad magic")
    if len(raw) < _HEADER.size:
        raise TruncatedGridError(f"{path}: truncated header")

    _, n_ue, n_rb, n_steps = _HEADER.unpack_from(raw)
    cells = n_ue * n_rb * n_steps
    if cells > settings.grid_max_cells:
        raise DimensionOverflowError(
            f"{path}: {n_ue}x{n_rb}x{n_steps} exceeds the grid size limit"
        )
    payload = raw[_HEADER.size :]
    if len(payload) < 4 * cells:
        raise TruncatedGridError(
            f"{path}: expected {4 * cells} payload bytes, got {len(payload)}"
        )
    if len(payload) > 4 * cells:
        raise GridFormatError(f"{path}: trailing bytes after payload")

    values = (
        np.frombuffer(payload, dtype="<f4")
        .reshape(n_steps, n_ue, n_rb)
        .astype(np.float32)
    )
    metadata = {}
    if os.path.exists(path + ".yaml"):
        with open(path + ".yaml") as src:
            metadata = yaml.safe_load(src) or {}
    try:
        return SEGrid(values=values, metadata=metadata)
    except ValueError as e:
        raise GridFormatError(f"{path}: {e}") from e


def params_metadata(params: ChannelParams) -> dict:
    return asdict(params)
