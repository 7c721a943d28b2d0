"""Deterministic sensor simulator for the instrumented bladder.

A point-dipole magnet rides on the bladder top; five single-axis field
sensors sit in a plus layout on the base plane and feed an analog chain
(rail clamp, bias removal, gain, first-order low-pass) into a 10-bit ADC.
An off-centre IR rangefinder reports dimensionless counts generated by
inverting the complementary range calibration, with distance-dependent
noise and probabilistic occlusion corruption at large lateral deflections.

All randomness comes from the config seed; identical (series, config)
inputs produce bit-identical datasets.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .ircal import ComplementModel, DEFAULT_COMPLEMENT, model_from_dict, model_to_dict
from .trajectories import Pose, TimedPoseSeries
from .validation import require

MU0_OVER_4PI = 1e-7  # T*m/A
DATASET_FORMAT_VERSION = "1"

DATASET_CSV_HEADER = [
    "t_s", "x_mm", "y_mm", "z_mm", "tilt_y_deg",
    "he0", "he1", "he2", "he3", "he4", "ir_counts",
]


class InfeasibleGeometryError(ValueError):
    """No magnet moment satisfies the saturation sizing criterion."""


@dataclass(frozen=True)
class IrNoiseConfig:
    sigma_near: float = 8.0          # counts, close range
    sigma_far: float = 80.0          # counts, beyond the reliable range
    near_far_threshold_mm: float = 18.0


@dataclass(frozen=True)
class OcclusionConfig:
    """Wall-buckle corruption of the rangefinder at large lateral deflection.

    The trigger metric is the lateral deflection magnitude of the bladder
    top plus a directional term that penalises deflection toward the side
    the rangefinder sits on, which reproduces the +/- direction asymmetry
    of an off-centre rangefinder. Beyond the threshold the corruption
    probability ramps linearly; corrupt readings report a uniformly drawn
    fraction of the true distance (a spuriously close reflection).
    """

    lat_threshold_mm: float = 3.0
    prob_ramp_per_mm: float = 0.15
    prob_max: float = 0.9
    directional_gain: float = 0.5
    corrupt_frac_lo: float = 0.2
    corrupt_frac_hi: float = 0.7


@dataclass(frozen=True)
class SimConfig:
    sensor_positions: tuple = ((0.0, 0.0), (6.0, 0.0), (-6.0, 0.0), (0.0, 6.0), (0.0, -6.0))
    sensor_axis: tuple = (0.0, 0.0, 1.0)
    magnet_rest_height_mm: float = 30.0
    magnet_moment: float = 0.05          # A*m^2, along the bladder-top normal
    sensitivity_v_per_t: float = 25.0    # 2.5 mV per gauss
    bias_v: float = 2.5
    gain: float = 22.0
    lp_cutoff_hz: float = 100.0
    adc_bits: int = 10
    adc_rate_hz: float = 2000.0
    rails: tuple = (0.0, 5.0)
    he_noise_sigma_v: float = 0.003      # at the sensor output, before gain
    ir_model: ComplementModel = DEFAULT_COMPLEMENT
    ir_noise: IrNoiseConfig = field(default_factory=IrNoiseConfig)
    ir_offset_mm: tuple = (5.0, 0.0)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    seed: int = 0

    @property
    def full_scale(self):
        return 2 ** self.adc_bits - 1

    def validate(self, prefix="sim."):
        """Invariant checks; returns a list of diagnostics, empty when OK."""
        out = []
        if self.gain <= 0:
            out.append(f"{prefix}gain: must be > 0, got {self.gain}")
        if self.adc_bits < 1:
            out.append(f"{prefix}adc_bits: must be >= 1, got {self.adc_bits}")
        if not self.rails[0] < self.rails[1]:
            out.append(f"{prefix}rails: must satisfy rails[0] < rails[1], got {self.rails}")
        if self.adc_rate_hz <= 0:
            out.append(f"{prefix}adc_rate_hz: must be > 0, got {self.adc_rate_hz}")
        if self.lp_cutoff_hz <= 0:
            out.append(f"{prefix}lp_cutoff_hz: must be > 0, got {self.lp_cutoff_hz}")
        if len(self.sensor_positions) != 5:
            out.append(f"{prefix}sensor_positions: expected 5 sensors, got {len(self.sensor_positions)}")
        if len(set(map(tuple, self.sensor_positions))) != len(self.sensor_positions):
            out.append(f"{prefix}sensor_positions: positions must be distinct")
        if self.he_noise_sigma_v < 0:
            out.append(f"{prefix}he_noise_sigma_v: must be >= 0")
        if not self.ir_model.lo < self.ir_model.hi:
            out.append(f"{prefix}ir_model: blend_lo must be < blend_hi")
        if self.ir_noise.sigma_near < 0 or self.ir_noise.sigma_far < 0:
            out.append(f"{prefix}ir_noise: sigmas must be >= 0")
        return out

    def to_dict(self):
        return {
            "sensor_positions": [list(p) for p in self.sensor_positions],
            "sensor_axis": list(self.sensor_axis),
            "magnet_rest_height_mm": self.magnet_rest_height_mm,
            "magnet_moment": self.magnet_moment,
            "sensitivity_v_per_t": self.sensitivity_v_per_t,
            "bias_v": self.bias_v,
            "gain": self.gain,
            "lp_cutoff_hz": self.lp_cutoff_hz,
            "adc_bits": self.adc_bits,
            "adc_rate_hz": self.adc_rate_hz,
            "rails": list(self.rails),
            "he_noise_sigma_v": self.he_noise_sigma_v,
            "ir_model": model_to_dict(self.ir_model),
            "ir_noise": {
                "sigma_near": self.ir_noise.sigma_near,
                "sigma_far": self.ir_noise.sigma_far,
                "near_far_threshold_mm": self.ir_noise.near_far_threshold_mm,
            },
            "ir_offset_mm": list(self.ir_offset_mm),
            "occlusion": {
                "lat_threshold_mm": self.occlusion.lat_threshold_mm,
                "prob_ramp_per_mm": self.occlusion.prob_ramp_per_mm,
                "prob_max": self.occlusion.prob_max,
                "directional_gain": self.occlusion.directional_gain,
                "corrupt_frac_lo": self.occlusion.corrupt_frac_lo,
                "corrupt_frac_hi": self.occlusion.corrupt_frac_hi,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            sensor_positions=tuple(tuple(p) for p in d["sensor_positions"]),
            sensor_axis=tuple(d["sensor_axis"]),
            magnet_rest_height_mm=d["magnet_rest_height_mm"],
            magnet_moment=d["magnet_moment"],
            sensitivity_v_per_t=d["sensitivity_v_per_t"],
            bias_v=d["bias_v"],
            gain=d["gain"],
            lp_cutoff_hz=d["lp_cutoff_hz"],
            adc_bits=d["adc_bits"],
            adc_rate_hz=d["adc_rate_hz"],
            rails=tuple(d["rails"]),
            he_noise_sigma_v=d["he_noise_sigma_v"],
            ir_model=model_from_dict(d["ir_model"]),
            ir_noise=IrNoiseConfig(**d["ir_noise"]),
            ir_offset_mm=tuple(d["ir_offset_mm"]),
            occlusion=OcclusionConfig(**d["occlusion"]),
            seed=d["seed"],
        )


@dataclass(frozen=True)
class SensorFrame:
    """One ADC-rate sample: five field-sensor codes plus IR counts."""

    t: float
    he_codes: tuple
    ir_counts: float


@dataclass(eq=False)
class LabeledDataset:
    """Aligned sensor frames and ground-truth poses, plus the manifest
    needed to regenerate the data bit-identically."""

    t: np.ndarray          # (n,)
    he_codes: np.ndarray   # (n, 5) int
    ir_counts: np.ndarray  # (n,)
    truth: np.ndarray      # (n, 4) columns x, y, z, tilt_y
    manifest: dict

    def __len__(self):
        return self.t.shape[0]

    def frame(self, i):
        return SensorFrame(
            t=float(self.t[i]),
            he_codes=tuple(int(c) for c in self.he_codes[i]),
            ir_counts=float(self.ir_counts[i]),
        )

    def pose(self, i):
        x, y, z, tilt = self.truth[i]
        return Pose(float(x), float(y), float(z), float(tilt))

    def save(self, path_base):
        """Write `<base>.csv` and a `<base>.manifest.json` sidecar."""
        base = str(path_base)
        if base.endswith(".csv"):
            base = base[:-4]
        with open(base + ".csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(DATASET_CSV_HEADER)
            for i in range(len(self)):
                row = [repr(float(self.t[i]))]
                row += [repr(float(v)) for v in self.truth[i]]
                row += [str(int(c)) for c in self.he_codes[i]]
                row.append(repr(float(self.ir_counts[i])))
                writer.writerow(row)
        with open(base + ".manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return base + ".csv", base + ".manifest.json"

    @classmethod
    def load(cls, path_base):
        base = str(path_base)
        if base.endswith(".csv"):
            base = base[:-4]
        with open(base + ".csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            require(header == DATASET_CSV_HEADER,
                    f"unexpected dataset CSV header: {header}")
            rows = [r for r in reader if r]
        arr = np.array(rows, dtype=float)
        with open(base + ".manifest.json") as fh:
            manifest = json.load(fh)
        if manifest.get("version") != DATASET_FORMAT_VERSION:
            raise ValueError(f"unsupported dataset version {manifest.get('version')!r}")
        return cls(
            t=arr[:, 0],
            he_codes=arr[:, 5:10].astype(int),
            ir_counts=arr[:, 10],
            truth=arr[:, 1:5],
            manifest=manifest,
        )


def magnet_state(pose, cfg):
    """Magnet centre (mm) and moment vector (A*m^2) for a bladder-top pose.

    The magnet sits at rest height minus the compression depth; tilting the
    top rotates the moment about the y axis.
    """
    position = np.array([pose.x, pose.y, cfg.magnet_rest_height_mm - pose.z])
    theta = math.radians(pose.tilt_y)
    moment = cfg.magnet_moment * np.array([math.sin(theta), 0.0, math.cos(theta)])
    return position, moment


def dipole_field(magnet_position_mm, moment_vector, point_mm):
    """Point-dipole field (tesla) at `point_mm`.

    B = (mu0 / 4 pi) * (3 (m . rhat) rhat - m) / |r|^3 with r in metres.
    """
    r = (np.asarray(point_mm, dtype=float) - np.asarray(magnet_position_mm, dtype=float)) * 1e-3
    rn = np.linalg.norm(r)
    if rn == 0.0:
        raise ValueError("field point coincides with the magnet position")
    rhat = r / rn
    m = np.asarray(moment_vector, dtype=float)
    return MU0_OVER_4PI * (3.0 * np.dot(m, rhat) * rhat - m) / rn**3


def _axis_fields(positions_mm, moments, cfg):
    """Axis-projected field at each sensor for a batch of magnet states.

    positions_mm (n, 3), moments (n, 3) -> (n, 5) tesla.
    """
    sensors = np.array([[sx, sy, 0.0] for sx, sy in cfg.sensor_positions])
    axis = np.asarray(cfg.sensor_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    r = (sensors[None, :, :] - positions_mm[:, None, :]) * 1e-3  # (n, 5, 3)
    rn = np.linalg.norm(r, axis=2)
    if np.any(rn == 0.0):
        raise ValueError("a sensor coincides with the magnet position")
    rhat = r / rn[:, :, None]
    m_dot_rhat = np.einsum("nsj,nj->ns", rhat, moments)
    a_dot_rhat = rhat @ axis
    m_dot_a = moments @ axis
    return MU0_OVER_4PI * (3.0 * m_dot_rhat * a_dot_rhat - m_dot_a[:, None]) / rn**3


def sensor_voltage(b_axis, cfg):
    """Raw ratiometric output: bias plus sensitivity, clamped to the rails."""
    v = cfg.bias_v + cfg.sensitivity_v_per_t * np.asarray(b_axis, dtype=float)
    return np.clip(v, cfg.rails[0], cfg.rails[1])


def condition(v_raw, cfg):
    """Bias removal and gain, clamped to the amplifier rails."""
    v = cfg.gain * (np.asarray(v_raw, dtype=float) - cfg.bias_v)
    return np.clip(v, cfg.rails[0], cfg.rails[1])


def lp_alpha(cfg):
    dt = 1.0 / cfg.adc_rate_hz
    rc = 1.0 / (2.0 * math.pi * cfg.lp_cutoff_hz)
    return dt / (dt + rc)


class LowPass:
    """First-order exponential smoother, state fixed at the first sample so
    a static input produces no startup transient."""

    def __init__(self, alpha, state=None):
        require(0 < alpha <= 1, "alpha must be in (0, 1]")
        self.alpha = alpha
        self.state = state

    def step(self, x):
        if self.state is None:
            self.state = float(x)
        else:
            self.state += self.alpha * (float(x) - self.state)
        return self.state


def lowpass_series(x, alpha, axis=0):
    """Batch form of LowPass along `axis` (identical recursion)."""
    x = np.asarray(x, dtype=float)
    x0 = np.take(x, 0, axis=axis)
    zi = np.expand_dims((1.0 - alpha) * x0, axis=axis)
    y, _ = lfilter([alpha], [1.0, alpha - 1.0], x, axis=axis, zi=zi)
    return y


def analog_chain(b_axis_series, cfg):
    """Noise-free conditioning of an axis-field series into filter-output volts."""
    v_raw = sensor_voltage(b_axis_series, cfg)
    v_cond = condition(v_raw, cfg)
    return lowpass_series(v_cond, lp_alpha(cfg))


def adc(volts, cfg):
    """Round-half-up quantisation against the positive rail."""
    v = np.asarray(volts, dtype=float)
    code = np.floor(v / cfg.rails[1] * cfg.full_scale + 0.5)
    return np.clip(code, 0, cfg.full_scale).astype(int)


def ir_nominal_counts(distance_mm, cfg):
    """Noise-free counts: the range calibration evaluated in reverse."""
    return cfg.ir_model.invert(distance_mm)


def _ir_sigma(distance_mm, cfg):
    icfg = cfg.ir_noise
    d = np.asarray(distance_mm, dtype=float)
    return np.where(d <= icfg.near_far_threshold_mm, icfg.sigma_near, icfg.sigma_far)


def _occlusion_probability(x, y, cfg):
    ocfg = cfg.occlusion
    deflection = np.hypot(x, y)
    ox, oy = cfg.ir_offset_mm
    onorm = math.hypot(ox, oy)
    if onorm > 0:
        directional = (x * ox + y * oy) / onorm
    else:
        directional = np.zeros_like(deflection)
    effective = deflection + ocfg.directional_gain * directional
    excess = effective - ocfg.lat_threshold_mm
    return np.clip(excess * ocfg.prob_ramp_per_mm, 0.0, ocfg.prob_max)


def _ir_counts_batch(x, y, z, cfg, rng):
    """IR counts for pose arrays. Draw order: gaussian noise, occlusion
    trigger uniforms, corrupt-distance uniforms."""
    d = cfg.magnet_rest_height_mm - np.asarray(z, dtype=float)
    counts = ir_nominal_counts(d, cfg) + _ir_sigma(d, cfg) * rng.standard_normal(d.shape)
    p = _occlusion_probability(np.asarray(x, float), np.asarray(y, float), cfg)
    trigger = rng.random(d.shape)
    frac = rng.random(d.shape)
    ocfg = cfg.occlusion
    d_corrupt = (ocfg.corrupt_frac_lo + (ocfg.corrupt_frac_hi - ocfg.corrupt_frac_lo) * frac) * d
    corrupt = trigger < p
    return np.where(corrupt, ir_nominal_counts(d_corrupt, cfg), counts), corrupt


def ir_counts(pose, cfg, rng):
    """Single-sample IR reading with noise and occlusion corruption."""
    counts, _ = _ir_counts_batch(
        np.array([pose.x]), np.array([pose.y]), np.array([pose.z]), cfg, rng
    )
    return float(counts[0])


def simulate(series, cfg):
    """Run a dense pose series through the full sensing chain.

    Per sample: magnet state, dipole field at each sensor projected on the
    sensor axis, sensor-output noise, rail clamp, bias removal and gain,
    rail clamp, low-pass, ADC. IR counts are generated in parallel. The
    draw order (sensor noise block first, then the IR blocks) is fixed, so
    a given (series, config) pair is bit-reproducible.
    """
    require(isinstance(series, TimedPoseSeries), "simulate expects a TimedPoseSeries")
    require(len(series) > 0, "empty pose series")
    require(series.rate_hz == cfg.adc_rate_hz,
            f"series rate {series.rate_hz} != ADC rate {cfg.adc_rate_hz}")
    data = series.data
    n = len(series)
    tilt = np.radians(data[:, 3])
    positions = np.column_stack([
        data[:, 0], data[:, 1], cfg.magnet_rest_height_mm - data[:, 2]
    ])
    moments = cfg.magnet_moment * np.column_stack([
        np.sin(tilt), np.zeros(n), np.cos(tilt)
    ])
    b_axis = _axis_fields(positions, moments, cfg)

    rng = np.random.default_rng(cfg.seed)
    noise = cfg.he_noise_sigma_v * rng.standard_normal((n, 5))
    v_raw = np.clip(cfg.bias_v + cfg.sensitivity_v_per_t * b_axis + noise,
                    cfg.rails[0], cfg.rails[1])
    v_cond = condition(v_raw, cfg)
    v_filt = lowpass_series(v_cond, lp_alpha(cfg), axis=0)
    codes = adc(v_filt, cfg)

    counts, _ = _ir_counts_batch(data[:, 0], data[:, 1], data[:, 2], cfg, rng)

    manifest = {
        "version": DATASET_FORMAT_VERSION,
        "seed": cfg.seed,
        "trajectory": series.label,
        "rate_hz": series.rate_hz,
        "sim": cfg.to_dict(),
    }
    return LabeledDataset(
        t=series.t,
        he_codes=codes,
        ir_counts=counts,
        truth=data.copy(),
        manifest=manifest,
    )


def _conditioned_at_depth(m, depth, cfg):
    """Steady-state conditioned voltages of all sensors for a centred pose."""
    pos = np.array([[0.0, 0.0, cfg.magnet_rest_height_mm - depth]])
    mom = np.array([[0.0, 0.0, m]])
    b = _axis_fields(pos, mom, cfg)[0]
    return condition(sensor_voltage(b, cfg), cfg)


def _smallest_satisfying(pred, lo, hi, rel_tol):
    """Smallest argument in [lo, hi] where a monotone predicate turns true."""
    if pred(lo):
        return lo
    if not pred(hi):
        return None
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_moment(cfg, max_depth, *, eps_v=1e-9, m_min=1e-6, m_max=1.0,
                     rel_tol=1e-6, outer_margin=0.95):
    """Smallest magnet moment that saturates only the centre sensor.

    At full compression the sensor directly under the magnet must sit at
    the positive rail while every other sensor stays strictly within its
    operating range (above eps_v, below `outer_margin` of the rail). The
    search is bounded by `m_max`, a plausibility cap for a thin embedded
    magnet; geometries that need more are reported as infeasible.
    """
    require(0 <= max_depth <= cfg.magnet_rest_height_mm, "max_depth outside geometry")
    lateral = np.array([math.hypot(sx, sy) for sx, sy in cfg.sensor_positions])
    center = int(np.argmin(lateral))
    outer = [i for i in range(len(lateral)) if i != center]
    rail = cfg.rails[1]

    def sat_ok(m):
        return _conditioned_at_depth(m, max_depth, cfg)[center] >= rail - eps_v

    def floor_ok(m):
        v = _conditioned_at_depth(m, max_depth, cfg)
        return all(v[i] >= eps_v for i in outer)

    m_sat = _smallest_satisfying(sat_ok, m_min, m_max, rel_tol)
    m_floor = _smallest_satisfying(floor_ok, m_min, m_max, rel_tol)
    if m_sat is None or m_floor is None:
        raise InfeasibleGeometryError(
            f"no moment in [{m_min}, {m_max}] A*m^2 saturates the centre sensor "
            f"at depth {max_depth} mm with live outer sensors"
        )
    m_star = max(m_sat, m_floor)
    v = _conditioned_at_depth(m_star, max_depth, cfg)
    if any(v[i] > outer_margin * rail for i in outer):
        raise InfeasibleGeometryError(
            f"outer sensors exceed {outer_margin:.0%} of the rail at the smallest "
            f"saturating moment ({m_star:.6g} A*m^2) for depth {max_depth} mm"
        )
    return m_star
