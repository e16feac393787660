"""Synthetic HDsEMG with known spatial structure, shifts and reapplication gains.

Each motor unit fires a homogeneous Poisson train of biphasic pulses (first
derivative of a Gaussian). Its contribution to an electrode decays as
``exp(-r / decay_length)`` with ``r`` the planar distance from the unit to
the electrode in skin coordinates. Skin coordinates coincide with the array
frame of the initial placement.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .errors import InvalidConfigurationError
from .grid_geometry import CORNER_LABELS, GridLayout, ScanData, ShiftTransform
from .recording import RawRecording
from .stats import derive_seed

MUSCLES = ("GM", "TA", "ST", "TFL")
EXERCISES = ("ISO", "STS", "TUG")
DECAY_BY_MUSCLE = {"GM": 1.5, "TA": 2.0, "ST": 2.5, "TFL": 3.0}


def waveform_sigma_s(duration_ms):
    return duration_ms / 4.0 * 1e-3


def band_energy_fraction(duration_ms, lo_hz=20.0, hi_hz=450.0):
    """Fraction of the pulse energy inside ``[lo_hz, hi_hz]``.

    The energy spectrum of a Gaussian derivative is ``f^2 exp(-(2 pi f sigma)^2)``.
    """
    s = waveform_sigma_s(duration_ms)

    def energy(f):
        return f * f * math.exp(-((2 * math.pi * f * s) ** 2))

    top = 10.0 / (2 * math.pi * s)
    total = integrate.quad(energy, 0, top, limit=200)[0]
    inside = integrate.quad(energy, lo_hz, min(hi_hz, top), limit=200)[0]
    return inside / total


def biphasic_pulse(duration_ms, sample_rate):
    """Unit-peak Gaussian-derivative pulse sampled over +/- 4 sigma."""
    s = waveform_sigma_s(duration_ms)
    half = int(math.ceil(4 * s * sample_rate))
    t = np.arange(-half, half + 1) / sample_rate
    return -(t / s) * np.exp(0.5 - t * t / (2 * s * s))


@dataclass(frozen=True)
class MotorUnit:
    position: tuple
    firing_rate_hz: float = 12.0
    amplitude_v: float = 100e-6
    duration_ms: float = 6.0
    decay_length_cm: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(p) for p in self.position))
        if len(self.position) != 2:
            raise InvalidConfigurationError("motor unit position must be a planar (u, v) point")
        if not (self.firing_rate_hz > 0 and self.amplitude_v > 0 and self.decay_length_cm > 0
                and self.duration_ms > 0):
            raise InvalidConfigurationError(f"motor unit parameters must be positive: {self}")
        if band_energy_fraction(self.duration_ms) < 0.9:
            raise InvalidConfigurationError(
                f"{self.duration_ms} ms pulse puts less than 90% of its energy in 20-450 Hz"
            )


@dataclass(frozen=True)
class GainLaw:
    """Per-channel skin-electrode gain: ``none`` (all 1) or seeded ``uniform(lo, hi)``."""

    kind: str = "none"
    lo: float = 1.0
    hi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "uniform"):
            raise InvalidConfigurationError(f"unknown gain law {self.kind!r}")
        if self.kind == "uniform" and not 0 < self.lo <= self.hi:
            raise InvalidConfigurationError(f"uniform gain law needs 0 < lo <= hi, got {self.lo}, {self.hi}")

    def draw(self, n):
        if self.kind == "none":
            return np.ones(n)
        return np.random.default_rng(self.seed).uniform(self.lo, self.hi, n)


@dataclass(frozen=True)
class Pose:
    """Planar rigid placement of the array frame in skin coordinates."""

    theta_deg: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def apply(self, pts):
        th = math.radians(self.theta_deg)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        return np.asarray(pts, dtype=np.float64) @ rot.T + np.array([self.tx, self.ty])

    def then_shift(self, shift, layout):
        """Pose after applying ``shift`` (expressed in this pose's array frame)."""
        c = layout.center
        th = math.radians(shift.theta_deg)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        offset = c - rot @ c + np.array([shift.x_cm, shift.y_cm])
        t = self.apply(offset[None, :])[0]
        return Pose(self.theta_deg + shift.theta_deg, float(t[0]), float(t[1]))


@dataclass(frozen=True)
class ScenarioConfig:
    motor_units: tuple = ()
    duration_s: float = 10.0
    sample_rate: float = 2000.0
    noise_sigma_v: float = 3e-6
    powerline_amp_v: float = 20e-6
    shift: ShiftTransform = field(default_factory=ShiftTransform)
    reapplication: GainLaw = field(default_factory=GainLaw)
    seed: int = 0
    activation: tuple = None
    pose: Pose = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed is None:
            raise InvalidConfigurationError("scenario seed is mandatory")
        object.__setattr__(self, "motor_units", tuple(self.motor_units))
        if self.activation is not None:
            object.__setattr__(self, "activation", tuple(tuple(map(float, w)) for w in self.activation))

    def array_pose(self, layout):
        base = self.pose if self.pose is not None else Pose()
        return base.then_shift(self.shift, layout)

    def to_json(self):
        doc = asdict(self)
        doc["motor_units"] = [asdict(m) for m in self.motor_units]
        doc["activation"] = [list(w) for w in self.activation] if self.activation is not None else None
        return doc

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        doc["motor_units"] = tuple(MotorUnit(**m) for m in doc.get("motor_units", ()))
        doc["shift"] = ShiftTransform(**doc.get("shift", {}))
        doc["reapplication"] = GainLaw(**doc.get("reapplication", {}))
        if doc.get("pose") is not None:
            doc["pose"] = Pose(**doc["pose"])
        return cls(**doc)


def load_scenario(path):
    with open(path) as fh:
        return ScenarioConfig.from_json(json.load(fh))


def _spike_train(rng, rate, windows, n, fs):
    train = np.zeros(n)
    for start, end in windows:
        k = rng.poisson(rate * (end - start))
        idx = np.floor(rng.uniform(start, end, k) * fs).astype(np.int64)
        np.add.at(train, idx[(idx >= 0) & (idx < n)], 1.0)
    return train


def simulate_recording(cfg, layout=None):
    """Render ``cfg`` to a :class:`RawRecording`; bit-identical for identical configs."""
    layout = layout or GridLayout()
    fs = cfg.sample_rate
    n = int(round(cfg.duration_s * fs))
    windows = cfg.activation if cfg.activation is not None else ((0.0, cfg.duration_s),)
    rng = np.random.default_rng(cfg.seed)
    electrodes = cfg.array_pose(layout).apply(layout.nominal_positions())
    gains = cfg.reapplication.draw(layout.n_channels)
    data = np.zeros((n, layout.n_channels))
    if cfg.motor_units:
        sources = np.empty((len(cfg.motor_units), n))
        for i, mu in enumerate(cfg.motor_units):
            train = _spike_train(rng, mu.firing_rate_hz, windows, n, fs)
            sources[i] = np.convolve(train, biphasic_pulse(mu.duration_ms, fs), mode="same") * mu.amplitude_v
        pos = np.array([mu.position for mu in cfg.motor_units])
        decay = np.array([mu.decay_length_cm for mu in cfg.motor_units])
        r = np.linalg.norm(electrodes[:, None, :] - pos[None, :, :], axis=2)
        weights = np.exp(-r / decay[None, :]) * gains[:, None]
        data += sources.T @ weights.T
    if cfg.noise_sigma_v > 0:
        data += rng.normal(0.0, cfg.noise_sigma_v, size=data.shape)
    if cfg.powerline_amp_v > 0:
        t = np.arange(n) / fs
        data += cfg.powerline_amp_v * np.sin(2 * np.pi * 60.0 * t)[:, None]
    return RawRecording(data=data, sample_rate=fs, grid=layout, metadata=dict(cfg.metadata))


def _random_rotation(rng):
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def embed_surface(uv, surface, center_u):
    """Map skin coordinates (cm) to 3-D; the outward normal at the array centre is +z."""
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[:, 0], uv[:, 1]
    if surface == "plane":
        return np.column_stack([u, v, np.zeros_like(u)])
    kind, radius = surface
    if kind != "cylinder":
        raise InvalidConfigurationError(f"unknown surface {surface!r}")
    phi = (u - center_u) / radius
    return np.column_stack([center_u + radius * np.sin(phi), v, radius * (np.cos(phi) - 1.0)])


def fiducial_skin_positions(layout, margin_cm=2.5):
    w = (layout.cols - 1) * layout.pitch_cm
    h = (layout.rows - 1) * layout.pitch_cm
    return {
        "F1": (-margin_cm, -margin_cm),
        "F2": (w + margin_cm, -margin_cm),
        "F3": (w + margin_cm, h + margin_cm),
        "F4": (-margin_cm, h + margin_cm),
    }


def cylinder_chord_deficit(arc_cm, radius_cm):
    """Arc length minus chord length: the planar model's expected shortfall on a cylinder."""
    return arc_cm - 2 * radius_cm * math.sin(arc_cm / (2 * radius_cm))


def synth_scan_triple(layout, shift, surface="plane", noise_sigma_cm=0.0, seed=0, pre_pose=None):
    """Pre, post and bare scans for an array moved by ``shift``.

    Every scan is expressed in its own randomly posed scanner frame, with
    optional iid Gaussian noise on every reported point.
    """
    if surface != "plane":
        diag = math.hypot((layout.cols - 1) * layout.pitch_cm, (layout.rows - 1) * layout.pitch_cm)
        if not surface[1] > diag / math.pi:
            raise InvalidConfigurationError(f"cylinder radius must exceed {diag / math.pi:.3f} cm")
    rng = np.random.default_rng(seed)
    pre_pose = pre_pose or Pose()
    post_pose = pre_pose.then_shift(shift, layout)
    center_u = pre_pose.apply(layout.center[None, :])[0, 0]
    fid_uv = fiducial_skin_positions(layout)
    fid_labels = list(fid_uv)
    fid3 = embed_surface(np.array([fid_uv[k] for k in fid_labels]), surface, center_u)
    corners = layout.corner_positions()

    scans = []
    for kind, pose in (("pre", pre_pose), ("post", post_pose), ("no-array", None)):
        rot = _random_rotation(rng)
        trans = rng.uniform(-50, 50, 3)
        pts = fid3
        if pose is not None:
            pts = np.vstack([fid3, embed_surface(pose.apply(corners), surface, center_u)])
        pts = pts @ rot.T + trans
        if noise_sigma_cm > 0:
            pts = pts + rng.normal(0.0, noise_sigma_cm, pts.shape)
        fid = {k: pts[i] for i, k in enumerate(fid_labels)}
        cor = {k: pts[len(fid_labels) + i] for i, k in enumerate(CORNER_LABELS)} if pose is not None else None
        scans.append(ScanData(fiducials=fid, corners=cor, scan_kind=kind))
    return tuple(scans)


def exercise_activation(exercise, iso_scale=1.0, lead_s=1.5):
    """Active windows (s) and total duration for a synthetic trial.

    ISO is three contractions of ``10 * iso_scale`` s; STS four 1.5 s
    stand-sit bursts; TUG ten 0.4 s step activations.
    """
    if exercise == "ISO":
        on, off, reps = 10.0 * iso_scale, max(2.0, 3.0 * iso_scale), 3
    elif exercise == "STS":
        on, off, reps = 1.5, 1.5, 4
    elif exercise == "TUG":
        on, off, reps = 0.4, 0.4, 10
    else:
        raise InvalidConfigurationError(f"unknown exercise {exercise!r}")
    windows = []
    t = lead_s
    for i in range(reps):
        windows.append((round(t, 6), round(t + on, 6)))
        t += on + (off if i < reps - 1 else 0.0)
    return tuple(windows), round(t + lead_s, 6)


def muscle_motor_units(seed, muscle, layout=None, n_units=200, decay_length_cm=None, spread_cm=4.0,
                       duration_gradient_ms_per_cm=0.35):
    """Seeded motor-unit population for one muscle.

    Units scatter as an isotropic Gaussian cloud (``spread_cm``) around a
    belly point within 1.5 cm of the initial array centre. Pulse duration
    grows along the array's x direction so that spectra, and hence the
    frequency features, vary smoothly across the grid.
    """
    layout = layout or GridLayout()
    rng = np.random.default_rng(derive_seed(seed, "anatomy", muscle))
    belly = layout.center + rng.uniform(-1.5, 1.5, 2)
    decay = DECAY_BY_MUSCLE.get(muscle, 2.0) if decay_length_cm is None else decay_length_cm
    units = []
    for _ in range(n_units):
        p = belly + rng.normal(0.0, spread_cm, 2)
        dur = 6.0 + duration_gradient_ms_per_cm * (p[0] - belly[0]) + rng.normal(0.0, 0.3)
        units.append(MotorUnit(
            position=(float(p[0]), float(p[1])),
            firing_rate_hz=float(rng.uniform(8, 20)),
            amplitude_v=float(rng.lognormal(math.log(80e-6), 0.25)),
            duration_ms=float(np.clip(dur, 3.5, 10.0)),
            decay_length_cm=decay,
        ))
    return tuple(units)


def stationary_motor_units(seed, decay_length_cm, layout=None, density_per_cm2=3.0, duration_ms=6.0,
                           duration_range_ms=None, amplitude_sd=0.0):
    """Uniform unit population extending three decay lengths past the grid.

    The resulting amplitude field is statistically homogeneous and
    isotropic, so feature differences saturate over a distance set by
    ``decay_length_cm``. ``duration_range_ms`` draws each waveform duration
    uniformly from a range, which gives the frequency features the same
    homogeneous spatial structure. ``amplitude_sd`` is the log-normal spread
    of unit amplitudes around 80 uV.
    """
    layout = layout or GridLayout()
    rng = np.random.default_rng(derive_seed(seed, "stationary", decay_length_cm))
    margin = 3.0 * decay_length_cm + 2.0
    lo = -margin
    hi_u = (layout.cols - 1) * layout.pitch_cm + margin
    hi_v = (layout.rows - 1) * layout.pitch_cm + margin
    n = int(round(density_per_cm2 * (hi_u - lo) * (hi_v - lo)))
    units = []
    for _ in range(n):
        pos = (float(rng.uniform(lo, hi_u)), float(rng.uniform(lo, hi_v)))
        rate = float(rng.uniform(8, 20))
        amp = 80e-6 * float(np.exp(amplitude_sd * rng.standard_normal())) if amplitude_sd else 80e-6
        dur = float(rng.uniform(*duration_range_ms)) if duration_range_ms else duration_ms
        units.append(MotorUnit(pos, rate, amp, dur, decay_length_cm))
    return tuple(units)


def random_shift(rng, max_xy_cm=2.5, max_theta_deg=30.0):
    return ShiftTransform(
        x_cm=float(rng.uniform(-max_xy_cm, max_xy_cm)),
        y_cm=float(rng.uniform(-max_xy_cm, max_xy_cm)),
        theta_deg=float(rng.uniform(-max_theta_deg, max_theta_deg)),
    )


@dataclass
class SyntheticEntry:
    rec_id: str
    muscle: str
    exercise: str
    shift_index: int
    recording: RawRecording
    boundaries: list = None
    scans: tuple = None
    true_shift: ShiftTransform = None


def simulate_session(seed, muscles=MUSCLES, exercises=EXERCISES, n_shifts=3, layout=None, iso_scale=0.3,
                     gain_lo=0.85, gain_hi=1.15, max_xy_cm=2.5, max_theta_deg=30.0, noise_sigma_v=3e-6,
                     powerline_amp_v=20e-6, n_units=200, replay_activity=True, scan_noise_cm=0.0,
                     participant="P00"):
    """Generate a full synthetic session in memory.

    One shift sequence per muscle is used for every exercise, mirroring the
    protocol (exercises repeated at each placement). With
    ``replay_activity`` every placement replays the same motor-unit
    activity so that inter-session change is purely spatial shift plus
    reapplication gain. Pass ``gain_lo == gain_hi == 1`` to disable gains.
    """
    layout = layout or GridLayout()
    entries = []
    for muscle in muscles:
        units = muscle_motor_units(seed, muscle, layout, n_units=n_units)
        srng = np.random.default_rng(derive_seed(seed, "shifts", muscle))
        shifts = [random_shift(srng, max_xy_cm, max_theta_deg) for _ in range(n_shifts)]
        poses = [Pose()]
        for s in shifts:
            poses.append(poses[-1].then_shift(s, layout))
        scans = {}
        for k in range(1, n_shifts + 1):
            scan_seed = derive_seed(seed, "scan", muscle, k).generate_state(1)[0]
            scans[k] = synth_scan_triple(layout, shifts[k - 1], "plane", scan_noise_cm, int(scan_seed),
                                         pre_pose=poses[k - 1])
        for exercise in exercises:
            windows, duration = exercise_activation(exercise, iso_scale)
            for k in range(n_shifts + 1):
                act_key = ("activity", muscle, exercise) if replay_activity else ("activity", muscle, exercise, k)
                act_seed = int(derive_seed(seed, *act_key).generate_state(1)[0])
                gain_seed = int(derive_seed(seed, "gain", muscle, k).generate_state(1)[0])
                law = GainLaw("none") if gain_lo == gain_hi == 1.0 else GainLaw("uniform", gain_lo, gain_hi, gain_seed)
                rec_id = f"{participant}_{muscle}_{exercise}_s{k}"
                meta = {"rec_id": rec_id, "session": participant, "muscle": muscle, "exercise": exercise,
                        "shift_index": k}
                cfg = ScenarioConfig(
                    motor_units=units, duration_s=duration, noise_sigma_v=noise_sigma_v,
                    powerline_amp_v=powerline_amp_v, reapplication=law, seed=act_seed, activation=windows,
                    pose=poses[k], metadata=meta,
                )
                rec = simulate_recording(cfg, layout)
                bounds = None
                if exercise != "ISO":
                    bounds = [(s, e, f"{exercise.lower()}{i + 1}") for i, (s, e) in enumerate(windows)]
                entries.append(SyntheticEntry(
                    rec_id, muscle, exercise, k, rec, bounds,
                    scans.get(k), shifts[k - 1] if k else None,
                ))
    return entries
