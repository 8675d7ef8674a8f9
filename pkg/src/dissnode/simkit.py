"""Benchmark system simulation and dataset generation.

The benchmark plant is a driven Duffing oscillator with unit coefficients,
augmented so the scalar drive (and a structurally-zero dummy channel that
pads the input to match the output width) ride along in the integrated
state:

    z = [x1, x2, u, d],   d(t) = 0 at all times.

``integrate_rk4`` is a classical fixed-step fourth-order Runge-Kutta loop;
``generate_trajectories`` emulates sensor noise by perturbing the *stored*
samples only (integration always runs on the clean state), and
``sample_collections`` cuts deterministic contiguous windows out of the
trajectories for training.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, IntegrationError

__all__ = [
    "AUG_DIM",
    "STATE_CHANNELS",
    "TRUE_INPUT_CHANNEL",
    "DUMMY_CHANNEL",
    "DuffingParams",
    "AugmentedState",
    "Trajectory",
    "Dataset",
    "duffing_field",
    "case_study_input_rate",
    "augmented_duffing_field",
    "integrate_rk4",
    "generate_trajectories",
    "sample_collections",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

# Augmented state layout.
AUG_DIM = 4
STATE_CHANNELS = (0, 1)
TRUE_INPUT_CHANNEL = 2
DUMMY_CHANNEL = 3


@dataclass(frozen=True)
class DuffingParams:
    """Coefficients of the oscillator x'' = -a x' - (b + c x^2) x + u."""

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0


@dataclass(frozen=True)
class AugmentedState:
    """Structured view of one augmented sample [x1, x2, u, dummy]."""

    x: np.ndarray
    u: np.ndarray

    @property
    def z(self):
        return np.concatenate([self.x, self.u])

    @classmethod
    def from_z(cls, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (AUG_DIM,):
            raise ContractError(f"augmented state must have shape ({AUG_DIM},)")
        return cls(x=z[:2].copy(), u=z[2:].copy())


@dataclass
class Trajectory:
    """Uniformly sampled trajectory.

    Attributes
    ----------
    t0 : float
        Time of the first sample.
    dt : float
        Sampling step (> 0).
    samples : numpy.ndarray
        Shape (n, dim); row k is the state at ``t0 + k * dt``.
    """

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ContractError("samples must be a non-empty (n, dim) array")
        if not self.dt > 0.0:
            raise ContractError("dt must be positive")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.samples.shape[0])

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class Dataset:
    """A bag of contiguous sample windows sharing one sampling step."""

    collections: list
    dt: float

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ContractError("dt must be positive")
        self.collections = [
            np.asarray(c, dtype=np.float64) for c in self.collections
        ]
        for c in self.collections:
            if c.ndim != 2 or c.shape[0] < 2:
                raise ContractError(
                    "each collection must be a (len>=2, dim) array"
                )


def duffing_field(x, u, params=DuffingParams()):
    """Right-hand side of the oscillator state equations.

    Parameters
    ----------
    x : array_like, shape (2,)
        Position and velocity.
    u : float
        Drive input.
    params : DuffingParams

    Returns
    -------
    numpy.ndarray, shape (2,)
        (x1_dot, x2_dot) = (x2, -a x2 - (b + c x1^2) x1 + u).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2,):
        raise ContractError("x must have shape (2,)")
    x1, x2 = x
    return np.array(
        [x2, -params.a * x2 - (params.b + params.c * x1 * x1) * x1 + float(u)]
    )


def case_study_input_rate(t):
    """Time derivative of the benchmark drive signal.

    u_dot(t) = (0.6 e^{-0.2 t} cos(pi t) - 3 pi e^{-0.2 t} sin(pi t)) for
    t >= 0, and 0 before the switch-on at t = 0: a decaying oscillatory
    rate at angular frequency pi.
    """
    t = float(t)
    if t < 0.0:
        return 0.0
    decay = math.exp(-0.2 * t)
    return 0.6 * decay * math.cos(math.pi * t) - 3.0 * math.pi * decay * math.sin(
        math.pi * t
    )


def augmented_duffing_field(params=DuffingParams(), input_rate=case_study_input_rate):
    """Autonomous-in-z field for the augmented state [x1, x2, u, dummy].

    Returns a callable ``field(t, z) -> dz`` suitable for
    :func:`integrate_rk4`.  The dummy channel has zero rate at all times.
    """

    def field(t, z):
        x1, x2, u = z[0], z[1], z[2]
        return np.array(
            [
                x2,
                -params.a * x2 - (params.b + params.c * x1 * x1) * x1 + u,
                input_rate(t),
                0.0,
            ]
        )

    return field


def integrate_rk4(fieldfn, z0, t0, dt, n_steps):
    """Classical fixed-step RK4 integration.

    Parameters
    ----------
    fieldfn : callable
        ``fieldfn(t, z) -> dz`` with 1-D ``z``.
    z0 : array_like
        Initial state (finite).
    t0 : float
        Initial time.
    dt : float
        Step size (> 0).
    n_steps : int
        Number of steps (>= 1).

    Returns
    -------
    Trajectory
        ``n_steps + 1`` samples including both endpoints.

    Raises
    ------
    IntegrationError
        If the state becomes non-finite; carries the failure time.
    """
    z = np.asarray(z0, dtype=np.float64).copy()
    if z.ndim != 1:
        raise ContractError("z0 must be 1-D")
    if not np.all(np.isfinite(z)):
        raise ContractError("z0 must be finite")
    if not dt > 0.0:
        raise ContractError("dt must be positive")
    n_steps = int(n_steps)
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    out = np.empty((n_steps + 1, z.size))
    out[0] = z
    half = dt / 2.0
    for k in range(n_steps):
        t = t0 + k * dt
        k1 = fieldfn(t, z)
        k2 = fieldfn(t + half, z + half * k1)
        k3 = fieldfn(t + half, z + half * k2)
        k4 = fieldfn(t + dt, z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise IntegrationError(
                f"state became non-finite at t={t + dt!r}", t=t + dt
            )
        out[k + 1] = z
    return Trajectory(t0=float(t0), dt=float(dt), samples=out)


def generate_trajectories(
    params,
    n_traj,
    n_points,
    dt,
    u0_values,
    noise_var,
    seed,
    init_low=-1.0,
    init_high=1.0,
    input_rate=case_study_input_rate,
):
    """Simulate noisy benchmark trajectories.

    Each trajectory starts from a uniformly drawn initial position/velocity
    in ``[init_low, init_high]^2``, the drive initial value cycling through
    ``u0_values``, and the dummy channel at zero.  Gaussian sensor noise of
    variance ``noise_var`` is added to the stored state and true-input
    channels only -- never to the dummy channel, never to the integrator
    state, never to the time stamps.

    Per-trajectory randomness comes from ``numpy.random.SeedSequence(seed)``
    children, so trajectory k is reproducible independently of how many
    trajectories are requested after it.

    Returns
    -------
    list of Trajectory
    """
    n_traj = int(n_traj)
    n_points = int(n_points)
    if n_traj < 1 or n_points < 2:
        raise ContractError("need n_traj >= 1 and n_points >= 2")
    if noise_var < 0.0:
        raise ContractError("noise_var is a variance and must be >= 0")
    if len(u0_values) < 1:
        raise ContractError("u0_values must be non-empty")
    if not init_high >= init_low:
        raise ContractError("init_high must be >= init_low")
    fieldfn = augmented_duffing_field(params, input_rate)
    sigma = math.sqrt(noise_var)
    children = np.random.SeedSequence(seed).spawn(n_traj)
    noisy_channels = list(STATE_CHANNELS) + [TRUE_INPUT_CHANNEL]
    out = []
    for i in range(n_traj):
        rng = np.random.default_rng(children[i])
        x0 = rng.uniform(init_low, init_high, size=2)
        u0 = float(u0_values[i % len(u0_values)])
        z0 = np.array([x0[0], x0[1], u0, 0.0])
        traj = integrate_rk4(fieldfn, z0, 0.0, dt, n_points - 1)
        if sigma > 0.0:
            noise = rng.normal(0.0, sigma, size=(n_points, len(noisy_channels)))
            traj.samples[:, noisy_channels] += noise
        out.append(traj)
    return out


def sample_collections(trajectories, m, length, seed):
    """Cut ``m`` uniform contiguous windows out of the trajectories.

    Window k picks a trajectory index and a start offset uniformly with a
    generator seeded by ``seed``; the result is deterministic given
    (trajectories, m, length, seed).

    Returns
    -------
    Dataset
    """
    m = int(m)
    length = int(length)
    if m < 1:
        raise ContractError("m must be >= 1")
    if length < 2:
        raise ContractError("window length must be >= 2")
    if not trajectories:
        raise ContractError("no trajectories given")
    dt = trajectories[0].dt
    for tr in trajectories:
        if tr.dt != dt:
            raise ContractError("trajectories must share one dt")
        if len(tr) < length:
            raise ContractError(
                f"window length {length} exceeds trajectory length {len(tr)}"
            )
    rng = np.random.default_rng(seed)
    windows = []
    for _ in range(m):
        ti = int(rng.integers(0, len(trajectories)))
        tr = trajectories[ti]
        start = int(rng.integers(0, len(tr) - length + 1))
        windows.append(tr.samples[start : start + length].copy())
    return Dataset(collections=windows, dt=dt)


def write_trajectory_csv(path, traj):
    """Write a trajectory as ``t,z0,...,z{d-1}`` CSV with round-trip floats.

    Values are formatted with Python ``repr``, which is the shortest string
    that parses back to the identical IEEE-754 double.
    """
    samples = traj.samples
    dim = samples.shape[1]
    header = "t," + ",".join(f"z{j}" for j in range(dim))
    times = traj.times
    lines = [header]
    for k in range(samples.shape[0]):
        row = [repr(float(times[k]))]
        row.extend(repr(float(v)) for v in samples[k])
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory_csv(path):
    """Read a trajectory written by :func:`write_trajectory_csv`.

    Validates the header and that sample times are uniform; returns a
    :class:`Trajectory` whose regenerated times match the file's.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty trajectory file")
    header = lines[0].split(",")
    if header[0] != "t" or any(
        h != f"z{j}" for j, h in enumerate(header[1:])
    ) or len(header) < 2:
        raise DataError(f"{path}: malformed header {lines[0]!r}")
    dim = len(header) - 1
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != dim + 1:
            raise DataError(f"{path}: row width {len(parts)} != {dim + 1}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataError(f"{path}: unparseable row {ln!r}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two samples")
    arr = np.asarray(rows, dtype=np.float64)
    t = arr[:, 0]
    t0 = float(t[0])
    dt = float(t[1] - t[0])
    if not dt > 0.0:
        raise DataError(f"{path}: non-increasing time column")
    regen = t0 + dt * np.arange(len(rows))
    scale = max(1.0, float(np.max(np.abs(t))))
    if np.max(np.abs(regen - t)) > 1e-9 * scale:
        raise DataError(f"{path}: non-uniform sample times")
    return Trajectory(t0=t0, dt=dt, samples=arr[:, 1:])
