"""Euler-Maruyama integration of the linear and normalized trajectory SDEs.

Two step kinds drive a pure state x in the truncated Fock space with shared
Gaussian increments eta_k (raw standard normals; sqrt(dt) is applied here):

  linear      x' = x + G x dt + sum_k L_k x sqrt(dt) eta_k
  nonlinear   y' = y + D(y) dt + sum_k (L_k y - m_k y) sqrt(dt) eta_k,
              then y' /= |y'|,
              with m_k = Re<y, L_k y> and
              D(y) = G y + sum_k (m_k L_k y - (1/2) m_k^2 y).

The linear flow keeps |x|^2 a martingale in expectation; the nonlinear flow
is its norm-preserving companion.  The weak order of the scheme is one.

Everything is deterministic given (model, initial state, grid, noise): the
integrator carries no hidden state and consults the noise stream purely by
step index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_DT = 1e-3
MAX_SAVE_POINTS = 1001
NORM_FLOOR = 0.5


class IntegrationFault(RuntimeError):
    """A step produced a numerically unusable state."""

    def __init__(self, reason: str, step: int | None = None, time: float | None = None):
        self.reason = reason
        self.step = step
        self.time = time
        where = f" at step {step}" if step is not None else ""
        when = f" (t={time:.6g})" if time is not None else ""
        super().__init__(f"{reason}{where}{when}")


@dataclass(frozen=True)
class PureState:
    """State vector with its squared norm cached at construction."""

    vec: np.ndarray
    norm_sq: float
    prenorm_drift: float | None = None

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=complex)
        object.__setattr__(self, "vec", v)
        true_sq = float(np.vdot(v, v).real)
        if abs(true_sq - self.norm_sq) > 1e-12 * max(1.0, true_sq):
            raise ValueError(
                f"cached norm_sq {self.norm_sq!r} disagrees with recomputation {true_sq!r}"
            )

    @classmethod
    def from_vec(cls, vec: np.ndarray, prenorm_drift: float | None = None) -> "PureState":
        v = np.asarray(vec, dtype=complex)
        return cls(v, float(np.vdot(v, v).real), prenorm_drift)

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    @property
    def dim(self) -> int:
        return self.vec.shape[0]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform integration grid with a save stride.

    dt must divide t_end (within 1e-9 of an integer step count) and
    save_every must divide the step count, so the final time is always a
    save point.  When save_every is omitted, the smallest stride keeping at
    most MAX_SAVE_POINTS save points (and dividing the step count) is used.
    """

    t_end: float
    dt: float = DEFAULT_DT
    save_every: int | None = None

    def __post_init__(self):
        if self.t_end <= 0 or self.dt <= 0:
            raise ValueError("t_end and dt must be positive")
        ratio = self.t_end / self.dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9:
            raise ValueError(f"t_end/dt = {ratio!r} is not an integer step count")
        if self.save_every is None:
            stride = max(1, math.ceil(n / (MAX_SAVE_POINTS - 1)))
            while n % stride:
                stride += 1
            object.__setattr__(self, "save_every", stride)
        stride = self.save_every
        if not isinstance(stride, (int, np.integer)) or stride < 1:
            raise ValueError(f"save_every must be a positive integer, got {stride!r}")
        if n % stride:
            raise ValueError(f"save_every {stride} does not divide step count {n}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def n_save(self) -> int:
        return self.n_steps // self.save_every + 1

    @property
    def save_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.save_every)

    @property
    def save_times(self) -> np.ndarray:
        return self.save_steps * self.dt


@dataclass
class Trajectory:
    """One integrated path: states at save times plus norm bookkeeping."""

    kind: str
    grid: TimeGrid
    saved_states: list
    norm_history: list
    mean_prenorm_drift: float | None = None
    max_prenorm_drift: float | None = None

    @property
    def final_state(self) -> PureState:
        return self.saved_states[-1][1]


def _flat_stack(model) -> np.ndarray:
    stack = model.op_stack()
    k1, d, _ = stack.shape
    return stack.reshape(k1 * d, d)


def _linear_update(flat, d, x, dt, sqrt_dt, eta):
    app = (flat @ x).reshape(-1, d)
    return x + dt * app[0] + sqrt_dt * (eta @ app[1:])


def _nonlinear_update(flat, d, y, dt, sqrt_dt, eta):
    app = (flat @ y).reshape(-1, d)
    m = (app[1:] @ y.conj()).real
    drift = app[0] + m @ app[1:] - (0.5 * float(m @ m)) * y
    diff = eta @ app[1:] - float(eta @ m) * y
    return y + dt * drift + sqrt_dt * diff


def step_linear(model, state: PureState, dt: float, increments: np.ndarray) -> PureState:
    """One Euler-Maruyama step of the linear SDE.

    ``increments`` are raw N(0,1) draws, one per noise channel.
    """
    eta = np.asarray(increments, dtype=float)
    if eta.shape != (model.n_channels,):
        raise ValueError(f"expected {model.n_channels} increments, got shape {eta.shape}")
    d = model.dim
    x = _linear_update(_flat_stack(model), d, state.vec, dt, math.sqrt(dt), eta)
    nrm_sq = float(np.vdot(x, x).real)
    if not math.isfinite(nrm_sq):
        raise IntegrationFault("non-finite state after linear step")
    return PureState(x, nrm_sq)


def step_nonlinear(model, state: PureState, dt: float, increments: np.ndarray) -> PureState:
    """One Euler-Maruyama step of the normalized SDE, followed by projection
    back to the unit sphere.  The pre-normalization norm drift (|y'| - 1) is
    recorded on the returned state.
    """
    eta = np.asarray(increments, dtype=float)
    if eta.shape != (model.n_channels,):
        raise ValueError(f"expected {model.n_channels} increments, got shape {eta.shape}")
    d = model.dim
    y = _nonlinear_update(_flat_stack(model), d, state.vec, dt, math.sqrt(dt), eta)
    nrm_sq = float(np.vdot(y, y).real)
    if not math.isfinite(nrm_sq):
        raise IntegrationFault("non-finite state after nonlinear step")
    nrm = math.sqrt(nrm_sq)
    if nrm < NORM_FLOOR:
        raise IntegrationFault(f"norm collapsed below {NORM_FLOOR}: {nrm:.3e}")
    y = y / nrm
    return PureState(y, float(np.vdot(y, y).real), prenorm_drift=nrm - 1.0)


def _fetch_increments(noise, n_steps: int, n_channels: int) -> np.ndarray | None:
    if n_channels == 0:
        return np.zeros((n_steps, 0))
    if noise is None:
        raise ValueError("a noise stream is required when the model has noise channels")
    if hasattr(noise, "normals_block"):
        block = np.asarray(noise.normals_block(0, n_steps, n_channels), dtype=float)
    else:
        block = np.stack([np.asarray(noise.normals(s, n_channels), float) for s in range(n_steps)])
    if block.shape != (n_steps, n_channels):
        raise ValueError(f"noise block has shape {block.shape}, expected {(n_steps, n_channels)}")
    return block


def propagate(model, x0: np.ndarray, grid: TimeGrid, kind: str, noise, on_save) -> tuple[float, float]:
    """Drive one trajectory, invoking ``on_save(save_index, t, vec, norm)``.

    The callback owns any copying or accumulation; the vector passed in is
    not mutated afterwards.  Returns (mean, max) pre-normalization norm drift
    for nonlinear runs, (0, 0) for linear ones.  This is the single code path
    behind trajectory simulation, ensembles, and long-run averaging.
    """
    if kind not in ("linear", "nonlinear"):
        raise ValueError(f"kind must be 'linear' or 'nonlinear', got {kind!r}")
    d = model.dim
    x = np.asarray(x0, dtype=complex).copy()
    if x.shape != (d,):
        raise ValueError(f"initial state has shape {x.shape}, expected ({d},)")
    k = model.n_channels
    n_steps = grid.n_steps
    dt = grid.dt
    sqrt_dt = math.sqrt(dt)
    flat = _flat_stack(model)
    eta_block = _fetch_increments(noise, n_steps, k)
    stride = grid.save_every
    nonlinear = kind == "nonlinear"
    if nonlinear:
        nrm0 = math.sqrt(float(np.vdot(x, x).real))
        if abs(nrm0 - 1.0) > 1e-9:
            raise ValueError(f"nonlinear runs need a unit initial state, |x0| = {nrm0!r}")
    drift_sum = 0.0
    drift_max = 0.0
    save_index = 0
    on_save(save_index, 0.0, x, math.sqrt(float(np.vdot(x, x).real)))
    for step in range(n_steps):
        eta = eta_block[step]
        if nonlinear:
            x = _nonlinear_update(flat, d, x, dt, sqrt_dt, eta)
            nrm_sq = float(np.vdot(x, x).real)
            if not math.isfinite(nrm_sq):
                raise IntegrationFault("non-finite state", step=step, time=(step + 1) * dt)
            nrm = math.sqrt(nrm_sq)
            if nrm < NORM_FLOOR:
                raise IntegrationFault(
                    f"norm collapsed below {NORM_FLOOR}: {nrm:.3e}", step=step, time=(step + 1) * dt
                )
            drift = nrm - 1.0
            drift_sum += drift
            drift_max = max(drift_max, abs(drift))
            x = x / nrm
            nrm = 1.0
        else:
            x = _linear_update(flat, d, x, dt, sqrt_dt, eta)
            nrm_sq = float(np.vdot(x, x).real)
            if not math.isfinite(nrm_sq):
                raise IntegrationFault("non-finite state", step=step, time=(step + 1) * dt)
            nrm = math.sqrt(nrm_sq)
        nxt = step + 1
        if nxt % stride == 0:
            save_index += 1
            on_save(save_index, nxt * dt, x, nrm)
    if nonlinear and n_steps:
        return drift_sum / n_steps, drift_max
    return 0.0, 0.0


def simulate_trajectory(model, initial, grid: TimeGrid, kind: str, noise) -> Trajectory:
    """Integrate one trajectory and keep states at every save time.

    ``initial`` may be a PureState or a raw vector; ``noise`` is consulted
    only through step-indexed lookups, so the result is a pure function of
    its arguments.  Stepper faults propagate with their step index attached.
    """
    x0 = initial.vec if isinstance(initial, PureState) else np.asarray(initial, dtype=complex)
    saved = []
    norms = []

    def on_save(i, t, vec, nrm):
        saved.append((t, PureState(vec.copy(), float(np.vdot(vec, vec).real))))
        norms.append((t, nrm))

    mean_drift, max_drift = propagate(model, x0, grid, kind, noise, on_save)
    return Trajectory(
        kind=kind,
        grid=grid,
        saved_states=saved,
        norm_history=norms,
        mean_prenorm_drift=mean_drift if kind == "nonlinear" else None,
        max_prenorm_drift=max_drift if kind == "nonlinear" else None,
    )
