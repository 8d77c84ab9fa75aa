"""Monte Carlo ensembles of trajectories and the estimators built on them.

A batch holds the saved states of every trajectory, indexed (trajectory,
save time).  All reductions (density reconstruction, observable means,
standard errors) run over a fixed pairwise tree keyed by trajectory index,
so results are bit-identical no matter how many threads computed the
trajectories or in which order they finished.

The mean dyad of linear trajectories estimates rho_t; the weighted check at
the bottom compares the linear estimator |X|^2 <Xhat, f Xhat> with the
normalized estimator <Y, f Y>, which target the same number.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .hilbert import DensityMatrix, ModelSpec, Op
from .linalg import pairwise_sum
from .noise import NoiseStream
from .sde import IntegrationFault, TimeGrid, propagate

FAULT_FRACTION_LIMIT = 0.01
NORM_SQ_FLOOR = 1e-12


class AggregateFaultError(RuntimeError):
    """Too many trajectories faulted for the ensemble to be trustworthy."""


@dataclass(frozen=True)
class ObservableEstimate:
    value: complex
    stderr: float
    m_effective: int


@dataclass(frozen=True)
class EnsembleDensity:
    rho: DensityMatrix
    t: float
    m_effective: int


@dataclass
class TrajectoryBatch:
    """Saved states of an ensemble, with faulted trajectories masked out."""

    model: ModelSpec
    kind: str
    grid: TimeGrid
    base_seed: int
    states: np.ndarray  # (n_traj, n_save, dim); faulted rows zeroed
    fault_mask: np.ndarray  # (n_traj,) bool
    faults: list  # (trajectory_index, step, reason)
    mean_prenorm_drift: float | None = None

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def m_effective(self) -> int:
        return int(self.n_traj - self.fault_mask.sum())

    def save_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.grid.save_times - t)))
        if abs(self.grid.save_times[idx] - t) > 1e-9:
            raise KeyError(f"t={t} is not a save time of this batch")
        return idx

    def states_at(self, t: float) -> np.ndarray:
        """States of the unfaulted trajectories at save time t, kept in
        trajectory-index order."""
        return self.states[~self.fault_mask, self.save_index(t)]


def point_sampler(vec: np.ndarray):
    """Initial sampler that ignores its seed: every trajectory starts at vec."""
    frozen = np.asarray(vec, dtype=complex).copy()
    frozen.setflags(write=False)
    return lambda seed: frozen


def run_ensemble(
    model: ModelSpec,
    initial_sampler,
    grid: TimeGrid,
    kind: str,
    n_traj: int,
    base_seed: int,
    threads: int = 1,
) -> TrajectoryBatch:
    """Simulate ``n_traj`` independent trajectories.

    Trajectory i draws its noise from NoiseStream(base_seed, i) and its
    initial state from initial_sampler(i); both are pure functions, so the
    batch is reproducible and independent of ``threads`` and of scheduling.
    Faulted trajectories are masked and counted; more than 1% of them is an
    AggregateFaultError.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    d = model.dim
    n_save = grid.n_save
    states = np.zeros((n_traj, n_save, d), dtype=complex)
    drifts = np.zeros(n_traj)
    fault_mask = np.zeros(n_traj, dtype=bool)
    faults_by_index: dict[int, tuple] = {}

    def worker(i: int) -> None:
        x0 = np.asarray(initial_sampler(i), dtype=complex)
        noise = NoiseStream(base_seed, i)
        row = states[i]

        def on_save(si, t, vec, nrm):
            row[si] = vec

        try:
            mean_drift, _ = propagate(model, x0, grid, kind, noise, on_save)
            drifts[i] = mean_drift
        except IntegrationFault as fault:
            fault_mask[i] = True
            row[:] = 0.0
            faults_by_index[i] = (i, fault.step, fault.reason)

    if threads == 1:
        for i in range(n_traj):
            worker(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(worker, range(n_traj)))

    faults = [faults_by_index[i] for i in sorted(faults_by_index)]
    if len(faults) > FAULT_FRACTION_LIMIT * n_traj:
        raise AggregateFaultError(
            f"{len(faults)} of {n_traj} trajectories faulted "
            f"(limit {FAULT_FRACTION_LIMIT:.0%}); first: {faults[0]}"
        )
    ok = ~fault_mask
    mean_drift = float(pairwise_sum(drifts[ok]) / ok.sum()) if kind == "nonlinear" else None
    return TrajectoryBatch(
        model=model,
        kind=kind,
        grid=grid,
        base_seed=int(base_seed),
        states=states,
        fault_mask=fault_mask,
        faults=faults,
        mean_prenorm_drift=mean_drift,
    )


def reconstruct_density(batch: TrajectoryBatch, t: float) -> EnsembleDensity:
    """Mean dyad (1/M) sum_i |psi_i><psi_i| at save time t.

    Pairwise-tree accumulation in trajectory order, then symmetrization; the
    result is positive semidefinite by construction and its trace equals the
    mean squared norm of the included states.
    """
    rows = batch.states_at(t)
    m_eff = rows.shape[0]
    if m_eff == 0:
        raise ValueError("no unfaulted trajectories to reconstruct from")
    dyads = rows[:, :, None] * rows.conj()[:, None, :]
    acc = pairwise_sum(dyads) / m_eff
    rho = 0.5 * (acc + acc.conj().T)
    mean_norm_sq = float(pairwise_sum((rows.real**2 + rows.imag**2).sum(axis=1)) / m_eff)
    dm = DensityMatrix(rho, expected_trace=mean_norm_sq)
    return EnsembleDensity(rho=dm, t=t, m_effective=m_eff)


def _quadratic_form(rows: np.ndarray, a: np.ndarray) -> np.ndarray:
    """<psi_i, A psi_i> for every row, as a complex vector."""
    return np.einsum("md,de,me->m", rows.conj(), a, rows, optimize=True)


def _mean_and_stderr(vals: np.ndarray) -> tuple[complex, float]:
    m = vals.shape[0]
    mean = pairwise_sum(vals) / m
    if m < 2:
        return complex(mean), 0.0
    dev_sq = np.abs(vals - mean) ** 2
    var = pairwise_sum(dev_sq) / (m - 1)
    return complex(mean), float(np.sqrt(var / m))


def observable_mean(batch: TrajectoryBatch, a_obs, t: float) -> ObservableEstimate:
    """Ensemble mean of <psi, A psi> at save time t with its standard error.

    For kind=linear this estimates tr(A rho_t); for kind=nonlinear it
    estimates the same number through the normalized unraveling.
    """
    a = a_obs.matrix if isinstance(a_obs, Op) else np.asarray(a_obs, dtype=complex)
    rows = batch.states_at(t)
    if rows.shape[0] == 0:
        raise ValueError("no unfaulted trajectories to average")
    vals = _quadratic_form(rows, a)
    mean, stderr = _mean_and_stderr(vals)
    return ObservableEstimate(value=mean, stderr=stderr, m_effective=rows.shape[0])


@dataclass(frozen=True)
class EquivalenceReport:
    lhs: complex
    rhs: complex
    lhs_stderr: float
    rhs_stderr: float
    combined_stderr: float
    t: float
    m_linear: int
    m_nonlinear: int

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def weighted_equivalence_check(
    model: ModelSpec,
    x0: np.ndarray,
    t: float,
    n_traj: int,
    base_seed: int,
    f_obs,
    dt: float = 1e-3,
    threads: int = 1,
) -> EquivalenceReport:
    """Compare the weighted linear estimator with the normalized one.

    lhs = mean of |X_t|^2 <Xhat, f Xhat>  (zero when |X_t|^2 < 1e-12),
    rhs = mean of <Y_t, f Y_t>,
    each over ``n_traj`` trajectories; the nonlinear side runs on base_seed+1
    so the two estimators are driven by disjoint noise.  Both target the same
    expectation, so agreement within a few combined standard errors is the
    pass condition the caller should apply.
    """
    f = f_obs.matrix if isinstance(f_obs, Op) else np.asarray(f_obs, dtype=complex)
    ratio = t / dt
    n_steps = int(round(ratio))
    if n_steps < 1 or abs(ratio - n_steps) > 1e-9:
        raise ValueError(f"t={t} is not a multiple of dt={dt}")
    grid = TimeGrid(t_end=t, dt=dt, save_every=n_steps)
    sampler = point_sampler(x0)
    lin = run_ensemble(model, sampler, grid, "linear", n_traj, base_seed, threads=threads)
    non = run_ensemble(model, sampler, grid, "nonlinear", n_traj, base_seed + 1, threads=threads)
    lin_rows = lin.states_at(t)
    norm_sq = (lin_rows.real**2 + lin_rows.imag**2).sum(axis=1)
    if np.all(norm_sq < NORM_SQ_FLOOR):
        raise ValueError("degenerate linear ensemble: every squared norm below 1e-12")
    # |X|^2 <Xhat, f Xhat> = <X, f X>, with the floor sending dead paths to 0.
    lin_vals = np.where(norm_sq >= NORM_SQ_FLOOR, _quadratic_form(lin_rows, f), 0.0)
    lhs, lhs_stderr = _mean_and_stderr(lin_vals)
    non_vals = _quadratic_form(non.states_at(t), f)
    rhs, rhs_stderr = _mean_and_stderr(non_vals)
    return EquivalenceReport(
        lhs=lhs,
        rhs=rhs,
        lhs_stderr=lhs_stderr,
        rhs_stderr=rhs_stderr,
        combined_stderr=float(np.hypot(lhs_stderr, rhs_stderr)),
        t=t,
        m_linear=lin.m_effective,
        m_nonlinear=non.m_effective,
    )
