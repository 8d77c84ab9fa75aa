"""Deterministic master-equation oracles for verifying stochastic estimates.

The master equation  d rho/dt = G rho + rho G* + sum_k L_k rho L_k*  and its
adjoint  d A/dt = A G + G* A + sum_k L_k* A L_k  are solved on the full
density-matrix space, either through the exact matrix exponential of the
vectorized generator (column stacking, vec(AXB) = kron(B.T, A) vec(X)) or,
beyond the exponential's practical size, through classical RK4 with a local
error target far below every tolerance used by the statistical tests.

Also here: the iterated construction of the minimal adjoint semigroup,

    T(n+1)_t(A) = e^{G* t} A e^{G t}
                  + sum_k int_0^t e^{G*(t-s)} L_k* T(n)_s(A) L_k e^{G(t-s)} ds,

evaluated on a fixed node grid with composite Simpson quadrature, and the
duality / semigroup-property checks built from the two solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .hilbert import DensityMatrix, ModelSpec, Op, heisenberg_apply, lindbladian_apply
from .linalg import dagger, hermiticity_residual, operator_norm, trace_norm, unvec, vec
from .sde import TimeGrid

EXPM_DIM_LIMIT = 32
RK4_LOCAL_TOL = 1e-10
MIN_QUAD_POINTS = 33


class StepInstabilityError(RuntimeError):
    """Propagation produced a state outside its validity envelope."""

    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} at t={time:.6g}")


class PicardDivergenceError(RuntimeError):
    """Iterate distances grew twice in a row: quadrature cannot be trusted."""


@dataclass(frozen=True)
class Superoperator:
    """Dense matrix of a generator acting on column-stacked operators."""

    matrix: np.ndarray
    dim: int


@dataclass(frozen=True)
class PropagatedFamily:
    """Operators saved along a time grid (densities or observables)."""

    times: np.ndarray
    values: np.ndarray  # (n_save, dim, dim)

    def at_time(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            raise KeyError(f"t={t} is not a save time")
        return self.values[idx]


@dataclass(frozen=True)
class SemigroupReport:
    residual_onenorm: float
    contraction_excess: float


def vectorize_lindbladian(model: ModelSpec) -> Superoperator:
    """Master-equation generator as a dim^2 x dim^2 matrix."""
    d = model.dim
    eye = np.eye(d)
    s = np.kron(eye, model.G) + np.kron(model.G.conj(), eye)
    for l in model.L:
        s = s + np.kron(l.conj(), l)
    return Superoperator(s, d)


def vectorize_heisenberg(model: ModelSpec) -> Superoperator:
    """Adjoint (observable-side) generator as a dim^2 x dim^2 matrix."""
    d = model.dim
    eye = np.eye(d)
    s = np.kron(model.G.T, eye) + np.kron(eye, dagger(model.G))
    for l in model.L:
        s = s + np.kron(l.T, dagger(l))
    return Superoperator(s, d)


def _generator_norm_bound(model: ModelSpec) -> float:
    bound = 2.0 * operator_norm(model.G)
    for l in model.L:
        bound += operator_norm(l) ** 2
    return max(bound, 1e-12)


def _rk4_substeps(model: ModelSpec, interval: float, apply_gen, probe: np.ndarray) -> int:
    """Substep count for one save interval, from an a-priori bound tightened
    by an actual step-doubling measurement on the initial datum."""
    bound = _generator_norm_bound(model)
    h_max = (120.0 * RK4_LOCAL_TOL) ** 0.2 / bound
    n_sub = max(1, math.ceil(interval / h_max))
    for _ in range(60):
        h = interval / n_sub
        one = _rk4_advance(apply_gen, probe, h, 1)
        two = _rk4_advance(apply_gen, probe, 0.5 * h, 2)
        err = float(np.max(np.abs(one - two))) / 15.0
        if err <= RK4_LOCAL_TOL:
            return n_sub
        n_sub *= 2
    raise StepInstabilityError("RK4 step control failed to reach its local tolerance", 0.0)


def _rk4_advance(apply_gen, state: np.ndarray, h: float, n_sub: int) -> np.ndarray:
    x = state
    for _ in range(n_sub):
        k1 = apply_gen(x)
        k2 = apply_gen(x + (0.5 * h) * k1)
        k3 = apply_gen(x + (0.5 * h) * k2)
        k4 = apply_gen(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def _propagate_family(model, start: np.ndarray, grid: TimeGrid, superop_builder, apply_gen, check):
    """Shared save-loop: exact exponential when small, controlled RK4 beyond."""
    d = model.dim
    n_save = grid.n_save
    out = np.empty((n_save, d, d), dtype=complex)
    out[0] = start
    check(start, 0.0)
    interval = grid.save_every * grid.dt
    if d <= EXPM_DIM_LIMIT:
        e_step = expm(superop_builder(model).matrix * interval)
        v = vec(start)
        for i in range(1, n_save):
            v = e_step @ v
            out[i] = unvec(v, d)
            check(out[i], grid.save_times[i])
    else:
        n_sub = _rk4_substeps(model, interval, apply_gen, start)
        h = interval / n_sub
        x = start
        for i in range(1, n_save):
            x = _rk4_advance(apply_gen, x, h, n_sub)
            out[i] = x
            check(x, grid.save_times[i])
    out.setflags(write=False)
    return PropagatedFamily(times=grid.save_times, values=out)


def solve_master(model: ModelSpec, rho0, grid: TimeGrid) -> PropagatedFamily:
    """Density matrices rho_t at every save time of ``grid``.

    Raises StepInstabilityError if any saved state stops looking like a
    density matrix at the 1e-7 level (hermiticity, positivity, trace drift).
    """
    rho = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    tr0 = float(rho.trace().real)

    def check(m, t):
        if not np.all(np.isfinite(m.view(float))):
            raise StepInstabilityError("non-finite density matrix", t)
        if hermiticity_residual(m) > 1e-7:
            raise StepInstabilityError("density matrix lost hermiticity beyond 1e-7", t)
        if abs(float(m.trace().real) - tr0) > 1e-7:
            raise StepInstabilityError("density matrix trace drifted beyond 1e-7", t)
        lo = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
        if lo < -1e-7:
            raise StepInstabilityError(f"density matrix min eigenvalue {lo:.3e}", t)

    return _propagate_family(
        model, rho, grid, vectorize_lindbladian, lambda m: lindbladian_apply(model, m), check
    )


def solve_heisenberg(model: ModelSpec, a_obs, grid: TimeGrid) -> PropagatedFamily:
    """Heisenberg evolutes T_t(A) at every save time of ``grid``.

    Verifies the norm contraction |T_t(A)| <= |A| + 1e-7 at each save.
    """
    a = a_obs.matrix if isinstance(a_obs, Op) else np.asarray(a_obs, dtype=complex)
    a_norm = operator_norm(a)

    def check(m, t):
        if not np.all(np.isfinite(m.view(float))):
            raise StepInstabilityError("non-finite observable", t)
        if operator_norm(m) > a_norm + 1e-7:
            raise StepInstabilityError("Heisenberg contraction violated beyond 1e-7", t)

    return _propagate_family(
        model, a, grid, vectorize_heisenberg, lambda m: heisenberg_apply(model, m), check
    )


def duality_check(model: ModelSpec, a_obs, rho0, grid: TimeGrid) -> float:
    """max_t |tr(A rho_t) - tr(T_t(A) rho_0)| over the grid's save times."""
    a = a_obs.matrix if isinstance(a_obs, Op) else np.asarray(a_obs, dtype=complex)
    rho = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    fam_rho = solve_master(model, rho, grid)
    fam_obs = solve_heisenberg(model, a, grid)
    lhs = np.einsum("ij,tji->t", a, fam_rho.values)
    rhs = np.einsum("tij,ji->t", fam_obs.values, rho)
    return float(np.max(np.abs(lhs - rhs)))


def _propagate_density_once(model: ModelSpec, rho: np.ndarray, t: float) -> np.ndarray:
    if t == 0:
        return rho.copy()
    if model.dim <= EXPM_DIM_LIMIT:
        e = expm(vectorize_lindbladian(model).matrix * t)
        return unvec(e @ vec(rho), model.dim)
    apply_gen = lambda m: lindbladian_apply(model, m)
    n_sub = _rk4_substeps(model, t, apply_gen, rho)
    return _rk4_advance(apply_gen, rho, t / n_sub, n_sub)


def semigroup_check(model: ModelSpec, rho0, t: float, s: float) -> SemigroupReport:
    """Trace-norm gap between rho_{t+s}(x) and rho_t(rho_s(x)), plus the
    worst excess of |rho_u(x)|_1 over |x|_1 across u in {s, t+s}."""
    if t < 0 or s < 0:
        raise ValueError("t and s must be nonnegative")
    rho = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    base_onenorm = trace_norm(rho)
    rho_s = _propagate_density_once(model, rho, s)
    rho_ts_direct = _propagate_density_once(model, rho, t + s)
    rho_ts_composed = _propagate_density_once(model, rho_s, t)
    residual = trace_norm(rho_ts_direct - rho_ts_composed)
    excess = max(
        trace_norm(rho_s) - base_onenorm,
        trace_norm(rho_ts_direct) - base_onenorm,
        0.0,
    )
    return SemigroupReport(residual_onenorm=residual, contraction_excess=excess)


def _simpson_weights(j: int, h: float) -> np.ndarray:
    """Order-4 weights for int_0^{j h} over nodes 0..j (plus node 2 when j=1).

    Even j: composite Simpson.  Odd j >= 3: composite Simpson up to j-3,
    then the 3/8 rule on the last three intervals.  j = 1: the three-node
    left-edge rule h * (5 f0 + 8 f1 - f2) / 12, which reaches past the
    interval to node 2.
    """
    if j == 0:
        return np.zeros(1)
    if j == 1:
        return h * np.array([5.0, 8.0, -1.0]) / 12.0
    w = np.zeros(j + 1)
    if j % 2 == 0:
        w[0 : j + 1 : 2] += 2.0
        w[1:j:2] += 4.0
        w[0] -= 1.0
        w[j] -= 1.0
        return w * (h / 3.0)
    m = j - 3
    if m > 0:
        w[0 : m + 1 : 2] += 2.0 * (h / 3.0)
        w[1:m:2] += 4.0 * (h / 3.0)
        w[0] -= h / 3.0
        w[m] -= h / 3.0
    w[m : j + 1] += np.array([1.0, 3.0, 3.0, 1.0]) * (3.0 * h / 8.0)
    return w


def minimal_semigroup_picard(
    model: ModelSpec, a_obs, t: float, n_iters: int = 8, quad_points: int = 129
) -> list[np.ndarray]:
    """Iterates T(0)_t(A) .. T(n_iters)_t(A) of the minimal-semigroup scheme.

    The recursion starts from T(-1) = 0, so T(0)_t(A) = e^{G* t} A e^{G t};
    each level re-evaluates the defining integral on all quadrature nodes.
    Raises PicardDivergenceError when successive iterate distances grow twice
    in a row (the signature of an unresolved quadrature).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if quad_points < MIN_QUAD_POINTS:
        raise ValueError(f"quad_points must be >= {MIN_QUAD_POINTS}")
    q = int(quad_points)
    if q % 2 == 0:
        q += 1
    a = a_obs.matrix if isinstance(a_obs, Op) else np.asarray(a_obs, dtype=complex)
    d = model.dim
    h = t / (q - 1)
    g = model.G
    e_fwd = np.empty((q, d, d), dtype=complex)
    for j in range(q):
        e_fwd[j] = expm(g * (j * h))
    e_neg = expm(-g * h)
    e_dag = e_fwd.conj().transpose(0, 2, 1)
    # Level 0 at all nodes.
    base = np.matmul(e_dag, np.matmul(a[None], e_fwd))
    l_stack = np.stack(model.L) if model.L else np.zeros((0, d, d), dtype=complex)
    l_dag = l_stack.conj().transpose(0, 2, 1)
    weights = [_simpson_weights(j, h) for j in range(q)]
    iterates = [base[q - 1].copy()]
    current = base
    prev_dist = None
    grew = 0
    for _ in range(n_iters):
        integrand = np.zeros((q, d, d), dtype=complex)
        for k in range(l_stack.shape[0]):
            integrand += np.matmul(l_dag[k], np.matmul(current, l_stack[k]))
        nxt = base.copy()
        for j in range(1, q):
            if j == 1:
                conj_stack = np.empty((3, d, d), dtype=complex)
                conj_stack[0] = e_dag[1] @ integrand[0] @ e_fwd[1]
                conj_stack[1] = integrand[1]
                conj_stack[2] = dagger(e_neg) @ integrand[2] @ e_neg
            else:
                rev = e_fwd[j::-1]
                rev_dag = e_dag[j::-1]
                conj_stack = np.matmul(rev_dag, np.matmul(integrand[: j + 1], rev))
            nxt[j] += np.tensordot(weights[j], conj_stack, axes=1)
        dist = operator_norm(nxt[q - 1] - current[q - 1])
        if prev_dist is not None and dist > prev_dist:
            grew += 1
            if grew >= 2:
                raise PicardDivergenceError(
                    f"iterate distances grew twice in a row ({prev_dist:.3e} -> {dist:.3e})"
                )
        else:
            grew = 0
        prev_dist = dist
        current = nxt
        iterates.append(current[q - 1].copy())
    return iterates


def spectral_gap(model: ModelSpec, tol: float = 1e-10) -> float:
    """Slowest nonzero relaxation rate of the vectorized generator.

    Only meaningful (and only attempted) at exponential-solver scale.
    """
    if model.dim > EXPM_DIM_LIMIT:
        raise ValueError(f"spectral gap needs dim <= {EXPM_DIM_LIMIT}")
    lam = np.linalg.eigvals(vectorize_lindbladian(model).matrix)
    decaying = -lam.real[lam.real < -tol]
    if decaying.size == 0:
        raise ValueError("generator has no decaying modes; no spectral gap")
    return float(decaying.min())
