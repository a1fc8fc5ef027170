"""Evolution models, ground-truth solvers and the augmented SDE integrator.

The incomplete models are the Fisher-KPP equation with unit carrying
capacity and pure diffusion; the corresponding true closures are a
quadratic reaction correction and the missing advection term.
The augmented state ``z = [u; eta]`` evolves by Euler-Maruyama::

    u   <- u + dt * (F(u) + B (sigma * eta))
    eta <- eta + sqrt(dt) * noise
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from importlib import resources
from typing import Callable

import numpy as np

from .basis import BasisSet
from .errors import ConfigurationError, DimensionError
from .grid import BoundaryCondition, SpatialGrid, advective_divergence, grid_points, laplacian


@dataclass(frozen=True)
class EvolutionModel:
    """Right-hand side ``F(u)`` of a (possibly incomplete) PDE on a grid."""

    rhs: Callable[[np.ndarray], np.ndarray]
    grid: SpatialGrid
    bc: BoundaryCondition
    params: dict = field(default_factory=dict)
    label: str = ""

    def __call__(self, u) -> np.ndarray:
        out = self.rhs(u)
        if self.bc is BoundaryCondition.DIRICHLET:
            out[self.grid.boundary_mask()] = 0.0
        return out

    @property
    def diffusivity(self) -> float:
        return float(self.params.get("D", 0.0))

    @property
    def velocity(self) -> np.ndarray:
        return np.asarray(self.params.get("velocity", np.zeros(self.grid.dim)), dtype=float)


@dataclass(frozen=True)
class TrueClosure:
    apply: Callable[[np.ndarray], np.ndarray]
    label: str = ""
    velocity: np.ndarray | None = None

    def __call__(self, u) -> np.ndarray:
        return self.apply(u)


@dataclass
class AugmentedState:
    """``u`` of shape ``(N_x, ...)`` and ``eta`` of shape ``(M+1, ...)``."""

    u: np.ndarray
    eta: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u, self.eta], axis=0)

    @classmethod
    def split(cls, z, n_state: int) -> "AugmentedState":
        z = np.asarray(z, dtype=float)
        return cls(z[:n_state], z[n_state:])

    def copy(self) -> "AugmentedState":
        return AugmentedState(self.u.copy(), self.eta.copy())


# --- right-hand sides and closures ----------------------------------------

def kpp_incomplete_rhs(u, grid: SpatialGrid, D: float) -> np.ndarray:
    """``D lap(u) + u (1 - u)`` with zero-flux boundaries."""
    if D <= 0:
        raise ConfigurationError("diffusivity must be positive")
    u = np.asarray(u, dtype=float)
    return D * laplacian(u, grid, BoundaryCondition.NEUMANN) + u * (1.0 - u)


def kpp_true_closure(u, K: float) -> np.ndarray:
    """``(1 - 1/K) u^2``: the reaction term missing when capacity ``K`` is mistaken for 1."""
    if K == 0:
        raise ConfigurationError("carrying capacity must be nonzero")
    u = np.asarray(u, dtype=float)
    return (1.0 - 1.0 / K) * u * u


def advdiff_incomplete_rhs(u, grid: SpatialGrid, D: float) -> np.ndarray:
    if D <= 0:
        raise ConfigurationError("diffusivity must be positive")
    return D * laplacian(u, grid, BoundaryCondition.DIRICHLET)


def velocity_vector(c: float, dim: int, override=None) -> np.ndarray:
    """Velocity for a scalar speed ``c``.

    In 2D the default direction is the diagonal, ``(c, c) / sqrt(2)``.
    """
    if override is not None and len(override):
        v = np.asarray(override, dtype=float)
        if v.shape != (dim,):
            raise ConfigurationError(f"velocity override must have {dim} components")
        return v
    if dim == 1:
        return np.array([float(c)])
    return np.full(dim, float(c) / math.sqrt(dim))


def advdiff_true_closure(u, grid: SpatialGrid, c: float, velocity=None,
                         bc=BoundaryCondition.DIRICHLET) -> np.ndarray:
    """Missing advection ``-div(c u)``."""
    v = velocity_vector(c, grid.dim, velocity)
    return -advective_divergence(u, grid, v, bc)


def kpp_model(grid: SpatialGrid, D: float) -> EvolutionModel:
    return EvolutionModel(partial(kpp_incomplete_rhs, grid=grid, D=D), grid,
                          BoundaryCondition.NEUMANN, {"D": D}, "kpp")


def kpp_closure(K: float) -> TrueClosure:
    return TrueClosure(partial(kpp_true_closure, K=K), f"kpp(K={K})")


def advdiff_model(grid: SpatialGrid, D: float) -> EvolutionModel:
    return EvolutionModel(partial(advdiff_incomplete_rhs, grid=grid, D=D), grid,
                          BoundaryCondition.DIRICHLET, {"D": D}, "advdiff")


def advdiff_closure(grid: SpatialGrid, c: float, velocity=None) -> TrueClosure:
    v = velocity_vector(c, grid.dim, velocity)
    return TrueClosure(partial(advdiff_true_closure, grid=grid, c=c, velocity=v),
                       f"advection(c={c})", velocity=v)


def complete_model(model: EvolutionModel, closure: TrueClosure) -> EvolutionModel:
    """The model with the true closure added back in."""
    params = dict(model.params)
    if closure.velocity is not None:
        params["velocity"] = np.asarray(closure.velocity)
    return EvolutionModel(lambda u: model.rhs(u) + closure(u), model.grid, model.bc,
                          params, f"{model.label}+{closure.label}")


# --- time stepping ----------------------------------------------------------

def stable_time_step(grid: SpatialGrid, D: float, velocity=None, safety: float = 0.5) -> float:
    """Explicit step: half the FTCS diffusion limit, halved until the CFL number is at most 0.5."""
    h = min(grid.spacing)
    dt = safety * h * h / (2 * grid.dim * D) if D > 0 else safety * h
    speed = float(np.max(np.abs(velocity))) if velocity is not None and len(velocity) else 0.0
    while speed > 0 and speed * dt / h > 0.5:
        dt *= 0.5
    return dt


def check_stability(dt: float, grid: SpatialGrid, D: float, velocity=None) -> None:
    if not dt > 0:
        raise ConfigurationError("time step must be positive")
    h = min(grid.spacing)
    if D > 0 and dt > h * h / (2 * grid.dim * D) * (1 + 1e-12):
        raise ConfigurationError(f"dt={dt:g} violates the diffusion stability limit {h * h / (2 * grid.dim * D):g}")
    speed = float(np.max(np.abs(velocity))) if velocity is not None and len(velocity) else 0.0
    if speed * dt / h > 1.0:
        raise ConfigurationError(f"dt={dt:g} violates the CFL limit")


def substep_schedule(t_from: float, t_to: float, dt: float) -> np.ndarray:
    """Steps of size ``dt`` with a shortened last step landing on ``t_to``."""
    span = t_to - t_from
    if span < 0:
        raise ConfigurationError("t_to must not precede t_from")
    if span == 0:
        return np.zeros(0)
    n = max(1, math.ceil(span / dt - 1e-9))
    steps = np.full(n, dt)
    steps[-1] = span - dt * (n - 1)
    return steps


@dataclass
class Trajectory:
    times: np.ndarray
    fields: np.ndarray  # (n_times, N_x)
    dt: float

    def at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if idx.size == 0:
            raise ConfigurationError(f"trajectory has no field at t={t}")
        return self.fields[idx[0]]


def solve_truth(model: EvolutionModel, closure: TrueClosure | None, initial, T: float,
                save_times, dt: float | None = None) -> Trajectory:
    """Integrate the complete model with explicit Euler.

    The step sequence between consecutive save times follows
    :func:`substep_schedule`, so fields are stored exactly at ``save_times``.
    """
    full = complete_model(model, closure) if closure is not None else model
    velocity = full.velocity if "velocity" in full.params else None
    if dt is None:
        dt = stable_time_step(model.grid, model.diffusivity, velocity)
    check_stability(dt, model.grid, model.diffusivity, velocity)
    save_times = np.asarray(sorted(float(t) for t in save_times))
    if save_times.size and (save_times[0] < 0 or save_times[-1] > T + 1e-12):
        raise ConfigurationError("save times must lie in [0, T]")
    u = np.array(initial, dtype=float)
    if u.shape != (model.grid.n_points,):
        raise DimensionError("initial field does not match the grid")
    if model.bc is BoundaryCondition.DIRICHLET:
        u[model.grid.boundary_mask()] = 0.0
    out = []
    t = 0.0
    for ts in save_times:
        for step in substep_schedule(t, ts, dt):
            u = u + step * full(u)
        t = ts
        out.append(u.copy())
    fields = np.array(out).reshape(len(save_times), model.grid.n_points)
    return Trajectory(save_times, fields, dt)


def step_augmented(z: AugmentedState, dt: float, model: EvolutionModel, basis: BasisSet | None,
                   sigma, noise) -> AugmentedState:
    """One Euler-Maruyama step of the augmented system.

    ``noise`` holds standard normal draws shaped like ``z.eta``.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != z.eta.shape:
        raise DimensionError(f"noise shape {noise.shape} does not match eta shape {z.eta.shape}")
    drift = model(z.u)
    if basis is not None and basis.n_bases:
        closure = basis.synthesize(z.eta, sigma)
        if model.bc is BoundaryCondition.DIRICHLET:
            closure[model.grid.boundary_mask()] = 0.0
        drift = drift + closure
    return AugmentedState(z.u + dt * drift, z.eta + math.sqrt(dt) * noise)


def forecast_substeps(z: AugmentedState, t_from: float, t_to: float, model: EvolutionModel,
                      basis: BasisSet | None, sigma, noise_source, dt: float | None = None) -> AugmentedState:
    """Propagate ``z`` from ``t_from`` to ``t_to``.

    ``noise_source`` is either a :class:`numpy.random.Generator` or an array
    of pre-drawn standard normals of shape ``(n_steps,) + z.eta.shape``.
    """
    if dt is None:
        dt = stable_time_step(model.grid, model.diffusivity)
    steps = substep_schedule(t_from, t_to, dt)
    if isinstance(noise_source, np.random.Generator):
        noise = noise_source.standard_normal((len(steps),) + z.eta.shape)
    else:
        noise = np.asarray(noise_source, dtype=float)
        if noise.shape != (len(steps),) + z.eta.shape:
            raise DimensionError(f"expected noise of shape {(len(steps),) + z.eta.shape}, got {noise.shape}")
    for j, step in enumerate(steps):
        z = step_augmented(z, step, model, basis, sigma, noise[j])
    return z


# --- initial conditions -------------------------------------------------------

def sine_initial(grid: SpatialGrid, frequency: float = 4.0, offset: float = 1.0) -> np.ndarray:
    """``sin(frequency * pi * x) + offset`` along the first axis."""
    x = grid_points(grid)
    return np.sin(frequency * np.pi * x[:, 0]) + offset


def gaussian_peak(grid: SpatialGrid, center: float = 0.25, width: float = 200.0) -> np.ndarray:
    """``exp(-width * |x - center|^2)``."""
    x = grid_points(grid)
    return np.exp(-width * np.sum((x - center) ** 2, axis=1))


def gp_initial_condition(grid: SpatialGrid, seed: int, length_scale: float = 0.2) -> np.ndarray:
    """Exponentiated squared-exponential GP sample, scaled to a maximum of 1.

    The kernel separates over axes, so the sample is ``L_1 Z L_2^T`` with
    per-axis Cholesky factors.
    """
    rng = np.random.default_rng(seed)
    factors = []
    for ax in grid.axes():
        k = np.exp(-0.5 * (ax[:, None] - ax[None, :]) ** 2 / length_scale**2)
        w, V = np.linalg.eigh(k)
        factors.append(V * np.sqrt(np.clip(w, 0.0, None)))
    g = rng.standard_normal(grid.shape)
    for axis, L in enumerate(factors):
        g = np.moveaxis(np.tensordot(L, g, axes=([1], [axis])), 0, axis)
    field = np.exp(g.ravel())
    return field / field.max()


GP_FIXTURE = "kpp2d_initial_50x50.csv"
GP_FIXTURE_SEED = 20240607
GP_FIXTURE_LENGTH = 0.2


def load_gp_fixture(grid: SpatialGrid) -> np.ndarray:
    """2D Fisher-KPP initial condition from the shipped 50x50 fixture.

    Grids of other resolution over the same ``[0, 1]^2`` domain get a bilinear
    interpolation of the fixture.
    """
    from scipy.interpolate import RegularGridInterpolator

    if grid.dim != 2:
        raise ConfigurationError("the GP fixture is two dimensional")
    text = resources.files("closure_enkf").joinpath("data").joinpath(GP_FIXTURE).read_text()
    values = np.loadtxt(text.splitlines(), delimiter=",").reshape(50, 50)
    if grid.count == (50, 50) and grid.extent == (1.0, 1.0):
        return values.ravel().copy()
    src = np.linspace(0.0, 1.0, 50)
    interp = RegularGridInterpolator((src, src), values)
    pts = np.clip(grid_points(grid) / np.asarray(grid.extent), 0.0, 1.0)
    return interp(pts)
