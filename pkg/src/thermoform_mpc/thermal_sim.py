"""Physics-based plant: a thermoplastic sheet heated by a 5x3 bank of radiant heaters.

The sheet is split into ``Nx x Ny`` single-layer elements.  Each element exchanges
heat with every heater face by radiation, loses heat to ambient by convection on
both faces and conducts to its four neighbours (edges are adiabatic).  Heater
surface temperatures follow a lumped first-order model driven by electrical power.

Array conventions: ``sheet_T`` has shape ``(Nx, Ny)`` with ``x`` along the sheet
length (heater rows) and ``y`` along the width (heater columns).  Heaters and
zones are indexed row-major, so zone ``i`` lies under heater ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SIGMA = 5.670374419e-8


class ConfigError(ValueError):
    """Invalid plant or controller configuration."""


class InputError(ValueError):
    """Heater power outside the admissible range."""


class DivergenceError(RuntimeError):
    """Simulator produced a non-finite temperature."""


@dataclass(frozen=True)
class MaterialParams:
    rho: float = 1380.0
    cp: float = 1465.0
    k: float = 0.18
    eps_e: float = 0.95
    absorptivity: float = 0.8
    h_top: float = 5.0
    h_bot: float = 5.0

    def validate(self) -> None:
        for name in ("rho", "cp", "k", "eps_e", "absorptivity", "h_top", "h_bot"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("eps_e", "absorptivity"):
            if getattr(self, name) > 1:
                raise ConfigError(f"{name} must be in (0, 1], got {getattr(self, name)}")


@dataclass(frozen=True)
class GeometryParams:
    """Sheet and heater-bank geometry.

    ``heater_w`` is the heater face extent along the sheet width (y) and
    ``heater_h`` its extent along the sheet length (x).  Heater faces are
    centred above the zone centres at height ``gap_d``.
    """

    Lx: float = 0.75
    Ly: float = 0.5
    dz: float = 0.002
    Nx: int = 30
    Ny: int = 18
    gap_d: float = 0.15
    heater_rows: int = 5
    heater_cols: int = 3
    heater_w: float = 0.245
    heater_h: float = 0.060

    def validate(self) -> None:
        for name in ("Lx", "Ly", "dz", "gap_d", "heater_w", "heater_h"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("Nx", "Ny", "heater_rows", "heater_cols"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.Nx % self.heater_rows:
            raise ConfigError(f"Nx={self.Nx} not divisible by heater_rows={self.heater_rows}")
        if self.Ny % self.heater_cols:
            raise ConfigError(f"Ny={self.Ny} not divisible by heater_cols={self.heater_cols}")

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dy(self) -> float:
        return self.Ly / self.Ny

    @property
    def n_heaters(self) -> int:
        return self.heater_rows * self.heater_cols

    @property
    def element_area(self) -> float:
        return self.dx * self.dy

    @property
    def element_volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def heater_area(self) -> float:
        return self.heater_w * self.heater_h

    def element_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xc = (np.arange(self.Nx) + 0.5) * self.dx
        yc = (np.arange(self.Ny) + 0.5) * self.dy
        return xc, yc

    def heater_centers(self) -> np.ndarray:
        """(n_heaters, 2) array of heater face centres, row-major."""
        px = self.Lx / self.heater_rows
        py = self.Ly / self.heater_cols
        rows, cols = np.divmod(np.arange(self.n_heaters), self.heater_cols)
        return np.column_stack([(rows + 0.5) * px, (cols + 0.5) * py])


@dataclass(frozen=True)
class EnvParams:
    T_amb: float = 294.15
    sigma: float = SIGMA

    def validate(self) -> None:
        if not self.T_amb > 0:
            raise ConfigError(f"T_amb must be positive, got {self.T_amb}")


@dataclass(frozen=True)
class HeaterModelParams:
    heat_capacity: float = 300.0
    loss_coeff: float = 10.0
    eps_h: float = 0.9
    P_max: float = 500.0

    def validate(self) -> None:
        for name in ("heat_capacity", "loss_coeff", "eps_h", "P_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.eps_h > 1:
            raise ConfigError(f"eps_h must be in (0, 1], got {self.eps_h}")


@dataclass(frozen=True)
class PlantConfig:
    material: MaterialParams = field(default_factory=MaterialParams)
    geometry: GeometryParams = field(default_factory=GeometryParams)
    env: EnvParams = field(default_factory=EnvParams)
    heater: HeaterModelParams = field(default_factory=HeaterModelParams)
    dt_sim: float = 0.5
    # toggles used by verification runs; physical runs keep all three on
    radiation: bool = True
    convection: bool = True
    conduction: bool = True

    def validate(self) -> None:
        self.material.validate()
        self.geometry.validate()
        self.env.validate()
        self.heater.validate()
        if not self.dt_sim > 0:
            raise ConfigError(f"dt_sim must be positive, got {self.dt_sim}")

    def with_params(self, h: float | None = None, gap_d: float | None = None,
                    absorptivity: float | None = None) -> "PlantConfig":
        """Copy with the robustness-sweep parameters replaced."""
        mat, geom = self.material, self.geometry
        if h is not None:
            mat = replace(mat, h_top=h, h_bot=h)
        if absorptivity is not None:
            mat = replace(mat, absorptivity=absorptivity)
        if gap_d is not None:
            geom = replace(geom, gap_d=gap_d)
        return replace(self, material=mat, geometry=geom)


@dataclass
class ThermalState:
    sheet_T: np.ndarray
    heater_T: np.ndarray
    time: float = 0.0

    def copy(self) -> "ThermalState":
        return ThermalState(self.sheet_T.copy(), self.heater_T.copy(), self.time)

    @classmethod
    def uniform(cls, geom: GeometryParams, T: float, heater_T: float | None = None) -> "ThermalState":
        return cls(
            np.full((geom.Nx, geom.Ny), float(T)),
            np.full(geom.n_heaters, float(T if heater_T is None else heater_T)),
        )


@dataclass(frozen=True)
class ViewFactorMatrix:
    """View factors ``F[h, i]`` from heater ``h`` to sheet element ``i`` (row-major)."""

    F: np.ndarray


def _corner_view_factor(a, b, c):
    """Differential element to a parallel rectangle with one corner above it.

    ``a`` and ``b`` are signed rectangle extents, ``c`` the separation.  The
    expression is odd in ``a`` and ``b``, which makes four-corner superposition
    work with signed offsets.
    """
    A = np.asarray(a) / c
    B = np.asarray(b) / c
    sa = np.sqrt(1.0 + A * A)
    sb = np.sqrt(1.0 + B * B)
    return (A / sa * np.arctan(B / sa) + B / sb * np.arctan(A / sb)) / (2.0 * np.pi)


def point_view_factor(px, py, x1, x2, y1, y2, gap):
    """View factor from a differential element at ``(px, py)`` facing up to the
    rectangle ``[x1, x2] x [y1, y2]`` lying parallel at height ``gap``."""
    if not gap > 0:
        raise ConfigError(f"gap must be positive, got {gap}")
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    xa, xb = x1 - px, x2 - px
    ya, yb = y1 - py, y2 - py
    return (_corner_view_factor(xb, yb, gap) - _corner_view_factor(xa, yb, gap)
            - _corner_view_factor(xb, ya, gap) + _corner_view_factor(xa, ya, gap))


def build_view_factors(geom: GeometryParams) -> ViewFactorMatrix:
    """Heater-to-element view factors for every heater/element pair.

    The element-to-heater factor is evaluated exactly at the element centre and
    converted by reciprocity, ``F_h->i = A_i F_i->h / A_h``.
    """
    geom.validate()
    if not geom.element_area > 0:
        raise ConfigError("element area must be positive")
    xc, yc = geom.element_centers()
    PX, PY = np.meshgrid(xc, yc, indexing="ij")
    PX, PY = PX.ravel(), PY.ravel()
    F = np.empty((geom.n_heaters, PX.size))
    for h, (cx, cy) in enumerate(geom.heater_centers()):
        f_ih = point_view_factor(
            PX, PY,
            cx - geom.heater_h / 2, cx + geom.heater_h / 2,
            cy - geom.heater_w / 2, cy + geom.heater_w / 2,
            geom.gap_d,
        )
        F[h] = geom.element_area * f_ih / geom.heater_area
    F = np.clip(F, 0.0, 1.0)
    # centre-point sampling can overshoot on coarse grids at small gaps; a
    # heater cannot deliver more than all it emits
    total = F.sum(axis=1, keepdims=True)
    F = np.where(total > 1.0, F / np.maximum(total, 1.0), F)
    return ViewFactorMatrix(F)


def radiation_flux(state: ThermalState, vf: ViewFactorMatrix, mat: MaterialParams,
                   geom: GeometryParams, env: EnvParams) -> np.ndarray:
    """Radiant power absorbed by each element [W], shape ``(Nx, Ny)``."""
    T = state.sheet_T.ravel()
    theta4 = state.heater_T ** 4
    if vf.F.shape != (theta4.size, T.size):
        raise ValueError(f"view factor shape {vf.F.shape} does not match state")
    # sum_h F_hi (theta_h^4 - T_i^4)
    exch = theta4 @ vf.F - vf.F.sum(axis=0) * T ** 4
    q = mat.absorptivity * geom.heater_area * mat.eps_e * env.sigma * exch
    return q.reshape(state.sheet_T.shape)


def convection_flux(state: ThermalState, mat: MaterialParams, geom: GeometryParams,
                    env: EnvParams) -> np.ndarray:
    return (mat.h_top + mat.h_bot) * geom.dx * geom.dy * (env.T_amb - state.sheet_T)


def conduction_flux(state: ThermalState, mat: MaterialParams, geom: GeometryParams) -> np.ndarray:
    T = state.sheet_T
    gx = mat.k * geom.dy * geom.dz / geom.dx  # conductance between x-neighbours
    gy = mat.k * geom.dx * geom.dz / geom.dy
    q = np.zeros_like(T)
    fx = gx * (T[1:, :] - T[:-1, :])
    q[:-1, :] += fx
    q[1:, :] -= fx
    fy = gy * (T[:, 1:] - T[:, :-1])
    q[:, :-1] += fy
    q[:, 1:] -= fy
    return q


def _check_powers(powers, hp: HeaterModelParams, n: int) -> np.ndarray:
    p = np.asarray(powers, dtype=float)
    if p.shape != (n,):
        raise InputError(f"expected {n} heater powers, got shape {p.shape}")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > hp.P_max):
        raise InputError(f"heater powers must lie in [0, {hp.P_max}] W")
    return p


def heater_rate(heater_T: np.ndarray, powers: np.ndarray, hp: HeaterModelParams,
                env: EnvParams, area: float) -> np.ndarray:
    loss = area * hp.eps_h * env.sigma * (heater_T ** 4 - env.T_amb ** 4) \
        + hp.loss_coeff * area * (heater_T - env.T_amb)
    return (powers - loss) / hp.heat_capacity


def heater_step(state: ThermalState, powers, hp: HeaterModelParams, env: EnvParams,
                dt: float, area: float = GeometryParams().heater_area) -> np.ndarray:
    """One explicit Euler step of the heater surface temperatures."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    p = _check_powers(powers, hp, state.heater_T.size)
    return state.heater_T + dt * heater_rate(state.heater_T, p, hp, env, area)


def heater_steady_state(power: float, hp: HeaterModelParams, env: EnvParams,
                        area: float = GeometryParams().heater_area) -> float:
    """Surface temperature at which a heater dissipates ``power`` (bisection)."""
    lo, hi = env.T_amb, env.T_amb + 1.0
    while heater_rate(np.array([hi]), np.array([power]), hp, env, area)[0] > 0:
        hi = env.T_amb + 2 * (hi - env.T_amb)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if heater_rate(np.array([mid]), np.array([power]), hp, env, area)[0] > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class ThermalSimulator:
    """Stateful wrapper holding the configuration and cached view factors."""

    def __init__(self, config: PlantConfig | None = None, state: ThermalState | None = None):
        self.config = config or PlantConfig()
        self.config.validate()
        self.vf = build_view_factors(self.config.geometry)
        self.state = state if state is not None else ThermalState.uniform(
            self.config.geometry, self.config.env.T_amb)
        g, m = self.config.geometry, self.config.material
        self._inv_cap = 1.0 / (m.rho * g.element_volume * m.cp)

    def reset(self, state: ThermalState | None = None) -> None:
        self.state = state if state is not None else ThermalState.uniform(
            self.config.geometry, self.config.env.T_amb)

    def sheet_power(self, state: ThermalState) -> np.ndarray:
        """Net power dU into each element [W]."""
        c = self.config
        dU = np.zeros_like(state.sheet_T)
        if c.radiation:
            dU += radiation_flux(state, self.vf, c.material, c.geometry, c.env)
        if c.convection:
            dU += convection_flux(state, c.material, c.geometry, c.env)
        if c.conduction:
            dU += conduction_flux(state, c.material, c.geometry)
        return dU

    def step(self, powers, dt_control: float = 6.0) -> ThermalState:
        """Advance by ``dt_control`` seconds with piecewise-constant heater powers."""
        c = self.config
        p = _check_powers(powers, c.heater, c.geometry.n_heaters)
        n_sub = max(1, int(np.ceil(dt_control / c.dt_sim - 1e-9)))
        dt = dt_control / n_sub
        s = self.state.copy()
        area = c.geometry.heater_area
        for _ in range(n_sub):
            # Heun: Euler predictor, trapezoidal corrector
            k1_h = heater_rate(s.heater_T, p, c.heater, c.env, area)
            k1_s = self._inv_cap * self.sheet_power(s)
            pred = ThermalState(s.sheet_T + dt * k1_s, s.heater_T + dt * k1_h)
            k2_h = heater_rate(pred.heater_T, p, c.heater, c.env, area)
            k2_s = self._inv_cap * self.sheet_power(pred)
            s.heater_T = s.heater_T + 0.5 * dt * (k1_h + k2_h)
            s.sheet_T = s.sheet_T + 0.5 * dt * (k1_s + k2_s)
        s.time = self.state.time + dt_control
        if not (np.all(np.isfinite(s.sheet_T)) and np.all(np.isfinite(s.heater_T))):
            raise DivergenceError(f"non-finite temperature at t={s.time:g} s; reduce dt_sim")
        self.state = s
        return s

    def zone_temperatures(self) -> np.ndarray:
        return zone_average(self.state, self.config.geometry)


def step(state: ThermalState, powers, config: PlantConfig, dt_control: float = 6.0) -> ThermalState:
    """Functional form of :meth:`ThermalSimulator.step`; ``state`` is not modified."""
    sim = ThermalSimulator(config, state.copy())
    return sim.step(powers, dt_control)


def zone_average(state: ThermalState, geom: GeometryParams) -> np.ndarray:
    """Mean element temperature of each zone, row-major (zone i under heater i)."""
    T = state.sheet_T
    r, c = geom.heater_rows, geom.heater_cols
    bx, by = T.shape[0] // r, T.shape[1] // c
    return T.reshape(r, bx, c, by).mean(axis=(1, 3)).ravel()
