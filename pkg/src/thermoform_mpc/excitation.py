"""Staircase PRBS excitation and open-loop data collection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .narx import Dataset
from .thermal_sim import DivergenceError, PlantConfig, ThermalSimulator

KELVIN = 273.15


@dataclass(frozen=True)
class PrbsSchedule:
    segment_duration: float = 12000.0
    amplitude_step: float = 100.0
    max_level: float = 500.0
    switching_period: float = 60.0
    sample_time: float = 6.0
    seed: int = 0

    def validate(self) -> None:
        ratio = self.max_level / self.amplitude_step
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ValueError("amplitude_step must divide max_level")
        if self.switching_period < self.sample_time:
            raise ValueError("switching_period must be >= sample_time")
        for name in ("segment_duration", "sample_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def segment_bounds(self) -> list[tuple[float, float]]:
        """Lower/upper bounds per segment: up to the top band, then back down."""
        n = int(round(self.max_level / self.amplitude_step))
        lows = [k * self.amplitude_step for k in range(n)]
        lows = lows + lows[::-1]
        return [(lo, lo + self.amplitude_step) for lo in lows]

    @property
    def samples_per_segment(self) -> int:
        return int(round(self.segment_duration / self.sample_time))


@dataclass(frozen=True)
class CollectConfig:
    """Open-loop data collection settings (sensor noise in K)."""
    sample_time: float = 6.0
    noise_std: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not self.sample_time > 0:
            raise ValueError(f"sample_time must be positive, got {self.sample_time}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


def channel_generators(seed: int, n: int) -> list[np.random.Generator]:
    """Independent counter-based streams, one per channel, from a single seed."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_prbs(schedule: PrbsSchedule = PrbsSchedule(), H: int = 15) -> np.ndarray:
    """Two-level random sequence per heater inside a staircase of power bands.

    Each channel holds a random level for ``switching_period`` seconds; slot
    boundaries are offset by a random per-channel phase.  Returns ``(T, H)`` in W.
    """
    schedule.validate()
    bounds = schedule.segment_bounds()
    seg = schedule.samples_per_segment
    T = seg * len(bounds)
    hold = max(1, int(round(schedule.switching_period / schedule.sample_time)))
    lo = np.repeat([b[0] for b in bounds], seg)
    hi = np.repeat([b[1] for b in bounds], seg)
    U = np.empty((T, H))
    for j, rng in enumerate(channel_generators(schedule.seed, H)):
        phase = int(rng.integers(hold))
        slots = (np.arange(T) + phase) // hold
        bits = rng.integers(0, 2, size=slots[-1] + 1).astype(bool)
        U[:, j] = np.where(bits[slots], hi, lo)
    return U


def collect_dataset(config: PlantConfig, U: np.ndarray, dt: float = 6.0,
                    noise_std: float = 0.0, seed: int = 0) -> Dataset:
    """Run the plant open loop under ``U`` and record zone temperatures in deg C.

    Row ``t`` pairs the input applied over ``[t dt, (t+1) dt)`` with the zone
    temperatures measured at ``t dt`` (before that input acts).  Optional
    Gaussian sensor noise of ``noise_std`` K is added to the recorded outputs.
    """
    sim = ThermalSimulator(config)
    U = np.asarray(U, dtype=float)
    Y = np.empty((len(U), config.geometry.n_heaters))
    for t, u in enumerate(U):
        Y[t] = sim.zone_temperatures() - KELVIN
        try:
            sim.step(u, dt)
        except DivergenceError as exc:
            raise DivergenceError(f"simulator diverged at sample {t} of {len(U)}: {exc}") from exc
    if noise_std > 0:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1])))
        Y = Y + rng.normal(0.0, noise_std, size=Y.shape)
    return Dataset(dt, U, Y)
