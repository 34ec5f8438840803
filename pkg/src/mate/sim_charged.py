"""Charged-particle scenes: Coulomb-like pair forces in a reflecting square box.

Unit masses and unit coupling. The force on particle i is
``sum_j q_i q_j (x_i - x_j) / max(|x_i - x_j|, eps)^3``: like charges repel,
opposite charges attract. Integration is kick-drift-kick leapfrog at
``inner_dt``; walls reflect specularly; positions are sampled every
``sample_dt``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from numba import njit

from .dataio import Episode


@dataclass
class ChargedConfig:
    n_particles: int = 5
    box_side: float = 5.0
    sample_dt: float = 0.2
    inner_dt: float = 1e-3
    n_steps: int = 100
    softening: float = 0.1
    init_speed_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        ratio = self.sample_dt / self.inner_dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("inner_dt must divide sample_dt")
        if not self.softening > 0:
            raise ValueError("softening must be positive")
        if self.n_particles < 1 or self.n_steps < 1 or not self.box_side > 0:
            raise ValueError("need n_particles >= 1, n_steps >= 1 and a positive box")

    @property
    def substeps(self) -> int:
        return int(round(self.sample_dt / self.inner_dt))

    def to_dict(self):
        return asdict(self)


def coulomb_forces(x: np.ndarray, q: np.ndarray, softening: float) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]                      # x_i - x_j
    r = np.sqrt((diff ** 2).sum(-1))
    r = np.maximum(r, softening)
    coef = (q[:, None] * q[None, :]) / r ** 3
    np.fill_diagonal(coef, 0.0)
    return (coef[:, :, None] * diff).sum(axis=1)


def potential_energy(x: np.ndarray, q: np.ndarray) -> float:
    """Pair potential consistent with the force law when no pair is softened."""
    diff = x[:, None, :] - x[None, :, :]
    r = np.sqrt((diff ** 2).sum(-1))
    iu = np.triu_indices(len(q), 1)
    return float((q[:, None] * q[None, :])[iu] @ (1.0 / r[iu]))


def kinetic_energy(v: np.ndarray) -> float:
    return 0.5 * float((v ** 2).sum())


@njit(cache=True)
def _pair_forces(x, q, softening, f):
    n = x.shape[0]
    f[:] = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            r = max(np.sqrt(dx * dx + dy * dy), softening)
            c = q[i] * q[j] / (r * r * r)
            # equal and opposite: total momentum is conserved to rounding
            f[i, 0] += c * dx
            f[i, 1] += c * dy
            f[j, 0] -= c * dx
            f[j, 1] -= c * dy


@njit(cache=True)
def _kdk(x, v, q, f, inner_dt, n_inner, softening, half_box, walls):
    half = 0.5 * inner_dt
    n = x.shape[0]
    for _ in range(n_inner):
        for i in range(n):
            for d in range(2):
                v[i, d] += half * f[i, d]
                x[i, d] += inner_dt * v[i, d]
                if walls:
                    if x[i, d] > half_box:
                        x[i, d] = 2.0 * half_box - x[i, d]
                        v[i, d] = -v[i, d]
                    elif x[i, d] < -half_box:
                        x[i, d] = -2.0 * half_box - x[i, d]
                        v[i, d] = -v[i, d]
        _pair_forces(x, q, softening, f)
        for i in range(n):
            for d in range(2):
                v[i, d] += half * f[i, d]


def leapfrog(x, v, q, inner_dt: float, n_inner: int, softening: float,
             half_box: float | None = None, force=None):
    """Advance ``n_inner`` kick-drift-kick steps. Returns ``(x, v, force)``.

    ``half_box=None`` removes the walls. ``force`` may carry the force at the
    current positions from a previous call.
    """
    x = np.array(x, dtype=np.float64)
    v = np.array(v, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if force is None:
        f = np.zeros_like(x)
        _pair_forces(x, q, softening, f)
    else:
        f = np.array(force, dtype=np.float64)
    walls = half_box is not None
    _kdk(x, v, q, f, inner_dt, int(n_inner), softening, half_box if walls else 0.0, walls)
    return x, v, f


def initial_state(config: ChargedConfig, rng: np.random.Generator):
    n = config.n_particles
    q = rng.choice(np.array([1.0, -1.0]), size=n)
    quarter = config.box_side / 4
    x = rng.uniform(-quarter, quarter, size=(n, 2))
    v = rng.normal(0.0, config.init_speed_std, size=(n, 2))
    return x, v, q


def simulate_from(x, v, q, config: ChargedConfig, walls: bool = True) -> np.ndarray:
    """Sampled positions ``[n_steps, N, 2]`` from a given initial state."""
    half_box = config.box_side / 2 if walls else None
    out = np.empty((config.n_steps, len(q), 2))
    out[0] = x
    f = None
    for t in range(1, config.n_steps):
        x, v, f = leapfrog(x, v, q, config.inner_dt, config.substeps, config.softening,
                           half_box, f)
        out[t] = x
    return out


def simulate_charged(config: ChargedConfig, index: int = 0) -> Episode:
    """One scene; the RNG stream is derived from ``(config.seed, index)``."""
    rng = np.random.default_rng([config.seed, index])
    x, v, q = initial_state(config, rng)
    pos = simulate_from(x, v, q, config)
    return Episode(pos, config.sample_dt, "charged", {"charges": q.tolist()})


def generate(config: ChargedConfig, count: int) -> list[Episode]:
    return [simulate_charged(config, i) for i in range(count)]


def variant_configs(base: ChargedConfig) -> dict[str, ChargedConfig]:
    """Zero-shot environments: double particles, half sampling step, smaller box."""
    return {
        "double_agents": replace(base, n_particles=2 * base.n_particles),
        "half_dt": replace(base, sample_dt=base.sample_dt / 2),
        "half_space": replace(base, box_side=3.5),
    }
