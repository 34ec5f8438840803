"""Goal-driven crowd scenes: every agent pursues another agent under ORCA.

Agents are discs of equal radius in a circular arena centred at the origin.
Each agent is assigned a target agent once per episode; the pursuit graph is
stored as ``targets`` metadata and serves as the ground-truth interaction
graph.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .dataio import Episode
from .orca import orca_lines, solve_velocity

MAX_PLACEMENT_TRIES = 1000
# extra clearance given to the avoidance constraints; absorbs the residual
# overlap left when crowded agents make the LP infeasible
SAFETY_MARGIN = 0.1


class PlacementError(RuntimeError):
    pass


@dataclass
class SocialnavConfig:
    n_agents: int = 5
    agent_radius: float = 0.3
    arena_radius: float = 8.0
    preferred_speed: float = 1.0
    dt: float = 0.25
    t_total: int = 34
    avoidance_horizon: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not self.agent_radius > 0 or not self.preferred_speed > 0:
            raise ValueError("agent_radius and preferred_speed must be positive")
        if self.n_agents < 2:
            raise ValueError("socialnav needs at least two agents")
        if not self.dt > 0 or not self.avoidance_horizon > 0 or self.t_total < 2:
            raise ValueError("need dt > 0, avoidance_horizon > 0 and t_total >= 2")
        if self.arena_radius <= self.agent_radius:
            raise ValueError("arena must be larger than an agent")

    def to_dict(self):
        return asdict(self)


def preferred_velocity(x, target_x, speed: float, radius: float) -> np.ndarray:
    """Full speed toward the target; zero once within two radii of it."""
    d = np.asarray(target_x, float) - np.asarray(x, float)
    dist = float(np.hypot(d[0], d[1]))
    if dist <= 2 * radius:
        return np.zeros(2)
    return speed * d / dist


def place_agents(config: SocialnavConfig, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample non-overlapping positions inside the arena."""
    r = config.agent_radius
    reach = config.arena_radius - r
    min_gap = 2 * r + 0.1
    pts: list[np.ndarray] = []
    tries = 0
    while len(pts) < config.n_agents:
        tries += 1
        if tries > MAX_PLACEMENT_TRIES * config.n_agents:
            raise PlacementError(
                f"could not place {config.n_agents} agents of radius {r} "
                f"in an arena of radius {config.arena_radius}")
        rho = reach * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        p = np.array([rho * np.cos(phi), rho * np.sin(phi)])
        if all(np.hypot(*(p - q)) >= min_gap for q in pts):
            pts.append(p)
    return np.array(pts)


def assign_targets(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform target among the other agents, independently per agent."""
    t = rng.integers(0, n - 1, size=n)
    return t + (t >= np.arange(n))


def _clamp(x: np.ndarray, reach: float) -> np.ndarray:
    r = np.hypot(x[:, 0], x[:, 1])
    over = r > reach
    if over.any():
        x = x.copy()
        x[over] *= (reach / r[over])[:, None]
    return x


def orca_step(x: np.ndarray, v: np.ndarray, v_pref: np.ndarray, config: SocialnavConfig) -> np.ndarray:
    """New velocities for all agents from one synchronous snapshot."""
    r = config.agent_radius
    tau = config.avoidance_horizon
    horizon = 2 * config.preferred_speed * tau + 2 * r + SAFETY_MARGIN
    out = np.empty_like(v)
    for i in range(len(x)):
        d = np.hypot(*(x - x[i]).T)
        near = [j for j in np.argsort(d, kind="stable") if j != i and d[j] <= horizon]
        lines = orca_lines(x[i], v[i], x[near], v[near], 2 * r + SAFETY_MARGIN, tau, config.dt)
        out[i] = solve_velocity(lines, config.preferred_speed, v_pref[i])
    # the LP works on the speed disc; guard against rounding above the cap
    speed = np.hypot(out[:, 0], out[:, 1])
    fast = speed > config.preferred_speed
    out[fast] *= (config.preferred_speed / speed[fast])[:, None]
    return out


def rollout(x0, targets, config: SocialnavConfig, v0=None) -> tuple[np.ndarray, np.ndarray]:
    """Positions ``[t_total, N, 2]`` and velocities from an explicit initial state."""
    x = np.array(x0, dtype=np.float64)
    v = np.zeros_like(x) if v0 is None else np.array(v0, dtype=np.float64)
    targets = np.asarray(targets, dtype=int)
    reach = config.arena_radius - config.agent_radius
    pos = np.empty((config.t_total, len(x), 2))
    vel = np.empty_like(pos)
    pos[0], vel[0] = x, v
    for t in range(1, config.t_total):
        if targets.size:
            pref = np.array([preferred_velocity(x[i], x[targets[i]], config.preferred_speed,
                                                config.agent_radius) for i in range(len(x))])
        else:
            pref = np.zeros_like(x)
        v = orca_step(x, v, pref, config)
        x_new = _clamp(x + config.dt * v, reach)
        # neighbours see the motion that happened, not the clamped-away intent
        v = (x_new - x) / config.dt
        x = x_new
        pos[t], vel[t] = x, v
    return pos, vel


def simulate_socialnav(config: SocialnavConfig, index: int = 0) -> Episode:
    """One pursuit scene; the RNG stream is derived from ``(config.seed, index)``."""
    rng = np.random.default_rng([config.seed, index])
    x0 = place_agents(config, rng)
    targets = assign_targets(config.n_agents, rng)
    pos, _ = rollout(x0, targets, config)
    return Episode(pos, config.dt, "socialnav", {"targets": targets.tolist()})


def generate(config: SocialnavConfig, count: int) -> list[Episode]:
    return [simulate_socialnav(config, i) for i in range(count)]


def min_pair_distance(positions: np.ndarray) -> float:
    p = np.asarray(positions)
    n = p.shape[1]
    if n < 2:
        return float("inf")
    iu = np.triu_indices(n, 1)
    d = np.linalg.norm(p[:, :, None, :] - p[:, None, :, :], axis=-1)
    return float(d[:, iu[0], iu[1]].min())


def count_collisions(positions: np.ndarray, radius: float, tol: float = 1e-3) -> int:
    """Number of (step, pair) entries closer than ``2 * radius - tol``."""
    p = np.asarray(positions)
    iu = np.triu_indices(p.shape[1], 1)
    d = np.linalg.norm(p[:, :, None, :] - p[:, None, :, :], axis=-1)[:, iu[0], iu[1]]
    return int((d < 2 * radius - tol).sum())


def socialnav_variants(base: SocialnavConfig) -> dict[str, SocialnavConfig]:
    return {
        "double_agents": replace(base, n_agents=2 * base.n_agents),
        "double_speed": replace(base, preferred_speed=2 * base.preferred_speed),
    }
