"""Episode records, JSON-Lines serialisation, splitting and batching.

One episode per line::

    {"v": 1, "kind": "charged", "dt": 0.2,
     "positions": [[[x, y], ...], ...],    # [T][N][2]
     "meta": {"charges": [...]}}           # or {"targets": [...]} or {}

Floats use Python's shortest round-trip repr, so reading back gives the
identical float64 bits. A ``<file>.manifest.json`` sidecar carries counts,
split index sets and the generator config. The JSON schema lives in
``mate/schema/episode.schema.json``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
KINDS = ("charged", "socialnav", "external")
SCHEMA_PATH = Path(__file__).with_name("schema") / "episode.schema.json"


class EpisodeError(ValueError):
    pass


@dataclass
class Episode:
    positions: np.ndarray          # [T, N, 2]
    dt: float
    kind: str = "external"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.validate()

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def targets(self):
        t = self.meta.get("targets")
        return None if t is None else np.asarray(t, dtype=int)

    @property
    def charges(self):
        q = self.meta.get("charges")
        return None if q is None else np.asarray(q, dtype=float)

    def validate(self):
        p = self.positions
        if p.ndim != 3 or p.shape[2] != 2:
            raise EpisodeError(f"positions must be [T][N][2], got {p.shape}")
        if p.shape[0] < 2 or p.shape[1] < 1:
            raise EpisodeError(f"episode needs T >= 2 and N >= 1, got {p.shape[:2]}")
        if not np.isfinite(p).all():
            raise EpisodeError("episode positions contain NaN or Inf")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise EpisodeError(f"dt must be a positive finite number, got {self.dt}")
        if self.kind not in KINDS:
            raise EpisodeError(f"unknown episode kind {self.kind!r}")
        t = self.meta.get("targets")
        if t is not None:
            t = np.asarray(t)
            n = p.shape[1]
            if t.shape != (n,) or (t < 0).any() or (t >= n).any() or (t == np.arange(n)).any():
                raise EpisodeError("targets must name another agent for every agent")

    def to_record(self) -> dict:
        return {"v": FORMAT_VERSION, "kind": self.kind, "dt": float(self.dt),
                "positions": self.positions.tolist(), "meta": _plain(self.meta)}

    @classmethod
    def from_record(cls, rec: dict) -> "Episode":
        if rec.get("v") != FORMAT_VERSION:
            raise EpisodeError(f"unsupported episode record version {rec.get('v')!r}")
        return cls(np.asarray(rec["positions"], dtype=np.float64), float(rec["dt"]),
                   rec["kind"], dict(rec.get("meta") or {}))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def write_episodes(path, episodes, splits: dict | None = None,
                   generator: dict | None = None) -> dict:
    """Write a JSON-Lines episode file plus manifest; returns the manifest."""
    episodes = list(episodes)
    kinds = {ep.kind for ep in episodes}
    if len(kinds) > 1:
        raise EpisodeError(f"mixed episode kinds in one file: {sorted(kinds)}")
    for ep in episodes:
        ep.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_record(), separators=(",", ":")))
            fh.write("\n")
    splits = splits or {}
    manifest = {
        "format_version": FORMAT_VERSION,
        "file": path.name,
        "kind": kinds.pop() if kinds else None,
        "count": len(episodes),
        "counts": {k: len(v) for k, v in splits.items()},
        "splits": {k: [int(i) for i in v] for k, v in splits.items()},
        "generator": _plain(generator or {}),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=1))
    return manifest


def read_episodes(path) -> list[Episode]:
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Episode.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EpisodeError(f"{path}:{lineno}: bad episode record ({exc})") from exc
    return out


def read_manifest(path) -> dict:
    return json.loads(manifest_path(path).read_text())


def load_dataset(path) -> tuple[list[Episode], dict]:
    """Episodes plus split indices (``{}`` when the manifest has none)."""
    episodes = read_episodes(path)
    mp = manifest_path(path)
    splits = {}
    if mp.exists():
        manifest = json.loads(mp.read_text())
        splits = {k: list(v) for k, v in manifest.get("splits", {}).items()}
        if manifest.get("count") != len(episodes):
            raise EpisodeError(f"{path}: manifest count {manifest.get('count')} "
                               f"!= {len(episodes)} records")
    return episodes, splits


def split(n: int, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, list[int]]:
    """Seeded shuffle of ``range(n)`` cut into train/val/test."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    return {"train": sorted(perm[:n_train].tolist()),
            "val": sorted(perm[n_train:n_train + n_val].tolist()),
            "test": sorted(perm[n_train + n_val:].tolist())}


def derive_velocities(episode) -> np.ndarray:
    """``[T-1][N][2]`` backward differences; entry k is the velocity at step k+1
    (and, by convention, also at step 0)."""
    pos = episode.positions if isinstance(episode, Episode) else np.asarray(episode, dtype=float)
    dt = episode.dt if isinstance(episode, Episode) else 1.0
    if pos.shape[0] < 2:
        raise EpisodeError("velocities need at least two steps")
    return np.diff(pos, axis=0) / dt


def batches(episodes, batch_size: int, rng: np.random.Generator | None = None):
    """Yield lists of episodes with identical (T, N, dt), shuffled when ``rng`` is given."""
    order = np.arange(len(episodes))
    if rng is not None:
        order = rng.permutation(len(episodes))
    groups: dict = {}
    for i in order:
        ep = episodes[i]
        groups.setdefault((ep.n_steps, ep.n_agents, ep.dt), []).append(ep)
    for group in groups.values():
        for s in range(0, len(group), batch_size):
            yield group[s:s + batch_size]


def stack_positions(episodes) -> np.ndarray:
    return np.stack([ep.positions for ep in episodes])
