"""Action-chunk data model, standardization, chunking, task-level splits,
and a seeded synthetic trajectory corpus.

Episodes are T x S float arrays tagged with a task id; tasks fix a parameter
tuple and episodes within a task differ only by small seeded noise. All
functions here are pure: the same spec and seed always produce the same
corpus, byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6

GENERATOR_FAMILIES = ("sinusoid", "minjerk", "gripper")


class DataError(ValueError):
    """Raised on malformed data module inputs."""


@dataclass
class Episode:
    task_id: str
    dt: float
    states: np.ndarray  # (T, S)


@dataclass
class ActionChunk:
    values: np.ndarray  # (H, S)
    task_id: str
    source_offset: int


@dataclass
class NormStats:
    mean: np.ndarray  # (S,)
    std: np.ndarray   # (S,), floored at STD_FLOOR

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"mean": self.mean.tolist(), "std": self.std.tolist()}, f)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        return cls(mean=np.asarray(obj["mean"], dtype=np.float64),
                   std=np.asarray(obj["std"], dtype=np.float64))


def compute_norm_stats(episodes):
    """Per-dimension mean and population std over all timesteps.

    Call this on the training split only; the std is floored at 1e-6 so
    constant dimensions (a closed gripper) do not blow up standardization.
    """
    episodes = list(episodes)
    if not episodes:
        raise DataError("compute_norm_stats requires at least one episode")
    stacked = np.concatenate([ep.states for ep in episodes], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormStats(mean=mean, std=std)


def standardize(chunk, stats):
    if chunk.values.shape[1] != stats.mean.shape[0]:
        raise DataError(
            f"chunk has {chunk.values.shape[1]} dims but stats cover {stats.mean.shape[0]}")
    values = (chunk.values - stats.mean) / stats.std
    return ActionChunk(values=values, task_id=chunk.task_id, source_offset=chunk.source_offset)


def destandardize(chunk, stats):
    if chunk.values.shape[1] != stats.mean.shape[0]:
        raise DataError(
            f"chunk has {chunk.values.shape[1]} dims but stats cover {stats.mean.shape[0]}")
    values = chunk.values * stats.std + stats.mean
    return ActionChunk(values=values, task_id=chunk.task_id, source_offset=chunk.source_offset)


def chunk_episodes(episodes, horizon, stride):
    """Sliding windows of length `horizon` at multiples of `stride`.

    Trailing remainders are dropped. Episodes shorter than the horizon are
    skipped; returns (chunks, skipped_count) and logs a warning when any
    episode was too short.
    """
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    chunks = []
    skipped = 0
    for ep in episodes:
        t_len = ep.states.shape[0]
        if t_len < horizon:
            skipped += 1
            continue
        for start in range(0, t_len - horizon + 1, stride):
            chunks.append(ActionChunk(
                values=ep.states[start:start + horizon].copy(),
                task_id=ep.task_id,
                source_offset=start,
            ))
    if skipped:
        log.warning("chunk_episodes skipped %d episode(s) shorter than horizon %d", skipped, horizon)
    return chunks, skipped


def task_level_split(chunks, ratio, seed):
    """Partition chunks by task id so no task appears in both splits.

    `ratio` is a (train, test) integer pair, e.g. (40, 1). The test side
    receives ceil(num_tasks * test / (train + test)) tasks, at least one and
    at most num_tasks - 1.
    """
    train_part, test_part = int(ratio[0]), int(ratio[1])
    if train_part < 1 or test_part < 1:
        raise DataError(f"split ratio parts must be positive, got {ratio}")
    task_ids = sorted({c.task_id for c in chunks})
    if len(task_ids) < 2:
        raise DataError("task_level_split requires at least 2 distinct task ids")
    rng = np.random.default_rng(seed)
    order = [task_ids[i] for i in rng.permutation(len(task_ids))]
    n_test = math.ceil(len(task_ids) * test_part / (train_part + test_part))
    n_test = min(max(1, n_test), len(task_ids) - 1)
    test_tasks = set(order[:n_test])
    train = [c for c in chunks if c.task_id not in test_tasks]
    test = [c for c in chunks if c.task_id in test_tasks]
    return train, test


def split_task_ids(task_ids, ratio, seed):
    """Task-id-level view of task_level_split, for stats fitting on episodes."""
    marker = [ActionChunk(values=np.zeros((1, 1)), task_id=t, source_offset=0) for t in task_ids]
    train, test = task_level_split(marker, ratio, seed)
    return sorted({c.task_id for c in train}), sorted({c.task_id for c in test})


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class CorpusSpec:
    """Generator settings for the synthetic corpus.

    Families: "sinusoid" (per-dimension sums of 1-4 sinusoids under 2 Hz),
    "minjerk" (minimum-jerk point-to-point segments between random
    waypoints), "gripper" (last dimension piecewise-constant in {-1,+1} with
    random switch times over a smooth sinusoid background). Tasks are
    assigned families round-robin; episodes within a task add Gaussian noise
    of `noise_sigma`.
    """
    families: tuple = GENERATOR_FAMILIES
    n_tasks: int = 41
    episodes_per_task: int = 6
    steps: int = 480
    dims: int = 7
    dt: float = 1.0 / 30.0
    noise_sigma: float = 0.01
    freq_range: tuple = (0.2, 2.0)      # Hz, below 2 Hz at dt=1/30
    amp_range: tuple = (0.2, 1.0)
    max_sinusoids: int = 4
    endpoint_range: tuple = (-1.5, 1.5)
    segments_range: tuple = (2, 5)      # minjerk waypoint segments per episode
    switches_range: tuple = (1, 6)      # gripper sign flips per episode

    def to_dict(self):
        return {
            "families": list(self.families),
            "n_tasks": self.n_tasks,
            "episodes_per_task": self.episodes_per_task,
            "steps": self.steps,
            "dims": self.dims,
            "dt": self.dt,
            "noise_sigma": self.noise_sigma,
            "freq_range": list(self.freq_range),
            "amp_range": list(self.amp_range),
            "max_sinusoids": self.max_sinusoids,
            "endpoint_range": list(self.endpoint_range),
            "segments_range": list(self.segments_range),
            "switches_range": list(self.switches_range),
        }

    @classmethod
    def from_dict(cls, obj):
        kwargs = dict(obj)
        for key in ("families", "freq_range", "amp_range", "endpoint_range",
                    "segments_range", "switches_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class TaskParams:
    task_id: str
    family: str
    params: dict = field(default_factory=dict)


def minimum_jerk(x0, x1, n):
    """Minimum-jerk profile from x0 to x1 over n samples (inclusive ends).

    Position follows 10 s^3 - 15 s^4 + 6 s^5, which has zero velocity and
    acceleration at both endpoints.
    """
    s = np.linspace(0.0, 1.0, n)
    blend = 10.0 * s**3 - 15.0 * s**4 + 6.0 * s**5
    return x0 + (x1 - x0) * blend


def _sinusoid_params(rng, spec, dims):
    per_dim = []
    for _ in range(dims):
        k = int(rng.integers(1, spec.max_sinusoids + 1))
        per_dim.append({
            "freqs": rng.uniform(*spec.freq_range, size=k),
            "amps": rng.uniform(*spec.amp_range, size=k),
            "phases": rng.uniform(0.0, 2.0 * math.pi, size=k),
            "offset": rng.uniform(-0.5, 0.5),
        })
    return per_dim


def _render_sinusoid(per_dim, t):
    cols = []
    for p in per_dim:
        args = 2.0 * math.pi * np.outer(t, p["freqs"]) + p["phases"]
        cols.append((np.sin(args) * p["amps"]).sum(axis=1) + p["offset"])
    return np.stack(cols, axis=1)


def _minjerk_params(rng, spec):
    n_seg = int(rng.integers(spec.segments_range[0], spec.segments_range[1] + 1))
    waypoints = rng.uniform(*spec.endpoint_range, size=(n_seg + 1, spec.dims))
    # Segment lengths as fractions of the episode, at least 4 samples each.
    weights = rng.uniform(0.5, 1.5, size=n_seg)
    return {"waypoints": waypoints, "weights": weights}


def _render_minjerk(params, steps):
    waypoints = params["waypoints"]
    weights = params["weights"]
    n_seg = len(weights)
    bounds = np.round(np.cumsum(weights) / weights.sum() * steps).astype(int)
    bounds[-1] = steps
    out = np.empty((steps, waypoints.shape[1]))
    start = 0
    for i in range(n_seg):
        end = max(bounds[i], start + 2)
        end = min(end, steps)
        seg_len = end - start
        for d in range(waypoints.shape[1]):
            out[start:end, d] = minimum_jerk(waypoints[i, d], waypoints[i + 1, d], seg_len)
        start = end
        if start >= steps:
            break
    if start < steps:
        out[start:] = out[start - 1]
    return out


def _gripper_params(rng, spec):
    n_switch = int(rng.integers(spec.switches_range[0], spec.switches_range[1] + 1))
    times = np.sort(rng.uniform(0.05, 0.95, size=n_switch))
    start_sign = 1.0 if rng.uniform() < 0.5 else -1.0
    background = _sinusoid_params(rng, spec, spec.dims - 1)
    return {"switch_fracs": times, "start_sign": start_sign, "background": background}


def _render_gripper(params, spec, t):
    smooth = _render_sinusoid(params["background"], t)
    steps = len(t)
    signal = np.full(steps, params["start_sign"])
    sign = params["start_sign"]
    switch_steps = (params["switch_fracs"] * steps).astype(int)
    for s in switch_steps:
        sign = -sign
        signal[s:] = sign
    return np.concatenate([smooth, signal[:, None]], axis=1)


def build_tasks(spec, seed):
    """Draw one parameter tuple per task, round-robin over the families."""
    for fam in spec.families:
        if fam not in GENERATOR_FAMILIES:
            raise DataError(f"unknown generator family {fam!r}; expected one of {GENERATOR_FAMILIES}")
    rng = np.random.default_rng([seed, 0x7a5c])
    tasks = []
    for i in range(spec.n_tasks):
        family = spec.families[i % len(spec.families)]
        if family == "sinusoid":
            params = {"per_dim": _sinusoid_params(rng, spec, spec.dims)}
        elif family == "minjerk":
            params = _minjerk_params(rng, spec)
        else:
            params = _gripper_params(rng, spec)
        tasks.append(TaskParams(task_id=f"{family}-{i:03d}", family=family, params=params))
    return tasks


def render_episode(task, spec, episode_idx, seed):
    """Render one episode of a task: base trajectory plus seeded noise."""
    t = np.arange(spec.steps) * spec.dt
    if task.family == "sinusoid":
        base = _render_sinusoid(task.params["per_dim"], t)
    elif task.family == "minjerk":
        base = _render_minjerk(task.params, spec.steps)
    elif task.family == "gripper":
        base = _render_gripper(task.params, spec, t)
    else:
        raise DataError(f"unknown generator family {task.family!r}")
    if spec.noise_sigma > 0.0:
        noise_rng = np.random.default_rng([seed, hash_str(task.task_id), episode_idx])
        base = base + noise_rng.normal(0.0, spec.noise_sigma, size=base.shape)
    return Episode(task_id=task.task_id, dt=spec.dt, states=base)


def hash_str(s):
    """Stable 63-bit hash (python's hash() is salted per process)."""
    h = 1469598103934665603
    for byte in s.encode("utf-8"):
        h = ((h ^ byte) * 1099511628211) & 0x7FFFFFFFFFFFFFFF
    return h


def generate_synthetic_corpus(spec, seed):
    """Deterministic corpus: same (spec, seed) twice gives identical bytes."""
    tasks = build_tasks(spec, seed)
    episodes = []
    for task in tasks:
        for e in range(spec.episodes_per_task):
            episodes.append(render_episode(task, spec, e, seed))
    return episodes


# ---------------------------------------------------------------------------
# episode file format: one JSON object per line, UTF-8, LF terminated


def write_episodes(path, episodes):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ep in episodes:
            rec = {"task_id": ep.task_id, "dt": ep.dt, "states": ep.states.tolist()}
            f.write(json.dumps(rec, separators=(",", ":")))
            f.write("\n")


def read_episodes(path):
    episodes = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON episode record: {exc}") from None
            states = np.asarray(rec["states"], dtype=np.float64)
            if states.ndim != 2:
                raise DataError(f"{path}:{line_no}: states must be a T x S matrix")
            episodes.append(Episode(task_id=rec["task_id"], dt=float(rec["dt"]), states=states))
    return episodes
