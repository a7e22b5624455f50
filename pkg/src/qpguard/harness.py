"""Batch experiments over the bundled obstacle scenarios.

A scenario config is a JSON file with sections ``arm``, ``scene``,
``corrector``, ``executor`` and ``experiment``; file paths inside it are
resolved relative to the config's own directory.  Episodes are seeded from
``(seed, episode_index)`` so results do not depend on how many worker
processes run them.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .arm_model import ArmModel, data_path, load_arm
from .geometry import Scene, load_scene
from .ikinqp import Corrector, CorrectorParams, IdentityCorrector, n_points
from .policies import make_greedy
from .safe_executor import EpisodeRecord, ExecutorParams, FailsafeBank, Fixed, run_episode, select_n
from .sim_env import ArmEnv

__all__ = [
    "ConfigError",
    "EpisodeRecord",
    "ExperimentSummary",
    "ScenarioConfig",
    "SweepRow",
    "SCENARIOS",
    "compare",
    "emit_proximity_trace",
    "emit_report",
    "emit_sweep",
    "episode_seed",
    "load_config",
    "load_summary",
    "n_sweep",
    "run_experiment",
    "run_single",
    "scenario_path",
    "summarize",
    "sweep_row",
    "sweep_summaries",
]

SCENARIOS = ("middle", "partial_block", "far_away")
CSV_COLUMNS = ("episode", "collided", "min_proximity_m", "success", "policy_queries", "wall_time_s")


class ConfigError(ValueError):
    """Invalid or unreadable scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    arm_path: Path
    scene_path: Path
    start_q: np.ndarray
    q_goal: np.ndarray
    corrector: CorrectorParams = field(default_factory=CorrectorParams)
    executor: ExecutorParams = field(default_factory=ExecutorParams)
    failsafe: FailsafeBank | None = None
    episodes: int = 100
    seed: int = 0
    corrector_enabled: bool = True
    name: str = "scenario"
    policy_saturation: float = 1.0
    start_perturbation: float = 0.05

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("experiment.episodes must be at least 1")
        for attr in ("arm_path", "scene_path"):
            p = Path(getattr(self, attr))
            if not p.is_file():
                raise ConfigError(f"{attr.split('_')[0]} file not found: {p}")
            object.__setattr__(self, attr, p)
        object.__setattr__(self, "start_q", np.asarray(self.start_q, dtype=float).ravel())
        object.__setattr__(self, "q_goal", np.asarray(self.q_goal, dtype=float).ravel())

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def model(self) -> ArmModel:
        return _cached_arm(str(self.arm_path))

    def scene(self) -> Scene:
        return _cached_scene(str(self.scene_path))


@lru_cache(maxsize=16)
def _cached_arm(path: str) -> ArmModel:
    return load_arm(path)


@lru_cache(maxsize=16)
def _cached_scene(path: str) -> Scene:
    return load_scene(path)


def scenario_path(name: str) -> Path:
    """Path of a bundled scenario config (``middle``, ``partial_block``, ``far_away``)."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return data_path(f"{name}.json")


def load_config(path) -> ScenarioConfig:
    """Read a scenario config; a bare scenario name selects a bundled one."""
    path = Path(path)
    if not path.exists() and str(path) in SCENARIOS:
        path = scenario_path(str(path))
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base = path.parent
    try:
        exp = doc["experiment"]
        exe = dict(doc.get("executor", {}))
        bank = exe.pop("failsafe", None)
        return ScenarioConfig(
            arm_path=base / doc["arm"],
            scene_path=base / doc["scene"],
            start_q=exp["start_q"],
            q_goal=exp["q_goal"],
            corrector=CorrectorParams.from_dict(doc.get("corrector")),
            executor=ExecutorParams.from_dict(exe),
            failsafe=None if bank is None else FailsafeBank.from_dict(bank),
            episodes=int(exp.get("episodes", 100)),
            seed=int(exp.get("seed", 0)),
            corrector_enabled=bool(exp.get("corrector_enabled", True)),
            name=str(doc.get("name", path.stem)),
            policy_saturation=float(exp.get("policy_saturation", 1.0)),
            start_perturbation=float(exp.get("start_perturbation", 0.05)),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def run_single(config: ScenarioConfig, episode: int) -> EpisodeRecord:
    """One seeded episode; failures come back as a record with ``error`` set."""
    try:
        model, scene = config.model(), config.scene()
        env = ArmEnv(model, scene, config.start_q, perturbation=config.start_perturbation,
                     start_buffer=config.corrector.d_coll_buff)
        env.reset(episode_seed(config.seed, episode))
        policy = make_greedy(config.q_goal, config.policy_saturation, model)
        if config.corrector_enabled:
            corrector = Corrector(model, scene, config.corrector)
            params, bank = config.executor, config.failsafe
        else:
            corrector = IdentityCorrector(model, scene, config.corrector)
            params, bank = replace(config.executor, early_stop=False), None
        return run_episode(policy, env, corrector, params, bank, episode)
    except Exception as exc:
        return EpisodeRecord(episode, False, math.nan, False, 0, 0, 0.0, 0, 0.0,
                             error=f"{type(exc).__name__}: {exc}")


@dataclass
class ExperimentSummary:
    collision_rate: float
    success_rate: float
    min_proximity_overall: float
    mean_episode_time: float
    records: list
    name: str = "scenario"
    buffer: float = 0.015
    n_rule: str = "ceil(m/2)"
    corrector_enabled: bool = True

    @property
    def episodes(self) -> int:
        return len(self.records)

    @property
    def errors(self) -> int:
        return sum(r.error is not None for r in self.records)

    @property
    def buffer_violations(self) -> int:
        """Episodes whose closest observed approach fell below the buffer."""
        return sum(r.min_proximity < self.buffer for r in self.records if r.error is None)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "records"}
        d["records"] = [r.to_dict() for r in self.records]
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSummary":
        doc = dict(doc)
        records = [EpisodeRecord(**r) for r in doc.pop("records")]
        return cls(records=records, **doc)


def summarize(records, name="scenario", buffer=0.015, n_rule="ceil(m/2)", corrector_enabled=True) -> ExperimentSummary:
    records = sorted(records, key=lambda r: r.episode)
    n = len(records)
    if n == 0:
        raise ValueError("cannot summarize zero episodes")
    ok = [r for r in records if r.error is None]
    collisions = sum(r.collided for r in records)
    successes = sum(r.success for r in records)
    return ExperimentSummary(
        collision_rate=100.0 * collisions / n,
        success_rate=100.0 * successes / n,
        min_proximity_overall=min((r.min_proximity for r in ok), default=math.nan),
        mean_episode_time=float(np.mean([r.wall_time for r in ok])) if ok else math.nan,
        records=records,
        name=name,
        buffer=buffer,
        n_rule=n_rule,
        corrector_enabled=corrector_enabled,
    )


def run_experiment(config: ScenarioConfig, jobs: int = 1) -> ExperimentSummary:
    """Run ``config.episodes`` seeded episodes and aggregate them."""
    indices = range(config.episodes)
    if jobs > 1 and config.episodes > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.episodes)) as pool:
            records = list(pool.map(run_single, [config] * config.episodes, indices))
    else:
        records = [run_single(config, i) for i in indices]
    return summarize(records, config.name, config.corrector.d_coll_buff, str(config.executor.n_rule),
                     config.corrector_enabled)


def compare(config: ScenarioConfig, jobs: int = 1) -> tuple[ExperimentSummary, ExperimentSummary]:
    """(baseline, corrected) summaries on identical seeds."""
    base = run_experiment(config.with_(corrector_enabled=False), jobs)
    corr = run_experiment(config.with_(corrector_enabled=True), jobs)
    return base, corr


@dataclass(frozen=True)
class SweepRow:
    n: int
    collision_rate: float
    success_rate: float
    mean_episode_time: float
    min_proximity: float
    buffer_violations: int
    risk: bool  # n = m sends the whole corrected batch before re-querying


def sweep_summaries(config: ScenarioConfig, n_values, jobs: int = 1) -> list[tuple[int, ExperimentSummary]]:
    """One full experiment per ``n`` with the ``Fixed(n)`` rule."""
    out = []
    for n in n_values:
        if int(n) < 1:
            raise ValueError("every n must be at least 1")
        cfg = config.with_(executor=replace(config.executor, n_rule=Fixed(int(n))))
        out.append((int(n), run_experiment(cfg, jobs)))
    return out


def sweep_row(n: int, m: int, s: ExperimentSummary) -> SweepRow:
    return SweepRow(n, s.collision_rate, s.success_rate, s.mean_episode_time, s.min_proximity_overall,
                    s.buffer_violations, select_n(m, Fixed(n)) >= m)


def n_sweep(config: ScenarioConfig, n_values, jobs: int = 1) -> list[SweepRow]:
    m = n_points(config.corrector)
    return [sweep_row(n, m, s) for n, s in sweep_summaries(config, n_values, jobs)]


# ---------------------------------------------------------------------------
# report files


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        print(text, end="")
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from None


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_report(summary: ExperimentSummary, path, fmt: str = "csv") -> None:
    """Per-episode CSV (deterministic columns only) or the full summary as JSON."""
    if fmt == "csv":
        rows = [(r.episode, r.collided, r.min_proximity, r.success, r.policy_queries, r.wall_time)
                for r in summary.records]
        write_text(path, csv_text(CSV_COLUMNS, rows))
    elif fmt == "json":
        write_text(path, json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r} (csv or json)")


def load_summary(path) -> ExperimentSummary:
    with open(path) as fh:
        return ExperimentSummary.from_dict(json.load(fh))


def emit_proximity_trace(summary: ExperimentSummary, path) -> None:
    """Closest approach per episode next to the buffer line, for plotting."""
    rows = [(r.episode, r.min_proximity, summary.buffer) for r in summary.records]
    write_text(path, csv_text(("episode", "min_proximity_m", "buffer_m"), rows))


def emit_sweep(rows, path, fmt: str = "csv") -> None:
    if fmt == "json":
        write_text(path, json.dumps([asdict(r) for r in rows], indent=2) + "\n")
    elif fmt == "csv":
        header = ("n", "collision_rate", "success_rate", "mean_episode_time_s", "min_proximity_m",
                  "buffer_violations", "risk")
        write_text(path, csv_text(header, [tuple(asdict(r).values()) for r in rows]))
    else:
        raise ValueError(f"unknown report format {fmt!r} (csv or json)")


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
