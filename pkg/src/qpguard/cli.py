"""``python -m qpguard`` subcommands: run, sweep-n, compare, validate.

Exit codes: 0 ok, 1 usage or config error, 2 some episode raised an error,
3 a ``validate`` check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .arm_model import jacobian, link_frames
from .geometry import Obstacle, clearance, distance_gradient, proximity_pairs
from .harness import (
    ConfigError,
    ScenarioConfig,
    compare,
    csv_text,
    emit_proximity_trace,
    emit_report,
    emit_sweep,
    load_config,
    n_sweep,
    run_experiment,
    write_text,
)
from .ikinqp import Corrector, n_points
from .qp_core import QpProblem, QpStatus, kkt_residual, solve_qp
from .shapes import Pose, Sphere
from .sim_env import MAX_REWARD, SUCCESS_FRACTION, reward

EXIT_OK, EXIT_USAGE, EXIT_EPISODE, EXIT_VALIDATE = 0, 1, 2, 3


def _summary_line(s) -> str:
    return (f"{s.name} corrector={'on' if s.corrector_enabled else 'off'} n={s.n_rule} episodes={s.episodes} "
            f"collision_rate={s.collision_rate:.1f}% success_rate={s.success_rate:.1f}% "
            f"min_proximity={s.min_proximity_overall:.4f}m mean_episode_time={s.mean_episode_time:.2f}s "
            f"errors={s.errors}")


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if args.episodes is not None:
        changes["episodes"] = args.episodes
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "no_corrector", False):
        changes["corrector_enabled"] = False
    return cfg.with_(**changes) if changes else cfg


# ---------------------------------------------------------------------------
# validate: a quick battery of invariant checks


def _check_qp(rng, count=25):
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(2, 6))
        M = rng.normal(size=(n, n))
        prob = QpProblem(M @ M.T + 0.1 * np.eye(n), rng.normal(size=n), rng.normal(size=(3, n)),
                         -np.ones(3), np.ones(3), -2 * np.ones(n), 2 * np.ones(n))
        sol = solve_qp(prob)
        if sol.status is not QpStatus.OPTIMAL:
            return False, "solver did not reach an optimum"
        worst = max(worst, *kkt_residual(prob, sol.x))
    return worst <= 1e-6, f"worst KKT residual {worst:.2e}"


def _check_jacobian(model, rng, count=20, h=1e-6):
    worst = 0.0
    for _ in range(count):
        q = rng.uniform(model.q_min, model.q_max)
        ee = link_frames(model, q)[3]
        J = jacobian(model, q, ee, model.dof)
        fd = np.empty_like(J)
        for j in range(model.dof):
            e = np.zeros(model.dof)
            e[j] = h
            fd[:, j] = (link_frames(model, q + e)[3] - link_frames(model, q - e)[3]) / (2 * h)
        worst = max(worst, float(np.max(np.abs(J - fd))))
    return worst <= 1e-4, f"worst Jacobian error {worst:.2e}"


def _check_gradients(model, scene, rng, count=20, h=1e-6):
    worst, tried = 0.0, 0
    while tried < count:
        q = rng.uniform(model.q_min, model.q_max)
        reports = [r for r in proximity_pairs(model, q, scene) if r.distance > 1e-3]
        if not reports:
            continue
        r = reports[int(rng.integers(len(reports)))]
        g = distance_gradient(model, q, scene, r)
        fd = np.empty(model.dof)
        for j in range(model.dof):
            e = np.zeros(model.dof)
            e[j] = h
            dp = next(x.distance for x in proximity_pairs(model, q + e, scene) if x.pair == r.pair)
            dm = next(x.distance for x in proximity_pairs(model, q - e, scene) if x.pair == r.pair)
            fd[j] = (dp - dm) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd))))
        tried += 1
    return worst <= 1e-4, f"worst gradient error {worst:.2e}"


def _check_corrector(cfg, rng, count=20):
    model, scene = cfg.model(), cfg.scene()
    corrector = Corrector(model, scene, cfg.corrector)
    buff = cfg.corrector.d_coll_buff
    worst = math.inf
    done = 0
    while done < count:
        q0 = np.clip(cfg.start_q + rng.uniform(-0.3, 0.3, model.dof), model.q_min, model.q_max)
        if clearance(model, q0, scene) < buff:
            continue
        q1 = q0 + rng.uniform(-0.2, 0.2, model.dof)
        traj = corrector.correct(q0, np.zeros(model.dof), q1, q0)
        for p in traj.points:
            if np.any(p.q < model.q_min) or np.any(p.q > model.q_max):
                return False, "corrected point outside joint limits"
            if np.any(np.abs(p.qdot) > model.qdot_max + 1e-9):
                return False, "corrected point exceeds velocity limits"
            worst = min(worst, clearance(model, p.q, scene))
        done += 1
    return worst >= buff - 1e-4, f"closest corrected point {worst:.4f} m"


def _check_failsafe(cfg):
    if cfg.failsafe is None:
        return True, "no failsafe bank configured"
    try:
        d = cfg.failsafe.verify(cfg.model(), cfg.scene(), cfg.corrector.d_coll_buff)
    except ValueError as exc:
        return False, str(exc)
    return True, "preset clearances " + ", ".join(f"{k}={v:.3f}" for k, v in d.items())


def _check_failsafe_trigger(cfg):
    model = cfg.model()
    params = cfg.corrector
    q0 = cfg.start_q
    # a sphere grazing the arm puts the start inside the buffer
    tip = link_frames(model, q0)[3]
    scene = cfg.scene().with_obstacles(cfg.scene().obstacles + (Obstacle(Sphere(0.02), Pose(tip + [0, 0, 0.06]), "probe"),))
    inside = clearance(model, q0, scene) < params.d_coll_buff
    traj = Corrector(model, scene, params).correct(q0, np.zeros(model.dof), q0 + 0.1, model.q_mid)
    clear = Corrector(model, cfg.scene(), params).correct(q0, np.zeros(model.dof), q0 + 0.1, model.q_mid)
    ok = inside and traj.used_failsafe and not clear.used_failsafe
    return ok, f"inside={inside} triggered={traj.used_failsafe} clear_triggered={clear.used_failsafe}"


def _check_reward():
    r = reward([0.1, 0, 0], [0, 0, 0], 0.1, 0.0, False)
    expect = 1.0 - math.tanh(1.0)
    ok = abs(r.r_reach - expect) <= 1e-9 and r.total == r.r_reach + 0.5 * r.r_y_align + r.r_gripper
    best = reward([0, 0, 0], [0, 0, 0], 0.0, 0.0, False).total
    ok = ok and best == MAX_REWARD and SUCCESS_FRACTION * MAX_REWARD <= best
    return ok, f"r_reach(0.1)={r.r_reach:.6f}"


def validation_battery(cfg: ScenarioConfig, seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    model, scene = cfg.model(), cfg.scene()
    checks = [
        ("qp_kkt", lambda: _check_qp(rng)),
        ("jacobian_fd", lambda: _check_jacobian(model, rng)),
        ("distance_gradient_fd", lambda: _check_gradients(model, scene, rng)),
        ("corrector_safety", lambda: _check_corrector(cfg, rng)),
        ("corrector_points", lambda: (n_points(cfg.corrector) == round(cfg.corrector.t1 / cfg.corrector.dt) + 1,
                                      f"m={n_points(cfg.corrector)}")),
        ("failsafe_presets", lambda: _check_failsafe(cfg)),
        ("failsafe_trigger", lambda: _check_failsafe_trigger(cfg)),
        ("reward_formula", _check_reward),
    ]
    out = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m qpguard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corrector_flag=True):
        p.add_argument("--config", required=True, help="scenario JSON or a bundled name (middle, partial_block, far_away)")
        p.add_argument("--episodes", type=int, help="override experiment.episodes")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--out", help="report path (stdout when omitted)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if corrector_flag:
            p.add_argument("--no-corrector", action="store_true", help="run the unprotected baseline")

    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--trace", help="also write the per-episode proximity trace CSV here")
    p = sub.add_parser("sweep-n", help="compare batch sizes n")
    common(p)
    p.add_argument("--n-values", default=None, help="comma-separated n values (default 3,ceil(m/2),m)")
    p = sub.add_parser("compare", help="baseline vs corrected on the same seeds")
    common(p, corrector_flag=False)
    p = sub.add_parser("validate", help="invariant self-test battery")
    common(p, corrector_flag=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "run":
            s = run_experiment(cfg, args.jobs)
            emit_report(s, args.out, args.format)
            if args.trace:
                emit_proximity_trace(s, args.trace)
            print(_summary_line(s), file=sys.stderr)
            return EXIT_EPISODE if s.errors else EXIT_OK
        if args.command == "sweep-n":
            m = n_points(cfg.corrector)
            values = [3, math.ceil(m / 2), m] if args.n_values is None else [int(v) for v in args.n_values.split(",")]
            rows = n_sweep(cfg, values, args.jobs)
            emit_sweep(rows, args.out, args.format)
            for r in rows:
                flag = "  RISK: whole batch sent" if r.risk else ""
                print(f"n={r.n} collision_rate={r.collision_rate:.1f}% success_rate={r.success_rate:.1f}% "
                      f"mean_episode_time={r.mean_episode_time:.2f}s min_proximity={r.min_proximity:.4f}m "
                      f"buffer_violations={r.buffer_violations}{flag}", file=sys.stderr)
            return EXIT_OK
        if args.command == "compare":
            base, corr = compare(cfg, args.jobs)
            rows = [(s.name, s.corrector_enabled, s.collision_rate, s.success_rate, s.min_proximity_overall,
                     s.mean_episode_time) for s in (base, corr)]
            if args.format == "json":
                text = json.dumps({"baseline": base.to_dict(), "corrected": corr.to_dict()}, indent=2) + "\n"
            else:
                text = csv_text(("scenario", "corrector_enabled", "collision_rate", "success_rate",
                             "min_proximity_m", "mean_episode_time_s"), rows)
            write_text(args.out, text)
            for s in (base, corr):
                print(_summary_line(s), file=sys.stderr)
            return EXIT_EPISODE if base.errors or corr.errors else EXIT_OK
        # validate
        results = validation_battery(cfg, cfg.seed)
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_VALIDATE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
