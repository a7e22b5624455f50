import math

import numpy as np
import pytest

from qpguard.arm_model import data_path, link_frames
from qpguard.geometry import clearance, load_scene
from qpguard.harness import load_config
from qpguard.ikinqp import Corrector, IdentityCorrector
from qpguard.policies import ZeroPolicy, make_greedy
from qpguard.safe_executor import (
    ExecutorParams,
    FailsafeBank,
    Fixed,
    Formula,
    clip_action,
    run_episode,
    select_failsafe,
    select_n,
)
from qpguard.sim_env import ArmEnv

START = np.array([-1.1, 1.5, 1.2])
GOAL = np.array([1.1, 1.5, 1.2])
BUFF = 0.015
THRESH = BUFF + 0.005


@pytest.fixture(scope="module")
def bank():
    return load_config("middle").failsafe


def make_env(arm, scene, seed=0):
    env = ArmEnv(arm, scene, START)
    env.reset(seed)
    return env


def test_clip_examples():
    assert clip_action([1.0], 0.2)[0] == 0.2
    assert clip_action([-0.05], 0.2)[0] == -0.05
    np.testing.assert_array_equal(clip_action([0.3, -0.3, 0.1], 0.2), [0.2, -0.2, 0.1])


def test_select_n_examples():
    assert select_n(11, Formula()) == 6
    assert select_n(11) == 6
    assert select_n(1, Formula()) == 1
    assert select_n(11, Fixed(7)) == 7
    assert select_n(5, Fixed(9)) == 5
    with pytest.raises(ValueError):
        select_n(0)
    with pytest.raises(ValueError):
        Fixed(0)


def test_params_validation_and_parsing():
    with pytest.raises(ValueError):
        ExecutorParams(action_clip=0.0)
    with pytest.raises(ValueError):
        ExecutorParams(proximity_margin=-0.1)
    assert ExecutorParams.from_dict({"n": 7}).n_rule == Fixed(7)
    assert ExecutorParams.from_dict({"n_rule": "formula"}).n_rule == Formula()


def test_bank_thirds(bank):
    w = bank.table_width
    assert bank.third(w / 6 + 1e-9) == "left"
    assert bank.third(-w / 6 - 1e-9) == "right"
    assert bank.third(0.0) == "center"
    # exactly on a boundary goes to the center
    assert bank.third(w / 6) == "center"
    assert bank.third(-w / 6) == "center"


def test_bank_presets_verified_in_every_scene(arm, bank):
    for name in ("middle", "partial_block", "far_away"):
        scene = load_scene(data_path(f"scene_{name}.json"))
        for d in bank.verify(arm, scene, BUFF).values():
            assert d >= 2 * BUFF


def test_bank_verify_rejects_unsafe_preset(arm, middle_scene, bank):
    bad = FailsafeBank(bank.left, bank.center, [0.0, 2.0, 1.0], bank.table_width)
    with pytest.raises(ValueError, match="right"):
        bad.verify(arm, middle_scene, BUFF)


def test_bank_round_trip(bank):
    again = FailsafeBank.from_dict(bank.to_dict())
    for name in ("left", "center", "right"):
        np.testing.assert_array_equal(getattr(again, name), getattr(bank, name))


def test_select_failsafe(arm, middle_scene, bank):
    q_left = np.array([1.57, 1.0, 1.0])  # end effector at y ~ +0.39
    assert link_frames(arm, q_left)[3][1] > bank.table_width / 6
    np.testing.assert_array_equal(select_failsafe(bank, arm, middle_scene, q_left, True), bank.left)
    np.testing.assert_array_equal(select_failsafe(bank, arm, middle_scene, -q_left * [1, -1, -1], True), bank.right)
    np.testing.assert_array_equal(select_failsafe(bank, arm, middle_scene, [0.0, 0.4, 0.8], True), bank.center)
    # safe: the current position is saved
    np.testing.assert_array_equal(select_failsafe(bank, arm, middle_scene, q_left, False), q_left)
    # no bank: keep the previous failsafe
    prev = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(select_failsafe(None, arm, middle_scene, q_left, True, prev), prev)


def test_zero_policy_does_nothing(arm, empty_scene):
    env = make_env(arm, empty_scene)
    q_start = env.observation().q
    rec = run_episode(ZeroPolicy(), env, Corrector(arm, empty_scene), ExecutorParams(max_policy_queries=40))
    assert not rec.collided and not rec.success
    assert rec.policy_queries == 40
    np.testing.assert_allclose(env.observation().q, q_start, atol=1e-9)


def test_middle_corrected_vs_identity(arm, middle_scene, bank):
    rec = run_episode(make_greedy(GOAL), make_env(arm, middle_scene), Corrector(arm, middle_scene),
                      ExecutorParams(), bank)
    assert not rec.collided and rec.min_proximity >= BUFF and rec.success
    base = run_episode(make_greedy(GOAL), make_env(arm, middle_scene), IdentityCorrector(arm, middle_scene),
                       ExecutorParams(early_stop=False))
    assert base.collided and base.min_proximity < 0.0 and not base.success


class Spy:
    """Wraps env and corrector to log the exact sequence of calls."""

    def __init__(self, env, corrector, model, scene):
        self.events = []
        self.model, self.scene = model, scene
        self.last_traj = None
        self.env_step, self.correct = env.step, corrector.correct
        env.step = self.step
        corrector.correct = self.corr

    def corr(self, q0, qdot0, q1, q_last_safe, qdot1=None):
        self.events.append(("correct", clearance(self.model, q_last_safe, self.scene)))
        self.last_traj = self.correct(q0, qdot0, q1, q_last_safe, qdot1)
        return self.last_traj

    def step(self, q_cmd):
        on_traj = any(np.array_equal(q_cmd, p.q) for p in self.last_traj.points)
        cmd_clear = clearance(self.model, q_cmd, self.scene)
        obs, done = self.env_step(q_cmd)
        self.events.append(("step", obs.min_distance, on_traj, cmd_clear))
        return obs, done


@pytest.mark.parametrize("scene_name", ["middle", "partial_block"])
def test_loop_invariants(arm, bank, scene_name):
    scene = load_scene(data_path(f"scene_{scene_name}.json"))
    for seed in range(3):
        env = make_env(arm, scene, seed)
        d_start = env.observation().min_distance
        corr = Corrector(arm, scene)
        spy = Spy(env, corr, arm, scene)
        rec = run_episode(make_greedy(GOAL), env, corr, ExecutorParams(), bank)
        assert rec.error is None
        ev = spy.events
        for k, e in enumerate(ev):
            if e[0] == "correct":
                # failsafe freshness
                assert e[1] >= BUFF
            else:
                # every command is a point of the latest corrected trajectory
                assert e[2] and e[3] >= BUFF - 1e-9
                # early stop: a close observation ends the batch
                if e[1] < THRESH and k + 1 < len(ev):
                    assert ev[k + 1][0] == "correct"
        steps = [e for e in ev if e[0] == "step"]
        assert rec.min_proximity == min([d_start] + [e[1] for e in steps])
        assert rec.env_steps == len(steps)


def test_loop_progress_bound(arm, middle_scene):
    for n in (1, 3, 11):
        params = ExecutorParams(n_rule=Fixed(n), max_policy_queries=7)
        env = make_env(arm, middle_scene)
        rec = run_episode(ZeroPolicy(), env, Corrector(arm, middle_scene), params)
        assert rec.policy_queries <= 7
        assert rec.env_steps <= 7 * min(n, 10)


def test_points_sent_per_query(arm, empty_scene):
    """Without early stops each query sends n points after the start point."""
    env = make_env(arm, empty_scene)
    rec = run_episode(make_greedy(GOAL), env, Corrector(arm, empty_scene),
                      ExecutorParams(n_rule=Fixed(4), max_policy_queries=3))
    assert rec.policy_queries == 3 and rec.env_steps == 12


def test_deterministic_record(arm, middle_scene, bank):
    recs = []
    for _ in range(2):
        rec = run_episode(make_greedy(GOAL), make_env(arm, middle_scene, 5), Corrector(arm, middle_scene),
                          ExecutorParams(), bank, episode=5)
        d = rec.to_dict()
        d.pop("mean_corrector_time")  # measured wall-clock
        recs.append(d)
    assert recs[0] == recs[1]


class FlakyCorrector(Corrector):
    """Fails the first call, then behaves."""

    def __init__(self, *a, **k):
        super().__init__(*a, **k)
        self.requests = []

    def correct(self, q0, qdot0, q1, q_last_safe, qdot1=None):
        self.requests.append((np.array(q1), np.array(q_last_safe)))
        if len(self.requests) == 1:
            raise RuntimeError("solver blew up")
        return super().correct(q0, qdot0, q1, q_last_safe, qdot1)


def test_corrector_failure_holds_then_targets_failsafe(arm, middle_scene, bank):
    env = make_env(arm, middle_scene)
    q_start = env.observation().q
    corr = FlakyCorrector(arm, middle_scene)
    rec = run_episode(make_greedy(GOAL), env, corr, ExecutorParams(max_policy_queries=3), bank)
    assert rec.error is None
    # second request is the failsafe preset for the gripper's third (start is on the right)
    q1, last_safe = corr.requests[1]
    np.testing.assert_array_equal(q1, last_safe)
    third = bank.third(float(link_frames(arm, q_start)[3][1]))
    np.testing.assert_array_equal(q1, getattr(bank, third))
    assert rec.failsafe_uses >= 1


def test_env_fault_becomes_error_record(arm, middle_scene):
    env = make_env(arm, middle_scene)

    def broken(q):
        raise OSError("simulator crashed")

    env.step = broken
    rec = run_episode(make_greedy(GOAL), env, Corrector(arm, middle_scene), ExecutorParams())
    assert rec.error is not None and "simulator crashed" in rec.error
    assert rec.env_steps == 0


def test_record_invariants(arm, middle_scene, bank):
    for corr, params, b in ((Corrector(arm, middle_scene), ExecutorParams(), bank),
                            (IdentityCorrector(arm, middle_scene), ExecutorParams(early_stop=False), None)):
        rec = run_episode(make_greedy(GOAL), make_env(arm, middle_scene, 1), corr, params, b)
        if rec.collided:
            assert rec.min_proximity < 0.0
        assert rec.corrector_calls == rec.policy_queries
        assert rec.wall_time == pytest.approx(rec.env_steps * 0.05)
        assert math.isfinite(rec.mean_corrector_time)
