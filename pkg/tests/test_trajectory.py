import numpy as np
import pytest

from dexprior import trajectory as tj
from dexprior.errors import TooShortError


def make_traj(times, wrist_pos=None, wrist_rpy=None, hand=None, dh=16):
    n = len(times)
    return tj.Trajectory(
        times=np.asarray(times, dtype=float),
        wrist_pos=np.zeros((n, 3)) if wrist_pos is None else wrist_pos,
        wrist_rpy=np.zeros((n, 3)) if wrist_rpy is None else wrist_rpy,
        hand=np.zeros((n, dh)) if hand is None else hand,
    )


class TestValidate:
    def test_valid(self):
        assert tj.validate(make_traj(np.linspace(0, 1, 10))) == []

    def test_non_monotone_times(self):
        t = make_traj([0.0, 0.5, 0.4, 1.0])
        assert any(v.startswith("times") for v in tj.validate(t))

    def test_nan_hand(self):
        t = make_traj(np.linspace(0, 1, 5))
        t.hand[2, 3] = np.nan
        assert any(v.startswith("hand finite") for v in tj.validate(t))

    def test_too_short(self):
        assert any("fewer than 2" in v for v in tj.validate(make_traj([0.0])))


class TestResampleRbf:
    def test_constant(self):
        t = make_traj(np.linspace(0, 2, 30), hand=np.full((30, 16), 0.7))
        out = tj.resample_rbf(t, 50)
        assert len(out) == 50
        np.testing.assert_allclose(out.hand, 0.7, atol=1e-9)

    def test_same_length_is_identity(self):
        times = np.linspace(0, 1, 40)
        pos = np.stack([np.sin(times * 3), np.cos(times * 2), times**2], axis=1)
        t = make_traj(times, wrist_pos=pos)
        out = tj.resample_rbf(t, 40)
        np.testing.assert_allclose(out.wrist_pos, pos, atol=1e-6)
        np.testing.assert_allclose(out.times, times, atol=1e-12)

    def test_sine_against_analytic_oracle(self):
        times = np.linspace(0, 1, 50)
        hand = np.tile(np.sin(2 * np.pi * times)[:, None], (1, 16))
        t = make_traj(times, hand=hand)
        out = tj.resample_rbf(t, 200)
        expected = np.sin(2 * np.pi * out.times)
        assert np.max(np.abs(out.hand - expected[:, None])) <= 1e-2

    def test_endpoints_reproduced(self):
        rng = np.random.default_rng(50)
        times = np.linspace(0, 3, 37)
        pos = rng.normal(size=(37, 3)).cumsum(axis=0) * 0.02
        t = make_traj(times, wrist_pos=pos)
        out = tj.resample_rbf(t, 200)
        np.testing.assert_allclose(out.wrist_pos[0], pos[0], atol=1e-6)
        np.testing.assert_allclose(out.wrist_pos[-1], pos[-1], atol=1e-6)

    def test_idempotent_at_fixed_n(self):
        times = np.linspace(0, 1, 50)
        pos = np.stack(
            [np.sin(2 * np.pi * times), np.cos(np.pi * times), times], axis=1
        )
        t = make_traj(times, wrist_pos=pos)
        once = tj.resample_rbf(t, 120)
        twice = tj.resample_rbf(once, 120)
        np.testing.assert_allclose(twice.wrist_pos, once.wrist_pos, atol=1e-6)

    def test_orientation_unwrapped_through_pi(self):
        # yaw sweeps through the +-pi seam; resampling must not ring
        times = np.linspace(0, 1, 60)
        yaw = np.linspace(2.8, 3.6, 60)  # crosses pi
        wrapped = np.arctan2(np.sin(yaw), np.cos(yaw))
        rpy = np.zeros((60, 3))
        rpy[:, 2] = wrapped
        t = make_traj(times, wrist_rpy=rpy)
        out = tj.resample_rbf(t, 150)
        expected = np.interp(out.times, times, yaw)
        err = np.abs(np.mod(out.wrist_rpy[:, 2] - expected + np.pi, 2 * np.pi) - np.pi)
        assert np.max(err) <= 1e-2

    def test_overshoot_guard_on_smooth_signals(self):
        rng = np.random.default_rng(51)
        times = np.linspace(0, 1, 50)
        for _ in range(20):
            coeffs = rng.normal(size=4)
            vals = (
                coeffs[0] * np.sin(2 * np.pi * times)
                + coeffs[1] * np.cos(4 * np.pi * times)
                + coeffs[2] * times
                + coeffs[3] * times**2
            )
            t = make_traj(times, hand=np.tile(vals[:, None], (1, 16)))
            out = tj.resample_rbf(t, 200)
            span = vals.max() - vals.min()
            overshoot = max(0, out.hand.max() - vals.max(), vals.min() - out.hand.min())
            assert overshoot <= 0.05 * span

    def test_too_short(self):
        with pytest.raises(TooShortError):
            tj.resample_rbf(make_traj([0.0]), 10)

    def test_bad_target_length(self):
        with pytest.raises(ValueError):
            tj.resample_rbf(make_traj(np.linspace(0, 1, 5)), 1)


class TestDemoRecord:
    def test_init_must_match_step0(self):
        t = make_traj(np.linspace(0, 1, 5))
        rec = tj.DemoRecord.from_trajectory(t, np.zeros(512), task="pick")
        assert rec.task == "pick"
        with pytest.raises(ValueError, match="step 0"):
            tj.DemoRecord(
                trajectory=t,
                features=np.zeros(512),
                init_hand=np.ones(16),
                init_wrist=np.zeros(6),
            )

    def test_feature_length_enforced(self):
        t = make_traj(np.linspace(0, 1, 5))
        with pytest.raises(ValueError, match="512"):
            tj.DemoRecord.from_trajectory(t, np.zeros(100))


class TestSerialization:
    def test_trajectory_roundtrip(self):
        rng = np.random.default_rng(52)
        times = np.linspace(0, 1, 8)
        t = make_traj(
            times,
            wrist_pos=rng.normal(size=(8, 3)),
            wrist_rpy=rng.uniform(-1.2, 1.2, size=(8, 3)),
            hand=rng.normal(size=(8, 16)),
        )
        back = tj.trajectory_from_lines(tj.trajectory_to_lines(t))
        np.testing.assert_allclose(back.times, t.times, atol=1e-12)
        np.testing.assert_allclose(back.wrist_pos, t.wrist_pos, atol=1e-12)
        np.testing.assert_allclose(back.hand, t.hand, atol=1e-12)
        # rpy may alias; the rotation matrices must match
        from dexprior.geometry import rpy_to_matrix

        for i in range(8):
            np.testing.assert_allclose(
                rpy_to_matrix(*back.wrist_rpy[i]), rpy_to_matrix(*t.wrist_rpy[i]), atol=1e-9
            )

    def test_demo_roundtrip(self, tmp_path):
        rng = np.random.default_rng(53)
        t = make_traj(np.linspace(0, 1, 6), hand=rng.normal(size=(6, 16)))
        rec = tj.DemoRecord.from_trajectory(t, rng.normal(size=512), task="pick", source="robot-demo")
        path = tmp_path / "demos.jsonl"
        tj.write_demos(path, [rec])
        back = tj.read_demos(path)[0]
        assert back.task == "pick" and back.source == "robot-demo"
        np.testing.assert_allclose(back.features, rec.features, atol=1e-15)
        np.testing.assert_allclose(back.trajectory.hand, t.hand, atol=1e-15)
