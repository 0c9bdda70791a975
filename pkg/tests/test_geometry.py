import math

import numpy as np
import pytest

from dexprior import geometry as geo
from dexprior.errors import ZeroVectorError


def random_transform(rng):
    # rotation from a random quaternion, translation in a +-2 m box
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return geo.RigidTransform(geo.quat_to_matrix(q), rng.uniform(-2, 2, 3))


def homogeneous_product(*transforms):
    """Brute-force oracle: multiply 4x4 homogeneous matrices directly."""
    m = np.eye(4)
    for t in transforms:
        m = m @ t.matrix()
    return m


class TestCompose:
    def test_identity(self):
        rng = np.random.default_rng(0)
        t = random_transform(rng)
        out = geo.compose(geo.RigidTransform.identity(), t)
        np.testing.assert_allclose(out.matrix(), t.matrix(), atol=1e-12)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            t = random_transform(rng)
            out = geo.compose(t, geo.invert(t))
            np.testing.assert_allclose(out.matrix(), np.eye(4), atol=1e-9)

    def test_four_term_chain_matches_homogeneous_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            chain = [random_transform(rng) for _ in range(4)]
            got = chain[0]
            for t in chain[1:]:
                got = geo.compose(got, t)
            np.testing.assert_allclose(got.matrix(), homogeneous_product(*chain), atol=1e-9)

    def test_associative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b, c = (random_transform(rng) for _ in range(3))
            left = geo.compose(geo.compose(a, b), c).matrix()
            right = geo.compose(a, geo.compose(b, c)).matrix()
            assert np.max(np.abs(left - right)) <= 1e-9


class TestInvert:
    def test_identity(self):
        out = geo.invert(geo.RigidTransform.identity())
        np.testing.assert_allclose(out.matrix(), np.eye(4), atol=0)

    def test_pure_translation(self):
        t = geo.RigidTransform(np.eye(3), [0.0, 0.0, 1.0])
        np.testing.assert_allclose(geo.invert(t).translation, [0.0, 0.0, -1.0], atol=0)


class TestRigidTransformInvariants:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            geo.RigidTransform(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            geo.RigidTransform(m, np.zeros(3))


class TestAccelAngles:
    def test_upright_gravity(self):
        assert geo.pitch_from_accel(geo.AccelSample(0, 0, 1)) == 0
        assert geo.roll_from_accel(geo.AccelSample(0, 0, 1)) == 0
        assert geo.theta_from_accel(geo.AccelSample(0, 0, 1)) == 0

    def test_limit_cases(self):
        assert geo.pitch_from_accel(geo.AccelSample(1, 0, 0)) == pytest.approx(math.pi / 2)
        assert geo.roll_from_accel(geo.AccelSample(0, 1, 0)) == pytest.approx(math.pi / 2)
        assert geo.theta_from_accel(geo.AccelSample(1, 0, 1)) == pytest.approx(math.pi / 4)

    def test_zero_vector_rejected(self):
        for fn in (geo.pitch_from_accel, geo.roll_from_accel, geo.theta_from_accel):
            with pytest.raises(ZeroVectorError):
                fn(geo.AccelSample(0, 0, 0))

    def test_pitch_recovery_from_rotated_gravity(self):
        # oracle: rotate (0,0,1) about the y axis by a known matrix
        for phi in np.linspace(-1.2, 1.2, 17):
            g = geo._ry(phi) @ np.array([0.0, 0.0, 1.0])
            a = geo.AccelSample(*g)
            assert abs(geo.pitch_from_accel(a) - phi) <= 1e-6
            assert abs(geo.roll_from_accel(a)) <= 1e-12

    def test_roll_recovery_from_rotated_gravity(self):
        for rho in np.linspace(-1.2, 1.2, 17):
            g = geo._rx(-rho) @ np.array([0.0, 0.0, 1.0])
            a = geo.AccelSample(*g)
            assert abs(geo.roll_from_accel(a) - rho) <= 1e-6
            assert abs(geo.pitch_from_accel(a)) <= 1e-12

    def test_theta_matches_dot_product_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            expected = math.acos(np.clip(v[2], -1, 1))
            got = geo.theta_from_accel(geo.AccelSample(*v))
            assert abs(got - expected) <= 1e-9

    def test_odd_in_numerator_component(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x, y, z = rng.normal(size=3)
            a = geo.AccelSample(x, y, z)
            assert geo.pitch_from_accel(geo.AccelSample(-x, y, z)) == pytest.approx(
                -geo.pitch_from_accel(a)
            )
            assert geo.roll_from_accel(geo.AccelSample(x, -y, z)) == pytest.approx(
                -geo.roll_from_accel(a)
            )


class TestUprightFromAccel:
    def test_upright_is_identity(self):
        t = geo.upright_from_accel(geo.AccelSample(0, 0, 9.81))
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(t.translation, 0, atol=0)

    def test_pitch_tilt_realigned(self):
        g = geo._ry(0.3) @ np.array([0.0, 0.0, 9.81])
        t = geo.upright_from_accel(geo.AccelSample(*g))
        np.testing.assert_allclose(t.apply(g), [0, 0, 9.81], atol=1e-6)

    def test_matches_two_axis_matrix_oracle(self):
        # oracle: explicit product of the two one-axis rotations, X then Y
        rng = np.random.default_rng(6)
        for _ in range(50):
            v = rng.normal(size=3)
            v[2] = abs(v[2]) + 0.5
            v /= np.linalg.norm(v)
            a = geo.AccelSample(*v)
            expected = geo._ry(-geo.pitch_from_accel(a)) @ geo._rx(math.atan2(v[1], v[2]))
            np.testing.assert_allclose(
                geo.upright_from_accel(a).rotation, expected, atol=1e-12
            )

    def test_alignment_invariant_all_directions(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            v = rng.normal(size=3)
            if np.linalg.norm(v) < 1e-6:
                continue
            v /= np.linalg.norm(v)
            t = geo.upright_from_accel(geo.AccelSample(*v))
            np.testing.assert_allclose(t.apply(v), [0, 0, 1], atol=1e-6)

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            geo.upright_from_accel(geo.AccelSample(0, 0, 0))


class TestWorldToRobot:
    def test_double_apply_double_invert(self):
        w = geo.world_to_robot()
        t = geo.compose(w, w)
        t = geo.compose(t, geo.invert(w))
        t = geo.compose(t, geo.invert(w))
        np.testing.assert_allclose(t.matrix(), np.eye(4), atol=1e-12)

    def test_axis_mapping(self):
        # camera-world forward (+z, out of the lens) -> robot +x (out to table)
        # camera-world right (+x) -> robot -y (robot y points left)
        # camera-world down (+y) -> robot -z (robot z points up)
        r = geo.world_to_robot().rotation
        np.testing.assert_allclose(r @ [0, 0, 1], [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(r @ [1, 0, 0], [0, -1, 0], atol=1e-12)
        np.testing.assert_allclose(r @ [0, 1, 0], [0, 0, -1], atol=1e-12)

    def test_orthonormal(self):
        r = geo.world_to_robot().rotation
        assert np.max(np.abs(r.T @ r - np.eye(3))) <= 1e-9
        assert abs(np.linalg.det(r) - 1) <= 1e-9


class TestEulerRPY:
    def test_roundtrip_preserves_matrix(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            r = geo.quat_to_matrix(q)
            rpy = geo.EulerFixedRPY.from_matrix(r)
            assert np.max(np.abs(rpy.to_matrix() - r)) <= 1e-9

    def test_gimbal_case(self):
        r = geo.rpy_to_matrix(0.4, math.pi / 2, -0.7)
        rpy = geo.EulerFixedRPY.from_matrix(r)
        assert np.max(np.abs(rpy.to_matrix() - r)) <= 1e-9


class TestQuaternionSerialization:
    def test_roundtrip(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            t = random_transform(rng)
            back = geo.transform_from_dict(geo.transform_to_dict(t))
            np.testing.assert_allclose(back.matrix(), t.matrix(), atol=1e-9)

    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(ValueError):
            geo.transform_from_dict({"t": [0, 0, 0], "q": [1.0, 0.0, 0.1, 0.0]})

    def test_quat_matrix_roundtrip(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            if q[0] < 0:
                q = -q
            np.testing.assert_allclose(geo.matrix_to_quat(geo.quat_to_matrix(q)), q, atol=1e-9)
