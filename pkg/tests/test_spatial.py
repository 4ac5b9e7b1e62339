import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copresence.spatial import (
    BodyKernel,
    Pose,
    Quat,
    RigidTransform,
    Vec3,
    avatar_luminosities,
    body_center,
    group_luminosity,
    pair_overlap,
    radial_transform,
    to_shared,
)

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False, allow_infinity=False)
vec3s = st.builds(Vec3, finite, finite, finite)


def rotmat_y(angle_deg):
    """Independent rotation-matrix oracle for yaw rotations (right-handed, y up)."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]


def matvec(m, v):
    return Vec3(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )


class TestRadialTransform:
    def test_index_zero_is_identity(self):
        t = radial_transform(0, 4)
        assert t.rotation == Quat.identity()
        assert t.translation == Vec3(0, 0, 0)

    def test_quarter_turn_for_second_of_four(self):
        t = radial_transform(1, 4)
        # angle encoded in the quaternion: 2*atan2(|y|, w)
        angle = math.degrees(2 * math.atan2(t.rotation.y, t.rotation.w))
        assert angle == pytest.approx(90.0, abs=1e-12)

    def test_matches_rotation_matrix_oracle(self):
        t = radial_transform(1, 4)
        got = t.apply(Vec3(1.0, 0.0, 0.0))
        want = matvec(rotmat_y(90.0), Vec3(1.0, 0.0, 0.0))
        assert got.x == pytest.approx(want.x, abs=1e-12)
        assert got.z == pytest.approx(want.z, abs=1e-12)
        assert (got.x, got.y, got.z) == pytest.approx((0.0, 0.0, -1.0), abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_equal_spacing_and_zero_translation(self, n):
        angles = []
        for k in range(n):
            t = radial_transform(k, n)
            assert t.translation == Vec3(0, 0, 0)
            angles.append(math.degrees(2 * math.atan2(t.rotation.y, t.rotation.w)))
        for k in range(1, n):
            assert angles[k] - angles[k - 1] == pytest.approx(360.0 / n, abs=1e-9)

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ValueError):
            radial_transform(4, 4)
        with pytest.raises(ValueError):
            radial_transform(0, 0)

    @given(st.integers(min_value=1, max_value=5), vec3s)
    def test_oracle_agreement_all_nodes(self, n, v):
        for k in range(n):
            got = radial_transform(k, n).apply(v)
            want = matvec(rotmat_y(k * 360.0 / n), v)
            assert got.distance_to(want) < 1e-9


class TestToShared:
    def test_identity_transform_is_noop(self):
        p = Pose(Vec3(0.5, 1.6, -0.3), Quat.about_y(33.0))
        q = to_shared(p, RigidTransform())
        assert q == p

    def test_half_turn(self):
        p = Pose(Vec3(1.0, 0.0, 0.0))
        q = to_shared(p, radial_transform(2, 4))
        assert (q.position.x, q.position.y, q.position.z) == pytest.approx((-1.0, 0.0, 0.0), abs=1e-12)

    @given(vec3s, st.floats(min_value=-360, max_value=360), finite, finite, finite)
    def test_round_trip_through_inverse(self, pos, angle, tx, ty, tz):
        t = RigidTransform(Quat.about_y(angle), Vec3(tx, ty, tz))
        p = Pose(pos, Quat.about_y(angle / 3.0))
        back = to_shared(to_shared(p, t), t.inverse())
        assert back.position.distance_to(p.position) < 1e-9
        assert abs(back.orientation.w - p.orientation.w) < 1e-9
        assert abs(back.orientation.y - p.orientation.y) < 1e-9

    @given(vec3s, vec3s, st.integers(min_value=0, max_value=4))
    def test_isometry(self, a, b, k):
        t = radial_transform(k, 5)
        d_before = a.distance_to(b)
        d_after = t.apply(a).distance_to(t.apply(b))
        assert abs(d_before - d_after) < 1e-9

    def test_orientation_left_composed_and_unit(self):
        p = Pose(Vec3(0, 1.6, 0), Quat.about_y(45.0))
        q = to_shared(p, radial_transform(1, 4))
        assert q.orientation.norm() == pytest.approx(1.0, abs=1e-6)
        angle = math.degrees(2 * math.atan2(q.orientation.y, q.orientation.w))
        assert angle == pytest.approx(135.0, abs=1e-9)

    def test_non_yaw_transform_rejected(self):
        with pytest.raises(ValueError):
            RigidTransform(Quat(math.cos(0.2), math.sin(0.2), 0.0, 0.0))


class TestPairOverlap:
    def test_coincident_is_one(self):
        k = BodyKernel()
        assert pair_overlap(Vec3(1, 2, 3), Vec3(1, 2, 3), k) == 1.0

    def test_far_apart_vanishes(self):
        k = BodyKernel()
        far = Vec3(1e6 * k.sigma, 0, 0)
        assert pair_overlap(Vec3(0, 0, 0), far, k) < 1e-12

    def test_two_sigma_separation_is_inverse_e(self):
        # closed form: exp(-(2 sigma)^2 / (4 sigma^2)) = 1/e
        k = BodyKernel(sigma=0.35)
        got = pair_overlap(Vec3(0, 0, 0), Vec3(2 * k.sigma, 0, 0), k)
        assert got == pytest.approx(math.exp(-1.0), abs=1e-12)

    @given(vec3s, vec3s)
    def test_symmetric_and_bounded(self, a, b):
        k = BodyKernel()
        o1 = pair_overlap(a, b, k)
        o2 = pair_overlap(b, a, k)
        assert o1 == o2
        assert 0.0 <= o1 <= 1.0

    @given(st.floats(min_value=0.0, max_value=10.0), st.floats(min_value=0.001, max_value=10.0))
    def test_strictly_decreasing_in_distance(self, d, delta):
        k = BodyKernel()
        near = pair_overlap(Vec3(0, 0, 0), Vec3(d, 0, 0), k)
        farther = pair_overlap(Vec3(0, 0, 0), Vec3(d + delta, 0, 0), k)
        assert farther < near

    def test_one_iff_zero_distance(self):
        k = BodyKernel()
        assert pair_overlap(Vec3(0, 0, 0), Vec3(1e-8, 0, 0), k) < 1.0


class TestGroupLuminosity:
    def test_single_body(self):
        assert group_luminosity([Vec3(0, 0, 0)], BodyKernel()) == 1.0

    def test_coalesced_counts(self):
        k = BodyKernel()
        p = Vec3(0.2, 1.0, -0.4)
        assert group_luminosity([p, p], k) == pytest.approx(3.0, abs=1e-12)
        assert group_luminosity([p] * 4, k) == pytest.approx(10.0, abs=1e-12)

    def test_empty_group_is_dark(self):
        assert group_luminosity([], BodyKernel()) == 0.0

    def test_ordering_more_coalesced_bodies_make_more_light(self):
        k = BodyKernel()
        p = Vec3(0, 1.2, 0)
        l1 = group_luminosity([p], k)
        l2 = group_luminosity([p, p], k)
        l4 = group_luminosity([p] * 4, k)
        assert l4 > l2 > l1

    @given(st.lists(vec3s, min_size=2, max_size=5), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, centers, rng):
        k = BodyKernel()
        shuffled = centers[:]
        rng.shuffle(shuffled)
        assert group_luminosity(shuffled, k) == pytest.approx(group_luminosity(centers, k), rel=1e-12)

    @given(st.lists(vec3s, min_size=0, max_size=4), vec3s)
    def test_adding_a_body_never_dims(self, centers, extra):
        k = BodyKernel()
        assert group_luminosity(centers + [extra], k) >= group_luminosity(centers, k)

    @given(st.floats(min_value=0.0, max_value=5.0), st.floats(min_value=0.01, max_value=4.0))
    def test_two_bodies_closer_never_dims(self, d, step):
        k = BodyKernel()
        far = group_luminosity([Vec3(0, 0, 0), Vec3(d + step, 0, 0)], k)
        near = group_luminosity([Vec3(0, 0, 0), Vec3(d, 0, 0)], k)
        assert near >= far

    @given(st.lists(vec3s, min_size=2, max_size=5), st.floats(min_value=0.05, max_value=0.99))
    def test_contracting_the_group_never_dims(self, centers, shrink):
        # shrinking toward the centroid reduces every pairwise distance
        k = BodyKernel()
        cx = sum(c.x for c in centers) / len(centers)
        cy = sum(c.y for c in centers) / len(centers)
        cz = sum(c.z for c in centers) / len(centers)
        contracted = [
            Vec3(cx + (c.x - cx) * shrink, cy + (c.y - cy) * shrink, cz + (c.z - cz) * shrink)
            for c in centers
        ]
        assert group_luminosity(contracted, k) >= group_luminosity(centers, k) - 1e-12

    def test_per_avatar_split_sums_to_group(self):
        k = BodyKernel()
        centers = [Vec3(0, 0, 0), Vec3(0.1, 0, 0), Vec3(3, 0, 0)]
        per = avatar_luminosities(centers, k)
        assert sum(per) == pytest.approx(group_luminosity(centers, k), rel=1e-12)
        assert per[0] > k.base_luminosity  # near a neighbor, glows brighter


class TestValidation:
    def test_kernel_rejects_bad_params(self):
        with pytest.raises(ValueError):
            BodyKernel(sigma=0.0)
        with pytest.raises(ValueError):
            BodyKernel(base_luminosity=0.0)
        with pytest.raises(ValueError):
            BodyKernel(pair_gain=-0.1)

    def test_vec3_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Vec3(float("nan"), 0, 0)
        with pytest.raises(ValueError):
            Vec3(0, float("inf"), 0)

    def test_quat_rejects_far_from_unit(self):
        with pytest.raises(ValueError):
            Quat(1.0, 1.0, 0.0, 0.0)

    def test_body_center_offset(self):
        head = Pose(Vec3(0.0, 1.6, 0.0))
        c = body_center(head)
        assert c.y == pytest.approx(1.2)
