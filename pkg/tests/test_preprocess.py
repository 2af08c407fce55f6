import math
import random

import pytest

from trajlens.core import TrackPoint, Trajectory, haversine_km, haversine_lonlat
from trajlens.errors import EmptySelection, EmptyTrajectory, TooShort
from trajlens.preprocess import (
    PreprocessConfig,
    StayPoint,
    cluster_stay_points,
    compress,
    detect_stay_points,
    filter_noise,
    filter_users,
    select_medium_length,
    truncate_for_prediction,
)

KM_PER_DEG_LAT = 111.19492664455873  # 2*pi*R/360 for the toolkit's Earth radius


def make_traj(points, user="u", tid="u/0"):
    return Trajectory(user_id=user, traj_id=tid, points=tuple(points))


def walk(n, step_km=0.001, dt_s=1, lon0=116.3, lat0=39.9, t0=0):
    """Straight northward walk, step_km between consecutive fixes."""
    dlat = step_km / KM_PER_DEG_LAT
    return [
        TrackPoint(lon=lon0, lat=lat0 + i * dlat, t=t0 + i * dt_s)
        for i in range(n)
    ]


class TestFilterNoise:
    def test_stationary_unchanged(self):
        traj = make_traj([TrackPoint(116.3, 39.9, i) for i in range(10)])
        assert filter_noise(traj, 500.0) == traj

    def test_teleport_removed(self):
        # 1 m/s walk with one point displaced ~100 km, 5 s after its
        # predecessor: implied speed 7.2e4 km/h, far over the threshold.
        pts = walk(10, step_km=0.001, dt_s=1)
        jump = TrackPoint(lon=pts[4].lon + 100 / KM_PER_DEG_LAT * 1.3,
                          lat=pts[4].lat + 100 / KM_PER_DEG_LAT,
                          t=pts[4].t + 5)
        noisy = pts[:5] + [jump] + [
            TrackPoint(p.lon, p.lat, p.t + 6) for p in pts[5:]
        ]
        traj = make_traj(noisy)
        cleaned = filter_noise(traj, 500.0)
        assert jump not in cleaned.points
        assert len(cleaned) == len(noisy) - 1

    def test_infinite_threshold_is_identity(self):
        pts = walk(20, step_km=0.5, dt_s=1)
        traj = make_traj(pts)
        assert filter_noise(traj, math.inf) == traj

    def test_all_dropped_raises(self):
        pts = [
            TrackPoint(116.3, 39.9, 0),
            TrackPoint(117.3, 40.9, 1),
            TrackPoint(118.3, 41.9, 2),
        ]
        with pytest.raises(EmptyTrajectory):
            filter_noise(make_traj(pts), 1.0)


class TestCompress:
    def test_far_points_unchanged(self):
        a = TrackPoint(116.3, 39.9, 0)
        b = TrackPoint(116.3, 39.9 + 10 / KM_PER_DEG_LAT, 60)
        traj = make_traj([a, b])
        assert compress(traj, 0.2) == traj

    def test_identical_points_collapse_to_two(self):
        pts = [TrackPoint(116.3, 39.9, i) for i in range(100)]
        out = compress(make_traj(pts), 0.2)
        assert len(out) == 2
        assert out.points[0].t == 0 and out.points[1].t == 99

    def test_idempotent_on_random_inputs(self):
        rng = random.Random(13)
        for _ in range(30):
            n = rng.randint(2, 60)
            pts = []
            lon, lat = 116.0, 39.0
            for i in range(n):
                lon += rng.uniform(-0.004, 0.004)
                lat += rng.uniform(-0.004, 0.004)
                pts.append(TrackPoint(lon, lat, i * 10))
            once = compress(make_traj(pts), 0.25)
            twice = compress(once, 0.25)
            assert twice == once
            assert len(once) <= n

    def test_output_still_a_valid_trajectory(self):
        pts = [TrackPoint(116.3, 39.9, i) for i in range(5)]
        out = compress(make_traj(pts), 1.0)
        assert len(out) >= 2
        assert out.points[0].t <= out.points[-1].t


def brute_force_stays(traj, radius_km, min_minutes):
    """Independent window scan: full distance table, then run extension."""
    pts = traj.points
    n = len(pts)
    d = [[haversine_km(pts[i], pts[j]) for j in range(n)] for i in range(n)]
    out = []
    i = 0
    while i < n:
        end = next((j for j in range(i + 1, n) if d[i][j] > radius_km), n)
        run = pts[i:end]
        if run[-1].t - run[0].t >= min_minutes * 60:
            out.append((
                sum(p.lon for p in run) / len(run),
                sum(p.lat for p in run) / len(run),
                run[0].t,
                run[-1].t,
            ))
            i = end
        else:
            i += 1
    return out


class TestDetectStayPoints:
    def test_constant_velocity_has_no_stays(self):
        # 60 km/h: each 10 s step covers ~167 m, so no 20-minute run stays
        # within a 200 m radius of its first point.
        pts = walk(200, step_km=60.0 / 360.0, dt_s=10)
        stays = detect_stay_points(make_traj(pts), 0.2, 20.0)
        assert stays == []
        assert brute_force_stays(make_traj(pts), 0.2, 20.0) == []

    def test_single_dwell_at_centroid(self):
        rng = random.Random(23)
        dwell = [
            TrackPoint(116.3 + rng.uniform(-2e-4, 2e-4),
                       39.9 + rng.uniform(-2e-4, 2e-4), i * 60)
            for i in range(31)
        ]
        away = [
            TrackPoint(116.3 + 0.01 * (i + 1), 39.9 + 0.01 * (i + 1),
                       31 * 60 + i * 60)
            for i in range(5)
        ]
        traj = make_traj(dwell + away)
        stays = detect_stay_points(traj, 0.2, 20.0)
        assert len(stays) == 1
        s = stays[0]
        assert s.lon == pytest.approx(sum(p.lon for p in dwell) / len(dwell))
        assert s.lat == pytest.approx(sum(p.lat for p in dwell) / len(dwell))
        assert s.duration_s() >= 20 * 60

    def test_too_short_trajectory_yields_nothing(self):
        pts = [TrackPoint(116.3, 39.9, 0), TrackPoint(116.3, 39.9, 5 * 60)]
        assert detect_stay_points(make_traj(pts), 0.2, 20.0) == []

    def test_matches_brute_force_on_random_trajectories(self):
        rng = random.Random(37)
        for _ in range(25):
            n = rng.randint(2, 200)
            pts = []
            lon, lat, t = 116.0, 39.0, 0
            for _ in range(n):
                if rng.random() < 0.4:  # dwell step
                    lon += rng.uniform(-4e-4, 4e-4)
                    lat += rng.uniform(-4e-4, 4e-4)
                else:
                    lon += rng.uniform(-3e-3, 3e-3)
                    lat += rng.uniform(-3e-3, 3e-3)
                t += rng.randint(30, 240)
                pts.append(TrackPoint(lon, lat, t))
            traj = make_traj(pts)
            got = detect_stay_points(traj, 0.15, 10.0)
            want = brute_force_stays(traj, 0.15, 10.0)
            assert len(got) == len(want)
            for s, w in zip(got, want):
                assert s.lon == pytest.approx(w[0])
                assert s.lat == pytest.approx(w[1])
                assert (s.t_start, s.t_end) == (w[2], w[3])


def stay(lon, lat, t0=0, user="u"):
    return StayPoint(user_id=user, lon=lon, lat=lat, t_start=t0, t_end=t0 + 1800)


def brute_force_clusters(stays, eps_km, min_samples):
    """Reachability check by repeated expansion over the full graph."""
    n = len(stays)
    d = [
        [haversine_lonlat(a.lon, a.lat, b.lon, b.lat) for b in stays]
        for a in stays
    ]
    core = [sum(1 for j in range(n) if d[i][j] <= eps_km) >= min_samples
            for i in range(n)]
    groups = []
    assigned = set()
    for i in range(n):
        if not core[i] or i in assigned:
            continue
        group = {i}
        while True:
            grew = False
            for u in list(group):
                for v in range(n):
                    if core[v] and v not in group and d[u][v] <= eps_km:
                        group.add(v)
                        grew = True
            if not grew:
                break
        groups.append(group)
        assigned |= group
    return groups, core


class TestClusterStayPoints:
    def test_two_far_groups(self):
        rng = random.Random(41)
        g1 = [stay(116.30 + rng.uniform(-1e-3, 1e-3),
                   39.90 + rng.uniform(-1e-3, 1e-3)) for _ in range(5)]
        g2 = [stay(116.80 + rng.uniform(-1e-3, 1e-3),
                   39.90 + rng.uniform(-1e-3, 1e-3)) for _ in range(5)]
        labelled = cluster_stay_points(g1 + g2, 0.5, 3)
        ids = {s.cluster_id for s in labelled}
        assert ids == {0, 1}
        assert {s.cluster_id for s in labelled[:5]} == {0}
        assert {s.cluster_id for s in labelled[5:]} == {1}
        groups, _ = brute_force_clusters(g1 + g2, 0.5, 3)
        assert sorted(sorted(g) for g in groups) == [
            list(range(5)), list(range(5, 10))
        ]

    def test_single_point_below_min_samples_is_noise(self):
        labelled = cluster_stay_points([stay(116.3, 39.9)], 0.5, 2)
        assert labelled[0].cluster_id is None

    def test_all_identical_one_cluster(self):
        labelled = cluster_stay_points([stay(116.3, 39.9, t0=i) for i in range(6)],
                                       0.5, 3)
        assert {s.cluster_id for s in labelled} == {0}

    def test_permutation_invariant_up_to_renaming(self):
        rng = random.Random(43)
        stays = [stay(116.3 + rng.uniform(0, 0.05), 39.9 + rng.uniform(0, 0.05))
                 for _ in range(30)]
        base = cluster_stay_points(stays, 0.6, 1)
        order = list(range(30))
        rng.shuffle(order)
        permuted = cluster_stay_points([stays[i] for i in order], 0.6, 1)
        # same co-membership relation after undoing the permutation
        inv = {order[k]: k for k in range(30)}
        for i in range(30):
            for j in range(30):
                same_base = base[i].cluster_id == base[j].cluster_id
                same_perm = permuted[inv[i]].cluster_id == permuted[inv[j]].cluster_id
                assert same_base == same_perm

    def test_agrees_with_sklearn_components(self):
        sklearn = pytest.importorskip("sklearn.cluster")
        import numpy as np

        rng = random.Random(47)
        stays = [stay(116.0 + rng.uniform(0, 0.08), 39.0 + rng.uniform(0, 0.08))
                 for _ in range(40)]
        ours = cluster_stay_points(stays, 0.7, 1)
        n = len(stays)
        d = np.array([
            [haversine_lonlat(a.lon, a.lat, b.lon, b.lat) for b in stays]
            for a in stays
        ])
        ref = sklearn.DBSCAN(eps=0.7, min_samples=1, metric="precomputed").fit(d)
        for i in range(n):
            for j in range(n):
                assert (ours[i].cluster_id == ours[j].cluster_id) == (
                    ref.labels_[i] == ref.labels_[j]
                )


class TestSelectMediumLength:
    def _trajs_with_lengths(self, lengths):
        out = []
        for k, n in enumerate(lengths):
            pts = [TrackPoint(116.3, 39.9 + 1e-5 * i, i) for i in range(n)]
            out.append(make_traj(pts, tid=f"u/{k}"))
        return out

    def test_all_equal_all_kept(self):
        trajs = self._trajs_with_lengths([10] * 8)
        assert select_medium_length(trajs, 25, 75) == trajs

    def test_band_25_75_on_1_to_100(self):
        trajs = self._trajs_with_lengths(list(range(2, 102)))
        kept = select_medium_length(trajs, 25, 75)
        # nearest-rank: P25 is the 25th value (26), P75 the 75th (76)
        lengths = sorted(len(t) for t in kept)
        assert lengths[0] == 26 and lengths[-1] == 76
        assert len(kept) == 51

    def test_full_band_is_identity(self):
        trajs = self._trajs_with_lengths([3, 9, 27, 81])
        assert select_medium_length(trajs, 0, 100) == trajs

    def test_empty_input_raises(self):
        with pytest.raises(EmptySelection):
            select_medium_length([], 25, 75)


class TestTruncateForPrediction:
    def _traj_with_window(self, n_window, n_before=5, dt=60):
        # points every `dt` seconds; last n_window points inside 15 min
        pts = []
        t = 0
        for i in range(n_before):
            pts.append(TrackPoint(116.0 + 1e-3 * i, 39.0, t))
            t += 1200  # 20 min apart: outside any 15-min window
        for i in range(n_window):
            pts.append(TrackPoint(116.3 + 1e-3 * i, 39.9, t))
            t += dt
        return make_traj(pts)

    def test_20_point_window_keeps_15(self):
        # window spans 19*45 s = 14.25 min < 15 min, so exactly 20 points
        traj = self._traj_with_window(20, dt=45)
        partial, dest = truncate_for_prediction(traj, 15.0, 0.75)
        assert len(partial) == 15
        assert dest == traj.points[-1]
        assert partial.points == traj.points[-20:-5]

    def test_fraction_one_keeps_window(self):
        traj = self._traj_with_window(12, dt=45)
        partial, dest = truncate_for_prediction(traj, 15.0, 1.0)
        assert len(partial) == 12
        assert partial.points[-1] == dest

    def test_destination_excluded_when_fraction_below_one(self):
        for n in (4, 5, 8, 13):
            traj = self._traj_with_window(n, dt=45)
            partial, dest = truncate_for_prediction(traj, 15.0, 0.95)
            assert dest not in partial.points

    def test_short_trajectory_raises(self):
        pts = [TrackPoint(116.3, 39.9, i * 60) for i in range(6)]  # 5 minutes
        with pytest.raises(TooShort):
            truncate_for_prediction(make_traj(pts), 15.0, 0.75)

    def test_sparse_window_raises(self):
        pts = [TrackPoint(116.3, 39.9, 0), TrackPoint(116.31, 39.9, 900),
               TrackPoint(116.32, 39.9, 1500), TrackPoint(116.33, 39.9, 1800)]
        # only 3 points within the last 15 minutes
        with pytest.raises(TooShort):
            truncate_for_prediction(make_traj(pts), 15.0, 0.75)

    def test_partial_is_window_prefix(self):
        traj = self._traj_with_window(16, dt=50)
        partial, _ = truncate_for_prediction(traj, 15.0, 0.75)
        window = [p for p in traj.points if p.t >= traj.t_end - 900]
        assert list(partial.points) == window[: len(partial)]


class TestFilterUsers:
    def test_threshold(self):
        trajs = []
        for u, n in (("a", 3), ("b", 1)):
            for i in range(n):
                trajs.append(make_traj(
                    [TrackPoint(116.3, 39.9, 0), TrackPoint(116.31, 39.9, 60)],
                    user=u, tid=f"{u}/{i}"))
        kept = filter_users(trajs, 2)
        assert {t.user_id for t in kept} == {"a"}


class TestConfig:
    def test_defaults_valid(self):
        cfg = PreprocessConfig()
        assert cfg.max_speed_kmh == 500.0
        assert cfg.dbscan_min_samples == 1

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            PreprocessConfig(max_speed_kmh=0)
        with pytest.raises(ValueError):
            PreprocessConfig(dbscan_min_samples=0)
