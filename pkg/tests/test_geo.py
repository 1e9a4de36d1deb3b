import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from g2s import geo
from g2s.errors import (EmptyTrack, IndexOutOfRange, InvalidCoordinate, InvalidRate,
                        MissingTimestamps, NonMonotonicTimestamps, ParseError, PolarReference)
from g2s.geo import GeodeticCoord, GpsTrack

from oracles import brute_force_sync, haversine, haversine_3d

# A KITTI raw drive near Karlsruhe, lat/lon/alt then 27 further OXTS fields.
KITTI_FIXES = [
    (49.011212804408, 8.4228850417969, 112.83492279053),
    (49.011214837252, 8.4228877655518, 112.83390808105),
    (49.011220152041, 8.4228959880613, 112.82891845703),
    (49.011229286766, 8.4229089534566, 112.82537841797),
    (49.011241926541, 8.4229269017004, 112.82093048096),
]
KITTI_STAMPS = [
    "2011-09-26 13:02:25.964389445",
    "2011-09-26 13:02:26.074347165",
    "2011-09-26 13:02:26.174316656",
    "2011-09-26 13:02:26.274287238",
    "2011-09-26 13:02:26.374258043",
]


def write_oxts(root, fixes=KITTI_FIXES, stamps=KITTI_STAMPS):
    data = root / "data"
    data.mkdir(parents=True)
    for i, (lat, lon, alt) in enumerate(fixes):
        rest = " ".join(["0.1"] * 27)
        (data / f"{i:010d}.txt").write_text(f"{lat} {lon} {alt} {rest}\n")
    (root / "timestamps.txt").write_text("\n".join(stamps) + "\n")
    return root


# -- mercator_project ----------------------------------------------------------

def test_origin_maps_to_zero():
    p = geo.mercator_project(GeodeticCoord(0.0, 0.0, 0.0), 0.0)
    assert (p.x_g, p.y_g, p.z_g) == (0.0, 0.0, 0.0)


def test_earth_radius_is_verbatim():
    assert geo.EARTH_RADIUS == 6378137
    # one degree of longitude on the equator
    p = geo.mercator_project(GeodeticCoord(0.0, 1.0), 0.0)
    assert p.z_g == pytest.approx(6378137 * math.pi / 180, rel=1e-15)


def test_projection_formula_and_timestamp():
    g = GeodeticCoord(48.5, 9.25, 310.0, t=4.5)
    p = geo.mercator_project(g, 48.0)
    c = math.cos(math.radians(48.0))
    assert p.x_g == pytest.approx(c * 6378137 * math.log(math.tan(math.pi * (90 + 48.5) / 360)),
                                  rel=1e-14)
    assert p.z_g == pytest.approx(c * 6378137 * math.pi * 9.25 / 180, rel=1e-14)
    assert p.y_g == 310.0 and p.t == 4.5


def test_meridian_30m_matches_haversine():
    lat0 = 49.0
    dlat = 30.0 / 6378137 * 180 / math.pi
    a = geo.mercator_project(GeodeticCoord(lat0, 8.4), lat0).as_array()
    b = geo.mercator_project(GeodeticCoord(lat0 + dlat, 8.4), lat0).as_array()
    ref = haversine(lat0, 8.4, lat0 + dlat, 8.4)
    assert np.linalg.norm(b - a) == pytest.approx(ref, rel=5e-3)


@pytest.mark.parametrize("lat0", [89.9, -89.9, 90.0])
def test_polar_reference_rejected(lat0):
    with pytest.raises(PolarReference):
        geo.mercator_project(GeodeticCoord(10.0, 0.0), lat0)


@pytest.mark.parametrize("lat,lon", [(91.0, 0.0), (0.0, 181.0), (float("nan"), 0.0)])
def test_invalid_coordinate(lat, lon):
    with pytest.raises(InvalidCoordinate):
        GeodeticCoord(lat, lon)


# -- project_track -------------------------------------------------------------

def test_single_fix_track():
    g = GeodeticCoord(49.01, 8.42, 110.0)
    tr = geo.project_track([g])
    assert len(tr) == 1 and tr.reference_lat == 49.01
    p = geo.mercator_project(g, 49.01)
    np.testing.assert_array_equal(tr.xyz[0], p.as_array())


def test_planar_track_zeroes_altitude():
    fixes = [GeodeticCoord(lat, lon, alt, t=0.1 * i)
             for i, (lat, lon, alt) in enumerate(KITTI_FIXES)]
    tr = geo.project_track(fixes, planar=True)
    assert np.all(tr.xyz[:, 1] == 0.0)
    assert all(c.y_g == 0.0 for c in tr.coords)


def test_kitti_sequence_matches_haversine_oracle():
    fixes = [GeodeticCoord(lat, lon, alt, t=0.1 * i)
             for i, (lat, lon, alt) in enumerate(KITTI_FIXES)]
    tr = geo.project_track(fixes)
    for i in range(len(fixes)):
        for j in range(i + 1, len(fixes)):
            ref = haversine_3d(*KITTI_FIXES[i], *KITTI_FIXES[j])
            assert geo.relative_displacement(tr, i, j) == pytest.approx(ref, rel=5e-3)


def test_track_errors():
    with pytest.raises(EmptyTrack):
        geo.project_track([])
    with pytest.raises(NonMonotonicTimestamps):
        geo.project_track([GeodeticCoord(1, 1, t=1.0), GeodeticCoord(1, 1, t=1.0)])


# -- sync_to_images ------------------------------------------------------------

def _track(times):
    return GpsTrack(0.0, np.zeros((len(times), 3)), times)


def test_sync_identity():
    t = np.arange(6) * 0.1
    res = geo.sync_to_images(_track(t), t)
    assert res.indices == tuple(range(6))
    assert res.matched == 6


def test_sync_example():
    res = geo.sync_to_images(_track([0.0, 0.1, 0.2]), [0.04, 0.14], tolerance=0.05)
    assert res.indices == (0, 1)


def test_sync_tie_goes_to_earlier_fix():
    res = geo.sync_to_images(_track([0.0, 0.1]), [0.05], tolerance=0.05)
    assert res.indices == (0,)


def test_sync_no_overlap():
    res = geo.sync_to_images(_track([0.0, 1.0]), [0.4, 0.6], tolerance=0.1)
    assert res.indices == (None, None)


def test_sync_default_tolerance_is_half_median_gap():
    tr = _track([0.0, 0.1, 0.2, 0.4])
    assert geo.default_tolerance(tr) == pytest.approx(0.05)
    assert geo.sync_to_images(tr, [0.3]).tolerance == pytest.approx(0.05)


def test_sync_rejects_unsorted_images():
    with pytest.raises(NonMonotonicTimestamps):
        geo.sync_to_images(_track([0.0, 0.1]), [0.1, 0.0])


# whole milliseconds keep every time difference exact, so ties are real ties
ms = st.lists(st.integers(0, 10_000).map(float), min_size=1, max_size=12, unique=True)


@given(ms, ms, st.integers(1, 2000).map(float))
def test_sync_matches_brute_force(gps, imgs, tol):
    gps, imgs = sorted(gps), sorted(imgs)
    res = geo.sync_to_images(_track(gps), imgs, tol)
    assert list(res.indices) == brute_force_sync(gps, imgs, tol)
    matched = [j for j in res.indices if j is not None]
    assert matched == sorted(matched)
    assert len(set(matched)) == len(matched)
    for k, j in enumerate(res.indices):
        if j is not None:
            assert abs(gps[j] - imgs[k]) <= tol


# -- relative_displacement -----------------------------------------------------

def test_displacement_examples():
    tr = GpsTrack(0.0, [[0, 0, 0], [3, 0, 4]], [0, 1])
    assert geo.relative_displacement(tr, 0, 0) == 0.0
    assert geo.relative_displacement(tr, 0, 1) == 5.0
    flat = GpsTrack(0.0, [[0, 7, 0], [3, 9, 4]], [0, 1], planar=True)
    assert geo.relative_displacement(flat, 0, 1) == 5.0


def test_displacement_index_checked():
    tr = GpsTrack(0.0, [[0, 0, 0]], [0])
    with pytest.raises(IndexOutOfRange):
        geo.relative_displacement(tr, 0, 1)


coords = st.lists(st.tuples(*[st.floats(-1e3, 1e3)] * 3), min_size=3, max_size=8)


@given(coords, st.booleans())
def test_displacement_is_a_metric(pts, planar):
    tr = GpsTrack(0.0, pts, np.arange(len(pts)), planar=planar)
    d = lambda i, j: geo.relative_displacement(tr, i, j)  # noqa: E731
    n = len(pts)
    for i in range(n):
        assert d(i, i) == 0.0
        for j in range(n):
            assert d(i, j) >= 0.0
            assert d(i, j) == d(j, i)
            for k in range(n):
                assert d(i, k) <= d(i, j) + d(j, k) + 1e-9


# -- simulate_gps_rate ---------------------------------------------------------

def test_full_rate_marks_everything():
    assert geo.simulate_gps_rate(23, 10, 10).all()


def test_one_hz_one_per_block():
    m = geo.simulate_gps_rate(30, 1, 10, seed=5)
    assert m.sum() == 3
    assert all(m[b:b + 10].sum() == 1 for b in range(0, 30, 10))


def test_partial_final_block():
    m = geo.simulate_gps_rate(13, 5, 10, seed=2)
    assert m[:10].sum() == 5 and m[10:].sum() == 3


def test_rate_is_deterministic():
    first = geo.simulate_gps_rate(40, 3, 10, seed=99)
    for _ in range(100):
        np.testing.assert_array_equal(geo.simulate_gps_rate(40, 3, 10, seed=99), first)


def test_rate_fraction_over_seeds():
    frac = np.mean([geo.simulate_gps_rate(20, 5, 10, seed=s).mean() for s in range(1000)])
    assert abs(frac - 0.5) <= 0.01
    # every frame position is drawn about equally often
    hits = np.sum([geo.simulate_gps_rate(10, 5, 10, seed=s) for s in range(1000)], axis=0)
    assert np.all(np.abs(hits / 1000 - 0.5) < 0.06)


@pytest.mark.parametrize("f", [0, 0.5, 11, 2.5])
def test_invalid_rate(f):
    with pytest.raises(InvalidRate):
        geo.simulate_gps_rate(10, f, 10)


# -- OXTS and timestamps -------------------------------------------------------

def test_parse_timestamps_relative(tmp_path):
    p = tmp_path / "timestamps.txt"
    p.write_text("\n".join(KITTI_STAMPS) + "\n")
    t = geo.parse_timestamps(p)
    assert t[0] == 0.0
    assert t[1] == pytest.approx(0.10995772, abs=1e-8)
    absolute = geo.parse_timestamps(p, relative=False)
    assert absolute[0] == pytest.approx(1317042145.964389445, abs=1e-6)


def test_parse_timestamps_errors(tmp_path):
    with pytest.raises(MissingTimestamps):
        geo.parse_timestamps(tmp_path / "nope.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("2011-09-26 13:02:25.9\nyesterday\n")
    with pytest.raises(ParseError) as info:
        geo.parse_timestamps(bad)
    assert info.value.context["line"] == 2


def test_read_oxts_dir(tmp_path):
    fixes = geo.read_oxts_dir(write_oxts(tmp_path / "oxts"))
    assert len(fixes) == 5
    assert fixes[0].lat == KITTI_FIXES[0][0] and fixes[0].t == 0.0


def test_short_oxts_record_names_line(tmp_path):
    root = write_oxts(tmp_path / "oxts")
    (root / "data" / "0000000002.txt").write_text("49.0 8.4\n")
    with pytest.raises(ParseError) as info:
        geo.read_oxts_dir(root)
    assert info.value.context["line"] == 1
    assert "0000000002.txt" in info.value.context["file"]


def test_missing_timestamps(tmp_path):
    root = write_oxts(tmp_path / "oxts")
    (root / "timestamps.txt").unlink()
    with pytest.raises(MissingTimestamps):
        geo.read_oxts_dir(root)


def test_track_csv_roundtrip(tmp_path):
    tr = GpsTrack(49.0, np.random.default_rng(0).normal(size=(4, 3)), [0, 0.1, 0.2, 0.3],
                  available=[True, False, True, True])
    geo.write_track_csv(tr, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,x_g,y_g,z_g,available"
    back = geo.read_track_csv(tmp_path / "t.csv", 49.0)
    np.testing.assert_array_equal(back.xyz, tr.xyz)
    np.testing.assert_array_equal(back.available, tr.available)
