import numpy as np
import pytest

from prunebench.bev import (CalibrationError, FisheyeCamera, TopViewGrid, checker_labels, default_rig, dump_rig,
                            load_rig, look_at_camera, parse_grid, project_ground_to_pixel, render_ground_labels,
                            stitch_topview)


def _down_camera(f=100.0, size=401, x=0.0, y=0.0, h=1.5, name="down"):
    return look_at_camera((x, y, h), 0.0, 90.0, f, size, size, name)


def test_point_below_camera_hits_principal_point():
    cam = _down_camera()
    u, v = project_ground_to_pixel(cam, (0.0, 0.0))
    assert abs(u - cam.cx) < 1e-9 and abs(v - cam.cy) < 1e-9


def test_equidistant_radius():
    rot = np.diag([1.0, -1.0, -1.0])  # optical axis pointing down
    cam = FisheyeCamera(100.0, 200.0, 150.0, 400, 300, rot, -rot @ np.array([0.0, 0.0, 2.0]))
    # a ray 1 rad off-axis toward +x lands on the ground at x = 2 tan(1)
    u, v = project_ground_to_pixel(cam, (2 * np.tan(1.0), 0.0))
    assert abs(u - 300.0) < 1e-9 and abs(v - 150.0) < 1e-9


def test_pixel_ground_round_trip(rng):
    for cam in default_rig(f=200, size=640):
        pts = np.column_stack([rng.uniform(-6, 6, 200), rng.uniform(-6, 6, 200), np.zeros(200)])
        u, v, _, ok = cam.project(pts)
        back, hit = cam.pixel_to_ground(u[ok], v[ok])
        assert hit.all()
        assert np.abs(back - pts[ok]).max() < 1e-6


def test_outside_field_of_view():
    cam = look_at_camera((0, 0, 1.0), 0.0, 0.0, 100, 400, 400)
    assert project_ground_to_pixel(cam, (0.0, -5.0)) is None


def test_single_constant_camera():
    cam = _down_camera(f=80, size=321, h=2.0)
    grid = TopViewGrid(4, 4, 0.1)
    out = stitch_topview([cam], [np.full((321, 321), 7, np.uint32)], grid)
    assert out.shape == (1, 40, 40)
    _, _, theta, ok = cam.project(grid.cell_centers())
    assert (out[0][ok] == 7).all()


def test_overlap_prefers_smaller_angle():
    a = _down_camera(x=-1.0, name="a")
    b = _down_camera(x=1.0, name="b")
    grid = TopViewGrid(4, 2, 0.1)
    out = stitch_topview([a, b], [np.full((401, 401), 1, np.uint32), np.full((401, 401), 2, np.uint32)], grid)[0]
    x = grid.cell_centers()[..., 0]
    assert (out[x < 0] == 1).all() and (out[x > 0] == 2).all()


def test_unseen_cells_ignored():
    cam = _down_camera(f=50, size=101, h=0.5)
    out = stitch_topview([cam], [np.zeros((101, 101), np.uint32)], TopViewGrid(20, 20, 0.5))[0]
    assert out[0, 0] == 255 and out[20, 20] == 0


def test_rig_rotation_rotates_topview():
    def rig(turn):
        c, s = np.cos(np.deg2rad(turn)), np.sin(np.deg2rad(turn))
        cams = []
        for pos, yaw in [((0.5, 1.5, 1.0), 10.0), ((-1.0, -0.5, 1.0), 200.0), ((1.2, -1.0, 1.2), 120.0)]:
            p = (c * pos[0] - s * pos[1], s * pos[0] + c * pos[1], pos[2])
            cams.append(look_at_camera(p, yaw - turn, 35.0, 150, 480, 480))
        return cams

    labels = [np.full((480, 480), k, np.uint32) for k in range(3)]
    for k in range(3):
        labels[k][:, :240] += 10  # make each image asymmetric
    grid = TopViewGrid(6, 6, 0.1)
    base = stitch_topview(rig(0), labels, grid)[0]
    turned = stitch_topview(rig(90), labels, grid)[0]
    agree = np.mean(np.rot90(base) == turned)
    assert agree > 0.999


def test_checker_scene_reconstruction():
    rig = default_rig(f=160, size=640)
    labels = [render_ground_labels(c, checker_labels) for c in rig]
    grid = TopViewGrid(10, 10, 0.1)
    out = stitch_topview(rig, labels, grid)[0]
    pts = grid.cell_centers()
    truth = checker_labels(pts[..., 0], pts[..., 1])
    seen = out != 255
    assert seen.mean() > 0.9
    assert np.mean(out[seen] == truth[seen]) > 0.97


def test_calibration_file_round_trip(tmp_path):
    rig = default_rig()
    dump_rig(rig, tmp_path / "rig.ini")
    back = load_rig(tmp_path / "rig.ini")
    assert [c.name for c in back] == [c.name for c in rig]
    for a, b in zip(rig, back):
        assert np.allclose(a.rotation, b.rotation) and np.allclose(a.translation, b.translation)
        assert (a.f, a.cx, a.width, a.theta_max) == pytest.approx((b.f, b.cx, b.width, b.theta_max))


def test_bad_calibration(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[front]\nf = 100\n")
    with pytest.raises(CalibrationError, match="missing key"):
        load_rig(p)
    p.write_text("")
    with pytest.raises(CalibrationError):
        load_rig(p)
    with pytest.raises(CalibrationError, match="orthonormal"):
        FisheyeCamera(100, 1, 1, 3, 3, np.ones((3, 3)), [0, 0, -1])
    with pytest.raises(CalibrationError, match="above"):
        FisheyeCamera(100, 1, 1, 3, 3, np.eye(3), [0, 0, 1])


def test_label_size_mismatch():
    with pytest.raises(CalibrationError):
        stitch_topview([_down_camera()], [np.zeros((10, 10), np.uint32)], TopViewGrid(2, 2, 0.5))


def test_parse_grid():
    g = parse_grid("20x10m@0.05")
    assert g.shape == (200, 400)
    with pytest.raises(CalibrationError):
        parse_grid("20m")
    with pytest.raises(CalibrationError):
        parse_grid("1x1m@0.3")
