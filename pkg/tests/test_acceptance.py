"""Acceptance gate: one test per release criterion.

Each test prints a single PASS/FAIL line (with its runtime) directly to the
terminal, bypassing capture, so the gate outcome is visible in any run.
"""

import hashlib
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from histopair.metrics import psnr, ssim
from histopair.patchify import alignment_score
from histopair.pyramid import (
    blur,
    build_pyramid,
    gaussian_kernel,
    multi_scale_loss,
    scale_loss,
    scale_representative,
    ScaleWeights,
)
from histopair.raster import Plane, Raster, save_image
from histopair.registration import (
    Homography,
    PointPair,
    estimate_homography,
    register_block,
    register_pair,
    two_step_projection,
    warp,
)

from oracles import (
    apply_known_homography,
    ref_bilinear,
    ref_control_dense,
    ref_representative,
    ref_scale_loss_rgb,
    ref_ssim,
)


class _Gate:
    """Times a criterion body and prints its PASS/FAIL line uncaptured."""

    def __init__(self, capsys, label, budget_s):
        self.capsys = capsys
        self.label = label
        self.budget_s = budget_s

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        ok = exc is None and elapsed < self.budget_s
        with self.capsys.disabled():
            print(
                f"\nacceptance {self.label}: {'PASS' if ok else 'FAIL'} "
                f"({elapsed:.1f}s / budget {self.budget_s:.0f}s)",
                flush=True,
            )
        if exc is None and elapsed >= self.budget_s:
            raise AssertionError(
                f"{self.label} exceeded runtime budget: {elapsed:.1f}s"
            )
        return False


def _random_raster(rng, h=16, w=16):
    return Raster(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


# -- A1: kernel and pyramid ----------------------------------------------------


def test_a1_kernel_and_pyramid(capsys):
    with _Gate(capsys, "A1 kernel/pyramid", 10.0):
        for size, sigma in ((1, 1.0), (3, 1.0), (3, 2.0), (5, 1.5), (7, 0.8)):
            k = gaussian_kernel(size, sigma)
            assert abs(float(k.weights.sum()) - 1.0) <= 1e-9

        center = gaussian_kernel(3, 1.0).weights[1, 1]
        assert abs(center - 0.20418) <= 1e-5

        k3 = gaussian_kernel(3, 1.0)
        rng = np.random.default_rng(100)
        for _ in range(100):
            p = Plane(rng.uniform(0.0, 255.0, (32, 32)))
            assert float(blur(p, k3).samples.var()) < float(p.samples.var())

        big = Plane(rng.uniform(0.0, 255.0, (1024, 1024)))
        pyr = build_pyramid(big, 4, k3)
        sizes = [oct.layers[0].samples.shape for oct in pyr.octaves]
        assert sizes == [(1024, 1024), (512, 512), (256, 256), (128, 128)]

        small = rng.uniform(0.0, 255.0, (128, 128))
        small_pyr = build_pyramid(Plane(small), 4, k3)
        for i in (1, 2, 3):
            got = scale_representative(small_pyr, i).samples
            want = ref_representative(small, i, k3.weights)
            assert np.max(np.abs(got - want)) <= 1e-9


# -- A2: multi-scale loss --------------------------------------------------------


def test_a2_loss(capsys):
    with _Gate(capsys, "A2 loss", 10.0):
        k3 = gaussian_kernel(3, 1.0)
        rng = np.random.default_rng(101)

        a = _random_raster(rng, 32, 32)
        for i in (1, 2, 3):
            assert scale_loss(a, Raster(a.samples.copy()), i, k3) == 0.0

        flat_a = Raster(np.full((32, 32, 3), 100, dtype=np.uint8))
        flat_b = Raster(np.full((32, 32, 3), 116, dtype=np.uint8))
        plane_a = Plane(np.full((32, 32), 40.0))
        plane_b = Plane(np.full((32, 32), 43.25))
        for i in (1, 2, 3):
            assert abs(scale_loss(flat_a, flat_b, i, k3) - 16.0) <= 1e-9
            assert abs(scale_loss(plane_a, plane_b, i, k3) - 3.25) <= 1e-9

        x = _random_raster(rng, 32, 32)
        y = _random_raster(rng, 32, 32)
        per_scale = [scale_loss(x, y, i, k3) for i in (1, 2, 3)]
        weights = (7.0, 11.0, 13.0)
        got = multi_scale_loss(x, y, ScaleWeights(0.0, weights), k3)
        want = sum(w * s for w, s in zip(weights, per_scale))
        assert abs(got - want) <= 1e-12 * abs(want)
        doubled = multi_scale_loss(
            x, y, ScaleWeights(0.0, tuple(2 * w for w in weights)), k3
        )
        assert abs(doubled - 2.0 * got) <= 1e-12 * abs(doubled)

        for seed in range(10):
            r = np.random.default_rng(200 + seed)
            u = r.integers(0, 256, (16, 16, 3), dtype=np.uint8)
            v = r.integers(0, 256, (16, 16, 3), dtype=np.uint8)
            for i in (1, 2, 3):
                got = scale_loss(Raster(u), Raster(v), i, k3)
                want = ref_scale_loss_rgb(u, v, i, k3.weights)
                assert abs(got - want) <= 1e-9


# -- A3: image metrics -------------------------------------------------------------


def test_a3_metrics(capsys):
    with _Gate(capsys, "A3 metrics", 10.0):
        rng = np.random.default_rng(102)
        for _ in range(5):
            a = _random_raster(rng)
            assert ssim(a, Raster(a.samples.copy())) == 1.0

        c100 = Raster(np.full((16, 16, 3), 100, dtype=np.uint8))
        c120 = Raster(np.full((16, 16, 3), 120, dtype=np.uint8))
        assert abs(ssim(c100, c120) - 0.98362) <= 1e-5

        c116 = Raster(np.full((16, 16, 3), 116, dtype=np.uint8))
        closed_form = 20.0 * math.log10(255.0 / 16.0)
        assert abs(psnr(c100, c116) - closed_form) <= 1e-4

        for _ in range(5):
            a, b = _random_raster(rng), _random_raster(rng)
            assert psnr(a, b) == psnr(b, a)
            assert ssim(a, b) == ssim(b, a)

        for seed in range(5):
            r = np.random.default_rng(300 + seed)
            a = r.integers(0, 256, (16, 16, 3), dtype=np.uint8)
            b = r.integers(0, 256, (16, 16, 3), dtype=np.uint8)
            got = ssim(Raster(a), Raster(b))
            assert abs(got - ref_ssim(a, b)) <= 1e-9


# -- A4: homography ------------------------------------------------------------------


def test_a4_homography(capsys):
    with _Gate(capsys, "A4 homography", 10.0):
        src = np.array([[3.0, 2.0], [120.0, 8.0], [126.0, 115.0], [5.0, 121.0]])
        dst = np.array([[0.0, 0.0], [110.0, 6.0], [118.0, 104.0], [2.0, 99.0]])
        pairs = [
            PointPair(source=(s[0], s[1]), target=(t[0], t[1]))
            for s, t in zip(src, dst)
        ]
        h = estimate_homography(pairs)
        assert np.max(np.abs(h.apply(src) - dst)) < 1e-6

        h2 = two_step_projection(
            tuple(map(tuple, src)), tuple(map(tuple, dst))
        )
        probe = np.array([[20.0, 30.0], [64.0, 64.0], [90.0, 15.0], [40.0, 100.0]])
        assert np.max(np.abs(h2.apply(probe) - h.apply(probe))) <= 1e-9

        rng = np.random.default_rng(103)
        img = Raster(rng.integers(0, 256, (48, 48, 3), dtype=np.uint8))
        out, mask = warp(img, Homography(np.eye(3)), (48, 48))
        assert np.array_equal(out.samples, img.samples)
        assert mask.all_valid()

        for _ in range(100):
            m = np.eye(3)
            m[:2, :2] += rng.uniform(-0.1, 0.1, (2, 2))
            m[:2, 2] = rng.uniform(-25.0, 25.0, 2)
            m[2, :2] = rng.uniform(-1e-4, 1e-4, 2)
            pts = rng.uniform(0.0, 200.0, (6, 2))
            tgt = apply_known_homography(m, pts)
            est = estimate_homography(
                [
                    PointPair(source=(p[0], p[1]), target=(t[0], t[1]))
                    for p, t in zip(pts, tgt)
                ]
            )
            held_out = rng.uniform(0.0, 200.0, (8, 2))
            want = apply_known_homography(m, held_out)
            assert np.max(np.abs(est.apply(held_out) - want)) < 1e-6


# -- A5: registration recovery ---------------------------------------------------------


def _shift_case(sx, sy):
    scene = np.random.default_rng(42).uniform(0.0, 255.0, (360, 360))
    fixed = Plane(scene[120:240, 120:240].copy())
    moving = Plane(scene[120 - sy : 240 - sy, 120 - sx : 240 - sx].copy())
    return fixed, moving


def _smooth_warp_case(seed, size=96):
    rng = np.random.default_rng(seed)
    moving = gaussian_filter(rng.uniform(0.0, 255.0, (size, size)), 2.0, mode="mirror")
    dx = ref_control_dense(rng.uniform(-3.0, 3.0, (4, 4)), size, size)
    dy = ref_control_dense(rng.uniform(-3.0, 3.0, (4, 4)), size, size)
    xg, yg = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))
    fixed = ref_bilinear(moving, xg + dx, yg + dy)
    return Plane(fixed), Plane(moving), dx, dy


def _warped_recolored_pair(seed, size=128):
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, 255.0, (size, size))
    lum = 0.55 * gaussian_filter(noise, 4.0, mode="mirror") + 0.45 * gaussian_filter(
        noise, 1.5, mode="mirror"
    )
    arr = np.stack(
        [
            np.clip(200.0 - 0.5 * lum, 0, 255),
            np.clip(130.0 - 0.4 * lum, 0, 255),
            np.clip(185.0 - 0.45 * lum, 0, 255),
        ],
        axis=2,
    )

    h_sample = np.array(
        [[0.998, 0.02, 2.5], [-0.018, 1.001, -1.8], [1e-5, -8e-6, 1.0]]
    )
    jitter = np.random.default_rng(seed + 1000)
    dx = ref_control_dense(jitter.uniform(-2.5, 2.5, (4, 4)), size, size)
    dy = ref_control_dense(jitter.uniform(-2.5, 2.5, (4, 4)), size, size)
    xg, yg = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))
    pts = np.stack([xg.ravel(), yg.ravel()], axis=1)
    mapped = apply_known_homography(h_sample, pts)
    sx = mapped[:, 0].reshape(size, size) + dx
    sy = mapped[:, 1].reshape(size, size) + dy
    sampled = [ref_bilinear(arr[:, :, c], sx, sy) for c in range(3)]

    r, g, b = sampled
    recolored = np.stack(
        [0.2 * r + 0.7 * g + 30.0, 0.5 * b + 0.3 * r, 0.8 * g + 10.0], axis=2
    )

    corners = np.array([[10.0, 10.0], [117.0, 12.0], [115.0, 116.0], [12.0, 118.0]])
    sources = apply_known_homography(h_sample, corners)
    pairs = [
        PointPair(source=(s[0], s[1]), target=(t[0], t[1]))
        for s, t in zip(sources, corners)
    ]
    moving = Raster(np.clip(np.round(arr), 0, 255).astype(np.uint8))
    fixed = Raster(np.clip(np.round(recolored), 0, 255).astype(np.uint8))
    return moving, fixed, pairs


def test_a5_registration_recovery(capsys):
    with _Gate(capsys, "A5 registration recovery", 120.0):
        shift_cases = [
            (32, 0), (-32, 0), (0, 32), (0, -32),
            (32, -32), (-32, 32), (17, 29), (-23, -31),
        ]
        for sx, sy in shift_cases:
            fixed, moving = _shift_case(sx, sy)
            fld = register_block(fixed, moving)
            assert np.all(fld.dx == sx), f"shift ({sx},{sy}) dx not exact"
            assert np.all(fld.dy == sy), f"shift ({sx},{sy}) dy not exact"

        for seed in range(20):
            fixed, moving, dx, dy = _smooth_warp_case(seed)
            fld = register_block(fixed, moving)
            epe = np.sqrt((fld.dx - dx) ** 2 + (fld.dy - dy) ** 2)
            assert float(epe.mean()) < 1.0, f"seed {seed} mean EPE {epe.mean():.3f}"

        moving, fixed, pairs = _warped_recolored_pair(7)
        before = alignment_score(moving, fixed)
        result = register_pair(moving, fixed, pairs)
        after = alignment_score(result.aligned, fixed)
        assert after > before


# -- A6: pipeline determinism --------------------------------------------------------


def _tissue_scene(seed, size):
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, 255.0, (size, size))
    lum = 0.55 * gaussian_filter(noise, 4.0, mode="mirror") + 0.45 * gaussian_filter(
        noise, 1.5, mode="mirror"
    )
    arr = np.stack(
        [
            np.clip(200.0 - 0.5 * lum, 0, 255),
            np.clip(130.0 - 0.4 * lum, 0, 255),
            np.clip(185.0 - 0.45 * lum, 0, 255),
        ],
        axis=2,
    )
    return np.round(arr).astype(np.uint8)


def _run_cli(args):
    proc = subprocess.run(
        [sys.executable, "-m", "histopair", *args], capture_output=True
    )
    assert proc.returncode == 0, proc.stderr.decode()
    return proc.stdout


def _snapshot(root):
    files = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            files[str(path.relative_to(root))] = hashlib.md5(
                path.read_bytes()
            ).hexdigest()
    return files


def test_a6_pipeline_determinism(tmp_path, capsys):
    with _Gate(capsys, "A6 pipeline determinism", 60.0):
        scene = _tissue_scene(104, 96)
        he_path = tmp_path / "he.png"
        ihc_path = tmp_path / "ihc.png"
        save_image(Raster(scene[0:64, 0:64]), he_path)
        save_image(Raster(scene[2:66, 3:67]), ihc_path)
        points = tmp_path / "points.csv"
        points.write_text(
            "src_x,src_y,dst_x,dst_y\n"
            "10,10,7,8\n"
            "60,12,57,10\n"
            "58,60,55,58\n"
            "12,58,9,56\n"
        )

        reg_out = tmp_path / "reg"
        reg_cmd = [
            "register",
            "--he", str(he_path),
            "--ihc", str(ihc_path),
            "--points", str(points),
            "--out", str(reg_out),
        ]
        stdout_1 = _run_cli(reg_cmd)
        snap_1 = _snapshot(reg_out)
        stdout_2 = _run_cli(reg_cmd)
        snap_2 = _snapshot(reg_out)
        assert stdout_1 == stdout_2
        assert snap_1 == snap_2

        pat_out = tmp_path / "patches"
        pat_cmd = [
            "patchify",
            "--he", str(he_path),
            "--ihc", str(ihc_path),
            "--wsi-id", "w1",
            "--her2", "2+",
            "--out", str(pat_out),
            "--patch-size", "32",
            "--min-alignment-score", "-1",
        ]
        stdout_1 = _run_cli(pat_cmd)
        snap_1 = _snapshot(pat_out)
        stdout_2 = _run_cli(pat_cmd)
        snap_2 = _snapshot(pat_out)
        assert stdout_1 == stdout_2
        assert snap_1 == snap_2

        gen = tmp_path / "gen"
        ref = tmp_path / "ref"
        gen.mkdir(), ref.mkdir()
        save_image(Raster(scene[0:32, 0:32]), gen / "p0.png")
        save_image(Raster(scene[0:32, 32:64]), ref / "p0.png")
        save_image(Raster(scene[32:64, 0:32]), gen / "p1.png")
        save_image(Raster(scene[32:64, 0:32]), ref / "p1.png")
        eval_out = tmp_path / "eval"
        eval_cmd = [
            "evaluate",
            "--generated", str(gen),
            "--reference", str(ref),
            "--report", str(eval_out / "report.csv"),
        ]
        stdout_1 = _run_cli(eval_cmd)
        snap_1 = _snapshot(eval_out)
        stdout_2 = _run_cli(eval_cmd)
        snap_2 = _snapshot(eval_out)
        assert stdout_1 == stdout_2
        assert snap_1 == snap_2
