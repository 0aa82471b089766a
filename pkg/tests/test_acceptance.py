"""End-to-end acceptance checks.

Each test covers one advertised guarantee, prints a single PASS line with the
measured numbers, and fails loudly otherwise. Tolerances here are contract
values; loosening them is an API break, not a test fix.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from kdlens import distcorr as dc
from kdlens import metrics as mt
from kdlens import saliency as sal
from kdlens import testkit as tk
from kdlens.cli import main
from kdlens.tensorio import load_tensor

# measured once at seed 7, n 8, eps 1e-9 and frozen; see the ledger note
SCENARIO_GOLDEN = {
    "distilled_mask_fraction": 0.49394684561766594,
    "gradcam_mask_fraction": 0.40297681801509155,
    "residual_mask_fraction": 0.2934973495237418,
    "margin_distilled_vs_gradcam": 0.09097002760257439,
    "margin_distilled_vs_residual": 0.20044949609392415,
}


def _ok(capsys, line):
    with capsys.disabled():
        print(f"\n[ACCEPT] {line}")


def _instance(seed, min_n=4, max_n=32):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_n, max_n + 1))
    d = int(rng.integers(1, 6))
    return [rng.normal(size=(n, d)) for _ in range(3)]


def test_statistics_match_independent_oracles(capsys):
    t0 = time.monotonic()
    worst = {"dcov2": 0.0, "dvar2": 0.0, "dcor": 0.0, "u_center": 0.0,
             "hilbert": 0.0, "pdcor2": 0.0}
    for seed in range(1000):
        x, y, z = _instance(seed)
        worst["dcov2"] = max(worst["dcov2"], abs(dc.dcov2(x, y) - oracles.dcov2(x, y)))
        worst["dvar2"] = max(worst["dvar2"], abs(dc.dvar2(x) - oracles.dvar2(x)))
        worst["dcor"] = max(worst["dcor"], abs(dc.dcor(x, y) - oracles.dcor(x, y)))
        lib_u = dc.u_center(dc.pairwise_distance(x))
        ora_u = np.array(oracles.u_centered(oracles.dist_matrix(x)))
        worst["u_center"] = max(worst["u_center"], float(np.max(np.abs(lib_u - ora_u))))
        lib_v = dc.u_center(dc.pairwise_distance(y))
        worst["hilbert"] = max(
            worst["hilbert"],
            abs(dc.hilbert_inner(lib_u, lib_v) - oracles.hilbert_inner(lib_u.tolist(), lib_v.tolist())),
        )
        worst["pdcor2"] = max(worst["pdcor2"], abs(dc.pdcor2(x, y, z) - oracles.pdcor2(x, y, z)))
    elapsed = time.monotonic() - t0
    for key in ("dcov2", "dvar2", "dcor", "u_center", "hilbert"):
        assert worst[key] <= 1e-12, f"{key} drifted from oracle: {worst[key]:.3e}"
    assert worst["pdcor2"] <= 1e-10, f"pdcor2 drifted from oracle: {worst['pdcor2']:.3e}"
    assert elapsed < 30.0, f"oracle sweep took {elapsed:.1f}s (budget 30s)"
    _ok(capsys, "oracle equivalence over 1000 instances: PASS "
        f"(worst dcov2 {worst['dcov2']:.2e}, dcor {worst['dcor']:.2e}, "
        f"pdcor2 {worst['pdcor2']:.2e}, {elapsed:.1f}s)")


def test_dcor_calibration(capsys):
    rng = np.random.default_rng(0)
    # self-correlation pins the top of the scale
    worst_self = 0.0
    for seed in range(50):
        x, _, _ = _instance(seed)
        worst_self = max(worst_self, abs(dc.dcor(x, x) - 1.0))
    assert worst_self <= 1e-12, f"dcor(x, x) off unity by {worst_self:.3e}"
    # constant input pins the bottom, exactly and flagged
    const = np.ones((16, 3))
    value, degenerate = dc.dcor_checked(const, rng.normal(size=(16, 3)))
    assert value == 0.0 and degenerate
    # affine reparameterization cannot move the statistic
    worst_affine = 0.0
    for seed in range(50):
        x, y, _ = _instance(seed)
        shift = np.arange(1.0, x.shape[1] + 1)
        worst_affine = max(worst_affine, abs(dc.dcor(2.5 * x + shift, y) - dc.dcor(x, y)))
    assert worst_affine <= 1e-10, f"affine drift {worst_affine:.3e}"
    # independent draws stay near zero at n=512
    null_max = 0.0
    for seed in range(100):
        g = np.random.default_rng(seed)
        null_max = max(null_max, dc.dcor(g.normal(size=(512, 4)), g.normal(size=(512, 4))))
    assert null_max <= 0.15, f"independent-Gaussian dcor2 reached {null_max:.4f}"
    _ok(capsys, "dcor calibration: PASS "
        f"(self {worst_self:.2e}, affine {worst_affine:.2e}, null max {null_max:.6f})")


def test_u_centering_invariants(capsys):
    worst = 0.0
    for seed in range(200):
        x, _, _ = _instance(seed)
        u = dc.u_center(dc.pairwise_distance(x))
        n = u.shape[0]
        bound = 1e-10 * n * max(float(np.max(np.abs(u))), 1e-300)
        margins = max(float(np.max(np.abs(u.sum(axis=0)))), float(np.max(np.abs(u.sum(axis=1)))))
        assert np.all(np.diag(u) == 0.0)
        assert margins <= bound, f"seed {seed}: row/col sums {margins:.3e} exceed {bound:.3e}"
        worst = max(worst, margins)
    _ok(capsys, f"u-centering row/col sums vanish over 200 instances: PASS (worst {worst:.2e})")


def test_projection_orthogonality(capsys):
    worst = 0.0
    for seed in range(1000):
        x, y, _ = _instance(seed)
        p = dc.u_center(dc.pairwise_distance(x))
        q = dc.u_center(dc.pairwise_distance(y))
        resid = abs(dc.hilbert_inner(dc.project_out(p, q), q))
        bound = 1e-12 * max(dc.hilbert_norm(p) * dc.hilbert_norm(q), 1e-300)
        assert resid <= bound, f"seed {seed}: residual {resid:.3e} exceeds {bound:.3e}"
        worst = max(worst, resid)
    _ok(capsys, f"projection orthogonality over 1000 pairs: PASS (worst residual {worst:.2e})")


def test_gradients_match_finite_differences(capsys):
    t0 = time.monotonic()
    # hand-derived saliency gradient against central differences
    worst_energy = 0.0
    for seed in (7, 11):
        fx = tk.gen_fixtures(seed, 8)
        a_s, a_b = fx.student_bundle.acts, fx.base_bundle.acts
        _, _, grad = sal.unique_energy_with_grad(a_s, a_b, 1e-9)
        coords = np.random.default_rng(seed).choice(a_s.size, size=200, replace=False)
        fd = tk.finite_diff(lambda a: sal.unique_energy_with_grad(a, a_b, 1e-9)[0],
                            a_s, coords, step=1e-5)
        an = grad.ravel()[coords]
        rel = np.abs(fd - an) / np.maximum.reduce(
            [np.abs(fd), np.abs(an), np.full_like(fd, 1e-4)])
        assert np.max(rel) <= 1e-4, f"seed {seed}: energy gradient rel err {np.max(rel):.3e}"
        worst_energy = max(worst_energy, float(np.max(rel)))

    # full network backward pass over inputs and every parameter at once
    net = tk.ToyNet.seeded(3)
    rng = np.random.default_rng(1)
    images = rng.normal(size=(4, 1, 8, 8))
    labels = np.array([0, 1, 1, 0])
    grads = net.class_score_grads(images, labels)
    parts = ["input", "conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b"]
    arrays = [images, net.conv1_w, net.conv1_b, net.conv2_w, net.conv2_b, net.head_w, net.head_b]
    sizes = [a.size for a in arrays]
    point = np.concatenate([a.ravel() for a in arrays])

    def score(flat):
        split = np.split(flat, np.cumsum(sizes)[:-1])
        probe = tk.ToyNet(
            split[1].reshape(net.conv1_w.shape), split[2].reshape(net.conv1_b.shape),
            split[3].reshape(net.conv2_w.shape), split[4].reshape(net.conv2_b.shape),
            split[5].reshape(net.head_w.shape), split[6].reshape(net.head_b.shape),
        )
        out = probe.forward(split[0].reshape(images.shape))
        return float(out["scores"][np.arange(4), labels].sum())

    analytic = np.concatenate([grads[p].ravel() for p in parts])
    coords = np.random.default_rng(2).choice(point.size, size=500, replace=False)
    fd = tk.finite_diff(score, point, coords, step=1e-6)
    an = analytic[coords]
    rel = np.abs(fd - an) / np.maximum.reduce([np.abs(fd), np.abs(an), np.full_like(fd, 1e-3)])
    worst_net = float(np.max(rel))
    assert worst_net <= 1e-5, f"network gradient rel err {worst_net:.3e}"
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s (budget 60s)"
    _ok(capsys, "finite-difference gradient checks: PASS "
        f"(energy worst {worst_energy:.2e} @ 1e-4, network worst {worst_net:.2e} @ 1e-5, "
        f"{elapsed:.1f}s)")


def test_identical_models_carry_no_signal(capsys):
    fx = tk.gen_fixtures(7, 8)
    base = fx.base_bundle
    twin = sal.ActivationBundle(
        layer=base.layer, acts=base.acts.copy(), grads=base.grads.copy(),
        labels=base.labels.copy(),
    )
    energy, per_sample, grad = sal.unique_energy_with_grad(twin.acts, base.acts, 1e-9)
    assert energy == 0.0
    assert np.all(per_sample == 0.0) and np.all(grad == 0.0)
    heat = sal.unicam(twin, base, sal.DISTILLED)
    assert np.all(heat.maps == 0.0)
    feats = fx.student_net.features(fx.images)
    report = mt.fss([feats], [feats.copy()], layer="C2")
    assert abs(report.mean - 1.0) <= 1e-12
    assert not report.degenerate_batches
    # uniform channel weights collapse to plain class-gradient maps, bitwise
    ones = np.ones(base.acts.shape[:2])
    assert (sal.cam_assemble(base.acts, base.grads, ones).maps.tobytes()
            == sal.gradcam(base).maps.tobytes())
    _ok(capsys, "identical-model reduction: PASS "
        f"(energy {energy}, map max {float(np.max(heat.maps))}, self-FSS {report.mean})")


def test_saliency_concentrates_on_distilled_region(capsys):
    sc = tk.scenario_fractions(tk.gen_fixtures(7, 8))
    for key, want in SCENARIO_GOLDEN.items():
        assert sc[key] == pytest.approx(want, abs=1e-9), (
            f"{key} moved: {sc[key]!r} vs frozen {want!r}")
    assert sc["distilled_mask_fraction"] > sc["gradcam_mask_fraction"]
    assert sc["distilled_mask_fraction"] > sc["residual_mask_fraction"]
    assert sc["margin_distilled_vs_gradcam"] > 0.0
    assert sc["margin_distilled_vs_residual"] > 0.0
    _ok(capsys, "distilled-region saliency scenario: PASS "
        f"(distilled {sc['distilled_mask_fraction']:.4f} > "
        f"gradcam {sc['gradcam_mask_fraction']:.4f} > "
        f"residual {sc['residual_mask_fraction']:.4f})")


def _drive_all_subcommands(root, threads, capsys):
    """Run every subcommand into root; return {relative path: bytes} plus stdout."""
    root.mkdir(parents=True)
    t = str(threads)
    stdout_parts = []

    def run(*argv):
        rc = main(list(argv))
        captured = capsys.readouterr()
        assert rc == 0, f"{argv[0]} failed: {captured.err}"
        stdout_parts.append(captured.out)

    fxdir = root / "fx"
    run("fixtures", "generate", "--seed", "7", "--out", str(fxdir), "--threads", t)
    run("dcor", "--x", str(fxdir / "student_acts.npy"), "--y", str(fxdir / "base_acts.npy"),
        "--out", str(root / "dcor.json"), "--threads", t)
    run("pdcor", "--x", str(fxdir / "student_acts.npy"), "--y", str(fxdir / "base_acts.npy"),
        "--z", str(fxdir / "images.npy"), "--out", str(root / "pdcor.json"), "--threads", t)
    run("unicam", "--student", str(fxdir / "student.json"), "--base", str(fxdir / "base.json"),
        "--out", str(root / "maps.npy"), "--render", str(root / "pgm"),
        "--render-size", "16", "16", "--report", str(root / "unicam.json"), "--threads", t)
    run("gradcam", "--bundle", str(fxdir / "student.json"), "--out", str(root / "gmaps.npy"),
        "--report", str(root / "gradcam.json"), "--threads", t)
    run("fss", "--student", str(fxdir / "student.json"), "--base", str(fxdir / "base.json"),
        "--out", str(root / "fss.json"), "--threads", t)
    run("rs", "--features", str(fxdir / "student.json"),
        "--table", str(fxdir / "embedding_table.npy"),
        "--out", str(root / "rs.json"), "--threads", t)
    run("perturb", "--images", str(fxdir / "images.npy"), "--maps", str(root / "maps.npy"),
        "--out", str(root / "perturbed.npy"), "--threads", t)
    run("render", "--maps", str(root / "maps.npy"), "--out", str(root / "pgm2"),
        "--size", "8", "8", "--threads", t)

    files = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            files[str(p.relative_to(root))] = p.read_bytes()
    return files, "".join(stdout_parts)


def test_cli_outputs_are_byte_deterministic(capsys, tmp_path):
    runs = {
        "first": _drive_all_subcommands(tmp_path / "first", 1, capsys),
        "repeat": _drive_all_subcommands(tmp_path / "repeat", 1, capsys),
        "threaded": _drive_all_subcommands(tmp_path / "threaded", 4, capsys),
    }
    ref_files, ref_stdout = runs["first"]
    assert len(ref_files) > 25
    for name, (files, stdout) in runs.items():
        assert stdout == ref_stdout, f"{name}: stdout drifted"
        assert sorted(files) == sorted(ref_files), f"{name}: file set drifted"
        for rel in ref_files:
            assert files[rel] == ref_files[rel], f"{name}: {rel} bytes drifted"
    _ok(capsys, "cli byte-determinism across reruns and --threads {1,4}: PASS "
        f"({len(ref_files)} files x 3 runs identical)")


def test_relevance_score_edge_cases(capsys):
    fx = tk.gen_fixtures(7, 8)
    table = fx.embedding_table
    # single-class batch carries no label variation: flagged, scored zero
    feats = np.random.default_rng(3).random((6, table.dim))
    single = np.zeros(6, dtype=np.int64)
    degenerate = mt.rs([feats], [single], table, layer="C2")
    assert list(degenerate.per_batch) == [0.0]
    assert list(degenerate.degenerate_batches) == [0]
    # features equal to the gathered embedding rows are maximally relevant
    perfect = mt.rs([table.gather(fx.labels)], [fx.labels], table, layer="C2")
    assert abs(perfect.mean - 1.0) <= 1e-12
    assert not perfect.degenerate_batches
    _ok(capsys, "relevance-score edge cases: PASS "
        f"(single-class -> 0 + flag, exact-embedding mean {perfect.mean})")
