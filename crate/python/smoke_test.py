#!/usr/bin/env python3
"""Smoke test for the infomaxda_py extension module.

Builds the cdylib if needed, stages it under an importable name, and runs a
few end-to-end checks against known closed-form values.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    lib = REPO / "target" / "release" / "libinfomaxda_py.so"
    if not lib.exists():
        print("building infomaxda-py (release)...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "infomaxda-py"],
            cwd=REPO,
            check=True,
        )
    if not lib.exists():
        sys.exit(f"expected {lib} after the build")
    stage = Path(tempfile.mkdtemp(prefix="infomaxda-py-"))
    shutil.copy2(lib, stage / "infomaxda_py.so")
    return stage


def approx(a: float, b: float, tol: float) -> None:
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main() -> None:
    sys.path.insert(0, str(build_extension()))
    import infomaxda_py as ida

    print(f"infomaxda_py {ida.version()}")

    # Closed forms.
    approx(ida.gaussian_mi(0.9, 1), -0.5 * math.log(1 - 0.81), 1e-12)
    approx(ida.gaussian_mi(0.0, 3), 0.0, 1e-15)
    approx(ida.gaussian_kld([1.0], [1.0], [0.0], [1.0]), 0.5, 1e-12)

    # Exact discrete MI: perfect coupling carries ln 2 nats.
    approx(ida.discrete_mi([[0.5, 0.0], [0.0, 0.5]]), math.log(2.0), 1e-12)
    approx(ida.discrete_mi([[0.25, 0.25], [0.25, 0.25]]), 0.0, 1e-12)

    # Pearson on an exact affine relation.
    approx(ida.pearson_corr([1.0, 2.0, 3.0], [3.0, 5.0, 7.0]), 1.0, 1e-12)

    # Moment-matched KL of identical batches is zero.
    batch = [[0.1, -0.4], [1.2, 0.3], [-0.7, 0.9]]
    approx(ida.latent_kld(batch, batch), 0.0, 1e-10)

    # Generators are deterministic in the seed.
    pts_a, labels_a = ida.two_moons(64, 0.1, 7)
    pts_b, labels_b = ida.two_moons(64, 0.1, 7)
    assert pts_a == pts_b and labels_a == labels_b
    assert len(pts_a) == 64 and set(labels_a) == {0, 1}

    # Oracle suites hold exactly.
    for suite in ("elbo", "infomax", "dv"):
        report = ida.oracle_suite(suite, 200, 7)
        assert report["passed"], report
        print(f"  oracle {suite}: worst |violation| {report['max_abs_violation']:.2e}")

    # Every loss passes its finite-difference gradient check.
    for loss in ("cls", "kld", "ent", "mi", "dv_single", "recon"):
        report = ida.gradcheck(loss, 5)
        assert report["passed"], report
    print("  gradcheck: all six losses pass at 1e-4")

    # A short MI-estimation run emits a rising curve (convergence to the true
    # value at the full protocol scale is covered by the acceptance suite).
    run = ida.estimate_gaussian_mi(0.9, n=20_000, epochs=6, seed=7)
    print(
        f"  estimate_gaussian_mi: final {run['final_estimate']:.3f} "
        f"(true {run['true_mi']:.3f}, {len(run['curve'])} epochs)"
    )
    assert len(run["curve"]) == 6
    assert run["curve"][-1][1] > run["curve"][0][1], "bound should improve"

    # A tiny adaptation run produces sane metrics.
    out = ida.train_moons(rotation_deg=45.0, n=200, epochs=5, seed=1)
    assert 0.0 <= out["final_source_acc"] <= 1.0
    assert 0.0 <= out["final_target_acc"] <= 1.0
    assert len(out["target_acc"]) == 5
    print(
        f"  train_moons: source {out['final_source_acc']:.3f}, "
        f"target {out['final_target_acc']:.3f} after 5 epochs"
    )

    print("smoke test OK")


if __name__ == "__main__":
    main()
