import json

import numpy as np
import pandas as pd
import pytest

from koopid.cli import main
from koopid.lifting import LiftingSpec
from koopid.matlib import pinv
from koopid.model_io import load_model, verify_spot_check
from koopid.pipeline import identify, identify_backward
from koopid.rollout import relative_model_error, snr_sweep
from koopid.snapshots import build_snapshots, gram_forward


@pytest.fixture
def linear_training_set(stable_system, make_linear_episodes):
    A, B = stable_system
    # 5 x 100 steps = 500 snapshot pairs
    return A, B, make_linear_episodes(A, B, steps=100, count=5, seed=11)


@pytest.mark.parametrize("method", ["edmd", "fbedmd"])
def test_exact_recovery_of_linear_system(linear_training_set, method):
    """
    Noise-free data from a stable invertible linear system with identity
    lifting is recovered to numerical precision.
    """
    A, B, episodes = linear_training_set
    result = identify(episodes, LiftingSpec.identity(3, 1), method)
    assert result.q == 500
    U_true = np.hstack([A, B])
    rel = np.linalg.norm(result.model.U - U_true) / np.linalg.norm(U_true)
    assert rel <= 1e-6
    if method == "fbedmd":
        assert result.report.spectral_radius == pytest.approx(0.85, abs=1e-6)


def test_backward_model_inverts_forward_dynamics(linear_training_set):
    A, B, episodes = linear_training_set
    backward = identify_backward(episodes, LiftingSpec.identity(3, 1))
    A_inv = np.linalg.inv(A)
    np.testing.assert_allclose(backward.A, A_inv, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(backward.B, -A_inv @ B, rtol=1e-6, atol=1e-6)


def test_stable_methods_leave_stable_system_unchanged(linear_training_set):
    A, B, episodes = linear_training_set
    spec = LiftingSpec.identity(3, 1)
    reference = identify(episodes, spec, "edmd").model
    for method in ("edmd-as", "fbedmd-as"):
        model = identify(episodes, spec, method).model
        assert relative_model_error(model, reference).full < 1e-3


def test_gram_regression_matches_direct_least_squares(rng, make_linear_episodes):
    """
    The Gram route and the direct pseudo-inverse of the snapshot matrix give
    the same forward operator on random full-rank data.
    """
    spec = LiftingSpec.identity(3, 2)
    for seed in range(100):
        A = 0.5 * rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 2))
        episodes = make_linear_episodes(A, B, steps=12, count=2, seed=seed)
        snaps = build_snapshots(episodes, spec)
        g = gram_forward(snaps)
        via_grams = g.G @ pinv(g.H)
        direct = snaps.theta_plus @ pinv(snaps.psi)
        rel = np.linalg.norm(via_grams - direct) / np.linalg.norm(direct)
        assert rel <= 1e-10


def test_sweep_is_deterministic(make_linear_episodes):
    clean = make_linear_episodes(0.8, 0.5, steps=80, count=3)
    spec = LiftingSpec.identity(1, 1)
    frames = [
        snr_sweep(clean, spec, ["edmd", "fbedmd"], [10.0, 30.0], [0, 1], n_jobs=1)
        for _ in range(2)
    ]
    assert frames[0].to_csv(index=False) == frames[1].to_csv(index=False)


def _json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.startswith("{")]


def test_cli_pipeline_end_to_end(tmp_path, capsys):
    """
    simulate -> identify -> predict -> evaluate on a small Duffing dataset.
    """
    data = tmp_path / "data"
    model_path = tmp_path / "model.json"
    args = ["simulate", "--out", str(data), "--episodes", "4", "--steps", "200"]
    assert main(args + ["--seed-data", "5"]) == 0
    assert main(
        [
            "identify",
            "--data",
            str(data),
            "--out",
            str(model_path),
            "--method",
            "fbedmd",
            "--rbf-count",
            "4",
        ]
    ) == 0
    model, meta = load_model(model_path)
    assert model.method == "fbedmd"
    assert verify_spot_check(model, meta)

    pred_path = tmp_path / "pred.csv"
    args = ["predict", "--model", str(model_path), "--data", str(data)]
    assert main(args + ["--out", str(pred_path)]) == 0
    frame = pd.read_csv(pred_path)
    assert len(frame) == 201
    assert frame["error"].iloc[0] == pytest.approx(0.0, abs=1e-12)

    out = tmp_path / "eval"
    args = ["evaluate", "--model", str(model_path), "--data", str(data)]
    assert main(args + ["--out", str(out)]) == 0
    metrics = pd.read_csv(out / "metrics.csv", dtype={"episode": str})
    assert list(metrics["episode"]) == ["002", "003", "all"]
    assert np.all(np.isfinite(metrics["rms"]))
    assert (out / "eigenvalues.csv").exists()

    summaries = _json_lines(capsys.readouterr().out)
    assert summaries[-1]["episodes"] == 2
    assert summaries[-1]["spectral_radius"] > 0
