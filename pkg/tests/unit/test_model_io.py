import json

import numpy as np
import pytest

from koopid.edmd import KoopmanModel
from koopid.errors import InvalidInputError
from koopid.fbcombine import CombineReport
from koopid.lifting import LiftingSpec, fit_lifting_spec
from koopid.model_io import load_model, save_model, spot_check, verify_spot_check
from koopid.rollout import rollout


@pytest.fixture
def rbf_model(rng):
    states = [rng.uniform(-1.0, 1.0, size=(2, 40))]
    spec = fit_lifting_spec(states, input_dim=1, rbf_count=4, seed=3)
    p = spec.lifted_state_dim
    A = 0.3 * rng.standard_normal((p, p)) / np.sqrt(p)
    B = rng.standard_normal((p, 1))
    return KoopmanModel(A=A, B=B, spec=spec, method="fbedmd")


def test_round_trip_rollout_is_bit_identical(rbf_model, rng, tmp_path):
    inputs = 0.1 * rng.standard_normal((1, 30))
    spot = spot_check(rbf_model, [0.2, -0.4], inputs)
    report = CombineReport(1e-14, 0.0, 0.8, 2.5)
    path = tmp_path / "model.json"
    save_model(path, rbf_model, report=report, provenance={"seed": 3}, spot=spot)

    loaded, meta = load_model(path)
    assert loaded.method == "fbedmd"
    assert loaded.direction == "forward"
    assert loaded.spec == rbf_model.spec
    np.testing.assert_array_equal(loaded.A, rbf_model.A)
    np.testing.assert_array_equal(loaded.B, rbf_model.B)
    before = rollout(rbf_model, [0.5, 0.5], inputs)
    after = rollout(loaded, [0.5, 0.5], inputs)
    np.testing.assert_array_equal(before.states, after.states)
    assert verify_spot_check(loaded, meta)
    assert CombineReport.from_dict(meta["combine_report"]) == report
    assert meta["provenance"] == {"seed": 3}
    assert meta["dims"] == {"m": 2, "n": 1, "p_theta": loaded.p_theta, "p_upsilon": 1}
    assert meta["stability"] is None


def test_spot_check_detects_changed_matrices(rbf_model, tmp_path):
    spot = spot_check(rbf_model, [0.1, 0.1], np.zeros((1, 10)))
    path = tmp_path / "model.json"
    save_model(path, rbf_model, spot=spot)
    data = json.loads(path.read_text())
    data["A"][0][0] += 1e-9
    path.write_text(json.dumps(data))
    loaded, meta = load_model(path)
    assert not verify_spot_check(loaded, meta)


def test_spot_check_without_inputs(tmp_path):
    spec = LiftingSpec.identity(1, 0)
    model = KoopmanModel(A=[[0.5]], B=np.zeros((1, 0)), spec=spec)
    spot = spot_check(model, [1.0], np.empty((0, 4)))
    assert spot["steps"] == 4
    save_model(tmp_path / "m.json", model, spot=spot)
    loaded, meta = load_model(tmp_path / "m.json")
    assert loaded.B.shape == (1, 0)
    assert verify_spot_check(loaded, meta)


def test_verify_requires_spot_check(rbf_model, tmp_path):
    save_model(tmp_path / "m.json", rbf_model)
    loaded, meta = load_model(tmp_path / "m.json")
    with pytest.raises(InvalidInputError):
        verify_spot_check(loaded, meta)


def test_load_rejects_other_versions(rbf_model, tmp_path):
    path = tmp_path / "m.json"
    save_model(path, rbf_model)
    data = json.loads(path.read_text())
    data["format_version"] = 99
    path.write_text(json.dumps(data))
    with pytest.raises(InvalidInputError, match="format version"):
        load_model(path)


def test_load_rejects_malformed_files(rbf_model, tmp_path):
    path = tmp_path / "m.json"
    save_model(path, rbf_model)
    data = json.loads(path.read_text())
    del data["lifting"]
    path.write_text(json.dumps(data))
    with pytest.raises(InvalidInputError, match="Malformed"):
        load_model(path)
    data["lifting"] = rbf_model.spec.to_dict()
    data["A"] = [[1.0]]
    path.write_text(json.dumps(data))
    with pytest.raises(InvalidInputError):
        load_model(path)
