import json
import math

import numpy as np
import pytest

import msoma


def test_frf_values():
    assert msoma.frf(4.0, 0.01, 4.0) == pytest.approx(50j)
    h = msoma.frf(4.2, 0.01, 4.0)
    assert h.real == pytest.approx(-9.363, rel=1e-3)
    assert h.imag == pytest.approx(1.918, rel=1e-3)


def test_counts_and_mac():
    assert msoma.theta_size(2, 3, 20) == 92
    assert msoma.theta_size(8, 3, 68) == 332
    assert msoma.mac(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(0.5)


def test_scaled_fft_dc():
    coeffs = msoma.scaled_fft(np.full((1, 8), 3.0), 0.01)
    assert coeffs.shape == (1, 5)
    assert coeffs[0, 0] == pytest.approx(3.0 * math.sqrt(0.08))
    assert np.abs(coeffs[0, 1:]).max() < 1e-14


def test_preset():
    p = msoma.shear_frame_preset(1)
    assert list(p["f"]) == [4.20, 4.25, 4.40]
    assert p["Phi"].shape == (68, 3)
    assert np.allclose(np.linalg.norm(p["Phi"], axis=0), 1.0)
    ev = np.linalg.eigvalsh(p["S"])
    assert np.allclose(sorted(ev), [0.0, 1.0, 2.0], atol=1e-12)
    recs = msoma.shear_frame_records(1, setups=2, duration_min=0.5)
    assert len(recs) == 2
    assert recs[0]["samples"].shape[0] == len(recs[0]["tau"])
    covered = set(recs[0]["tau"]) | set(recs[1]["tau"])
    assert covered == set(range(1, 69))


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        msoma.shear_frame_records(1, setups=0, duration_min=1.0)
    with pytest.raises(ValueError):
        msoma.identify("/nonexistent/config.json")


def test_identify_and_pcm(tmp_path):
    recs = msoma.shear_frame_records(3, setups=2, duration_min=5.0)
    p = msoma.shear_frame_preset(3)
    setups = []
    for r, rec in enumerate(recs):
        name = f"setup{r + 1}.csv"
        y = rec["samples"]
        t = np.arange(y.shape[1]) * rec["dt"]
        header = "time," + ",".join(p["dof_labels"][d - 1] for d in rec["tau"])
        np.savetxt(tmp_path / name, np.column_stack([t, y.T]), delimiter=",", header=header, comments="")
        setups.append({"data": name, "tau": rec["tau"]})
    np.savetxt(tmp_path / "truth.csv", p["Phi"], delimiter=",")
    cfg = {"modes": 3, "q": 0, "f0": [4.2, 4.25, 4.4], "band": [3.9, 4.7], "n_dofs": 68,
           "setups": setups, "reference_shapes": "truth.csv"}
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    mpv = msoma.identify(tmp_path / "config.json")
    assert mpv["converged"]
    (tmp_path / "mpv.json").write_text(json.dumps(mpv))
    post = msoma.pcm(tmp_path / "config.json", tmp_path / "mpv.json")
    assert len(post["mac"]) == 3
    assert min(post["mac"]) > 0.8
    assert all(u > 0 for u in post["shape_uncertainty"])
