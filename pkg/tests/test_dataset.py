import json

import numpy as np
import pytest

from rdadapt import dataset as dsmod
from rdadapt.dataset import GenerateConfig, generate, load, save
from rdadapt.errors import CorruptDataset, InvalidInput, PlantDiverged
from rdadapt.grid import TriGrid, cumulative_trapezoid


def tiny(**kw):
    base = dict(n_trajectories=1, samples_per_trajectory=5, n_points=11, dt=1e-3, T=0.05, seed=7)
    base.update(kw)
    return GenerateConfig(**base)


def test_payload_length(tmp_path):
    generate(tiny(), tmp_path)
    n = 11
    assert (tmp_path / "data.bin").stat().st_size == 5 * (n + n * (n + 1) // 2) * 8
    manifest = json.loads((tmp_path / "manifest").read_text())
    assert manifest["n_trajectories"] * manifest["samples_per_trajectory"] == 5


def test_same_seed_byte_identical(tmp_path):
    generate(tiny(n_trajectories=2), tmp_path / "a")
    generate(tiny(n_trajectories=2), tmp_path / "b")
    assert (tmp_path / "a" / "data.bin").read_bytes() == (tmp_path / "b" / "data.bin").read_bytes()
    generate(tiny(n_trajectories=2, seed=8), tmp_path / "c")
    assert (tmp_path / "a" / "data.bin").read_bytes() != (tmp_path / "c" / "data.bin").read_bytes()


def test_round_trip_and_stored_invariants(tmp_path):
    ds = generate(tiny(n_trajectories=2), tmp_path)
    back = load(tmp_path)
    assert np.array_equal(back.lambdas, ds.lambdas) and np.array_equal(back.kernels, ds.kernels)
    assert np.all(np.abs(back.lambdas) <= back.manifest.lambda_bar)
    tri = TriGrid(11)
    for lam, k in zip(back.lambdas, back.kernels):
        diag = k[tri.rows == tri.cols]
        assert np.max(np.abs(diag + 0.5 * cumulative_trapezoid(lam, tri.dx))) <= 1e-10
        assert np.all(k[tri.cols == 0] == 0.0)
    assert list(back.trajectory_ids) == [0] * 5 + [1] * 5
    assert back.manifest.sample_times[0] > 0
    assert back.manifest.sample_times[-1] == pytest.approx(0.05)
    assert all(8.5 <= g <= 9.5 for g in back.manifest.gamma_cheb)


def test_estimator_only_mode_matches_exact_solver(tmp_path):
    ds = generate(tiny(mode="estimator-only", T=0.02, samples_per_trajectory=2), tmp_path)
    assert len(ds) == 2 and np.all(np.isfinite(ds.kernels))


def test_estimator_only_survives_open_loop_growth(tmp_path):
    # the uncontrolled plant grows far past the closed-loop divergence guard
    ds = generate(GenerateConfig(n_trajectories=1, samples_per_trajectory=4,
                                 mode="estimator-only", max_retries=0), tmp_path)
    assert len(ds) == 4 and np.all(np.isfinite(ds.kernels))
    assert np.max(np.abs(ds.lambdas)) <= 50.0


def test_truncated_payload_rejected(tmp_path):
    generate(tiny(), tmp_path)
    data = (tmp_path / "data.bin").read_bytes()
    (tmp_path / "data.bin").write_bytes(data[:-8])
    with pytest.raises(CorruptDataset):
        load(tmp_path)


def test_non_finite_value_names_sample(tmp_path):
    generate(tiny(), tmp_path)
    table = np.frombuffer((tmp_path / "data.bin").read_bytes(), dtype="<f8").copy()
    width = 11 + 66
    table[3 * width + 20] = np.nan
    (tmp_path / "data.bin").write_bytes(table.tobytes())
    with pytest.raises(CorruptDataset) as info:
        load(tmp_path)
    assert info.value.sample_index == 3


def test_checksum_mismatch_rejected(tmp_path):
    generate(tiny(), tmp_path)
    table = np.frombuffer((tmp_path / "data.bin").read_bytes(), dtype="<f8").copy()
    table[5] += 1.0
    (tmp_path / "data.bin").write_bytes(table.tobytes())
    with pytest.raises(CorruptDataset):
        load(tmp_path)


def test_missing_files(tmp_path):
    with pytest.raises(CorruptDataset):
        load(tmp_path)


def test_resave_is_identical(tmp_path):
    ds = generate(tiny(), tmp_path / "a")
    save(load(tmp_path / "a"), tmp_path / "b")
    for name in ("data.bin", "manifest"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(ds) == 5


def test_invalid_config():
    with pytest.raises(InvalidInput):
        tiny(samples_per_trajectory=7).validate()
    with pytest.raises(InvalidInput):
        tiny(mode="nope").validate()


def test_divergence_retried_then_fatal(monkeypatch, tmp_path):
    calls = []
    real = dsmod.run_closed_loop

    def flaky(config, lam, kernel_source):
        calls.append(1)
        if len(calls) < 3:
            raise PlantDiverged(0.01)
        return real(config, lam, kernel_source=kernel_source)

    monkeypatch.setattr(dsmod, "run_closed_loop", flaky)
    ds = generate(tiny(), tmp_path / "ok")
    assert len(calls) == 3 and len(ds) == 5

    def always(config, lam, kernel_source):
        raise PlantDiverged(0.01)

    monkeypatch.setattr(dsmod, "run_closed_loop", always)
    with pytest.raises(PlantDiverged):
        generate(tiny(), tmp_path / "bad")


