import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import finite_difference_errors, small_model, synthetic_dataset
from rdadapt.errors import InvalidInput, ModelCorrupt, ModelFormatError, TrainingFailure, UnsupportedVersion
from rdadapt.grid import Grid1D, ScalarField1D, TriGrid
from rdadapt.noperator import (
    MLP,
    DeepONetModel,
    TrainConfig,
    backprop,
    dumps,
    forward,
    load_model,
    loads,
    save_model,
    train,
)


def test_zero_branch_output_gives_zero_prediction():
    model = DeepONetModel.init(11, p=8, seed=1)
    model.branch.weights[-1][:] = 0.0
    model.branch.biases[-1][:] = 0.0
    lam = ScalarField1D(Grid1D(11), np.linspace(0, 3, 11))
    assert np.all(forward(model, lam, TriGrid(11)).values == 0.0)


def test_constant_nets_dot_product():
    model = DeepONetModel.init(6, p=1, branch_hidden=(3,), trunk_hidden=(3,))
    model.branch.weights[-1][:] = 0.0
    model.branch.biases[-1][:] = 2.0
    model.trunk.weights[-1][:] = 0.0
    model.trunk.biases[-1][:] = 3.0
    out = forward(model, ScalarField1D(Grid1D(6), np.arange(6.0)), TriGrid(9))
    assert np.all(out.values == 6.0)


def test_bilinear_form_instrumented():
    model = small_model(m=11)
    lam = ScalarField1D(Grid1D(11), np.sin(np.arange(11.0)))
    tri = TriGrid(15)
    b = model.branch_coefficients(lam.values)
    tau = model.trunk(model.trunk_inputs(tri.points))
    pred = forward(model, lam, tri).values
    for node in range(tri.size):
        assert pred[node] == pytest.approx(model.output_scale * np.dot(b, tau[node]), rel=1e-13)


def test_sensor_resampling():
    model = small_model(m=5)
    fine = ScalarField1D(Grid1D(21), 3 * Grid1D(21).nodes + 1)
    coarse = ScalarField1D(Grid1D(5), 3 * Grid1D(5).nodes + 1)
    tri = TriGrid(7)
    assert np.allclose(forward(model, fine, tri).values, forward(model, coarse, tri).values, atol=1e-13)


def test_non_finite_parameters_flagged():
    model = small_model(m=5)
    model.trunk.weights[0][0, 0] = np.nan
    with pytest.raises(ModelCorrupt):
        forward(model, ScalarField1D(Grid1D(5), np.zeros(5)), TriGrid(5))


def test_zero_residual_gives_zero_gradient():
    model = small_model()
    model.output_scale = 2.0  # exact rescaling of the targets
    rng = np.random.default_rng(3)
    sensors, points = rng.normal(size=(3, 5)), rng.uniform(size=(4, 2))
    targets = model.output_scale * model.predict_normalized(sensors, points)
    loss, grads = backprop(model, sensors, points, targets)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads)


def test_backprop_rejects_empty_batch():
    model = small_model()
    with pytest.raises(InvalidInput):
        backprop(model, np.zeros((0, 5)), np.zeros((3, 2)), np.zeros((0, 3)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check_random_two_layer(seed):
    rng = np.random.default_rng(seed)
    model = small_model(seed)
    errors = finite_difference_errors(
        model, rng.normal(size=(3, 5)), rng.uniform(size=(4, 2)), rng.normal(size=(3, 4))
    )
    assert max(errors) <= 1e-6


def test_hand_computed_gradient_single_layer_nets():
    # branch b = w*z + c with z = (s - mean)/std; trunk t = v . (2p - 1) + d; p = 1
    branch = MLP([np.array([[0.5]])], [np.array([0.25])])
    trunk = MLP([np.array([[1.0], [-2.0]])], [np.array([0.5])])
    model = DeepONetModel(branch, trunk, np.array([1.0]), np.array([2.0]), output_scale=4.0)
    s, point, y = 5.0, np.array([0.75, 0.25]), 2.0
    z = (s - 1.0) / 2.0                       # 2
    b = 0.5 * z + 0.25                        # 1.25
    q = 2 * point - 1                         # (0.5, -0.5)
    t = 1.0 * q[0] - 2.0 * q[1] + 0.5         # 2.0
    e = b * t - y / 4.0                       # 2.5 - 0.5 = 2.0
    loss, grads = backprop(model, np.array([[s]]), point[None, :], np.array([[y]]))
    assert loss == pytest.approx(e * e)       # 4
    assert grads[0][0, 0] == pytest.approx(2 * e * t * z)    # 16
    assert grads[1][0] == pytest.approx(2 * e * t)           # 8
    assert np.allclose(grads[2][:, 0], 2 * e * b * q)        # (2.5, -2.5)
    assert grads[3][0] == pytest.approx(2 * e * b)           # 5


@given(st.integers(0, 2**32 - 1))
def test_normalization_round_trip(seed):
    rng = np.random.default_rng(seed)
    model = small_model(m=5)
    x = rng.normal(scale=30, size=(4, 5))
    assert np.allclose(model.denormalize(model.normalize(x)), x, rtol=0, atol=1e-12 * 30)


def test_zero_epochs_leaves_model_unchanged():
    ds = synthetic_dataset()
    model = DeepONetModel.init(ds.n_points, p=8, branch_hidden=(16,), trunk_hidden=(16,), seed=2)
    report = train(model, ds, TrainConfig(epochs=0))
    before = [a.copy() for a in model.params()]
    report2 = train(model, ds, TrainConfig(epochs=0))
    assert all(np.array_equal(a, b) for a, b in zip(before, model.params()))
    assert report.train_mse == report.initial_loss == report2.initial_loss


def test_training_deterministic():
    ds = synthetic_dataset()
    reports = []
    for _ in range(2):
        model = DeepONetModel.init(ds.n_points, p=8, branch_hidden=(16,), trunk_hidden=(16,), seed=4)
        reports.append(train(model, ds, TrainConfig(epochs=5, batch_size=4, seed=9)))
    a, b = (r.as_dict() for r in reports)
    a.pop("wall_time"), b.pop("wall_time")
    assert a == b


def test_split_is_by_trajectory():
    ds = synthetic_dataset(n_traj=10, per_traj=3)
    model = DeepONetModel.init(ds.n_points, p=4, branch_hidden=(8,), trunk_hidden=(8,))
    report = train(model, ds, TrainConfig(epochs=0, seed=1))
    assert report.n_test == 3 and report.n_train == 27
    assert len(report.test_trajectories) == 1


def test_overfit_ten_samples():
    ds = synthetic_dataset(n_traj=11, per_traj=1, n=11, seed=3)
    model = DeepONetModel.init(ds.n_points, seed=0)
    config = TrainConfig(epochs=2000, batch_size=10, points_per_batch=None, seed=0,
                         test_fraction=1 / 11)
    report = train(model, ds, config)
    assert report.n_train == 10
    assert report.train_mse <= 1e-5


def test_diverging_training_raises_with_epoch():
    ds = synthetic_dataset()
    model = DeepONetModel.init(ds.n_points, p=4, branch_hidden=(8,), trunk_hidden=(8,))
    with pytest.raises(TrainingFailure) as info:
        train(model, ds, TrainConfig(epochs=5, lr=1e300, final_lr_fraction=1.0))
    assert info.value.epoch >= 0


def test_all_parameters_finite_after_training():
    ds = synthetic_dataset()
    model = DeepONetModel.init(ds.n_points, p=8, branch_hidden=(16,), trunk_hidden=(16,))
    train(model, ds, TrainConfig(epochs=3))
    model.check_finite()


# --------------------------------------------------------------------------- model file


def test_save_load_bitwise(tmp_path):
    model = small_model(m=11)
    path = tmp_path / "m.bin"
    save_model(model, path)
    loaded = load_model(path)
    lam = ScalarField1D(Grid1D(11), np.cos(np.arange(11.0)))
    tri = TriGrid(13)
    assert np.array_equal(forward(model, lam, tri).values, forward(loaded, lam, tri).values)
    assert all(np.array_equal(a, b) for a, b in zip(model.params(), loaded.params()))
    assert dumps(loaded) == path.read_bytes()


def test_payload_layout_little_endian_in_declared_order():
    model = small_model()
    data = dumps(model)
    first, rest = data.split(b"\n", 1)
    length = int(first.split(b"=")[1])
    header = json.loads(rest[:length])
    assert header["branch_layers"] == [5, 6, 4] and header["trunk_layers"] == [2, 7, 4]
    payload = np.frombuffer(rest[length:], dtype="<f8")
    expected = np.concatenate([a.ravel() for a in model.params()])
    assert np.array_equal(payload, expected)


def test_truncated_file_rejected():
    data = dumps(small_model())
    with pytest.raises(ModelFormatError) as info:
        loads(data[:-8])
    assert info.value.offset > 0
    with pytest.raises(ModelFormatError):
        loads(data[:30])


def test_trailing_bytes_rejected():
    with pytest.raises(ModelFormatError):
        loads(dumps(small_model()) + b"\x00")


def test_version_mismatch():
    data = dumps(small_model())
    bumped = data.replace(b'"format_version": 1', b'"format_version": 2')
    with pytest.raises(UnsupportedVersion):
        loads(bumped)


def test_bad_magic_and_bad_json_offsets():
    with pytest.raises(ModelFormatError) as info:
        loads(b"not a model")
    assert info.value.offset == 0
    data = dumps(small_model())
    first_len = data.index(b"\n") + 1
    broken = data[:first_len] + b"?" + data[first_len + 1:]
    with pytest.raises(ModelFormatError) as info:
        loads(broken)
    assert info.value.offset == first_len
