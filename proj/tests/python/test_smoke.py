import math

import numpy as np
import pytest

import ono


def test_version():
    assert ono.__version__


def test_cholesky_roundtrip():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((6, 6))
    a = b.T @ b + np.eye(6)
    l = ono.cholesky(a)
    assert np.allclose(l @ l.T, a, atol=1e-10)
    assert np.allclose(np.triu(l, 1), 0.0)


def test_solve_triangular():
    l = np.array([[2.0, 0.0], [1.0, 2.0]])
    b = np.array([[4.0], [4.0]])
    x = ono.solve_triangular(l, b)
    assert np.allclose(x.ravel(), [2.0, 1.0])


def test_sym_eig_descending():
    vals, vecs = ono.sym_eig(np.diag([1.0, 3.0, 2.0]))
    assert vals == pytest.approx([3.0, 2.0, 1.0])
    assert np.allclose(np.abs(vecs).max(axis=0), 1.0)


def test_relative_l2():
    assert ono.relative_l2(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert ono.relative_l2(np.array([2.0, 3.0]), np.array([2.0, 3.0])) == 0.0


def test_onecycle_endpoints():
    assert ono.onecycle_lr(1e-3, 1000, step=0) == pytest.approx(1e-3 / 25)
    assert ono.onecycle_lr(1e-3, 1000, step=300) == pytest.approx(1e-3)
    assert ono.onecycle_lr(1e-3, 1000, step=1000) == pytest.approx(1e-7)


def test_dataset_generation_deterministic(tmp_path):
    a = ono.generate_poisson1d(5, 32, seed=7)
    b = ono.generate_poisson1d(5, 32, seed=7)
    assert a.size == 5
    for i in range(a.size):
        assert np.array_equal(a.f(i), b.f(i))
        assert np.array_equal(a.u(i), b.u(i))

    path = str(tmp_path / "ds.onod")
    a.save(path)
    back = ono.load_dataset(path)
    assert back.size == a.size
    assert np.array_equal(back.f(0), a.f(0))
    assert back.mesh.grid_shape == (32, 1, pytest.approx(1 / 31))


def test_spectral_truth_min_kernel():
    vals, funcs = ono.spectral_truth("min", 256, 3)
    analytic = [1 / ((j - 0.5) ** 2 * math.pi**2) for j in (1, 2, 3)]
    assert vals[0] == pytest.approx(analytic[0], rel=1e-3)
    assert vals[1] == pytest.approx(analytic[1], rel=1e-2)
    # (1/M)-orthonormal columns
    gram = funcs.T @ funcs / funcs.shape[0]
    assert np.allclose(gram, np.eye(3), atol=1e-8)


def test_model_train_eval(tmp_path):
    ds = ono.generate_poisson1d(24, 16, seed=3)
    cfg = ono.ModelConfig()
    cfg.stages = 1
    cfg.width = 8
    cfg.bottom_width = 8
    cfg.eigenmaps = 4
    cfg.seed = 1
    model = ono.Model(cfg)
    assert model.parameter_count == ono.expected_parameter_count(cfg)

    out_dir = str(tmp_path / "run")
    result = ono.train(model, ds, epochs=2, batch_size=4, seed=0, max_lr=2e-3, out_dir=out_dir)
    assert len(result.log) == 2
    assert result.initial_val > 0.0
    assert math.isfinite(result.log[-1].val_rel_l2)

    res = ono.evaluate(model, ds, mode="direct")
    assert len(res.per_sample) == ds.size
    assert all(math.isfinite(v) for v in res.per_sample)

    restored, nx, ny = ono.load_checkpoint(result.checkpoint_path)
    assert (nx, ny) == (16, 1)
    again = ono.evaluate(restored, ds, mode="direct")
    twice = ono.evaluate(restored, ds, mode="direct")
    assert again.per_sample == twice.per_sample


def test_model_forward_shapes():
    ds = ono.generate_poisson1d(4, 16, seed=9)
    cfg = ono.ModelConfig()
    cfg.stages = 1
    cfg.width = 8
    cfg.bottom_width = 8
    cfg.eigenmaps = 4
    model = ono.Model(cfg)
    out = model.forward(ds.mesh, ds.f(0), train=True)
    assert out.shape == (16, 1)
    assert np.isfinite(out).all()
