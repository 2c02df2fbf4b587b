import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latvid.codec import TrainingConfig
from latvid.flow import (FlowError, FlowState, GaussianAnalytic, MlpVelocity,
                         flow_loss_and_grad, load_flow, make_mlp_velocity,
                         sample_unconditional, save_flow, time_embedding,
                         train_flow, tweedie, velocity)


def test_flow_state_validation():
    with pytest.raises(FlowError):
        FlowState(np.zeros(3), 1.5)
    with pytest.raises(FlowError):
        FlowState(np.array([np.inf]), 0.5)


def test_time_embedding_shape_and_range():
    emb = time_embedding(np.array([0.0, 0.5, 1.0]))
    assert emb.shape == (3, 16)
    assert np.all(np.abs(emb) <= 1.0)
    assert not np.allclose(emb[0], emb[1])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2 ** 31 - 1))
def test_tweedie_reinterpolation_recovers_state(t, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=6)
    v = rng.normal(size=6)
    z0, z1 = tweedie(FlowState(z, t), v)
    assert np.allclose((1 - t) * z0 + t * z1, z, atol=1e-12)
    assert np.allclose(z1 - z0, v, atol=1e-12)


def test_analytic_velocity_at_endpoints():
    model = GaussianAnalytic(np.array([2.0]), np.array([4.0]))
    z = np.array([3.0])
    # t=0: the state is a prior sample, so E[x0|z] = z and E[x1|z] = 0
    v0 = velocity(model, FlowState(z, 0.0))
    assert np.allclose(v0, -3.0)
    # t=1: the state is pure noise, so E[x1|z] = z and E[x0|z] = mu
    v1 = velocity(model, FlowState(z, 1.0))
    assert np.allclose(v1, 3.0 - 2.0)


def test_analytic_velocity_matches_monte_carlo_regression():
    """The Gaussian conditional velocity is linear in z; linear regression
    of (x1-x0) on z_t over samples recovers it."""
    mu, var = 0.5, 2.25
    model = GaussianAnalytic(np.array([mu]), np.array([var]))
    rng = np.random.default_rng(0)
    n = 100_000
    x0 = rng.normal(mu, np.sqrt(var), size=n)
    x1 = rng.normal(size=n)
    probes = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    for t in (0.25, 0.5, 0.75):
        zt = (1 - t) * x0 + t * x1
        slope, intercept = np.polyfit(zt, x1 - x0, 1)
        mc = slope * probes + intercept
        an = np.array([velocity(model, FlowState(np.array([z]), t))[0]
                       for z in probes])
        assert np.max(np.abs(mc - an)) / np.max(np.abs(an)) < 0.01


def test_mlp_velocity_shape_and_determinism():
    model = make_mlp_velocity(8, hidden=16, seed=0)
    z = np.random.default_rng(1).normal(size=(2, 2, 2))
    v1 = velocity(model, FlowState(z, 0.3))
    v2 = velocity(model, FlowState(z, 0.3))
    assert v1.shape == z.shape
    assert np.array_equal(v1, v2)


def test_mlp_velocity_rejects_wrong_dim():
    model = make_mlp_velocity(8, hidden=16)
    with pytest.raises(FlowError, match="dimension"):
        velocity(model, FlowState(np.zeros(7), 0.5))


def test_flow_training_loss_decreases():
    rng = np.random.default_rng(2)
    data = rng.normal(0.0, 0.3, size=(32, 8))
    cfg = TrainingConfig(epochs=30, batch_size=16, lr=1e-3, seed=0)
    model = train_flow(list(data), cfg, hidden=32)
    assert model.loss_history[-1] < model.loss_history[0]


def test_flow_training_determinism():
    rng = np.random.default_rng(3)
    data = list(rng.normal(size=(8, 4)))
    cfg = TrainingConfig(epochs=3, batch_size=4, lr=1e-3, seed=5)
    a = train_flow(data, cfg, hidden=8)
    b = train_flow(data, cfg, hidden=8)
    assert np.array_equal(a.net.flat_params(), b.net.flat_params())


def test_trained_flow_approximates_analytic_velocity():
    """On 1D Gaussian data the learned velocity should land near the
    analytic conditional velocity on a probe grid."""
    mu, var = 0.0, 1.0
    rng = np.random.default_rng(4)
    data = list(rng.normal(mu, 1.0, size=(256, 1)))
    cfg = TrainingConfig(epochs=200, batch_size=64, lr=3e-3, seed=0)
    model = train_flow(data, cfg, hidden=64)
    analytic = GaussianAnalytic(np.array([mu]), np.array([var]))
    errs = []
    for t in (0.25, 0.5, 0.75):
        for z in (-1.0, 0.0, 1.0):
            va = velocity(analytic, FlowState(np.array([z]), t))[0]
            vm = velocity(model, FlowState(np.array([z]), t))[0]
            errs.append(abs(vm - va))
    assert np.mean(errs) < 0.15


def test_unconditional_sampling_matches_prior_moments():
    model = GaussianAnalytic(np.array([1.5]), np.array([0.25]))
    samples = sample_unconditional(model, (4000,), steps=200, seed=0)
    assert abs(samples.mean() - 1.5) < 0.05
    assert abs(samples.std() - 0.5) < 0.05


def test_sampling_step_doubling_converges_first_order():
    model = GaussianAnalytic(np.array([0.7]), np.array([2.0]))
    ref = sample_unconditional(model, (64,), steps=3200, seed=9)
    e25 = np.linalg.norm(sample_unconditional(model, (64,), 25, 9) - ref)
    e50 = np.linalg.norm(sample_unconditional(model, (64,), 50, 9) - ref)
    assert e50 < e25
    assert 1.5 < e25 / e50 < 2.5


def test_sampling_deterministic_given_seed():
    model = GaussianAnalytic(np.zeros(1), np.ones(1))
    a = sample_unconditional(model, (16,), 50, seed=3)
    b = sample_unconditional(model, (16,), 50, seed=3)
    assert np.array_equal(a, b)


def test_flow_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    data = list(rng.normal(size=(8, 4)))
    cfg = TrainingConfig(epochs=2, batch_size=4, lr=1e-3, seed=0)
    model = train_flow(data, cfg, hidden=8)
    save_flow(model, tmp_path / "flow")
    back = load_flow(tmp_path / "flow")
    z = rng.normal(size=4)
    va = velocity(model, FlowState(z, 0.4))
    vb = velocity(back, FlowState(z, 0.4))
    assert np.max(np.abs(va - vb)) < 1e-4     # f32 checkpoint quantization


def test_flow_load_detects_corruption(tmp_path):
    model = make_mlp_velocity(4, hidden=8, seed=0)
    save_flow(model, tmp_path / "flow")
    target = tmp_path / "flow" / "w0.bt"
    data = bytearray(target.read_bytes())
    data[-2] ^= 0xFF
    target.write_bytes(bytes(data))
    with pytest.raises(FlowError, match="checksum"):
        load_flow(tmp_path / "flow")
