"""Smoke tests for the python bindings: a handful of known values per
subsystem, exercised through the same operations the C++ suites pin down."""

import math

import numpy as np
import pytest

import neurove as nv


def test_neuron_primitives():
    assert nv.diffusion_term(0.8, 0.2, 0.5) == pytest.approx(0.3)
    assert nv.heaviside(1.0, 1.0) == 1.0
    assert nv.heaviside(0.99, 1.0) == 0.0

    spec = nv.SurrogateSpec()
    assert nv.surrogate_grad(1.0, 1.0, spec) == 1.0
    assert nv.surrogate_grad(11.0, 1.0, spec) == 0.0


def test_lif_first_spike_at_step_four():
    params = nv.NeuronParams()
    params.alpha = 0.9
    params.v_th = 1.0
    state = nv.NeuronState.zeros(1)
    first = None
    for step in range(1, 10):
        state = nv.lif_step(state, [0.3], params)
        if state.s[0] == 1.0 and first is None:
            first = step
    assert first == 4


def test_alif_reduces_to_lif_at_zero_diffusion():
    params = nv.NeuronParams()
    params.diffusion_d = 0.0
    state = nv.NeuronState.zeros(2)
    state.v = [0.4, -0.2]
    state.v_final_prev_layer = [1.0, 2.0]
    a = nv.lif_step(state, [0.1, 0.2], params)
    b = nv.alif_step(state, [0.1, 0.2], params)
    assert a.v == b.v
    assert a.s == b.s


def test_aslstm_cell_hand_oracle():
    params = nv.ASLSTMParams.init(1, 1, 0)
    # overwrite to the 1-dim hand-computable configuration via python lists
    state = nv.ASLSTMState.zeros(1)
    out = nv.aslstm_step(state, [0.0], params)
    assert out.c[0] == 0.0 and out.h[0] == 0.0  # tanh(0) kills the products

    upd = nv.alif_state_update([0.5], [0.1], [0.4], [0.0], 0.9, 0.5)
    assert upd[0] == pytest.approx(0.75)

    readout = nv.output_neuron([0.0], [0.0], [0.0], params)
    assert readout.value[0] == 0.0


def test_encoding_channel_rule():
    spec = nv.WindowSpec()
    spec.window_duration = 0.01
    spec.n_bins = 4
    spec.t_steps = 1
    spec.sensor_h = spec.sensor_w = 8
    bin_us = int(spec.window_duration / spec.n_bins * 1e6)
    events = [nv.Event(2 * bin_us + 1, 3, 5, 1)]
    tensor = nv.encode_events(events, spec, 0)
    assert tensor.shape == (1, 1, 8, 8, 8)
    assert tensor.sum() == 1
    assert tensor[0, 0, 2 * 2 + 1, 5, 3] == 1


def test_metrics():
    assert nv.rmse_scalar([0.0, 2.0], [1.0, 1.0]) == pytest.approx(1.0)
    assert nv.relative_error([[1.0]], [[2.0]]) == pytest.approx(0.5)


def test_sine_dataset_split():
    spec = nv.SineDatasetSpec()
    spec.num_sequences = 10
    spec.train_count = 8
    spec.val_count = 2
    spec.steps = 30
    spec.forecast_steps = 30
    ds = nv.gen_sine_dataset(spec, 1)
    assert len(ds.sequences) == 10
    assert len(ds.train_indices) == 8
    assert all(abs(y) <= 1.0 for y in ds.sequences[0].y)
    assert ds.sequences[0].y[0] == pytest.approx(math.sin(ds.sequences[0].phase))


def test_model_forward_shape_and_determinism():
    ext = nv.FeatureExtractorConfig()
    ext.blocks = [nv.ConvBlockConfig(4, 3, 2, 1), nv.ConvBlockConfig(8, 3, 2, 1)]
    est = nv.EstimatorConfig()
    est.hidden_dim = 16
    window = nv.WindowSpec()
    window.t_steps = 2
    window.n_bins = 5
    window.sensor_h = window.sensor_w = 16
    model = nv.build_model(ext, est, window, 7)

    rng = np.random.default_rng(0)
    spikes = (rng.random((2, 3, 10, 16, 16)) < 0.2).astype(np.uint8)
    pred = model.forward(spikes)
    assert pred.shape == (3, 5, 6)
    assert np.isfinite(pred).all()

    model2 = nv.build_model(ext, est, window, 7)
    assert np.array_equal(pred, model2.forward(spikes))


def test_sine_model_trace_phases():
    cfg = nv.SineModelConfig()
    cfg.hidden_dim = 8
    model = nv.build_sine_model(cfg, 3)
    y = [math.sin(0.1 * k) for k in range(40)]
    pred, phase = model.trace(y, 20)
    assert len(pred) == 40
    assert phase[5] == "fit"
    assert phase[25] == "forecast"


def test_poses_to_velocity_constant_motion():
    poses = []
    for k in range(10):
        p = nv.PoseSample()
        p.t = 0.1 * k
        p.position = [0.0, 0.0, 0.5 * p.t]
        poses.append(p)
    vel = nv.poses_to_velocity(poses)
    assert vel[3].linear[2] == pytest.approx(0.5, abs=1e-9)


def test_velocity_loss_example():
    pred = np.zeros((1, 1, 6))
    gt = np.zeros((1, 1, 6))
    gt[0, 0, 0] = 3.0
    gt[0, 0, 1] = 4.0
    total, angular, linear = nv.velocity_loss(pred, gt)
    assert total == 2.5
    assert linear == 2.5
    assert angular == 0.0


def test_firing_profile_comparison():
    params = nv.NeuronParams()
    params.diffusion_d = 0.5
    rng = np.random.default_rng(5)
    trace = rng.uniform(0.0, 0.6, 800).tolist()
    alif = nv.firing_profile(nv.NeuronKind.alif, params, trace)
    lif = nv.firing_profile(nv.NeuronKind.lif, params, trace)
    assert alif.mean_rate >= lif.mean_rate
    assert 0.0 <= lif.mean_rate <= 1.0
