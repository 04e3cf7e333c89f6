import math

import numpy as np
import pytest

from adacache.cache import PRESETS, constant_codebook, replay
from adacache.model import ModelConfig, flops_per_step, init_model
from adacache.sampler import (
    RunTrace,
    SamplerConfig,
    baseline_denoise,
    denoise,
    residual_stream,
    step_update,
)
from conftest import SCRIPTED_SCHEDULE, SCRIPTED_VALUES, ScriptedDiT


def test_zero_noise_is_alpha_bar_rescaling(rng):
    cfg = SamplerConfig(steps=5)
    f = rng.standard_normal((2, 3, 4)).astype(np.float32)
    abar = cfg.alphas_cumprod
    out = step_update(f, np.zeros_like(f), 3, cfg)
    np.testing.assert_allclose(out, f * math.sqrt(abar[2] / abar[3]), rtol=1e-6)


def test_single_step_reconstruction(rng):
    cfg = SamplerConfig(steps=1)
    f = rng.standard_normal((2, 2)).astype(np.float32)
    eps = rng.standard_normal((2, 2)).astype(np.float32)
    a = 1.0 - 1e-4
    expected = (f.astype(np.float64) - math.sqrt(1 - a) * eps) / math.sqrt(a)
    np.testing.assert_allclose(step_update(f, eps, 0, cfg), expected, rtol=1e-6)


def test_three_step_schedule_oracle():
    cfg = SamplerConfig(steps=3, beta_start=1e-4, beta_end=2e-2)
    # betas 1e-4, 0.01005, 0.02 and their running products, by hand
    abar = [1 - 1e-4]
    abar.append(abar[-1] * (1 - 0.01005))
    abar.append(abar[-1] * (1 - 0.02))
    np.testing.assert_allclose(cfg.alphas_cumprod, abar, rtol=1e-12)

    x = [1.5, -0.5]
    noises = {2: [0.25, -1.0], 1: [0.5, 0.5], 0: [-0.75, 0.125]}
    f = np.array(x, np.float32)
    for t in (2, 1, 0):
        eps = noises[t]
        prev = abar[t - 1] if t else 1.0
        x = [
            math.sqrt(prev) * (xi - math.sqrt(1 - abar[t]) * e) / math.sqrt(abar[t]) + math.sqrt(1 - prev) * e
            for xi, e in zip(x, eps)
        ]
        f = step_update(f, np.array(eps, np.float32), t, cfg)
        np.testing.assert_allclose(f, x, atol=1e-5)


def test_step_update_errors():
    cfg = SamplerConfig(steps=3)
    f = np.zeros(2, np.float32)
    with pytest.raises(ValueError):
        step_update(f, f, 3, cfg)
    with pytest.raises(ValueError):
        step_update(f, np.zeros(3, np.float32), 0, cfg)
    with pytest.raises(ValueError):
        SamplerConfig(beta_start=0.1, beta_end=0.01)


@pytest.fixture(scope="module")
def model30():
    cfg = ModelConfig(layers=3, channels=16, heads=2, frames=4, tokens_per_frame=4, steps=30, cond_tokens=3, seed=5)
    return init_model(cfg)


def test_all_compute_matches_baseline(model30):
    for seed in (0, 1):
        final, trace = denoise(model30, seed, PRESETS["all-compute"])
        assert final.tobytes() == baseline_denoise(model30, seed).tobytes()
        assert len(trace.computed_steps) == 30


def test_fixed_rate_three(model30):
    _, trace = denoise(model30, 0, constant_codebook(3))
    assert trace.computed_steps == list(range(0, 30, 3))


def test_trace_flops_identity(model30):
    _, trace = denoise(model30, 2, PRESETS["opensora-30-fast"])
    n = len(trace.computed_steps)
    cfg = model30.cfg
    assert trace.total_flops == n * flops_per_step(cfg, False) + (30 - n) * flops_per_step(cfg, True)
    assert trace.records[0].computed
    assert len(trace) == 30


def test_denoise_deterministic(model30):
    a, ta = denoise(model30, 4, PRESETS["opensora-30-fast"], moreg=True)
    b, tb = denoise(model30, 4, PRESETS["opensora-30-fast"], moreg=True)
    assert a.tobytes() == b.tobytes()
    assert ta.to_jsonl() == tb.to_jsonl()


class Recorder:
    """Wraps a model and keeps every forward's per-layer residuals."""

    def __init__(self, model):
        self.model = model
        self.cfg = model.cfg
        self.calls = []

    def forward(self, f, t, decisions=None):
        noise, residuals = self.model.forward(f, t, decisions)
        self.calls.append((t, decisions is None, residuals))
        return noise, residuals


def test_common_schedule_and_reuse_purity(model30):
    rec = Recorder(model30)
    _, trace = denoise(rec, 3, PRESETS["opensora-30-fast"])
    cached = None
    for (t, fresh, residuals), record in zip(rec.calls, trace):
        assert fresh == record.computed
        stamps = {r.computed_at_step for r in residuals}
        assert len(stamps) == 1
        if fresh:
            assert stamps == {t}
            cached = residuals
        else:
            for got, ref in zip(residuals, cached):
                for name in "pqr":
                    assert got.get(name).tobytes() == ref.get(name).tobytes()


def test_scripted_end_to_end_schedule():
    _, trace = denoise(ScriptedDiT(SCRIPTED_VALUES), 0, PRESETS["opensora-30-fast"])
    got = [(r.step, r.computed, r.metric, r.rate) for r in trace]
    assert got == SCRIPTED_SCHEDULE


def test_replay_dominance_on_model_stream(model30):
    stream = residual_stream(model30, 0)
    counts = [
        len([d for d in replay(stream, PRESETS[name]) if d.compute])
        for name in ("opensora-30-slow", "toy-30-medium", "opensora-30-fast")
    ]
    assert counts[0] >= counts[1] >= counts[2]


def test_model_sampler_step_mismatch(model30):
    with pytest.raises(ValueError):
        denoise(model30, 0, PRESETS["all-compute"], cfg=SamplerConfig(steps=10))


def test_trace_jsonl_round_trip(model30):
    _, trace = denoise(model30, 1, PRESETS["opensora-30-fast"], moreg=True)
    text = trace.to_jsonl()
    assert RunTrace.from_jsonl(text) == trace
    first = text.splitlines()[0]
    assert first.startswith('{"step": 0, "timestep": 29, "computed": true, "metric": null')


def test_metric_config_changes_schedule(model30):
    from adacache.cache import MetricConfig

    _, a = denoise(model30, 0, PRESETS["opensora-30-fast"], metric=MetricConfig(kind="l1"))
    _, b = denoise(model30, 0, PRESETS["opensora-30-fast"], metric=MetricConfig(kind="cosine"))
    assert [r.metric for r in a][1] != [r.metric for r in b][1]
