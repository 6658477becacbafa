import pytest
import torch

from models import TinyConvNet
from optim import AdamState, ShapeMismatchError, adam_step


def params_and_grads(seed=0):
    g = torch.Generator().manual_seed(seed)
    params = {"w": torch.randn(3, 4, generator=g, dtype=torch.float64),
              "b": torch.randn(4, generator=g, dtype=torch.float64)}
    grads = {"w": torch.randn(3, 4, generator=g, dtype=torch.float64),
             "b": torch.randn(4, generator=g, dtype=torch.float64)}
    return params, grads


def test_zero_gradient_leaves_params():
    params, _ = params_and_grads()
    state = AdamState.create(params)
    new, state = adam_step(state, params, {k: torch.zeros_like(v) for k, v in params.items()})
    assert state.t == 1
    for k in params:
        assert torch.equal(new[k], params[k])


def test_first_step_is_lr_times_sign():
    params, grads = params_and_grads()
    grads = {k: torch.sign(g) * (0.5 + g.abs()) for k, g in grads.items()}
    state = AdamState.create(params, lr=0.01)
    new, _ = adam_step(state, params, grads)
    for k in params:
        step = new[k] - params[k]
        assert torch.allclose(step, -0.01 * torch.sign(grads[k]), atol=1e-8, rtol=0)


def test_matches_torch_adam():
    params, _ = params_and_grads(1)
    state = AdamState.create(params, lr=3e-3, betas=(0.8, 0.95), eps=1e-6)
    reference = {k: v.clone().requires_grad_(True) for k, v in params.items()}
    opt = torch.optim.Adam(reference.values(), lr=3e-3, betas=(0.8, 0.95), eps=1e-6)
    for i in range(5):
        _, grads = params_and_grads(10 + i)
        params, state = adam_step(state, params, grads)
        opt.zero_grad()
        for k, p in reference.items():
            p.grad = grads[k].clone()
        opt.step()
        for k in params:
            assert torch.allclose(params[k], reference[k].detach(), atol=1e-14, rtol=1e-12)
    assert state.t == 5


def test_inputs_are_not_mutated():
    params, grads = params_and_grads()
    before = {k: v.clone() for k, v in params.items()}
    state = AdamState.create(params)
    adam_step(state, params, grads)
    assert state.t == 0
    assert all(torch.equal(state.exp_avg[k], torch.zeros_like(v)) for k, v in params.items())
    for k in params:
        assert torch.equal(params[k], before[k])


def test_shape_mismatch():
    params, grads = params_and_grads()
    state = AdamState.create(params)
    with pytest.raises(ShapeMismatchError):
        adam_step(state, params, {"w": grads["w"], "b": torch.zeros(5, dtype=torch.float64)})
    with pytest.raises(ShapeMismatchError):
        adam_step(state, params, {"w": grads["w"]})


def test_identical_runs_are_bitwise_identical():
    def run():
        net = TinyConvNet(2, init_seed=4)
        params = net.params()
        state = AdamState.create(params, lr=1e-2)
        for i in range(4):
            _, grads = params_and_grads(i)
            grads = {k: torch.full_like(v, float(grads["b"][0])) for k, v in params.items()}
            params, state = adam_step(state, params, grads)
        return params

    a, b = run(), run()
    for k in a:
        assert torch.equal(a[k], b[k])
