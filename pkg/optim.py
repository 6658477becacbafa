from dataclasses import dataclass, field, replace

import torch


class ShapeMismatchError(ValueError):
  pass


@dataclass(frozen=True)
class AdamState:
  lr: float = 1e-3
  beta1: float = 0.9
  beta2: float = 0.999
  eps: float = 1e-8
  t: int = 0
  exp_avg: dict = field(default_factory=dict)
  exp_avg_sq: dict = field(default_factory=dict)

  @classmethod
  def create(cls, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    return cls(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, t=0,
               exp_avg={k: torch.zeros_like(p) for k, p in params.items()},
               exp_avg_sq={k: torch.zeros_like(p) for k, p in params.items()})


def adam_step(state, params, grads):
  """Bias-corrected Adam. Returns (new_params, new_state); inputs are left untouched."""
  if set(params) != set(grads) or set(params) != set(state.exp_avg):
    raise ShapeMismatchError("parameter, gradient and moment names differ")
  for k in params:
    if params[k].shape != grads[k].shape or params[k].shape != state.exp_avg[k].shape:
      raise ShapeMismatchError("shape mismatch for {}: {} vs {}".format(k, tuple(params[k].shape), tuple(grads[k].shape)))
  t = state.t + 1
  bias_correction1 = 1 - state.beta1 ** t
  bias_correction2 = 1 - state.beta2 ** t
  step_size = state.lr / bias_correction1
  new_params, exp_avg, exp_avg_sq = {}, {}, {}
  for k in params:
    m = state.exp_avg[k] * state.beta1 + grads[k] * (1 - state.beta1)
    v = state.exp_avg_sq[k] * state.beta2 + grads[k] * grads[k] * (1 - state.beta2)
    denom = v.sqrt() / (bias_correction2 ** 0.5) + state.eps
    new_params[k] = params[k] - step_size * m / denom
    exp_avg[k] = m
    exp_avg_sq[k] = v
  return new_params, replace(state, t=t, exp_avg=exp_avg, exp_avg_sq=exp_avg_sq)
