import numpy as np
import pytest
import torch

from spliceloc.config import ModelConfig, TrainConfig

# Small-but-valid settings used across the suite: input 48 keeps the coarsest
# grid at 3x3 (the minimum the Sobel edge target supports).
TINY_MODEL = ModelConfig(
    dims=(8, 16, 32, 64), depths=(1, 1, 1, 1), heads=(1, 2, 4, 8),
    sr_ratios=(8, 4, 2, 1), mlp_ratio=1.0, condconv_experts=2,
    edge_width=8, se_reduction=4,
)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(input_size=48, batch_size=2, lr=1e-3, epochs=1,
                lr_halve_every=5, seed=0, model=TINY_MODEL)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)
    np.random.seed(0)


def fd_grad(fn, tensor: torch.Tensor, index: tuple, eps: float = 1e-6) -> float:
    """Central finite difference of scalar fn w.r.t. one tensor entry."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + eps
        hi = float(fn())
        tensor[index] = orig - eps
        lo = float(fn())
        tensor[index] = orig
    return (hi - lo) / (2.0 * eps)


def rel_err(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
