import numpy as np
import pytest
import torch

from faswrap.models import FasModelConfig, ToyFasModel
from faswrap.synth import SyntheticDomainSpec, generate_synthetic_benchmark

torch.set_num_threads(2)


def tiny_specs(seed=0, n=24, image_size=32):
    return {
        "A": SyntheticDomainSpec(
            n_live=n,
            n_spoof=n,
            spoof_types=[("print", "print", "moire"), ("replay", "replay", "moire")],
            image_size=(image_size, image_size),
            seed=seed + 7,
        ),
        "B": SyntheticDomainSpec(
            n_live=n,
            n_spoof=n,
            spoof_types=[("mask3d", "mannequin", "checker"), ("makeup", "cosmetic", "stripes")],
            brightness=0.05,
            image_size=(image_size, image_size),
            seed=seed + 8,
        ),
    }


@pytest.fixture(scope="session")
def tiny_benchmark(tmp_path_factory):
    """Small two-domain benchmark shared across the suite (32x32 images)."""
    root = tmp_path_factory.mktemp("bench")
    return generate_synthetic_benchmark(tiny_specs(), root), root


@pytest.fixture(scope="session")
def tiny_model():
    """Model matched to the 32x32 benchmark images."""
    return ToyFasModel(FasModelConfig(levels=3, channels=(8, 12, 16), input_size=(32, 32), seed=5))


@pytest.fixture()
def micro_config():
    """Sub-5k-parameter double-precision config for gradient checks."""
    return FasModelConfig(levels=2, channels=(3, 4), input_size=(8, 8), depth_size=(4, 4), seed=9)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
