import numpy as np
import pytest

from takd.data import gen_synthetic
from takd.distill import DistillConfig
from takd.models import mlp_spec
from takd.optim import OptimizerConfig


@pytest.fixture(scope="session")
def blobs():
    return gen_synthetic("blobs", 300, 3, 0.1, seed=7)


@pytest.fixture(scope="session")
def spirals_small():
    return gen_synthetic("spirals", 600, 3, 0.07, seed=5)


@pytest.fixture()
def quick_cfg():
    opt = OptimizerConfig(learning_rate=0.1, momentum=0.9, nesterov=True)
    return DistillConfig(temperature=4.0, lam=0.5, epochs=8, batch_size=32,
                         optimizer=opt, seed=0)


@pytest.fixture()
def tiny_specs():
    return {s: mlp_spec(s, input_dim=2, width=16, num_classes=3)
            for s in (3, 2, 1)}


def params_equal(a, b) -> bool:
    pa = list(a)
    pb = list(b)
    if [p.name for p in pa] != [p.name for p in pb]:
        return False
    return all(np.array_equal(x.value, y.value) for x, y in zip(pa, pb))
