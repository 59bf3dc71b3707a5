import pytest

from spikelab.events import SyntheticEventConfig, SyntheticStaticConfig, synth_event_dataset, synth_static_dataset
from spikelab.rng import Rng


@pytest.fixture(scope="session")
def tiny_event_dataset():
    cfg = SyntheticEventConfig(classes=4, samples=96, width=20, height=20)
    return synth_event_dataset(cfg, Rng(101))


@pytest.fixture(scope="session")
def tiny_static_dataset():
    cfg = SyntheticStaticConfig(classes=3, samples=120, width=16, height=16)
    return synth_static_dataset(cfg, Rng(102))


def rel_err(a, b, floor=1e-10):
    a, b = float(a), float(b)
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_check_coords(loss_fn, params, grads, rng, per_param=5, eps=1e-5):
    """Compare analytic grads against central differences on random
    coordinates; params must already hold the analytic grads. Returns the
    worst relative error."""
    worst = 0.0
    for p, g in zip(params, grads):
        fp, fg = p.reshape(-1), g.reshape(-1)
        for _ in range(per_param):
            ci = int(rng.integers(0, fp.size))
            orig = float(fp[ci])
            fp[ci] = orig + eps
            hi = loss_fn()
            fp[ci] = orig - eps
            lo = loss_fn()
            fp[ci] = orig
            fd = (hi - lo) / (2 * eps)
            an = float(fg[ci])
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-10))
    return worst
