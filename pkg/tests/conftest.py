import os
from pathlib import Path

import numpy as np
import pytest

from pcgen.config import TrainConfig, config_digest
from pcgen.data import make_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """16 train / 8 test samples at the default desk-scale sizes."""
    root = tmp_path_factory.mktemp("data") / "ds"
    make_dataset(root, 16, 8, seed=11)
    return root


def tiny_config(**overrides):
    base = dict(iterations=4, critic_iters=1, log_interval=2,
                checkpoint_interval=100, probe_size=2, batch_size=2)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """The full acceptance training run (200/40 samples, T=2000).

    Expensive (about 15 minutes).  Set PCGEN_ACCEPTANCE_CACHE to a
    directory to reuse a finished run across sessions during development;
    by default every pytest session trains fresh.
    """
    from pcgen.train import Trainer

    cfg = TrainConfig(iterations=2000, critic_iters=1, log_interval=100,
                      checkpoint_interval=500, probe_size=8, batch_size=4,
                      seed=7)
    cache = os.environ.get("PCGEN_ACCEPTANCE_CACHE")
    if cache:
        root = Path(cache) / config_digest(cfg)[:16]
        if (root / "run" / "final.sgpc").exists():
            return {"cfg": cfg, "data": root / "ds", "run": root / "run",
                    "seconds": None}
        root.mkdir(parents=True, exist_ok=True)
    else:
        root = tmp_path_factory.mktemp("toy")
    ds = root / "ds"
    if not (ds / "samples").exists():
        make_dataset(ds, 200, 40, seed=0)
    import time
    t0 = time.time()
    trainer = Trainer(cfg, data_dir=ds, out_dir=root / "run", quiet=True)
    trainer.train()
    seconds = time.time() - t0
    return {"cfg": cfg, "data": ds, "run": root / "run", "seconds": seconds}


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
