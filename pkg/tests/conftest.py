import numpy as np
import pytest

from footcloak import synth
from footcloak.data import from_rows


@pytest.fixture(scope="session")
def small_synth():
    """Shared mid-size synthetic dataset for pipeline-level module tests."""
    cfg = synth.SynthConfig(
        n_users=350, n_items=450, k_topics=6, mean_likes=35, seed=11
    )
    return synth.generate(cfg)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    """Tiny dataset written to disk for CLI tests."""
    outdir = tmp_path_factory.mktemp("tinydata")
    cfg = synth.SynthConfig(
        n_users=260, n_items=300, k_topics=4, mean_likes=25, seed=5
    )
    res = synth.generate(cfg)
    synth.write_dataset(outdir, res)
    return outdir


def random_footprints(rng, n_users, n_items, density=0.3):
    """Random binary matrix helper shared by several test modules."""
    rows = []
    for i in range(n_users):
        mask = rng.random(n_items) < density
        rows.append(np.nonzero(mask)[0].astype(np.int64))
    users = tuple(f"u{i}" for i in range(n_users))
    items = tuple(f"i{j}" for j in range(n_items))
    return from_rows(rows, n_items, users, items)
