"""Shared fixtures: a small synthetic cohort and a rendered dataset.

Session-scoped because topogram rendering dominates test wall time; the
tests treat these as read-only.
"""

import numpy as np
import pytest

from neurotopo import synthgen, topomap


@pytest.fixture(scope="session")
def montage32():
    from neurotopo.montage import builtin_montage_32
    return builtin_montage_32()


@pytest.fixture(scope="session")
def tiny_trials():
    cfg = synthgen.SynthConfig(n_subjects=1, trials_per_hand=5, seed=11)
    return synthgen.generate_cohort(cfg)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_trials, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_ds")
    manifest = topomap.build_dataset(tiny_trials, out, seed=11,
                                     store_fullres=True)
    return manifest


@pytest.fixture(scope="session")
def tiny_images(tiny_dataset):
    """Preloaded net-input images keyed by manifest path."""
    return {e.path: tiny_dataset.load_image(e) for e in tiny_dataset.entries}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
