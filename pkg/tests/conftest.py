"""Shared fixtures: a small synthetic corpus and a reduced model factory."""

from __future__ import annotations

import numpy as np
import pytest

from domscene.features import FeatureConfig, FeatureStore
from domscene.model import SceneClassifier
from domscene.synthgen import SynthSpec, generate_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """72-segment corpus (8 per class, 4 sessions, 4 folds) plus a warm store."""
    root = tmp_path_factory.mktemp("small_corpus")
    spec = SynthSpec(segments_per_class=8, seed=123)
    manifest = generate_corpus(spec, root)
    store = FeatureStore(root, FeatureConfig(), cache_dir=root / "features")
    return manifest, store, root


def reduced_model(rng: np.random.Generator) -> SceneClassifier:
    """Smaller head counts than the full-size model; same layer stack and input shape."""
    return SceneClassifier(conv1_filters=8, conv2_filters=16, hidden=32, rng=rng)


@pytest.fixture()
def reduced_model_factory():
    return reduced_model
