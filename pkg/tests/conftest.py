import numpy as np
import pytest
import torch

from tribind.models import TriBindModel, desk_config
from tribind.synth import make_overfit_corpus
from tribind.corpus import load_manifest
from tribind.text import build_vocab, compose_eval_text


@pytest.fixture(scope="session")
def overfit_corpus(tmp_path_factory):
    """Small synthetic trimodal corpus: (manifest, vocab, directory)."""
    out = tmp_path_factory.mktemp("overfit_corpus")
    manifest_path = make_overfit_corpus(out, n=16, seed=0)
    manifest = load_manifest(manifest_path)
    texts = [compose_eval_text(list(r.texts)) for r in manifest.records]
    vocab = build_vocab(texts, 256)
    return manifest, vocab, out


@pytest.fixture(scope="session")
def desk_model() -> TriBindModel:
    torch.manual_seed(1234)
    model = TriBindModel(desk_config(text_vocab_size=256))
    model.eval()
    return model


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
