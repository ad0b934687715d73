from __future__ import annotations

import pytest

from guidedchat.backbone import ModelConfig
from guidedchat.corpus import build_vocabulary, encode_sample, load_dataset
from guidedchat.fixtures import CorpusSpec, generate_corpus
from guidedchat.model import DialogueModel


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    generate_corpus(CorpusSpec(seed=7), out)
    return out


@pytest.fixture(scope="session")
def dataset(fixture_dir):
    return load_dataset(fixture_dir)


@pytest.fixture(scope="session")
def vocab(dataset):
    return build_vocabulary(dataset.train)


def make_model(dataset, vocab, **overrides) -> DialogueModel:
    base = dict(d=32, n_layers=2, n_heads=4, ffn_width=64, vocab_size=vocab.size,
                max_src_len=128, max_tgt_len=40, dropout=0.0, seed=13)
    base.update(overrides)
    model = DialogueModel(ModelConfig(**base), dataset.inventory.n_types,
                          dataset.inventory.n_topics)
    model.eval()
    return model


@pytest.fixture(scope="session")
def toy_model(dataset, vocab):
    return make_model(dataset, vocab)


@pytest.fixture(scope="session")
def train_examples(dataset, vocab):
    return [encode_sample(s, vocab, dataset.inventory, m=4, max_src_len=128,
                          max_tgt_len=40) for s in dataset.train]
