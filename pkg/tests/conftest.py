import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import helpers  # noqa: E402


@pytest.fixture(scope="session")
def fixture_tagger():
    return helpers.train_fixture_tagger(seed=0)


@pytest.fixture(scope="session")
def fixture_ranker():
    return helpers.train_fixture_ranker(seed=0)


@pytest.fixture(scope="session")
def planted_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    meta = helpers.make_planted_corpus(path, n_docs=200, seed=0)
    return path, meta


@pytest.fixture(scope="session")
def fixture_models_dir(tmp_path_factory, fixture_tagger, fixture_ranker):
    d = tmp_path_factory.mktemp("models")
    fixture_tagger.save(d / "tagger.npz")
    fixture_ranker.save(d / "ranker.json")
    return d
