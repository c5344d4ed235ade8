import json

import pytest

from prefrec.corpus import Speaker, Utterance
from prefrec.synthetic import generate_synthetic_corpus
from prefrec.textgen import MockExtractiveBackend
from prefrec.workflow import train_scorer_on_corpus


def utt(speaker, text):
    return Utterance(Speaker.OPERATOR if speaker == "A" else Speaker.CUSTOMER, text)


@pytest.fixture
def tiny_corpus_dict():
    return {
        "items": [
            {"id": "spotA", "description": "Hot spring town with outdoor baths."},
            {"id": "spotB", "description": "Indoor dome. Events held."},
            {"id": "spotC", "description": "Quiet temple garden."},
        ],
        "dialogues": [
            {
                "dialogue_id": "d1",
                "turns": [
                    {
                        "turn_id": "d1-t1",
                        "history": [
                            {"speaker": "operator", "text": "Hello."},
                            {"speaker": "customer", "text": "I like onsen."},
                        ],
                        "candidates": ["spotA", "spotB"],
                        "labels": {"spotA": 1, "spotB": 0},
                    }
                ],
            },
            {
                "dialogue_id": "d2",
                "turns": [
                    {
                        "turn_id": "d2-t1",
                        "history": [{"speaker": "customer", "text": "We want calm places."}],
                        "candidates": ["spotB", "spotC"],
                        "labels": {"spotB": 0, "spotC": 1},
                    }
                ],
            },
        ],
    }


@pytest.fixture
def write_json(tmp_path):
    def _write(obj, name="corpus.json"):
        p = tmp_path / name
        p.write_text(json.dumps(obj), encoding="utf-8")
        return p

    return _write


@pytest.fixture(scope="session")
def synthetic_corpus():
    return generate_synthetic_corpus()


@pytest.fixture(scope="session")
def mock_backend():
    return MockExtractiveBackend()


@pytest.fixture(scope="session")
def trained_scorer(synthetic_corpus, mock_backend):
    model, _ = train_scorer_on_corpus(synthetic_corpus, mock_backend)
    return model
