import numpy as np
import pytest

from cqgen.corpus import TrainingPair, build_vocabs, prepare_record
from cqgen.decoding import BeamConfig, DecodeConstraints
from cqgen.generator import GeneratorConfig, GeneratorModel
from cqgen.group import ModelBundle
from cqgen.nn.rng import Rng
from cqgen.predictor import PredictorConfig, PredictorModel
from cqgen.selection import SelectionConfig, build_cooccurrence
from cqgen.synth import SynthConfig, default_blacklist, generate_corpus, split_corpus


def make_records(products: int, seed: int = 1):
    rows = generate_corpus(SynthConfig(products=products, seed=seed))
    splits = split_corpus(rows, seed)
    return {k: [r for r in (prepare_record(x) for x in v) if r] for k, v in splits.items()}


@pytest.fixture(scope="session")
def tiny_records():
    return make_records(40)


@pytest.fixture(scope="session")
def tiny_vocabs(tiny_records):
    return build_vocabs(tiny_records["train"])


@pytest.fixture(scope="session")
def tiny_bundle(tiny_records, tiny_vocabs):
    """Random-initialized (untrained) bundle: fast, deterministic, exercises
    the full pipeline shape without caring about generation quality."""
    token_vocab, keyword_vocab = tiny_vocabs
    predictor = PredictorModel(token_vocab, keyword_vocab,
                               PredictorConfig(embed_dim=16, n_filters=8, seed=7), rng=Rng(7))
    generator = GeneratorModel(token_vocab, keyword_vocab,
                               GeneratorConfig(embed_dim=16, hidden=12, seed=7), rng=Rng(8))
    graph = build_cooccurrence(tiny_records["train"], keyword_vocab)
    return ModelBundle(
        predictor=predictor,
        generator=generator,
        token_vocab=token_vocab,
        keyword_vocab=keyword_vocab,
        graph=graph,
        blacklist=default_blacklist(),
        selection=SelectionConfig(),
        beam=BeamConfig(max_len=12),
        constraints=DecodeConstraints(),
    )


@pytest.fixture(scope="session")
def tiny_pairs(tiny_records, tiny_vocabs):
    token_vocab, _ = tiny_vocabs
    return TrainingPair.from_corpus(tiny_records["train"], token_vocab)
