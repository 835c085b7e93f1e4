"""Shared fixtures: small hand-built corpora and synthetic benchmarks."""

import numpy as np
import pytest

from lse.model import ModelParams
from lse.text import Corpus, Document, Vocabulary


def synth_word(i, j):
    """Alphabetic synthetic token for entity i's j-th vocabulary slot."""
    return "v" + chr(97 + i) + chr(97 + j)


def build_separable_corpus(num_entities=8, words_per=20, docs_per=10,
                           doc_len=30, seed=123):
    """Entities with mutually disjoint vocabularies; trivially learnable."""
    rng = np.random.default_rng(seed)
    entities = [f"e{i}" for i in range(num_entities)]
    docs = []
    assoc = {}
    total = 0
    for i in range(num_entities):
        assoc[i] = []
        lo = i * words_per
        for d in range(docs_per):
            toks = rng.integers(lo, lo + words_per, size=doc_len).astype(np.int32)
            assoc[i].append(len(docs))
            docs.append(Document(f"e{i}d{d}", f"e{i}", toks))
            total += doc_len
    names = [synth_word(i, j) for i in range(num_entities) for j in range(words_per)]
    vocab = Vocabulary(names, [docs_per * doc_len] * len(names), [docs_per] * len(names))
    return Corpus(entities, docs, assoc, total), vocab


def separable_topics(num_entities=8, multi=4):
    """One single-relevant topic per entity plus topics relevant to entity
    pairs, with queries drawn from the owning vocabularies."""
    topics = {}
    grades = {}
    for i in range(num_entities):
        topics[f"s{i}"] = " ".join(synth_word(i, k) for k in range(3))
        grades[(f"s{i}", f"e{i}")] = 1
    for k in range(multi):
        a, b = 2 * k, 2 * k + 1
        topics[f"m{k}"] = " ".join([synth_word(a, 0), synth_word(a, 1),
                                    synth_word(b, 0), synth_word(b, 1)])
        grades[(f"m{k}", f"e{a}")] = 1
        grades[(f"m{k}", f"e{b}")] = 1
    return topics, grades


def build_fusion_benchmark():
    """Benchmark where half the topics are decidable only from term overlap
    and half only from the vector space.

    Lexical cue words appear only in their entity's documents but have a
    zero projection; semantic cue words never occur in any document (so the
    profile models are blind to them) but project onto their entity's
    direction in a hand-built model.
    """
    num_entities = 16
    lex = [f"lex{chr(97 + i)}" for i in range(10)]
    sem = [f"sem{chr(97 + i)}" for i in range(10)]
    fill = ["filla", "fillb", "fillc", "filld"]
    names = sem + lex + fill
    vocab = Vocabulary(names, [1] * len(names), [1] * len(names))
    fill_ids = [vocab.token_to_id[w] for w in fill]

    entities = [f"p{i:02d}" for i in range(num_entities)]
    docs = []
    assoc = {}
    total = 0
    for i in range(num_entities):
        toks = list(fill_ids)
        if i < 10:
            toks = [vocab.token_to_id[lex[i]]] * 3 + toks
        assoc[i] = [len(docs)]
        docs.append(Document(f"d{i}", entities[i], np.asarray(toks, dtype=np.int32)))
        total += len(toks)
    corpus = Corpus(entities, docs, assoc, total)

    e_v = len(names)
    e_e = 32
    W_v = np.eye(e_v)
    W = np.zeros((e_e, e_v))
    for i, w in enumerate(sem):
        W[i, vocab.token_to_id[w]] = 5.0
    W_e = np.zeros((num_entities, e_e))
    for i in range(num_entities):
        W_e[i, i] = 1.0
    params = ModelParams(W_v, W, np.zeros(e_e), W_e)

    topics = {}
    grades = {}
    for i in range(10):
        topics[f"l{i}"] = lex[i]
        grades[(f"l{i}", entities[i])] = 1
        topics[f"s{i}"] = sem[i]
        grades[(f"s{i}", entities[i])] = 1
    return corpus, vocab, params, topics, grades


@pytest.fixture
def tiny_raw_docs():
    return [
        ("d1", "cam", "the digital camera takes sharp photos"),
        ("d2", "cam", "camera with a zoom lens for photos"),
        ("d3", "gui", "an acoustic guitar with steel strings"),
        ("d4", "gui", "the guitar sounds warm and clear"),
    ]


@pytest.fixture
def separable_setup():
    corpus, vocab = build_separable_corpus()
    topics, grades = separable_topics()
    return corpus, vocab, topics, grades
