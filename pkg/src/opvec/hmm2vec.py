"""Embedding vectors read off a trained HMM's observation matrix.

The two (or N) rows of B are concatenated into one fixed-length feature
vector. Hidden-state numbering is arbitrary between trainings, so rows are
first put in canonical order: descending probability of an anchor symbol
(by default the globally most frequent token). Models that differ only by
a relabeling of states therefore produce identical embeddings.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BadArgument, BadModel, UndefinedSimilarity


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length real feature vector plus its provenance tag."""

    values: np.ndarray
    source: str
    label: str = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise BadArgument("embedding must be one-dimensional")
        if not np.isfinite(values).all():
            raise BadArgument("embedding contains non-finite entries")

    def __len__(self):
        return len(self.values)


def canonical_state_order(model, anchor_symbol=0):
    """State indices sorted by descending B[state, anchor]; stable, so equal
    anchor probabilities keep their original order."""
    if not (0 <= anchor_symbol < model.n_symbols):
        raise BadArgument(f"anchor symbol {anchor_symbol} out of range")
    anchor_probs = model.B[:, anchor_symbol]
    return np.argsort(-anchor_probs, kind="stable")


def extract(model, anchor_symbol=0, label=None):
    """Concatenate the canonically ordered rows of B into a length N*M vector.

    With N=2 and M=20 this is the 40-dimensional feature used for opcode
    classification: the row giving the anchor opcode its highest probability
    comes first.
    """
    if not np.isfinite(model.B).all():
        raise BadModel("model B matrix contains non-finite values")
    order = canonical_state_order(model, anchor_symbol)
    return EmbeddingVector(
        values=model.B[order].reshape(-1), source="hmm2vec", label=label
    )


def letter2vec(model, symbol):
    """Per-symbol vector: column `symbol` of B (a row of B transposed).

    Length equals the state count; for the two-state letter model this is
    the pair of per-state emission probabilities for one letter.
    """
    if not (0 <= symbol < model.n_symbols):
        raise BadArgument(f"symbol {symbol} out of range")
    return model.B[:, symbol].copy()


def cosine_similarity(x, y):
    """Cosine of the angle between two vectors; undefined for zero vectors."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise BadArgument("vectors must have equal length")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise UndefinedSimilarity("cosine similarity of a zero vector")
    return float(np.dot(x, y) / (nx * ny))
