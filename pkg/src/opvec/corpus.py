"""Token-stream ingestion, vocabularies, integer encoding, synthetic corpora.

Two kinds of raw input are supported: opcode traces (one mnemonic per line,
operands ignored) and letter streams (a-z plus word-space, 27 symbols).
Sequences are encoded against a frequency-ranked vocabulary; out-of-vocabulary
tokens are deleted rather than bucketed.
"""

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import BadArgument, BadSpec, EmptySequence, VocabularyTooSmall

WORD_SPACE = " "

_NON_LETTER = re.compile(r"[^a-z\s]+")
_WHITESPACE_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class TokenSequence:
    """An ordered token stream, optionally tagged with a family label."""

    tokens: tuple
    label: str = None

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class Vocabulary:
    """Distinct symbols ranked by descending corpus frequency.

    Index 0 is the globally most frequent token; frequency ties are broken
    lexicographically so the ranking is deterministic.
    """

    symbols: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise VocabularyTooSmall(
                f"need at least 2 distinct symbols, got {len(self.symbols)}"
            )
        if len(set(self.symbols)) != len(self.symbols):
            raise BadArgument("duplicate symbols in vocabulary")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self):
        return len(self.symbols)

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, token):
        return token in self._index

    def index(self, token):
        return self._index[token]

    def to_json(self):
        return {"symbols": list(self.symbols)}

    @classmethod
    def from_json(cls, obj):
        return cls(symbols=tuple(obj["symbols"]))


@dataclass(frozen=True)
class ObservationSequence:
    """Integer codes over a vocabulary, plus the pre-filtering length."""

    codes: np.ndarray
    vocab: Vocabulary
    original_length: int
    label: str = None

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        object.__setattr__(self, "codes", codes)
        if codes.size < 1:
            raise EmptySequence("observation sequence is empty")
        if codes.min() < 0 or codes.max() >= self.vocab.size:
            raise BadArgument("code outside [0, M)")

    def __len__(self):
        return len(self.codes)

    def decode(self):
        """Map codes back to their vocabulary tokens."""
        return tuple(self.vocab.symbols[c] for c in self.codes)


def tokenize(raw_text, mode="opcode", label=None):
    """Turn raw text into a TokenSequence.

    opcode mode: one token per non-blank line, the first whitespace-delimited
    field lowercased, everything after it dropped.

    letter mode: lowercase, strip everything but a-z and whitespace (digits,
    punctuation and accented characters are removed, not transliterated),
    collapse whitespace runs to a single word-space token. The alphabet is
    exactly a-z plus word-space, 27 possible symbols.
    """
    if not raw_text:
        raise EmptySequence("empty input text")
    if mode == "opcode":
        tokens = []
        for line in raw_text.splitlines():
            line = line.strip()
            if not line:
                continue
            tokens.append(line.split()[0].lower())
    elif mode == "letter":
        text = raw_text.lower()
        text = _NON_LETTER.sub("", text)
        text = _WHITESPACE_RUN.sub(WORD_SPACE, text).strip()
        tokens = list(text)
    else:
        raise BadArgument(f"unknown tokenize mode {mode!r}")
    if not tokens:
        raise EmptySequence(f"no tokens survive {mode} filtering")
    return TokenSequence(tokens=tuple(tokens), label=label)


def build_vocabulary(corpus, max_size):
    """Rank tokens by total count across the corpus and keep the top max_size.

    Ties in count are broken lexicographically. Raises VocabularyTooSmall if
    the corpus has fewer than 2 distinct tokens.
    """
    if not corpus:
        raise BadArgument("corpus is empty")
    if max_size < 2:
        raise BadArgument("max_size must be at least 2")
    counts = {}
    for seq in corpus:
        for tok in seq.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    if len(counts) < 2:
        raise VocabularyTooSmall(
            f"corpus has {len(counts)} distinct token(s), need at least 2"
        )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(symbols=tuple(tok for tok, _ in ranked[:max_size]))


def encode(seq, vocab):
    """Map a TokenSequence onto vocabulary indices.

    Out-of-vocabulary tokens are deleted (no UNK bucket); the original length
    before deletion is recorded. Raises EmptySequence when nothing survives.
    """
    codes = [vocab.index(t) for t in seq.tokens if t in vocab]
    if not codes:
        raise EmptySequence("all tokens out of vocabulary")
    return ObservationSequence(
        codes=np.array(codes, dtype=np.int64),
        vocab=vocab,
        original_length=len(seq.tokens),
        label=seq.label,
    )


# ---------------------------------------------------------------------------
# Synthetic labeled families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticFamilySpec:
    """A first-order Markov chain that stands in for one sample family.

    transition is row-stochastic over `symbols`; each generated sample runs
    the chain for a length drawn uniformly from length_range (inclusive).
    """

    name: str
    transition: np.ndarray
    initial: np.ndarray
    n_samples: int
    length_range: tuple
    symbols: tuple = None

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=np.float64)
        initial = np.asarray(self.initial, dtype=np.float64)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "initial", initial)
        m = transition.shape[0]
        if transition.ndim != 2 or transition.shape != (m, m):
            raise BadSpec(f"{self.name}: transition must be square")
        if initial.shape != (m,):
            raise BadSpec(f"{self.name}: initial length must match transition")
        if (transition < 0).any() or (initial < 0).any():
            raise BadSpec(f"{self.name}: negative probabilities")
        if np.abs(transition.sum(axis=1) - 1.0).max() > 1e-9:
            raise BadSpec(f"{self.name}: transition rows must sum to 1")
        if abs(initial.sum() - 1.0) > 1e-9:
            raise BadSpec(f"{self.name}: initial distribution must sum to 1")
        if self.n_samples < 1:
            raise BadSpec(f"{self.name}: n_samples must be positive")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise BadSpec(f"{self.name}: bad length range {self.length_range}")
        if self.symbols is None:
            object.__setattr__(
                self, "symbols", tuple(f"op{i:02d}" for i in range(m))
            )
        elif len(self.symbols) != m:
            raise BadSpec(f"{self.name}: symbols length must match transition")

    def to_json(self):
        return {
            "name": self.name,
            "transition": self.transition.tolist(),
            "initial": self.initial.tolist(),
            "n_samples": self.n_samples,
            "length_range": list(self.length_range),
            "symbols": list(self.symbols),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            name=obj["name"],
            transition=np.array(obj["transition"], dtype=np.float64),
            initial=np.array(obj["initial"], dtype=np.float64),
            n_samples=int(obj["n_samples"]),
            length_range=tuple(obj["length_range"]),
            symbols=tuple(obj["symbols"]) if obj.get("symbols") else None,
        )


@njit(cache=True)
def _run_chain(initial_cdf, transition_cdf, uniforms):
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    state = np.searchsorted(initial_cdf, uniforms[0])
    out[0] = state
    for t in range(1, uniforms.shape[0]):
        state = np.searchsorted(transition_cdf[state], uniforms[t])
        out[t] = state
    return out


def sample_markov_chain(spec, length, rng):
    """Run one chain realization of the given length; returns symbol codes."""
    initial_cdf = np.cumsum(spec.initial)
    transition_cdf = np.cumsum(spec.transition, axis=1)
    # guard against cumsum rounding locking out the last symbol
    initial_cdf[-1] = 1.0
    transition_cdf[:, -1] = 1.0
    return _run_chain(initial_cdf, transition_cdf, rng.random(length))


def generate_synthetic_families(specs, seed=0):
    """Draw labeled TokenSequences from each family's Markov chain.

    Deterministic given `seed`: every sample gets its own RNG stream derived
    from (seed, family index, sample index), so regeneration is bit-identical
    regardless of ordering.
    """
    sequences = []
    for fam_idx, spec in enumerate(specs):
        lo, hi = spec.length_range
        for samp_idx in range(spec.n_samples):
            rng = np.random.default_rng(
                np.random.SeedSequence([int(seed), fam_idx, samp_idx])
            )
            length = int(rng.integers(lo, hi + 1))
            codes = sample_markov_chain(spec, length, rng)
            tokens = tuple(spec.symbols[c] for c in codes)
            sequences.append(TokenSequence(tokens=tokens, label=spec.name))
    return sequences


# ---------------------------------------------------------------------------
# Labeled datasets and stratified splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledDataset:
    """Feature vectors paired with family labels.

    `classes` fixes the label order for confusion matrices and per-family
    score vectors; it defaults to first-appearance order.
    """

    vectors: np.ndarray
    labels: tuple
    classes: tuple = None

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vectors)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.labels):
            raise BadArgument("vectors/labels shape mismatch")
        if self.classes is None:
            seen = []
            for lab in self.labels:
                if lab not in seen:
                    seen.append(lab)
            object.__setattr__(self, "classes", tuple(seen))
        unknown = set(self.labels) - set(self.classes)
        if unknown:
            raise BadArgument(f"labels outside class set: {sorted(unknown)}")

    def __len__(self):
        return len(self.labels)

    @property
    def y(self):
        """Labels as integer class indices."""
        lookup = {c: i for i, c in enumerate(self.classes)}
        return np.array([lookup[lab] for lab in self.labels], dtype=np.int64)

    def subset(self, idx):
        return LabeledDataset(
            vectors=self.vectors[idx],
            labels=tuple(self.labels[i] for i in idx),
            classes=self.classes,
        )


def stratified_split_indices(labels, train_fraction, seed):
    """Split indices per class, preserving proportions within one sample.

    Returns (train_idx, test_idx) as sorted integer arrays. Per-class train
    counts are round(n_c * fraction), clamped so neither side is empty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise BadArgument(f"train_fraction must be in (0, 1), got {train_fraction}")
    labels = list(labels)
    by_class = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    for lab, idx in by_class.items():
        if len(idx) < 2:
            raise BadArgument(f"class {lab!r} has fewer than 2 samples")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for lab in sorted(by_class):
        idx = np.array(by_class[lab])
        n_train = int(round(len(idx) * train_fraction))
        n_train = min(max(n_train, 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        train.extend(idx[perm[:n_train]])
        test.extend(idx[perm[n_train:]])
    return np.array(sorted(train)), np.array(sorted(test))


def split_stratified(dataset, train_fraction, seed):
    """Stratified train/test split of a LabeledDataset."""
    train_idx, test_idx = stratified_split_indices(
        dataset.labels, train_fraction, seed
    )
    return dataset.subset(train_idx), dataset.subset(test_idx)


# ---------------------------------------------------------------------------
# Manifest-driven ingestion
# ---------------------------------------------------------------------------

def load_manifest(path):
    """Read a dataset manifest: JSON mapping family name -> list of sample
    paths (relative paths resolve against the manifest's directory)."""
    with open(path) as fh:
        obj = json.load(fh)
    families = obj["families"] if "families" in obj else obj
    if not isinstance(families, dict) or not families:
        raise BadArgument(f"manifest {path} lists no families")
    base = os.path.dirname(os.path.abspath(path))
    resolved = {}
    for family, paths in families.items():
        resolved[family] = [
            p if os.path.isabs(p) else os.path.join(base, p) for p in paths
        ]
    return resolved


def ingest_manifest(manifest_path, mode="opcode"):
    """Tokenize every sample listed in a manifest.

    Returns (sequences, families, errors): sequences in manifest order,
    family names in manifest order, and a list of (path, message) for files
    that were missing or unreadable.
    """
    families = load_manifest(manifest_path)
    sequences, errors = [], []
    for family, paths in families.items():
        for p in paths:
            try:
                with open(p) as fh:
                    raw = fh.read()
                sequences.append(tokenize(raw, mode=mode, label=family))
            except OSError as exc:
                errors.append((p, str(exc)))
            except EmptySequence as exc:
                errors.append((p, str(exc)))
    return sequences, tuple(families), errors
