"""Exception types shared across the package."""


class OpvecError(Exception):
    """Base class for all errors raised by this package."""


class EmptySequence(OpvecError):
    """Tokenization or encoding left nothing to work with."""


class VocabularyTooSmall(OpvecError):
    """Fewer than two distinct tokens in the corpus."""


class BadSpec(OpvecError):
    """A synthetic family spec is invalid (e.g. non-stochastic rows)."""


class BadArgument(OpvecError):
    """An argument is outside its valid range."""


class BadModel(OpvecError):
    """A model is untrained or contains non-finite parameters."""


class BadCorpus(OpvecError):
    """A text corpus is unusable (too short, degenerate)."""


class BadLabel(OpvecError):
    """A label falls outside the declared class set."""


class Undecodable(OpvecError):
    """State decoding is impossible (zero-probability observation)."""


class UndefinedSimilarity(OpvecError):
    """Cosine similarity requested for a zero vector."""


class DegenerateInput(OpvecError):
    """Input matrix has no usable structure (e.g. all zeros)."""


class TrainingDiverged(OpvecError):
    """Iterative training produced non-finite values or failed to converge."""


class NotFitted(OpvecError):
    """Predict called before training."""
