"""Hidden Markov model core: scoring, decoding, Baum-Welch training.

A model is the triple (pi, A, B) with N hidden states and M observation
symbols; every row is a discrete distribution. Training is EM hill-climbing
on log P(O|lambda) with per-step scaling of the forward/backward variables,
so sequences of any length score without underflow. The hot loops are
numba-compiled: a 100-iteration fit on a 50k-symbol sequence takes well
under a second.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import BadArgument, BadModel, TrainingDiverged, Undecodable
from .util import atomic_write_text

PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _forward_scaled(pi, A, B, obs):
    """Scaled forward pass. Returns (alpha_hat, scale, logp).

    alpha_hat rows each sum to 1; scale[t] is the normalizer 1/sum(alpha_t);
    logp is log P(O|lambda), or -inf if some step has zero total mass.
    """
    T = obs.shape[0]
    N = pi.shape[0]
    alpha = np.empty((T, N))
    scale = np.empty(T)
    logp = 0.0
    s = 0.0
    for i in range(N):
        alpha[0, i] = pi[i] * B[i, obs[0]]
        s += alpha[0, i]
    if s <= 0.0:
        return alpha, scale, -np.inf
    scale[0] = 1.0 / s
    for i in range(N):
        alpha[0, i] *= scale[0]
    logp += np.log(s)
    for t in range(1, T):
        s = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[t - 1, i] * A[i, j]
            acc *= B[j, obs[t]]
            alpha[t, j] = acc
            s += acc
        if s <= 0.0:
            return alpha, scale, -np.inf
        scale[t] = 1.0 / s
        for j in range(N):
            alpha[t, j] *= scale[t]
        logp += np.log(s)
    return alpha, scale, logp


@njit(cache=True)
def _backward_scaled(A, B, obs, scale):
    """Backward pass using the forward pass's scale factors."""
    T = obs.shape[0]
    N = A.shape[0]
    beta = np.empty((T, N))
    for i in range(N):
        beta[T - 1, i] = scale[T - 1]
    for t in range(T - 2, -1, -1):
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += A[i, j] * B[j, obs[t + 1]] * beta[t + 1, j]
            beta[t, i] = acc * scale[t]
    return beta


@njit(cache=True)
def _score_kernel(pi, A, B, obs):
    """log P(O|lambda) with O(N) memory; -inf when mass vanishes."""
    T = obs.shape[0]
    N = pi.shape[0]
    cur = np.empty(N)
    nxt = np.empty(N)
    s = 0.0
    for i in range(N):
        cur[i] = pi[i] * B[i, obs[0]]
        s += cur[i]
    if s <= 0.0:
        return -np.inf
    logp = np.log(s)
    for i in range(N):
        cur[i] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += cur[i] * A[i, j]
            acc *= B[j, obs[t]]
            nxt[j] = acc
            s += acc
        if s <= 0.0:
            return -np.inf
        logp += np.log(s)
        for j in range(N):
            cur[j] = nxt[j] / s
    return logp


@njit(cache=True)
def _reestimate(A, B, obs, alpha, beta, scale, pi_out, A_out, B_out):
    """One Baum-Welch update from scaled alpha/beta into the *_out arrays.

    With these scalings, digamma_t(i,j) = alpha[t,i]*A[i,j]*B[j,o_{t+1}]
    *beta[t+1,j] needs no further normalization, and gamma_{T-1} equals
    alpha[T-1].
    """
    T = obs.shape[0]
    N = A.shape[0]
    M = B.shape[1]
    den_a = np.zeros(N)
    den_b = np.zeros(N)
    num_a = np.zeros((N, N))
    num_b = np.zeros((N, M))
    for t in range(T - 1):
        o_next = obs[t + 1]
        for i in range(N):
            gamma_i = 0.0
            for j in range(N):
                dg = alpha[t, i] * A[i, j] * B[j, o_next] * beta[t + 1, j]
                num_a[i, j] += dg
                gamma_i += dg
            den_a[i] += gamma_i
            den_b[i] += gamma_i
            num_b[i, obs[t]] += gamma_i
            if t == 0:
                pi_out[i] = gamma_i
    for i in range(N):
        gamma_i = alpha[T - 1, i]
        den_b[i] += gamma_i
        num_b[i, obs[T - 1]] += gamma_i
    for i in range(N):
        if den_a[i] > 0.0:
            for j in range(N):
                A_out[i, j] = num_a[i, j] / den_a[i]
        else:
            for j in range(N):
                A_out[i, j] = A[i, j]
        if den_b[i] > 0.0:
            for k in range(M):
                B_out[i, k] = num_b[i, k] / den_b[i]
        else:
            for k in range(M):
                B_out[i, k] = B[i, k]


@njit(cache=True)
def _floor_rows(mat, floor):
    rows, cols = mat.shape
    for r in range(rows):
        s = 0.0
        for c in range(cols):
            if mat[r, c] < floor:
                mat[r, c] = floor
            s += mat[r, c]
        for c in range(cols):
            mat[r, c] /= s


@njit(cache=True)
def _baum_welch_kernel(pi0, A0, B0, obs, max_iters, min_improvement, floor):
    """Full training loop. Returns (pi, A, B, trace, ok).

    trace[k] is log P(O|lambda) after k re-estimation updates; ok is False
    when the likelihood became non-finite despite scaling.
    """
    pi = pi0.copy()
    A = A0.copy()
    B = B0.copy()
    trace = np.empty(max_iters + 1)
    alpha, scale, logp = _forward_scaled(pi, A, B, obs)
    if not np.isfinite(logp):
        return pi, A, B, trace[:1], False
    trace[0] = logp
    n_updates = 0
    pi_new = np.empty_like(pi)
    A_new = np.empty_like(A)
    B_new = np.empty_like(B)
    for it in range(1, max_iters + 1):
        beta = _backward_scaled(A, B, obs, scale)
        _reestimate(A, B, obs, alpha, beta, scale, pi_new, A_new, B_new)
        pi, pi_new = pi_new, pi
        A, A_new = A_new, A
        B, B_new = B_new, B
        _floor_rows(A, floor)
        _floor_rows(B, floor)
        s = 0.0
        for i in range(pi.shape[0]):
            if pi[i] < floor:
                pi[i] = floor
            s += pi[i]
        for i in range(pi.shape[0]):
            pi[i] /= s
        alpha, scale, logp = _forward_scaled(pi, A, B, obs)
        if not np.isfinite(logp):
            return pi, A, B, trace[: n_updates + 1], False
        trace[it] = logp
        n_updates = it
        if logp - trace[it - 1] < min_improvement:
            break
    return pi, A, B, trace[: n_updates + 1], True


@njit(cache=True)
def _viterbi_kernel(pi, A, B, obs):
    """Most probable state path, log-space. Ties keep the lowest state."""
    T = obs.shape[0]
    N = pi.shape[0]
    neg_inf = -np.inf
    delta = np.empty(N)
    nxt = np.empty(N)
    back = np.empty((T, N), dtype=np.int64)
    for i in range(N):
        p = pi[i] * B[i, obs[0]]
        delta[i] = np.log(p) if p > 0.0 else neg_inf
    for t in range(1, T):
        for j in range(N):
            best = neg_inf
            arg = 0
            for i in range(N):
                v = delta[i] + (np.log(A[i, j]) if A[i, j] > 0.0 else neg_inf)
                if v > best:
                    best = v
                    arg = i
            b = B[j, obs[t]]
            nxt[j] = best + (np.log(b) if b > 0.0 else neg_inf)
            back[t, j] = arg
        for j in range(N):
            delta[j] = nxt[j]
    best = neg_inf
    arg = 0
    for i in range(N):
        if delta[i] > best:
            best = delta[i]
            arg = i
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = arg
    for t in range(T - 2, -1, -1):
        path[t] = back[t + 1, path[t + 1]]
    return path, best


# ---------------------------------------------------------------------------
# Model and training types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HmmModel:
    """lambda = (A, B, pi): row-stochastic parameters of an N-state HMM."""

    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        pi = np.ascontiguousarray(self.pi, dtype=np.float64)
        A = np.ascontiguousarray(self.A, dtype=np.float64)
        B = np.ascontiguousarray(self.B, dtype=np.float64)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        n = pi.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or B.ndim != 2:
            raise BadModel("inconsistent pi/A/B shapes")
        if not (np.isfinite(pi).all() and np.isfinite(A).all() and np.isfinite(B).all()):
            raise BadModel("non-finite model parameters")
        if (pi < 0).any() or (A < 0).any() or (B < 0).any():
            raise BadModel("negative probabilities")
        if (
            abs(pi.sum() - 1.0) > 1e-9
            or np.abs(A.sum(axis=1) - 1.0).max() > 1e-9
            or np.abs(B.sum(axis=1) - 1.0).max() > 1e-9
        ):
            raise BadModel("rows of pi/A/B must sum to 1 within 1e-9")

    @property
    def n_states(self):
        return self.pi.shape[0]

    @property
    def n_symbols(self):
        return self.B.shape[1]

    def to_json(self, vocab=None, metadata=None):
        obj = {
            "n_states": self.n_states,
            "n_symbols": self.n_symbols,
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
        }
        if vocab is not None:
            obj["vocabulary"] = list(vocab.symbols)
        if metadata:
            obj["metadata"] = metadata
        return obj

    @classmethod
    def from_json(cls, obj):
        return cls(
            pi=np.array(obj["pi"], dtype=np.float64),
            A=np.array(obj["A"], dtype=np.float64),
            B=np.array(obj["B"], dtype=np.float64),
        )


@dataclass(frozen=True)
class TrainingTrace:
    """Per-update log P(O|lambda); entry 0 scores the initial model."""

    log_likelihoods: np.ndarray
    restart_index: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "log_likelihoods",
            np.asarray(self.log_likelihoods, dtype=np.float64),
        )

    @property
    def iterations(self):
        return len(self.log_likelihoods) - 1

    @property
    def initial(self):
        return float(self.log_likelihoods[0])

    @property
    def final(self):
        return float(self.log_likelihoods[-1])


@dataclass(frozen=True)
class RestartSchedule:
    """Observation length -> number of random restarts.

    buckets are (upper_bound, restarts) in ascending bound order; the first
    bucket whose bound exceeds the length wins, and lengths at or above the
    last bound fall through to `tail`. The default maps <500 to 500 restarts,
    [500,5000) to 200, [5000,10000) to 100, [10000,30000] to 30, and longer
    sequences to 10.
    """

    buckets: tuple = ((500, 500), (5000, 200), (10000, 100), (30001, 30))
    tail: int = 10

    def __post_init__(self):
        bounds = [b for b, _ in self.buckets]
        if bounds != sorted(bounds) or len(set(bounds)) != len(bounds):
            raise BadArgument("schedule bounds must be strictly ascending")
        if any(count < 1 for _, count in self.buckets) or self.tail < 1:
            raise BadArgument("restart counts must be >= 1")

    def restarts(self, length):
        for bound, count in self.buckets:
            if length < bound:
                return count
        return self.tail


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def init_random(n_states, n_symbols, seed):
    """Random near-uniform row-stochastic model, deterministic in seed.

    Every entry is drawn uniformly within +/-20% of the uniform value for its
    row, then the row is renormalized; pi stays inside [0.4, 0.6] for N=2.
    """
    if n_states < 1:
        raise BadArgument("n_states must be >= 1")
    if n_symbols < 2:
        raise BadArgument("n_symbols must be >= 2")
    rng = np.random.default_rng(seed)

    def row(width):
        base = 1.0 / width
        r = rng.uniform(0.8 * base, 1.2 * base, size=width)
        return r / r.sum()

    pi = row(n_states)
    A = np.vstack([row(n_states) for _ in range(n_states)])
    B = np.vstack([row(n_symbols) for _ in range(n_states)])
    return HmmModel(pi=pi, A=A, B=B)


def _check_obs(model, obs):
    codes = np.ascontiguousarray(
        obs.codes if hasattr(obs, "codes") else obs, dtype=np.int64
    )
    if codes.size == 0:
        raise BadArgument("empty observation sequence")
    if codes.min() < 0 or codes.max() >= model.n_symbols:
        raise BadArgument("observation code outside [0, M)")
    return codes


def score(model, obs):
    """log P(O|lambda) by the scaled forward algorithm.

    Returns -inf when the model assigns the sequence zero probability
    (possible only with hard zeros in the parameters).
    """
    codes = _check_obs(model, obs)
    return float(_score_kernel(model.pi, model.A, model.B, codes))


def decode(model, obs, mode="dp"):
    """Recover a hidden-state sequence.

    mode="dp" gives the single most probable path (Viterbi); mode="posterior"
    picks, at every position independently, the state with the largest
    posterior probability. The two can disagree.
    """
    codes = _check_obs(model, obs)
    if mode == "dp":
        path, logp = _viterbi_kernel(model.pi, model.A, model.B, codes)
        if not np.isfinite(logp):
            raise Undecodable("zero-probability observation sequence")
        return path
    if mode == "posterior":
        alpha, scale, logp = _forward_scaled(model.pi, model.A, model.B, codes)
        if not np.isfinite(logp):
            raise Undecodable("zero-probability observation sequence")
        beta = _backward_scaled(model.A, model.B, codes, scale)
        gamma = alpha * beta  # proportional to the true posteriors per row
        return np.argmax(gamma, axis=1)
    raise BadArgument(f"unknown decode mode {mode!r}")


def viterbi_log_probability(model, obs):
    """log of the single best path probability (max over state sequences)."""
    codes = _check_obs(model, obs)
    _, logp = _viterbi_kernel(model.pi, model.A, model.B, codes)
    return float(logp)


def baum_welch(model, obs, max_iters=100, min_improvement=1e-3):
    """Re-estimate (pi, A, B) on one observation sequence.

    Stops after max_iters updates or when an update improves the
    log-likelihood by less than min_improvement. Entries that collapse below
    1e-12 are floored and the row renormalized, so trained models never
    assign exact zero to held-out symbols.
    """
    codes = _check_obs(model, obs)
    if codes.size < 2:
        raise BadArgument("need at least 2 observations to train")
    if max_iters < 1:
        raise BadArgument("max_iters must be >= 1")
    pi, A, B, trace, ok = _baum_welch_kernel(
        model.pi, model.A, model.B, codes,
        max_iters, min_improvement, PROB_FLOOR,
    )
    if not ok:
        raise TrainingDiverged("likelihood became non-finite during training")
    return HmmModel(pi=pi, A=A, B=B), TrainingTrace(log_likelihoods=trace)


def train_with_restarts(obs, n_states, schedule=None, seed=0,
                        max_iters=100, min_improvement=1e-3, n_restarts=None):
    """Baum-Welch from several random initializations; keep the best.

    The restart count comes from the schedule (by observation length) unless
    n_restarts overrides it. Restart r uses the RNG stream (seed, r), so the
    winner is reproducible; final-score ties keep the lowest restart index.
    """
    codes = _check_obs_for_training(obs, n_states)
    if schedule is None:
        schedule = RestartSchedule()
    count = n_restarts if n_restarts is not None else schedule.restarts(len(codes))
    if count < 1:
        raise BadArgument("restart count must be >= 1")
    n_symbols = _symbol_count(obs, codes)
    best = None
    best_trace = None
    failures = 0
    for r in range(count):
        init = init_random(
            n_states, n_symbols,
            np.random.SeedSequence([int(seed), r]),
        )
        try:
            fitted, trace = baum_welch(
                init, codes, max_iters=max_iters, min_improvement=min_improvement
            )
        except TrainingDiverged:
            failures += 1
            continue
        if best is None or trace.final > best_trace.final:
            best = fitted
            best_trace = TrainingTrace(
                log_likelihoods=trace.log_likelihoods, restart_index=r
            )
    if best is None:
        raise TrainingDiverged(f"all {failures} restart(s) diverged")
    return best, best_trace


def _check_obs_for_training(obs, n_states):
    codes = np.ascontiguousarray(
        obs.codes if hasattr(obs, "codes") else obs, dtype=np.int64
    )
    if codes.size < 2:
        raise BadArgument("need at least 2 observations to train")
    if n_states < 1:
        raise BadArgument("n_states must be >= 1")
    return codes


def _symbol_count(obs, codes):
    if hasattr(obs, "vocab"):
        return obs.vocab.size
    return int(codes.max()) + 1


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(model, path, vocab=None, metadata=None):
    """Write a model as JSON; float round-tripping is exact, so reloaded
    models reproduce scores bit-for-bit."""
    atomic_write_text(path, json.dumps(model.to_json(vocab, metadata), indent=1))


def load_model(path):
    with open(path) as fh:
        return HmmModel.from_json(json.load(fh))
