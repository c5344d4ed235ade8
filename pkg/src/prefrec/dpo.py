"""DPO objective: loss, analytic gradients, implicit reward margin, and a toy policy.

The toy policy is a per-position categorical distribution over a small
vocabulary. It is small enough to enumerate exhaustively, which makes it a
convenient end-to-end check of a preference-training step.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, NumericalError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class LogProbQuad:
    policy_chosen: float
    policy_rejected: float
    ref_chosen: float
    ref_rejected: float

    def __post_init__(self):
        for name in ("policy_chosen", "policy_rejected", "ref_chosen", "ref_rejected"):
            if not math.isfinite(getattr(self, name)):
                raise NumericalError(f"{name} is not finite")


def _check_beta(beta: float):
    if not math.isfinite(beta):
        raise NumericalError("beta is not finite")
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")


def softplus(x: float) -> float:
    """ln(1 + e^x) without overflow."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def implicit_reward_margin(q: LogProbQuad, beta: float) -> float:
    _check_beta(beta)
    return beta * ((q.policy_chosen - q.ref_chosen) - (q.policy_rejected - q.ref_rejected))


def dpo_loss(q: LogProbQuad, beta: float) -> float:
    """-ln sigmoid(z) with z the implicit reward margin, as softplus(-z)."""
    z = implicit_reward_margin(q, beta)
    loss = softplus(-z)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite DPO loss for margin {z!r}")
    return loss


def dpo_grad(q: LogProbQuad, beta: float) -> tuple[float, float]:
    """Gradient of ``dpo_loss`` w.r.t. (policy_chosen, policy_rejected).

    The reference log-probabilities are frozen and receive no gradient.
    """
    z = implicit_reward_margin(q, beta)
    s = sigmoid(-z)
    return -beta * s, beta * s


class ToyPolicy:
    """Fixed-length sequences with an independent categorical per position."""

    MAX_VOCAB = 64
    MAX_LEN = 16

    def __init__(self, vocab, logits):
        self.vocab = tuple(vocab)
        self.logits = np.array(logits, dtype=np.float64)
        if len(set(self.vocab)) != len(self.vocab):
            raise DomainError("vocabulary symbols must be unique")
        if not 1 <= len(self.vocab) <= self.MAX_VOCAB:
            raise DomainError(f"vocabulary size must be in 1..{self.MAX_VOCAB}")
        if self.logits.ndim != 2 or self.logits.shape[1] != len(self.vocab):
            raise DomainError("logits must have shape (length, vocab size)")
        if not 1 <= self.logits.shape[0] <= self.MAX_LEN:
            raise DomainError(f"sequence length must be in 1..{self.MAX_LEN}")
        if not np.all(np.isfinite(self.logits)):
            raise NumericalError("logits must be finite")
        self._index = {s: i for i, s in enumerate(self.vocab)}

    @classmethod
    def uniform(cls, vocab, length: int) -> "ToyPolicy":
        return cls(vocab, np.zeros((length, len(tuple(vocab)))))

    @property
    def length(self) -> int:
        return self.logits.shape[0]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.vocab, self.logits.copy())

    def log_softmax(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits, axis=1, keepdims=True)

    def token_ids(self, tokens) -> list[int]:
        tokens = list(tokens)
        if len(tokens) != self.length:
            raise DomainError(f"sequence length {len(tokens)} != policy length {self.length}")
        try:
            return [self._index[t] for t in tokens]
        except KeyError as exc:
            raise DomainError(f"symbol {exc.args[0]!r} is not in the vocabulary") from None

    def __deepcopy__(self, memo):
        return self.copy()


def sequence_logprob(policy: ToyPolicy, tokens) -> float:
    ids = policy.token_ids(tokens)
    lp = policy.log_softmax()
    return math.fsum(lp[pos, tok] for pos, tok in enumerate(ids))


def _logprob_grad(policy: ToyPolicy, ids, probs) -> np.ndarray:
    g = -probs.copy()
    g[np.arange(policy.length), ids] += 1.0
    return g


def batch_loss(policy: ToyPolicy, reference: ToyPolicy, pairs, beta: float) -> float:
    """Mean DPO loss over ``(chosen, rejected)`` token-sequence pairs."""
    pairs = list(pairs)
    if not pairs:
        raise DomainError("no preference pairs given")
    losses = [dpo_loss(pair_quad(policy, reference, c, r), beta) for c, r in pairs]
    return math.fsum(losses) / len(losses)


def pair_quad(policy: ToyPolicy, reference: ToyPolicy, chosen, rejected) -> LogProbQuad:
    return LogProbQuad(
        sequence_logprob(policy, chosen),
        sequence_logprob(policy, rejected),
        sequence_logprob(reference, chosen),
        sequence_logprob(reference, rejected),
    )


def batch_loss_grad(policy: ToyPolicy, reference: ToyPolicy, pairs, beta: float):
    """Mean loss and its gradient w.r.t. the policy logits."""
    pairs = list(pairs)
    if not pairs:
        raise DomainError("no preference pairs given")
    probs = np.exp(policy.log_softmax())
    grad = np.zeros_like(policy.logits)
    losses = []
    for chosen, rejected in pairs:
        q = pair_quad(policy, reference, chosen, rejected)
        losses.append(dpo_loss(q, beta))
        d_chosen, d_rejected = dpo_grad(q, beta)
        grad += d_chosen * _logprob_grad(policy, policy.token_ids(chosen), probs)
        grad += d_rejected * _logprob_grad(policy, policy.token_ids(rejected), probs)
    n = len(pairs)
    return math.fsum(losses) / n, grad / n


def toy_dpo_step(policy: ToyPolicy, reference: ToyPolicy, pairs, beta: float, lr: float):
    """One full-batch gradient step; returns ``(new_policy, loss_before_step)``.

    Neither argument is modified.
    """
    if lr < 0:
        raise DomainError("lr must be >= 0")
    pairs = list(pairs)
    for c, r in pairs:
        if list(c) == list(r):
            raise DomainError("chosen and rejected sequences must differ")
    loss, grad = batch_loss_grad(policy, reference, pairs, beta)
    return ToyPolicy(policy.vocab, policy.logits - lr * grad), loss


@dataclass(frozen=True)
class CurvePoint:
    step: int
    loss: float
    margin: float


def toy_dpo_train(policy: ToyPolicy, pairs, beta: float, lr: float, steps: int):
    """Run ``steps`` full-batch steps against a frozen copy of ``policy``.

    Returns ``(trained_policy, reference, curve)``; the curve has one point per
    evaluated policy, including the initial and final ones. ``margin`` is the
    mean implicit reward margin over the pairs.
    """
    pairs = list(pairs)
    if not pairs:
        raise DomainError("no preference pairs given")
    reference = copy.deepcopy(policy)

    def margin(p):
        zs = [implicit_reward_margin(pair_quad(p, reference, c, r), beta) for c, r in pairs]
        return math.fsum(zs) / len(zs)

    curve = []
    current = policy.copy()
    for step in range(steps):
        m = margin(current)
        current, loss = toy_dpo_step(current, reference, pairs, beta, lr)
        curve.append(CurvePoint(step, loss, m))
    curve.append(CurvePoint(steps, batch_loss(current, reference, pairs, beta), margin(current)))
    return current, reference, curve


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "margin"])
        for p in curve:
            w.writerow([p.step, repr(p.loss), repr(p.margin)])


def central_difference(fn, x: float, eps: float = 1e-6) -> float:
    return (fn(x + eps) - fn(x - eps)) / (2.0 * eps)
