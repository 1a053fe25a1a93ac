"""
Actor and Critic Networks

Fixed-architecture MLPs (two hidden tanh layers of 256 units) with exact
analytic gradients, a state-independent Gaussian action head and the
clipped-surrogate / value / entropy loss used by the trainer.

The actor's output passes through tanh so its mean lies in (-1, 1); the
critic's output is unbounded.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from faults import ModelShapeError, TrainingFault

HIDDEN_SIZES = (256, 256)
FULL_WIDTH = 8
RESTRICTED_WIDTH = 3

INITIAL_LOG_STD = math.log(0.3)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MlpParams:
    """Layer weights (in, out), biases and, for the actor, the log-std"""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    log_std: Optional[np.ndarray] = None
    output_tanh: bool = False
    hidden_activation: str = "tanh"

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays in declared order (shared by reference)"""
        out = []
        for weight, bias in zip(self.weights, self.biases):
            out.extend([weight, bias])
        if self.log_std is not None:
            out.append(self.log_std)
        return out

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        names = []
        for i in range(len(self.weights)):
            names.extend([f"weight{i}", f"bias{i}"])
        if self.log_std is not None:
            names.append("log_std")
        return list(zip(names, self.arrays()))

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            weights=[np.zeros_like(w) for w in self.weights],
            biases=[np.zeros_like(b) for b in self.biases],
            log_std=None if self.log_std is None else np.zeros_like(self.log_std),
            output_tanh=self.output_tanh,
            hidden_activation=self.hidden_activation,
        )

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            log_std=None if self.log_std is None else self.log_std.copy(),
            output_tanh=self.output_tanh,
            hidden_activation=self.hidden_activation,
        )


# Gradients share the parameter layout
Gradients = MlpParams


def orthogonal(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Scaled (semi-)orthogonal matrix"""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    input_width: int,
    rng: np.random.Generator,
    actor: bool,
    hidden_sizes: Sequence[int] = HIDDEN_SIZES,
) -> MlpParams:
    """Orthogonal init; the actor's last layer is scaled by 0.01"""
    sizes = [input_width, *hidden_sizes, 1]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        gain = (0.01 if actor else 1.0) if last else math.sqrt(2.0)
        weights.append(orthogonal(fan_in, fan_out, gain, rng))
        biases.append(np.zeros(fan_out))
    return MlpParams(
        weights=weights,
        biases=biases,
        log_std=np.array([INITIAL_LOG_STD]) if actor else None,
        output_tanh=actor,
    )


@dataclass
class ForwardCache:
    activations: List[np.ndarray]
    output: np.ndarray


def _as_batch(p: MlpParams, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.ndim != 2 or obs.shape[1] != p.input_width:
        raise ModelShapeError(f"observation shape {obs.shape} does not match input width {p.input_width}")
    return obs


def forward(p: MlpParams, obs) -> Tuple[np.ndarray, ForwardCache]:
    """(B,) network output and the activations needed for backprop"""
    x = _as_batch(p, obs)
    activations = [x]
    for weight, bias in zip(p.weights[:-1], p.biases[:-1]):
        x = x @ weight + bias
        if p.hidden_activation == "tanh":
            x = np.tanh(x)
        activations.append(x)
    out = (x @ p.weights[-1] + p.biases[-1])[:, 0]
    if p.output_tanh:
        out = np.tanh(out)
    return out, ForwardCache(activations=activations, output=out)


def actor_forward(p: MlpParams, obs) -> np.ndarray:
    """Deterministic action mean in (-1, 1)"""
    return forward(p, obs)[0]


def critic_forward(p: MlpParams, obs) -> np.ndarray:
    return forward(p, obs)[0]


def mlp_backward(p: MlpParams, cache: ForwardCache, grad_output: np.ndarray) -> Gradients:
    """Gradients of sum(grad_output * output) with respect to every layer"""
    grads = p.zeros_like()
    g = np.asarray(grad_output, dtype=float)[:, None]
    if p.output_tanh:
        g = g * (1.0 - cache.output[:, None] ** 2)

    for i in range(len(p.weights) - 1, -1, -1):
        inputs = cache.activations[i]
        grads.weights[i] = inputs.T @ g
        grads.biases[i] = g.sum(axis=0)
        if i == 0:
            break
        g = g @ p.weights[i].T
        if p.hidden_activation == "tanh":
            g = g * (1.0 - inputs**2)
    return grads


# --- Gaussian action head --------------------------------------------------


def gaussian_log_prob(action, mean, log_std):
    std = np.exp(log_std)
    z = (action - mean) / std
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def gaussian_entropy(log_std):
    return 0.5 + 0.5 * LOG_2PI + log_std


def sample_action(
    mean: np.ndarray,
    log_std,
    alpha: float,
    rng: np.random.Generator,
    mode: str = "train",
) -> Tuple[np.ndarray, np.ndarray]:
    """Action and its log-prob; train mode perturbs the mean by U(-alpha, alpha)"""
    mean = np.asarray(mean, dtype=float)
    log_std = np.asarray(log_std, dtype=float).reshape(-1)[0]
    if mode == "eval":
        return mean.copy(), gaussian_log_prob(mean, mean, log_std)
    if mode != "train":
        raise ValueError(f"unknown sampling mode: {mode}")
    perturbed = mean + rng.uniform(-alpha, alpha, size=mean.shape) if alpha > 0 else mean
    action = perturbed + math.exp(log_std) * rng.standard_normal(mean.shape)
    return action, gaussian_log_prob(action, perturbed, log_std)


# --- Loss and backward -----------------------------------------------------


@dataclass
class LossDefinition:
    clip_eps: float = 0.2
    value_weight: float = 0.5
    entropy_weight: float = 0.001


@dataclass
class Minibatch:
    """One minibatch of stored transitions plus the fresh mean perturbation"""

    actor_obs: np.ndarray
    critic_obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    perturbation: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.perturbation is None:
            self.perturbation = np.zeros_like(self.actions)


@dataclass
class LossTerms:
    total: float
    policy: float
    value: float
    entropy: float
    approx_kl: float
    clip_fraction: float


def _finite(value: float, term: str) -> float:
    if not np.isfinite(value):
        raise TrainingFault(term)
    return float(value)


def evaluate_loss(actor: MlpParams, critic: MlpParams, batch: Minibatch, loss: LossDefinition):
    """Loss terms plus the intermediates backward() needs"""
    mean, actor_cache = forward(actor, batch.actor_obs)
    value, critic_cache = forward(critic, batch.critic_obs)
    log_std = actor.log_std[0]

    perturbed = mean + batch.perturbation
    new_log_probs = gaussian_log_prob(batch.actions, perturbed, log_std)
    log_ratio = new_log_probs - batch.old_log_probs
    ratio = np.exp(log_ratio)
    adv = batch.advantages
    clipped = np.clip(ratio, 1.0 - loss.clip_eps, 1.0 + loss.clip_eps)

    policy_loss = _finite(-np.mean(np.minimum(ratio * adv, clipped * adv)), "policy")
    value_loss = _finite(np.mean((value - batch.returns) ** 2), "value")
    entropy = _finite(gaussian_entropy(log_std), "entropy")
    total = policy_loss + loss.value_weight * value_loss - loss.entropy_weight * entropy

    terms = LossTerms(
        total=_finite(total, "total"),
        policy=policy_loss,
        value=value_loss,
        entropy=entropy,
        approx_kl=float(np.mean((ratio - 1.0) - log_ratio)),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > loss.clip_eps)),
    )
    intermediates = (mean, actor_cache, value, critic_cache, perturbed, ratio)
    return terms, intermediates


def backward(
    actor: MlpParams,
    critic: MlpParams,
    batch: Minibatch,
    loss: LossDefinition,
) -> Tuple[LossTerms, Gradients, Gradients]:
    """Exact gradients of the combined loss for both networks, log_std included"""
    terms, (mean, actor_cache, value, critic_cache, perturbed, ratio) = evaluate_loss(actor, critic, batch, loss)
    n = batch.actions.shape[0]
    adv = batch.advantages
    eps = loss.clip_eps

    flat = ((ratio > 1.0 + eps) & (adv > 0)) | ((ratio < 1.0 - eps) & (adv < 0))
    d_log_prob = np.where(flat, 0.0, -ratio * adv) / n

    log_std = actor.log_std[0]
    std = math.exp(log_std)
    z = (batch.actions - perturbed) / std
    d_mean = d_log_prob * z / std
    d_log_std = np.sum(d_log_prob * (z * z - 1.0)) - loss.entropy_weight

    actor_grads = mlp_backward(actor, actor_cache, d_mean)
    actor_grads.log_std = np.array([d_log_std])

    d_value = loss.value_weight * 2.0 * (value - batch.returns) / n
    critic_grads = mlp_backward(critic, critic_cache, d_value)
    return terms, actor_grads, critic_grads
