"""Neural wizard: a small fully connected Q-network trained by episodic
Q-learning with shaped rewards, and the greedy positional policy it induces.

The network maps the 2k-feature vector to one Q-value per action
(2k -> 200 -> 100 -> 4, rectifier hidden layers, linear output). Training
uses epsilon-greedy exploration with linear decay, an experience replay
buffer, a frozen target network, and Adam. The TD loss is half the squared
TD error, so a single-transition gradient step on a degenerate linear net
reproduces the tabular update Q <- Q + lr * (target - Q).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .plant import Action, GridConfig, GridState, StepOutcome, VecTaxi, features
from .util import json_hash, seed_stream

log = logging.getLogger(__name__)

HIDDEN = (200, 100)
N_ACTIONS = 4


class QNet:
    """Fully connected net, float64 weights, rectifier hidden activations.
    A bias entry may be None, giving a pure linear map at that layer."""

    def __init__(
        self, weights: list[np.ndarray], biases: list[Optional[np.ndarray]]
    ):
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(
        cls,
        in_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = HIDDEN,
        out_dim: int = N_ACTIONS,
    ) -> "QNet":
        sizes = (in_dim, *hidden, out_dim)
        ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.standard_normal((a, b)) * math.sqrt(2.0 / a))
            bs.append(np.zeros(b))
        return cls(ws, bs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def copy(self) -> "QNet":
        return QNet(
            [w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
        )

    def forward(self, X: np.ndarray) -> np.ndarray:
        """(B, in) -> (B, 4) Q-values."""
        H = np.asarray(X, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            H = H @ W
            if b is not None:
                H += b
            if i < last:
                np.maximum(H, 0.0, out=H)
        return H

    def _forward_cache(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [np.asarray(X, dtype=np.float64)]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            H = acts[-1] @ W
            if b is not None:
                H += b
            if i < last:
                np.maximum(H, 0.0, out=H)
            acts.append(H)
        return acts[-1], acts

    def backward(
        self, acts: list[np.ndarray], dout: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Gradients of a scalar loss given d(loss)/d(output)."""
        dW = [np.empty(0)] * len(self.weights)
        db: list[Optional[np.ndarray]] = [None] * len(self.biases)
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            dW[i] = acts[i].T @ delta
            if self.biases[i] is not None:
                db[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return dW, db


def td_loss_grads(
    qnet: QNet,
    target_net: QNet,
    F: np.ndarray,
    A: np.ndarray,
    R: np.ndarray,
    F2: np.ndarray,
    gamma: float,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean over the batch of half the squared TD error, with gradients.

    Targets r + gamma * max_a' Q_frozen(s', a') come from target_net and are
    treated as constants.
    """
    y = R + gamma * target_net.forward(F2).max(axis=1)
    q, acts = qnet._forward_cache(F)
    idx = np.arange(len(A))
    td = y - q[idx, A]
    loss = 0.5 * float(np.mean(td * td))
    dout = np.zeros_like(q)
    dout[idx, A] = -td / len(A)
    dW, db = qnet.backward(acts, dout)
    return loss, dW, db


def q_update(
    qnet: QNet,
    transition: tuple[np.ndarray, int, float, np.ndarray],
    gamma: float,
    lr: float,
) -> QNet:
    """Pure single-transition SGD step on the TD loss; frozen pre-step target."""
    f, a, r, f2 = transition
    frozen = qnet.copy()
    _, dW, db = td_loss_grads(
        qnet,
        frozen,
        np.asarray(f, dtype=np.float64)[None, :],
        np.array([a]),
        np.array([r], dtype=np.float64),
        np.asarray(f2, dtype=np.float64)[None, :],
        gamma,
    )
    out = qnet.copy()
    for i in range(len(out.weights)):
        out.weights[i] -= lr * dW[i]
        if out.biases[i] is not None:
            out.biases[i] -= lr * db[i]
    return out


class Adam:
    """Standard Adam on a QNet's parameter list."""

    def __init__(self, qnet: QNet, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        params = qnet.weights + [b for b in qnet.biases if b is not None]
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, qnet: QNet, dW: list[np.ndarray], db: list) -> None:
        self.t += 1
        params = qnet.weights + [b for b in qnet.biases if b is not None]
        grads = dW + [g for g, b in zip(db, qnet.biases) if b is not None]
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def shaped_reward(s: GridState, outcome: StepOutcome) -> float:
    """100 on a pickup; otherwise the best per-passenger gain in inverse
    manhattan distance, max_i (1/d_after_i - 1/d_before_i)."""
    if outcome.collected is not None:
        return 100.0
    tx0, ty0 = s.taxi
    tx1, ty1 = outcome.next.taxi
    best = -math.inf
    for (px, py), (qx, qy) in zip(s.passengers, outcome.next.passengers):
        d0 = abs(px - tx0) + abs(py - ty0)
        d1 = abs(qx - tx1) + abs(qy - ty1)
        best = max(best, 1.0 / d1 - 1.0 / d0)
    return best


@dataclass
class TrainConfig:
    """Q-learning hyperparameters. episodes/steps_per_episode set the total
    transition budget; exploration decays linearly from eps_start to eps_end
    over eps_decay_steps transitions (default: three quarters of the budget).

    Greedy-policy quality oscillates substantially over a long run, so the
    net that happens to exist at the final step is a lottery ticket. Training
    therefore evaluates the greedy policy on a fixed held-out stream every
    eval_every_rounds vectorized rounds and returns the best snapshot seen
    (eval_episodes=0 restores return-the-final-net behavior).
    """

    episodes: int = 2000
    steps_per_episode: int = 1000
    gamma: float = 0.95
    lr: float = 1e-3
    lr_end: Optional[float] = None  # None = constant; else linear anneal
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: Optional[int] = None
    replay_size: int = 100_000
    batch_size: int = 64
    seed: int = 0
    n_envs: int = 64
    target_sync: int = 2_500  # transitions between target-net refreshes
    updates_per_step: int = 1  # gradient steps per vectorized env step
    eval_episodes: int = 24  # greedy episodes per checkpoint evaluation
    eval_every_rounds: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"discount must lie strictly in (0,1), got {self.gamma}")
        if self.eps_decay_steps is None:
            self.eps_decay_steps = max(1, 3 * self.episodes * self.steps_per_episode // 4)

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Wizard:
    """Trained Q-network plus the grid it was trained on."""

    qnet: QNet
    cfg: GridConfig
    seed: Optional[int] = None
    curve: Optional[tuple[float, ...]] = field(default=None, repr=False)

    def policy(self, s: GridState) -> Action:
        """Greedy action: argmax Q(features(s)); ties break in canonical order."""
        q = self.qnet.forward(features(self.cfg, s)[None, :])[0]
        return Action(int(np.argmax(q)))

    def actions(self, F: np.ndarray, chunk: int = 65536) -> np.ndarray:
        """Greedy actions for a (B, 2k) feature matrix, canonical tie-break."""
        F = np.asarray(F, dtype=np.float64)
        out = np.empty(len(F), dtype=np.int64)
        for lo in range(0, len(F), chunk):
            out[lo : lo + chunk] = self.qnet.forward(F[lo : lo + chunk]).argmax(axis=1)
        return out

    def to_json(self) -> dict:
        return {
            "sizes": list(self.qnet.sizes),
            "weights": [w.ravel().tolist() for w in self.qnet.weights],
            "biases": [None if b is None else b.tolist() for b in self.qnet.biases],
            "seed": self.seed,
            "grid_hash": json_hash(self.cfg.to_json()),
        }

    @classmethod
    def from_json(cls, obj: dict, cfg: GridConfig) -> "Wizard":
        if obj["grid_hash"] != json_hash(cfg.to_json()):
            raise ValueError("wizard was trained on a different grid config")
        sizes = obj["sizes"]
        ws = [
            np.array(w, dtype=np.float64).reshape(a, b)
            for w, a, b in zip(obj["weights"], sizes[:-1], sizes[1:])
        ]
        bs = [
            None if b is None else np.array(b, dtype=np.float64)
            for b in obj["biases"]
        ]
        return cls(QNet(ws, bs), cfg, seed=obj.get("seed"))


def epsilon_greedy(
    qnet: QNet, F: np.ndarray, eps: float, rng: np.random.Generator
) -> np.ndarray:
    """Greedy actions with probability 1-eps per row, else uniform random."""
    acts = qnet.forward(F).argmax(axis=1)
    explore = rng.random(len(F)) < eps
    acts[explore] = rng.integers(N_ACTIONS, size=int(explore.sum()))
    return acts


class Replay:
    """Fixed-capacity ring buffer of (features, action, reward, next features)."""

    def __init__(self, capacity: int, feat_dim: int):
        self.capacity = capacity
        self.F = np.zeros((capacity, feat_dim), dtype=np.int16)
        self.A = np.zeros(capacity, dtype=np.int8)
        self.R = np.zeros(capacity, dtype=np.float64)
        self.F2 = np.zeros((capacity, feat_dim), dtype=np.int16)
        self.size = 0
        self.head = 0

    def push(self, F, A, R, F2) -> None:
        n = len(A)
        idx = (self.head + np.arange(n)) % self.capacity
        self.F[idx], self.A[idx], self.R[idx], self.F2[idx] = F, A, R, F2
        self.head = (self.head + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=batch)
        return (
            self.F[idx].astype(np.float64),
            self.A[idx].astype(np.int64),
            self.R[idx],
            self.F2[idx].astype(np.float64),
        )


def train(cfg: GridConfig, tc: TrainConfig) -> Wizard:
    """Episodic epsilon-greedy Q-learning with replay and a frozen target net.

    Runs n_envs plant copies in lockstep; episodes are grouped into rounds of
    n_envs so the transition budget equals episodes * steps_per_episode. The
    returned Wizard carries the per-episode mean-reward curve and is the
    best-evaluated snapshot, not necessarily the final net (see TrainConfig).
    """
    rng = seed_stream(tc.seed, "train")
    qnet = QNet.init(2 * cfg.k, rng)
    target = qnet.copy()
    adam = Adam(qnet, tc.lr)
    replay = Replay(tc.replay_size, 2 * cfg.k)

    def eval_pickups(net: QNet) -> float:
        # fixed stream per call: scores across checkpoints are paired
        ern = seed_stream(tc.seed, "eval")
        env = VecTaxi(cfg, tc.eval_episodes, ern)
        total = 0
        for _ in range(tc.steps_per_episode):
            acts = net.forward(env.features().astype(np.float64)).argmax(axis=1)
            collected, _ = env.step(acts, ern)
            total += int((collected > 0).sum())
        return total / tc.eval_episodes

    n_envs = min(tc.n_envs, tc.episodes)
    rounds = math.ceil(tc.episodes / n_envs)
    decay = max(1, tc.eps_decay_steps)
    budget = tc.episodes * tc.steps_per_episode
    done_transitions = 0
    since_sync = 0
    curve: list[float] = []
    best_net: Optional[QNet] = None
    best_score = -math.inf

    for rnd in range(rounds):
        env = VecTaxi(cfg, n_envs, rng)
        ep_reward = np.zeros(n_envs)
        for _ in range(tc.steps_per_episode):
            frac = min(1.0, done_transitions / decay)
            eps = tc.eps_start + (tc.eps_end - tc.eps_start) * frac
            if tc.lr_end is not None:
                adam.lr = tc.lr + (tc.lr_end - tc.lr) * (done_transitions / budget)
            F = env.features().astype(np.float64)
            acts = epsilon_greedy(qnet, F, eps, rng)
            d0 = env.distances()
            collected, _ = env.step(acts, rng)
            d1 = env.distances()
            picked = collected > 0
            # distances stay >= 1 off the pickup branch, so 1/d is total here
            hint = (1.0 / d1 - 1.0 / d0).max(axis=1)
            R = np.where(picked, 100.0, hint)
            F2 = env.features()
            replay.push(F.astype(np.int16), acts, R, F2.astype(np.int16))
            ep_reward += R
            done_transitions += n_envs
            since_sync += n_envs

            for _ in range(tc.updates_per_step):
                bf, ba, br, bf2 = replay.sample(tc.batch_size, rng)
                loss, dW, db = td_loss_grads(qnet, target, bf, ba, br, bf2, tc.gamma)
                if not math.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged: non-finite TD loss {loss} after "
                        f"{done_transitions} transitions (lr={tc.lr})"
                    )
                adam.step(qnet, dW, db)
            if since_sync >= tc.target_sync:
                target = qnet.copy()
                since_sync = 0

        per_ep = ep_reward / tc.steps_per_episode
        take = min(n_envs, tc.episodes - rnd * n_envs)
        curve.extend(float(x) for x in per_ep[:take])
        if tc.eval_episodes > 0 and tc.eval_every_rounds > 0 and (
            (rnd + 1) % tc.eval_every_rounds == 0 or rnd + 1 == rounds
        ):
            score = eval_pickups(qnet)
            if score > best_score:
                best_net, best_score = qnet.copy(), score
        if (rnd + 1) % max(1, rounds // 10) == 0:
            log.info(
                "round %d/%d eps=%.3f mean episode reward %.3f checkpoint %.1f",
                rnd + 1,
                rounds,
                eps,
                float(np.mean(per_ep)),
                best_score,
            )

    return Wizard(best_net or qnet, cfg, seed=tc.seed, curve=tuple(curve))
