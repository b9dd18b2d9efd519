"""Loss, regularization, SGD loop, stability projection, and metrics.

The regularization penalty covers clique weights only (bias row and diagonal
included): per column j it adds l1 * sum_k |w_kj| + l2 * sum_k w_kj^2, which
pushes the learned coupling structure toward its important connections.
Inter-layer weights are left unregularized.

Plain SGD, no momentum: fewer confounds when comparing gradient modes, and
gradient reduction over a batch runs in ascending sample order so a fixed
seed reproduces bit-identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backward import GradMode, GradientSet, backward_network
from .forward import forward_network
from .model import Network, clique_rho
from .numerics import DTYPE, make_rng


class LossKind(Enum):
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
    MEAN_SQUARED_ERROR = "mse"

    @classmethod
    def from_name(cls, name: str) -> "LossKind":
        try:
            return cls(str(name).lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown loss {name!r} (expected one of: {valid})") from None


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 16
    l1: float = 0.0
    l2: float = 0.0
    grad_mode: GradMode = GradMode.EXACT_ADJOINT
    seed: int = 0
    solver_tol: float = 1e-8
    solver_max_iter: int = 100
    projection_rho_max: float | None = 0.9
    loss_kind: LossKind = LossKind.SOFTMAX_CROSS_ENTROPY
    active_edge_threshold: float = 1e-3
    freeze_cliques: bool = False
    freeze_input_bias: bool = False

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("l1 and l2 must be >= 0")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be > 0")
        if self.solver_max_iter < 1:
            raise ValueError("solver_max_iter must be >= 1")
        if self.projection_rho_max is not None and not 0 < self.projection_rho_max <= 1:
            raise ValueError("projection_rho_max must lie in (0, 1] or be disabled")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_error: float
    test_error: float
    active_edges: int


@dataclass
class TrainResult:
    net: Network                    # best-test-error snapshot
    final_net: Network
    history: list[EpochMetrics] = field(default_factory=list)


def loss_and_output_grad(output: np.ndarray, label: int, kind: LossKind):
    """Scalar loss and its gradient with respect to the output row."""
    output = np.asarray(output, dtype=DTYPE)
    n_classes = output.shape[0]
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} out of range for {n_classes} classes")
    onehot = np.zeros(n_classes, dtype=DTYPE)
    onehot[label] = 1.0
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        shifted = output - output.max()
        log_z = np.log(np.exp(shifted).sum())
        loss = float(log_z - shifted[label])
        d_output = np.exp(shifted - log_z) - onehot
        return loss, d_output
    if kind is LossKind.MEAN_SQUARED_ERROR:
        diff = output - onehot
        return float(diff @ diff), 2.0 * diff
    raise ValueError(f"unhandled loss kind {kind}")


def regularization_penalty(net: Network, l1: float, l2: float):
    """Penalty value plus per-level subgradient additions for clique weights.

    sign(0) = 0, so exactly-zero couplings stay untouched by the l1 term.
    """
    if l1 < 0 or l2 < 0:
        raise ValueError("l1 and l2 must be >= 0")
    penalty = 0.0
    additions: list[np.ndarray | None] = []
    for cw in net.cliques:
        if cw is None:
            additions.append(None)
            continue
        penalty += l1 * float(np.abs(cw).sum()) + l2 * float((cw * cw).sum())
        additions.append(l1 * np.sign(cw) + 2.0 * l2 * cw)
    return penalty, additions


def contraction_projection(net: Network, rho_max: float) -> Network:
    """Rescale over-strong coupling columns back to the contractive regime.

    Columns whose off-diagonal absolute sum exceeds rho_max are scaled down
    to hit it exactly; diagonal and bias entries are untouched. Idempotent.
    """
    if not 0 < rho_max <= 1:
        raise ValueError(f"rho_max must lie in (0, 1], got {rho_max}")
    out = net.copy()
    for cw in out.cliques:
        if cw is None:
            continue
        block = cw[1:, :]
        m = block.shape[1]
        idx = np.arange(m)
        off_sums = np.abs(block).sum(axis=0) - np.abs(block[idx, idx])
        for j in np.flatnonzero(off_sums > rho_max):
            scale = rho_max / off_sums[j]
            diag = block[j, j]
            block[:, j] *= scale
            block[j, j] = diag
    return out


def count_active_edges(net: Network, threshold: float) -> int:
    """Off-diagonal clique couplings with |w| above the threshold."""
    total = 0
    for cw in net.cliques:
        if cw is None:
            continue
        block = cw[1:, :]
        m = block.shape[1]
        mask = np.abs(block) > threshold
        mask[np.arange(m), np.arange(m)] = False
        total += int(mask.sum())
    return total


def _batch_gradient(net: Network, features: np.ndarray, labels: np.ndarray,
                    cfg: TrainConfig):
    total = GradientSet.zeros_like(net)
    total_loss = 0.0
    for idx in range(features.shape[0]):
        out, caches = forward_network(net, features[idx], tol=cfg.solver_tol,
                                      max_iter=cfg.solver_max_iter)
        loss, d_output = loss_and_output_grad(out, int(labels[idx]), cfg.loss_kind)
        total_loss += loss
        total.add_(backward_network(net, caches, features[idx], d_output,
                                    mode=cfg.grad_mode))
    return total, total_loss


def sgd_step(net: Network, features: np.ndarray, labels: np.ndarray,
             cfg: TrainConfig):
    """One descent step on a batch; returns (updated net, mean batch loss)."""
    if features.shape[0] == 0:
        raise ValueError("empty batch")
    grads, total_loss = _batch_gradient(net, features, labels, cfg)
    n = features.shape[0]
    grads.scale_(1.0 / n)
    penalty, reg_additions = regularization_penalty(net, cfg.l1, cfg.l2)

    out = net.copy()
    lr = cfg.learning_rate
    for i in range(out.depth):
        step = grads.d_inter[i]
        if cfg.freeze_input_bias and i == 0:
            step = step.copy()
            step[0, :] = 0.0
        out.inter[i] -= lr * step
        if out.cliques[i] is not None and not cfg.freeze_cliques:
            out.cliques[i] -= lr * (grads.d_clique[i] + reg_additions[i])
    if cfg.projection_rho_max is not None:
        out = contraction_projection(out, cfg.projection_rho_max)
    return out, total_loss / n + penalty


def evaluate(net: Network, features: np.ndarray, labels: np.ndarray,
             tol: float = 1e-8, max_iter: int = 100) -> float:
    """Fraction misclassified; argmax ties resolve to the lowest class index."""
    if features.shape[0] == 0:
        raise ValueError("empty dataset")
    if net.output_width < int(labels.max()) + 1:
        raise ValueError(f"output width {net.output_width} smaller than class count")
    wrong = 0
    for idx in range(features.shape[0]):
        out, _ = forward_network(net, features[idx], tol=tol, max_iter=max_iter)
        if int(np.argmax(out)) != int(labels[idx]):
            wrong += 1
    return wrong / features.shape[0]


def train(net: Network, train_features: np.ndarray, train_labels: np.ndarray,
          test_features: np.ndarray, test_labels: np.ndarray,
          cfg: TrainConfig) -> TrainResult:
    """Epoch loop with seeded shuffling; tracks the best-test-error snapshot."""
    cfg.validate()
    if train_features.shape[0] == 0 or test_features.shape[0] == 0:
        raise ValueError("train and test splits must be nonempty")
    rng = make_rng(cfg.seed)
    n = train_features.shape[0]
    history: list[EpochMetrics] = []
    best_net = net.copy()
    best_err = np.inf

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            net, batch_loss = sgd_step(net, train_features[sel], train_labels[sel], cfg)
            epoch_loss += batch_loss
            batches += 1
        train_err = evaluate(net, train_features, train_labels,
                             tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        test_err = evaluate(net, test_features, test_labels,
                            tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        history.append(EpochMetrics(
            epoch=epoch,
            train_loss=epoch_loss / batches,
            train_error=train_err,
            test_error=test_err,
            active_edges=count_active_edges(net, cfg.active_edge_threshold)))
        if test_err < best_err:
            best_err = test_err
            best_net = net.copy()
    return TrainResult(net=best_net, final_net=net, history=history)


METRICS_HEADER = "epoch,train_loss,train_err,test_err,active_edges"


def metrics_to_csv(history: list[EpochMetrics]) -> str:
    """Metrics table with 9-significant-digit decimals; header row mandatory."""
    lines = [METRICS_HEADER]
    for m in history:
        lines.append(f"{m.epoch},{m.train_loss:.9g},{m.train_error:.9g},"
                     f"{m.test_error:.9g},{m.active_edges}")
    return "\n".join(lines) + "\n"
