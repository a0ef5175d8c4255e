"""
Loss, gradients, the finite-difference gradient oracle, and the training loop
(AdamW + linear warmup + cosine decay).
"""

import logging
import math
import random
from dataclasses import dataclass, field, asdict, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR

from models.errors import InvalidParameterError, NumericalOverflowError, TrainingDivergedError
from models.pipeline import batches

log = logging.getLogger(__name__)

COARSE_LR_GRID = (0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 3e-4, 1e-4, 3e-5, 1e-5)
REFINE_FACTORS = (3.0, 2.0, 1.0, 1 / 2, 1 / 3)


def seed_everything(seed, threads=1):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def _logits(model, batch):
    return model(batch.centers, batch.patches, batch.serializations)


def batch_loss(model, batch, labels=None):
    labels = batch.labels if labels is None else labels
    with torch.no_grad():
        return float(F.cross_entropy(_logits(model, batch), labels))


def loss_and_grad(model, batch, labels=None):
    """Mean cross-entropy and d(loss)/d(param) for every named parameter (zeros if unused)."""
    labels = batch.labels if labels is None else labels
    num_classes = model.config.num_classes
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidParameterError(f"labels must lie in 0..{num_classes - 1}")
    model.zero_grad(set_to_none=True)
    loss = F.cross_entropy(_logits(model, batch), labels)
    loss.backward()
    grads = {}
    for name, param in model.named_parameters():
        grads[name] = param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
    model.zero_grad(set_to_none=True)
    return loss.item(), grads


def finite_difference_check(model, batch, eps=1e-5, labels=None):
    """Max relative error per parameter between autograd and central differences.

    relative error = max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6)
    """
    _, analytic = loss_and_grad(model, batch, labels)
    errors = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.data.view(-1)
            numeric = torch.zeros_like(flat)
            for k in range(flat.numel()):
                original = flat[k].item()
                flat[k] = original + eps
                plus = batch_loss(model, batch, labels)
                flat[k] = original - eps
                minus = batch_loss(model, batch, labels)
                flat[k] = original
                numeric[k] = (plus - minus) / (2 * eps)
            a = analytic[name].view(-1)
            scale = max(a.abs().max().item(), numeric.abs().max().item(), 1e-6)
            errors[name] = (a - numeric).abs().max().item() / scale
    return errors


def warmup_cosine(warmup_epochs, epochs):
    def factor(epoch):
        if epoch < warmup_epochs:
            return (epoch + 1) / warmup_epochs
        span = max(1, epochs - warmup_epochs)
        return 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))
    return factor


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    test_loss: float
    lr: float


@dataclass
class TrainingReport:
    epochs: list = field(default_factory=list)
    diverged: bool = False

    @property
    def final_test_acc(self):
        return self.epochs[-1].test_acc if self.epochs else float("nan")

    @property
    def final_loss(self):
        return self.epochs[-1].loss if self.epochs else float("nan")

    def to_dict(self):
        return {"epochs": [asdict(e) for e in self.epochs], "diverged": self.diverged}


def evaluate(model, samples, batch_size=32):
    """(accuracy, mean loss) over `samples`; empty input gives (nan, nan)."""
    if not samples:
        return float("nan"), float("nan")
    model.eval()
    correct, total_loss = 0, 0.0
    with torch.no_grad():
        for batch in batches(samples, batch_size):
            logits = _logits(model, batch)
            total_loss += float(F.cross_entropy(logits, batch.labels, reduction="sum"))
            correct += int((logits.argmax(dim=-1) == batch.labels).sum())
    return correct / len(samples), total_loss / len(samples)


def _clamp_decay_rates(model):
    # keep every S6 decay rate nonnegative so the recurrence stays contractive
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith("A_log"):
                param.clamp_(min=0.0)


def train(model, train_samples, test_samples, config, on_epoch=None):
    """Optimize `model` in place; deterministic given config.seed on one thread."""
    if not train_samples:
        raise InvalidParameterError("training set is empty")
    generator = torch.Generator().manual_seed(config.seed)
    optimizer = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = LambdaLR(optimizer, warmup_cosine(config.warmup_epochs, config.epochs))
    report = TrainingReport()

    for epoch in range(config.epochs):
        model.train()
        lr = optimizer.param_groups[0]["lr"]
        total_loss, correct = 0.0, 0
        for batch in batches(train_samples, config.batch_size, generator):
            optimizer.zero_grad(set_to_none=True)
            try:
                logits = _logits(model, batch)
            except NumericalOverflowError as e:
                report.diverged = True
                raise NumericalOverflowError(e.layer_index, e.where, epoch=epoch, report=report) from e
            loss = F.cross_entropy(logits, batch.labels)
            if not torch.isfinite(loss):
                report.diverged = True
                raise TrainingDivergedError(epoch, report)
            loss.backward()
            optimizer.step()
            _clamp_decay_rates(model)
            total_loss += loss.item() * len(batch)
            correct += int((logits.argmax(dim=-1) == batch.labels).sum())
        scheduler.step()

        last = epoch == config.epochs - 1
        if last or (config.eval_every and (epoch + 1) % config.eval_every == 0):
            test_acc, test_loss = evaluate(model, test_samples, config.batch_size)
        else:
            test_acc, test_loss = float("nan"), float("nan")
        record = EpochRecord(epoch, total_loss / len(train_samples), correct / len(train_samples),
                             test_acc, test_loss, lr)
        report.epochs.append(record)
        log.info("epoch %3d  loss %.4f  train %.3f  test %.3f  lr %.2e",
                 epoch, record.loss, record.train_acc, record.test_acc, lr)
        if on_epoch is not None:
            on_epoch(record)
    return report


def lr_search(build_model, train_samples, test_samples, config, coarse=COARSE_LR_GRID,
              max_rounds=5, on_trial=None):
    """Coarse grid, then refine around the best value until the refined best stops moving.

    `build_model()` must return a freshly (and identically) initialized model.
    Returns (best_lr, trials) where trials is a list of (lr, test_acc).
    """
    trials = {}

    def score(lr):
        if lr not in trials:
            model = build_model()
            cfg = replace(config, lr=lr)
            report = train(model, train_samples, test_samples, cfg)
            trials[lr] = report.final_test_acc
            if on_trial is not None:
                on_trial(lr, trials[lr])
        return trials[lr]

    def best_of(grid, incumbent=None):
        # ties keep the incumbent, then the earlier (larger) learning rate
        return max(grid, key=lambda lr: (score(lr), lr == incumbent, -grid.index(lr)))

    best = best_of(list(coarse))
    for _ in range(max_rounds):
        refined = best_of([best * f for f in REFINE_FACTORS], incumbent=best)
        if refined == best:
            break
        best = refined
    return best, sorted(trials.items())
