"""Two-stage training: ranking pretraining on ordinal pairs, then finetuning
as a log-binned depth classifier with the info-gain loss. A log-space L2
regression trainer is kept as the baseline the classifier is compared
against. Plain SGD with a step learning-rate schedule; everything is
deterministic given the seeds.
"""

from dataclasses import dataclass

import numpy as np

from ..binning import BinningScheme, InfoGainMatrix, depth_to_bin
from ..imagery.augment import augment
from ..imagery.types import DepthMap, Image
from ..losses import LossResult, infogain_loss, ranking_loss
from ..ordinal import OrdinalPair
from .model import CLASSIFICATION, REGRESSION, DepthNet, stack_images


@dataclass
class TrainSchedule:
    batch_size: int = 4
    learning_rate: float = 1e-3
    total_iterations: int = 500
    decay_iterations: tuple = ()
    decay_factor: float = 0.1

    def __post_init__(self):
        self.decay_iterations = tuple(int(i) for i in self.decay_iterations)
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.total_iterations < 0:
            raise ValueError("iteration count must be >= 0")
        if list(self.decay_iterations) != sorted(set(self.decay_iterations)):
            raise ValueError("decay iterations must be strictly increasing")
        if self.decay_iterations and self.decay_iterations[-1] >= self.total_iterations:
            raise ValueError("decay iterations must precede the end of training")

    def lr_at(self, iteration):
        lr = self.learning_rate
        for di in self.decay_iterations:
            if iteration >= di:
                lr *= self.decay_factor
        return lr


@dataclass
class AugmentConfig:
    scale_range: tuple = (1.0, 1.25)
    flip_prob: float = 0.5

    def __post_init__(self):
        lo, hi = self.scale_range
        # scaled samples are cropped back to the original grid for batching
        if not 1.0 <= lo <= hi:
            raise ValueError("trainer scale range must satisfy 1 <= lo <= hi")


def l2_regression_loss(pred, target, mask) -> LossResult:
    """Mean squared error over valid pixels, with gradient w.r.t. pred.

    Operates on whatever space the caller supplies; the finetuning baseline
    passes log-depths so its errors are comparable to the log-binned
    classifier's.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError("pred, target and mask must share one shape")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("at least one valid pixel is required")
    diff = np.where(mask, pred - target, 0.0)
    value = float((diff ** 2).sum() / n)
    grad = 2.0 * diff / n
    return LossResult(value, grad)


def _sgd_step(net, lr, clip_norm=None):
    if lr == 0.0:
        return
    scale = 1.0
    if clip_norm is not None:
        total = np.sqrt(sum(float((t.grad ** 2).sum())
                            for _, t in net.named_params()))
        if total > clip_norm:
            scale = clip_norm / total
    for _, tensor in net.named_params():
        tensor.values -= lr * scale * tensor.grad


def map_pairs_to_grid(pairs, stride):
    """Project full-resolution pair coordinates onto the score grid.

    Pairs whose endpoints land in the same output cell carry no ranking
    signal at the network's resolution and are dropped.
    """
    mapped = []
    for p in pairs:
        gi = (p.i[0] // stride, p.i[1] // stride)
        gj = (p.j[0] // stride, p.j[1] // stride)
        if gi != gj:
            mapped.append(OrdinalPair(gi, gj, p.r))
    return mapped


def _augmented(image, depth, aug: AugmentConfig, rng):
    h, w = image.height, image.width
    img, dm = augment(image, depth, aug.scale_range, aug.flip_prob, rng)
    if img.height != h or img.width != w:
        top = int(rng.integers(0, img.height - h + 1))
        left = int(rng.integers(0, img.width - w + 1))
        img = Image(img.data[top:top + h, left:left + w])
        dm = DepthMap(dm.values[top:top + h, left:left + w],
                      dm.mask[top:top + h, left:left + w], kind=dm.kind)
    return img, dm


def pretrain_ranking(net: DepthNet, dataset, schedule: TrainSchedule, seed=0,
                     pair_mean=False, log_fn=None, start_iteration=0,
                     clip_norm=None):
    """SGD on the pairwise ranking loss.

    dataset is a list of (Image, pairs) with pair coordinates at image
    resolution; they are projected onto the network's output grid once up
    front. Returns the per-iteration history of {iter, loss, lr}.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    stride = net.config.total_stride
    grid_pairs = []
    for image, pairs in dataset:
        mapped = map_pairs_to_grid(pairs, stride)
        if not mapped:
            raise ValueError("a sample has no pairs left at grid resolution")
        grid_pairs.append(mapped)
    images = [image for image, _ in dataset]
    rng = np.random.default_rng(seed)
    history = []
    for iteration in range(start_iteration, schedule.total_iterations):
        lr = schedule.lr_at(iteration)
        idx = rng.integers(0, len(images), size=schedule.batch_size)
        x = stack_images([images[i] for i in idx])
        out = net.forward(x)  # (N, 1, h, w)
        dout = np.zeros_like(out)
        loss = 0.0
        for k, i in enumerate(idx):
            try:
                res = ranking_loss(out[k, 0], grid_pairs[i], mean=pair_mean)
            except ValueError as exc:
                raise ValueError(
                    f"training diverged at iteration {iteration}: {exc}"
                ) from None
            loss += res.value
            dout[k, 0] = res.gradient
        loss /= schedule.batch_size
        dout /= schedule.batch_size
        net.zero_grad()
        net.backward(dout)
        _sgd_step(net, lr, clip_norm)
        record = {"iter": iteration, "loss": loss, "lr": lr}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return history


def _grid_targets(depth: DepthMap, grid_h, grid_w):
    """Subsample a depth map to the score grid with nearest lookups."""
    h, w = depth.values.shape
    ys = np.clip(((np.arange(grid_h) + 0.5) * (h / grid_h)).astype(np.int64), 0, h - 1)
    xs = np.clip(((np.arange(grid_w) + 0.5) * (w / grid_w)).astype(np.int64), 0, w - 1)
    return depth.values[ys][:, xs], depth.mask[ys][:, xs]


def finetune_classification(net: DepthNet, dataset, scheme: BinningScheme,
                            gain: InfoGainMatrix, schedule: TrainSchedule,
                            seed=0, augment_cfg: AugmentConfig = None,
                            log_fn=None, start_iteration=0, reseed_head=True,
                            clip_norm=None):
    """SGD on the info-gain classification loss over binned metric depths.

    dataset is a list of (Image, DepthMap) with metric ground truth. The head
    is swapped for a fresh classification head of scheme.bins channels unless
    it already matches; trunk weights and normalization statistics persist.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if gain.bins != scheme.bins:
        raise ValueError("gain matrix and binning scheme disagree on bin count")
    if net.config.head_mode != CLASSIFICATION or net.config.head_channels != scheme.bins:
        if reseed_head:
            net.re_head(CLASSIFICATION, scheme.bins)
        else:
            raise ValueError("network head does not match the binning scheme")
    rng = np.random.default_rng(seed)
    history = []
    for iteration in range(start_iteration, schedule.total_iterations):
        lr = schedule.lr_at(iteration)
        idx = rng.integers(0, len(dataset), size=schedule.batch_size)
        batch = []
        for i in idx:
            image, depth = dataset[i]
            if augment_cfg is not None:
                image, depth = _augmented(image, depth, augment_cfg, rng)
            batch.append((image, depth))
        x = stack_images([img for img, _ in batch])
        out = net.forward(x)  # (N, B, h, w)
        grid_h, grid_w = out.shape[2], out.shape[3]
        dout = np.zeros_like(out)
        loss = 0.0
        for k, (_, depth) in enumerate(batch):
            values, mask = _grid_targets(depth, grid_h, grid_w)
            if not mask.any():
                continue  # fully masked sample: zero loss, zero gradient
            labels = np.ones(values.shape, dtype=np.int64)
            labels[mask] = depth_to_bin(values[mask].astype(np.float64), scheme)
            try:
                res = infogain_loss(out[k].transpose(1, 2, 0), labels, mask, gain)
            except ValueError as exc:
                raise ValueError(
                    f"training diverged at iteration {iteration}: {exc}"
                ) from None
            loss += res.value
            dout[k] = res.gradient.transpose(2, 0, 1)
        loss /= schedule.batch_size
        dout /= schedule.batch_size
        net.zero_grad()
        net.backward(dout)
        _sgd_step(net, lr, clip_norm)
        record = {"iter": iteration, "loss": loss, "lr": lr}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return history


def finetune_regression(net: DepthNet, dataset, schedule: TrainSchedule,
                        seed=0, augment_cfg: AugmentConfig = None,
                        log_fn=None, start_iteration=0, reseed_head=True,
                        clip_norm=None):
    """Baseline: SGD on log-depth L2 regression, same plumbing as above."""
    if not dataset:
        raise ValueError("dataset is empty")
    if net.config.head_mode != REGRESSION:
        if reseed_head:
            net.re_head(REGRESSION, 1)
        else:
            raise ValueError("network head is not a regression head")
    rng = np.random.default_rng(seed)
    history = []
    for iteration in range(start_iteration, schedule.total_iterations):
        lr = schedule.lr_at(iteration)
        idx = rng.integers(0, len(dataset), size=schedule.batch_size)
        batch = []
        for i in idx:
            image, depth = dataset[i]
            if augment_cfg is not None:
                image, depth = _augmented(image, depth, augment_cfg, rng)
            batch.append((image, depth))
        x = stack_images([img for img, _ in batch])
        out = net.forward(x)  # (N, 1, h, w)
        dout = np.zeros_like(out)
        loss = 0.0
        for k, (_, depth) in enumerate(batch):
            values, mask = _grid_targets(depth, out.shape[2], out.shape[3])
            if not mask.any():
                continue
            log_target = np.where(mask, np.log(np.maximum(values, 1e-12)), 0.0)
            try:
                res = l2_regression_loss(out[k, 0], log_target, mask)
            except ValueError as exc:
                raise ValueError(
                    f"training diverged at iteration {iteration}: {exc}"
                ) from None
            loss += res.value
            dout[k, 0] = res.gradient
        loss /= schedule.batch_size
        dout /= schedule.batch_size
        net.zero_grad()
        net.backward(dout)
        _sgd_step(net, lr, clip_norm)
        record = {"iter": iteration, "loss": loss, "lr": lr}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return history
