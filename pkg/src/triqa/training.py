"""The triplet-loss training loop.

One epoch over a shuffled manifest: render each triplet from its pristine
image, cut one synchronized random crop per triplet, and minimize the batch
mean triplet margin loss with Adam under a cosine learning-rate schedule.
Everything is seeded from the config, so a rerun reproduces the same
parameter trajectory bit for bit on a fixed machine.
"""

from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict

import numpy as np
import torch

from .encoder import Checkpoint, EncoderConfig, build_encoder, synchronized_crop
from .errors import DataError, NumericalError, UsageError
from .fingerprints import manifest_fingerprint
from .images import ImageStore
from .losses import torch_triplet_margin_loss, triplet_distance
from .seeds import STREAM_CROPS, STREAM_TRAIN, derive, make_rng
from .triplets import Manifest, render_chain, render_triplet

logger = logging.getLogger("triqa.train")


class RenderCache:
    """Bounded LRU over rendered (image_id, chain) arrays."""

    def __init__(self, maxsize: int = 512):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()

    def __contains__(self, key) -> bool:
        return key in self._data

    def get(self, key, compute):
        if key in self._data:
            self._data.move_to_end(key)
            return self._data[key]
        value = compute()
        self.put(key, value)
        return value

    def put(self, key, value):
        self._data[key] = value
        self._data.move_to_end(key)
        if len(self._data) > self.maxsize:
            self._data.popitem(last=False)


def _as_store(images) -> ImageStore:
    return images if isinstance(images, ImageStore) else ImageStore(images)


def _render_members(spec, store: ImageStore, cache: RenderCache):
    # Members repeat across triplets (same ladder, same combined positive),
    # so cache each rendered chain, not each triplet.
    keys = [(spec.image_id, chain) for chain in (spec.anchor, spec.positive, spec.negative)]
    if any(k not in cache for k in keys):
        rendered = render_triplet(spec, store.get(spec.image_id))
        for key, img in zip(keys, rendered):
            cache.put(key, img)
        return rendered
    return tuple(cache.get(k, lambda: None) for k in keys)


def _batch_tensor(crops: list[np.ndarray]) -> torch.Tensor:
    stack = np.stack(crops).astype(np.float32) / 255.0
    return torch.from_numpy(stack).permute(0, 3, 1, 2)


def _embed_chain(model, store, cache, embeddings, image_id, chain, spec_seed):
    key = (image_id, chain)
    if key not in embeddings:
        img = cache.get(key, lambda: render_chain(store.get(image_id), chain, spec_seed))
        with torch.no_grad():
            vec = model(_batch_tensor([img])).squeeze(0).numpy()
        embeddings[key] = vec
    return embeddings[key]


def ordering_accuracy(model_or_ckpt, manifest: Manifest, images, *, limit: int | None = None, seed: int = 0) -> float:
    """Fraction of triplets with d(a,p) < d(a,n), on full rendered images.

    `limit` subsamples entries deterministically (by `seed`); renders and
    embeddings are cached per (image, chain), so ladders shared by many
    triplets are embedded once.
    """
    model = model_or_ckpt.quality_model() if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    was_training = model.training
    model.eval()
    store = _as_store(images)
    entries = manifest.entries
    if limit is not None and limit < len(entries):
        idx = make_rng(derive(seed, "val-sample")).choice(len(entries), size=limit, replace=False)
        entries = [entries[i] for i in sorted(idx)]
    cache = RenderCache(maxsize=2048)
    embeddings: dict = {}
    correct = 0
    for spec in entries:
        a = _embed_chain(model, store, cache, embeddings, spec.image_id, spec.anchor, spec.seed)
        p = _embed_chain(model, store, cache, embeddings, spec.image_id, spec.positive, spec.seed)
        n = _embed_chain(model, store, cache, embeddings, spec.image_id, spec.negative, spec.seed)
        if triplet_distance(a, p) < triplet_distance(a, n):
            correct += 1
    if was_training:
        model.train()
    return correct / len(entries)


def _validation_metrics(model, manifest, store, cache, margin, limit, seed):
    model.eval()
    entries = manifest.entries
    if limit is not None and limit < len(entries):
        idx = make_rng(derive(seed, "val-sample")).choice(len(entries), size=limit, replace=False)
        entries = [entries[i] for i in sorted(idx)]
    embeddings: dict = {}
    losses = []
    correct = 0
    for spec in entries:
        a = _embed_chain(model, store, cache, embeddings, spec.image_id, spec.anchor, spec.seed)
        p = _embed_chain(model, store, cache, embeddings, spec.image_id, spec.positive, spec.seed)
        n = _embed_chain(model, store, cache, embeddings, spec.image_id, spec.negative, spec.seed)
        dap = triplet_distance(a, p)
        dan = triplet_distance(a, n)
        losses.append(max(dap - dan + margin, 0.0))
        if dap < dan:
            correct += 1
    model.train()
    return float(np.mean(losses)), correct / len(entries)


def train(
    manifest: Manifest,
    images,
    config: EncoderConfig,
    *,
    val_manifest: Manifest | None = None,
    val_samples: int = 64,
    best_by_validation: bool = False,
) -> Checkpoint:
    """Optimize the encoder over the manifest and return the checkpoint.

    The checkpoint is end-of-epoch unless `best_by_validation`, which keeps
    the parameters with the best validation ordering accuracy seen at the
    periodic evaluations (10 per epoch).
    """
    store = _as_store(images)
    missing = [i for i in manifest.image_ids if i not in store]
    if missing:
        raise DataError(f"manifest references images missing from the corpus: {missing}")
    smallest = min(min(store.get(i).shape[:2]) for i in manifest.image_ids)
    if config.crop > smallest:
        raise UsageError(f"crop {config.crop} exceeds smallest corpus image side {smallest}")

    fingerprint = manifest_fingerprint(manifest)
    model = build_encoder(config.preset, config.embed_dim, init_seed=derive(config.seed, "quality-init"))
    model.train()
    torch.manual_seed(derive(config.seed, STREAM_TRAIN, "torch") & ((1 << 63) - 1))

    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    n = len(manifest.entries)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    scheduler = (
        torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=total_steps)
        if config.schedule == "cosine"
        else None
    )

    cache = RenderCache(maxsize=512)
    val_cache = RenderCache(maxsize=2048)
    val_every = max(1, total_steps // 10)
    log_every = max(1, total_steps // 20)

    losses: list[float] = []
    lrs: list[float] = []
    val_points: list[dict] = []
    best_state = None
    best_acc = -1.0
    step = 0
    t_start = time.time()

    logger.info(
        "training %s: %d triplets, %d steps (batch %d, crop %d, lr %g, margin %g, seed %d)",
        config.preset, n, total_steps, config.batch_size, config.crop, config.learning_rate,
        config.margin, config.seed,
    )

    for epoch in range(config.epochs):
        order = make_rng(derive(config.seed, STREAM_TRAIN, "shuffle", epoch)).permutation(n)
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            crops_a, crops_p, crops_n = [], [], []
            for idx in batch_idx:
                spec = manifest.entries[int(idx)]
                a_img, p_img, n_img = _render_members(spec, store, cache)
                ca, cp, cn = synchronized_crop(
                    a_img, p_img, n_img, config.crop, derive(config.seed, STREAM_CROPS, epoch, int(idx))
                )
                crops_a.append(ca)
                crops_p.append(cp)
                crops_n.append(cn)
            x = _batch_tensor(crops_a + crops_p + crops_n)
            out = model(x)
            b = len(batch_idx)
            loss = torch_triplet_margin_loss(out[:b], out[b : 2 * b], out[2 * b :], config.margin)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at step {step} (epoch {epoch}, lr "
                    f"{optimizer.param_groups[0]['lr']:.3e}); last finite losses: {losses[-5:]}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            losses.append(float(loss.detach()))
            lrs.append(float(optimizer.param_groups[0]["lr"]))
            step += 1

            if step % log_every == 0 or step == total_steps:
                recent = float(np.mean(losses[-log_every:]))
                logger.info("step %d/%d  loss %.4f  lr %.2e", step, total_steps, recent, lrs[-1])
            if val_manifest is not None and (step % val_every == 0 or step == total_steps):
                val_loss, val_acc = _validation_metrics(
                    model, val_manifest, store, val_cache, config.margin, val_samples, config.seed
                )
                val_points.append({"step": step, "loss": val_loss, "ordering_accuracy": val_acc})
                logger.info("  val at step %d: loss %.4f, ordering accuracy %.3f", step, val_loss, val_acc)
                if best_by_validation and val_acc > best_acc:
                    best_acc = val_acc
                    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    decile = max(1, len(losses) // 10)
    history = {
        "loss": losses,
        "lr": lrs,
        "validation": val_points,
        "first_decile_mean": float(np.mean(losses[:decile])),
        "last_decile_mean": float(np.mean(losses[-decile:])),
        "seconds": time.time() - t_start,
    }
    logger.info(
        "done in %.1fs: first-decile loss %.4f -> last-decile loss %.4f",
        history["seconds"], history["first_decile_mean"], history["last_decile_mean"],
    )
    state = best_state if (best_by_validation and best_state is not None) else model.state_dict()
    state = {k: v.detach().cpu().clone() for k, v in state.items()}
    return Checkpoint(
        config=config, state_dict=state, step=step, manifest_fingerprint=fingerprint, history=history
    )
