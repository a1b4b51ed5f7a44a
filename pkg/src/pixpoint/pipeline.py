"""The two pre-training stages.

Stage 1 trains the 2D encoder + head with a pixel-level contrastive loss:
two augmented views per image, positives are output pixels whose source
coordinates coincide in the original image, negatives are drawn from all
sampled pixels of the whole batch (optionally capped via negative_cap).

Stage 2 freezes the 2D model, precomputes a unit-norm embedding per pixel
of every scene image, and trains the 3D encoder + head so point
embeddings match the frozen pixel embedding at their projected pixel;
negatives are the other sampled points (or points and pixels).

Both stages are bit-deterministic given their config: every random draw
derives from (seed, stage, iteration, slot) so a failed batch can be
rebuilt in isolation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import (
    ColorJitter,
    ColorJitter3D,
    Grayscale,
    HorizontalFlip,
    PointDropout,
    RandomResizedCrop,
    RotationZ,
    TransformSpec2D,
    TransformSpec3D,
    augment_cloud,
    augment_image,
    match_positive_pixels,
)
from .errors import EmptyCloud, EmptyOverlap, IterationStarved, NonFiniteLoss
from .geometry import CameraIntrinsics, Image, PointCloud, Pose, build_correspondences, voxelize
from .loss import ALL_IN_BATCH, OTHER_QUERIES, LossConfig, info_nce
from .nn import (
    EncoderParams2D,
    EncoderParams3D,
    HeadParams,
    checkpoint_checksum,
    encode_images_backward,
    encode_images_forward,
    head_backward,
    head_forward,
    point_backward,
    point_forward,
)
from .optim import OptimConfig, OptimState, sgd_step
from .rngutil import derive_seed, rng_for

log = logging.getLogger(__name__)

POINTS_ONLY = "points_only"
POINTS_AND_PIXELS = "points_and_pixels"

MAX_PAIR_RETRIES = 10


def default_spec_2d(out_size=(64, 64)) -> TransformSpec2D:
    return TransformSpec2D(
        (
            RandomResizedCrop(scale_range=(0.4, 1.0), out_size=tuple(out_size)),
            HorizontalFlip(p=0.5),
            ColorJitter(brightness=(0.7, 1.3), contrast=(0.7, 1.3), saturation=(0.7, 1.3)),
            Grayscale(p=0.1),
        )
    )


def default_spec_3d() -> TransformSpec3D:
    return TransformSpec3D(
        (
            RotationZ(angle_range=(0.0, 2.0 * np.pi - 1e-9)),
            PointDropout(keep_prob=0.9),
            ColorJitter3D(brightness=(0.8, 1.2), contrast=(0.8, 1.2), saturation=(0.8, 1.2)),
        )
    )


@dataclass(frozen=True)
class Stage1Config:
    batch_pairs: int = 8
    pixels_per_pair: int = 512
    tau: float = 0.4
    optim: OptimConfig = OptimConfig(lr0=0.01)
    iterations: int = 500
    spec_a: TransformSpec2D = default_spec_2d()
    spec_b: TransformSpec2D = default_spec_2d()
    feature_dim: int = 16
    embed_dim: int = 16
    negative_cap: int | None = 512  # None takes every sampled pixel in the batch
    seed: int = 0

    def __post_init__(self):
        if self.pixels_per_pair < 2:
            raise ValueError("pixels_per_pair must be >= 2")
        if self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")
        if self.negative_cap is not None and self.negative_cap < 1:
            raise ValueError("negative_cap must be >= 1 or None")


@dataclass(frozen=True)
class Stage2Config:
    batch_pairs: int = 8
    correspondences_per_pair: int = 256
    crop_size: int | None = None  # centre crop; None keeps the native size
    voxel_size: float = 0.05
    tau: float = 0.4
    optim: OptimConfig = OptimConfig(lr0=0.1)
    iterations: int = 500
    negative_source: str = POINTS_ONLY
    spec3d: TransformSpec3D = default_spec_3d()
    feature_dim: int = 16
    embed_dim: int = 16
    knn: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.correspondences_per_pair < 2:
            raise ValueError("correspondences_per_pair must be >= 2")
        if self.negative_source not in (POINTS_ONLY, POINTS_AND_PIXELS):
            raise ValueError(f"unknown negative_source {self.negative_source!r}")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")


@dataclass
class TrainReport:
    loss_history: np.ndarray
    gap_history: np.ndarray  # mean positive cosine - mean negative cosine
    lr_history: np.ndarray
    iter_seconds: np.ndarray
    skipped: int = 0
    embeddings_audited: int = 0
    max_norm_error: float = 0.0
    frozen_checksum_start: str | None = None
    frozen_checksum_end: str | None = None

    def iterations(self) -> int:
        return self.loss_history.shape[0]


def write_report_csv(report: TrainReport, path) -> None:
    lines = ["iteration,loss,alignment_gap,lr"]
    for i in range(report.iterations()):
        lines.append(
            f"{i},{report.loss_history[i]:.17g},"
            f"{report.gap_history[i]:.17g},{report.lr_history[i]:.17g}"
        )
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))


class _NormAudit:
    """Tracks |row norm - 1| over every embedding produced in a run."""

    def __init__(self):
        self.rows = 0
        self.max_err = 0.0

    def take(self, z: np.ndarray) -> None:
        self.rows += z.shape[0]
        if z.shape[0]:
            err = float(np.abs(np.linalg.norm(z, axis=1) - 1.0).max())
            self.max_err = max(self.max_err, err)


@dataclass(frozen=True)
class ScenePair:
    """One (cloud, image) observation with its camera."""

    cloud: PointCloud
    image: Image
    pose: Pose
    intrinsics: CameraIntrinsics


def pairs_from_scene(scene) -> list:
    return [
        ScenePair(scene.cloud, v.image, v.pose, v.intrinsics) for v in scene.cameras
    ]


def center_crop(image: Image, intr: CameraIntrinsics, size: int):
    """Centre-crop to size x size, shifting the principal point to match."""
    cw = min(size, image.width)
    ch = min(size, image.height)
    x0 = (image.width - cw) // 2
    y0 = (image.height - ch) // 2
    cropped = Image(image.pixels[y0 : y0 + ch, x0 : x0 + cw])
    adjusted = CameraIntrinsics(
        fx=intr.fx, fy=intr.fy, cx=intr.cx - x0, cy=intr.cy - y0, width=cw, height=ch
    )
    return cropped, adjusted


# ── stage 1 ──────────────────────────────────────────────────────────────

def pretrain_2d(dataset: list, cfg: Stage1Config):
    """Pixel-level contrastive pre-training of the 2D encoder.

    Returns (EncoderParams2D, HeadParams, TrainReport).
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    enc = EncoderParams2D.initialize(cfg.seed, cfg.feature_dim)
    head = HeadParams.initialize(cfg.seed, cfg.feature_dim, cfg.embed_dim)
    params = {f"enc.{k}": v for k, v in enc.tensors().items()}
    params.update({f"head.{k}": v for k, v in head.tensors().items()})
    state = OptimState()
    audit = _NormAudit()

    losses = np.zeros(cfg.iterations)
    gaps = np.zeros(cfg.iterations)
    lrs = np.zeros(cfg.iterations)
    seconds = np.zeros(cfg.iterations)
    skipped = 0

    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        rng_iter = rng_for(cfg.seed, "stage1", it)
        picks = rng_iter.integers(0, len(dataset), size=cfg.batch_pairs)

        views = []
        sel_a = []  # (pixels (P,2)) per pair, view index 2k
        sel_b = []
        for k, img_idx in enumerate(picks):
            img = dataset[int(img_idx)]
            for attempt in range(MAX_PAIR_RETRIES):
                view_a, map_a = augment_image(
                    img, cfg.spec_a, derive_seed(cfg.seed, "s1a", it, k, attempt)
                )
                view_b, map_b = augment_image(
                    img, cfg.spec_b, derive_seed(cfg.seed, "s1b", it, k, attempt)
                )
                try:
                    pix_a, pix_b = match_positive_pixels(
                        map_a,
                        map_b,
                        cfg.pixels_per_pair,
                        derive_seed(cfg.seed, "s1m", it, k, attempt),
                    )
                except EmptyOverlap:
                    continue
                views.append(view_a.pixels)
                views.append(view_b.pixels)
                sel_a.append(pix_a)
                sel_b.append(pix_b)
                break
            else:
                skipped += 1
                log.warning("iteration %d: pair %d skipped after %d retries", it, k, MAX_PAIR_RETRIES)
        if not sel_a:
            raise IterationStarved(f"iteration {it}: every pair of the batch was skipped")

        batch = np.stack(views)
        feats, conv_cache = encode_images_forward(enc, batch)

        view_ids = []
        ys = []
        xs = []
        for k in range(len(sel_a)):
            for vid, pix in ((2 * k, sel_a[k]), (2 * k + 1, sel_b[k])):
                view_ids.append(np.full(pix.shape[0], vid))
                xs.append(pix[:, 0])
                ys.append(pix[:, 1])
        # row layout: all query pixels (A sides), then all positives (B sides)
        n_pairs = len(sel_a)
        order = [2 * k for k in range(n_pairs)] + [2 * k + 1 for k in range(n_pairs)]
        view_ids = np.concatenate([view_ids[i] for i in order])
        ys = np.concatenate([ys[i] for i in order])
        xs = np.concatenate([xs[i] for i in order])

        sel_feats = feats[view_ids, ys, xs]
        z, head_cache = head_forward(head, sel_feats)
        audit.take(z)
        nq = z.shape[0] // 2
        zq, zp = z[:nq], z[nq:]

        try:
            if cfg.negative_cap is None or cfg.negative_cap >= 2 * nq:
                out = info_nce(zq, zp, None, LossConfig(tau=cfg.tau, negatives=ALL_IN_BATCH))
                grad_rows = np.concatenate([out.grad_queries, out.grad_positives])
            else:
                pool_idx = rng_iter.choice(2 * nq, size=cfg.negative_cap, replace=False)
                col_of = np.full(2 * nq, -1, dtype=np.int64)
                col_of[pool_idx] = np.arange(cfg.negative_cap)
                excl = np.stack([col_of[:nq], col_of[nq:]], axis=1)
                out = info_nce(
                    zq,
                    zp,
                    z[pool_idx],
                    LossConfig(tau=cfg.tau, negatives=int(cfg.negative_cap)),
                    exclude_columns=excl,
                )
                grad_rows = np.concatenate([out.grad_queries, out.grad_positives])
                np.add.at(grad_rows, pool_idx, out.grad_negatives)
        except FloatingPointError as e:
            raise NonFiniteLoss(
                f"stage 1 iteration {it}: {e}; replay with seed={cfg.seed}, "
                f"image indices {picks.tolist()}"
            ) from None

        grad_sel, head_grads = head_backward(head, head_cache, grad_rows)
        grad_feats = np.zeros_like(feats)
        np.add.at(grad_feats, (view_ids, ys, xs), grad_sel)
        enc_grads = encode_images_backward(enc, conv_cache, grad_feats)

        grads = {f"enc.{k}": v for k, v in enc_grads.items()}
        grads.update({f"head.{k}": v for k, v in head_grads.items()})
        lrs[it] = sgd_step(params, grads, state, cfg.optim)
        losses[it] = out.total
        gaps[it] = out.alignment_gap
        seconds[it] = time.perf_counter() - t0

    report = TrainReport(
        loss_history=losses,
        gap_history=gaps,
        lr_history=lrs,
        iter_seconds=seconds,
        skipped=skipped,
        embeddings_audited=audit.rows,
        max_norm_error=audit.max_err,
    )
    return enc, head, report


# ── stage 2 ──────────────────────────────────────────────────────────────

def frozen_pixel_embeddings(enc2d: EncoderParams2D, head2d: HeadParams, image: Image):
    """Unit-norm embedding per pixel, (H, W, M)."""
    feats, _ = encode_images_forward(enc2d, np.asarray(image.pixels)[None])
    h, w, d = feats.shape[1:]
    z, _ = head_forward(head2d, feats.reshape(h * w, d))
    return z.reshape(h, w, -1)


def pretrain_3d(dataset: list, frozen2d, cfg: Stage2Config):
    """Distill frozen pixel embeddings into the 3D encoder.

    dataset is a list of ScenePair; frozen2d is (EncoderParams2D,
    HeadParams), never updated. Returns (EncoderParams3D, HeadParams,
    TrainReport).
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    enc2d, head2d = frozen2d
    frozen_tensors = {f"enc.{k}": v for k, v in enc2d.tensors().items()}
    frozen_tensors.update({f"head.{k}": v for k, v in head2d.tensors().items()})
    checksum_start = checkpoint_checksum(frozen_tensors)

    audit = _NormAudit()
    scenes = []
    for pair in dataset:
        image, intr = pair.image, pair.intrinsics
        if cfg.crop_size is not None:
            image, intr = center_crop(image, intr, cfg.crop_size)
        vox, _ = voxelize(pair.cloud, cfg.voxel_size)
        zmap = frozen_pixel_embeddings(enc2d, head2d, image)
        audit.take(zmap.reshape(-1, zmap.shape[-1]))
        scenes.append((vox, pair.pose, intr, zmap))

    enc = EncoderParams3D.initialize(cfg.seed, cfg.feature_dim, cfg.knn)
    head = HeadParams.initialize(derive_seed(cfg.seed, "head3d"), cfg.feature_dim, cfg.embed_dim)
    params = {f"enc.{k}": v for k, v in enc.tensors().items()}
    params.update({f"head.{k}": v for k, v in head.tensors().items()})
    state = OptimState()

    losses = np.zeros(cfg.iterations)
    gaps = np.zeros(cfg.iterations)
    lrs = np.zeros(cfg.iterations)
    seconds = np.zeros(cfg.iterations)
    skipped = 0

    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        rng_iter = rng_for(cfg.seed, "stage2", it)
        picks = rng_iter.integers(0, len(scenes), size=cfg.batch_pairs)

        batch = []  # (cache, point_rows, n_points)
        feats_chunks = []
        pos_chunks = []
        for k, scene_idx in enumerate(picks):
            vox, pose, intr, zmap = scenes[int(scene_idx)]
            try:
                cloud_aug, _, (r_aug, t_aug) = augment_cloud(
                    vox, cfg.spec3d, derive_seed(cfg.seed, "s2aug", it, k)
                )
            except EmptyCloud as e:
                skipped += 1
                log.warning("iteration %d: scene slot %d skipped (%s)", it, k, e)
                continue
            pose_aug = pose.compose_with_world_transform(r_aug, t_aug)
            corrs = build_correspondences(cloud_aug, pose_aug, intr)
            if len(corrs) < 2:
                skipped += 1
                log.warning("iteration %d: scene slot %d yielded %d correspondences", it, k, len(corrs))
                continue
            n_take = min(cfg.correspondences_per_pair, len(corrs))
            pick = rng_for(cfg.seed, "s2pick", it, k).choice(len(corrs), size=n_take, replace=False)
            point_rows = corrs.point_index[pick]
            pix_r = corrs.pixel_rows()[pick]
            pix_c = corrs.pixel_columns()[pick]

            out, cache = point_forward(enc, cloud_aug.positions, cloud_aug.colors)
            feats_chunks.append(out[point_rows])
            pos_chunks.append(zmap[pix_r, pix_c])
            batch.append((cache, point_rows, out.shape[0]))
        if not batch:
            raise IterationStarved(f"iteration {it}: every scene of the batch was skipped")

        sel_feats = np.concatenate(feats_chunks)
        positives = np.concatenate(pos_chunks)
        zq, head_cache = head_forward(head, sel_feats)
        audit.take(zq)

        mode = OTHER_QUERIES if cfg.negative_source == POINTS_ONLY else ALL_IN_BATCH
        try:
            out = info_nce(zq, positives, None, LossConfig(tau=cfg.tau, negatives=mode))
        except FloatingPointError as e:
            raise NonFiniteLoss(
                f"stage 2 iteration {it}: {e}; replay with seed={cfg.seed}, "
                f"scene indices {picks.tolist()}"
            ) from None

        # the frozen targets receive no gradient: out.grad_positives is dropped
        grad_sel, head_grads = head_backward(head, head_cache, out.grad_queries)
        enc_grads = None
        offset = 0
        for cache, point_rows, n_points in batch:
            rows = grad_sel[offset : offset + point_rows.shape[0]]
            offset += point_rows.shape[0]
            grad_out = np.zeros((n_points, cfg.feature_dim))
            np.add.at(grad_out, point_rows, rows)
            g = point_backward(enc, cache, grad_out)
            if enc_grads is None:
                enc_grads = g
            else:
                for name in enc_grads:
                    enc_grads[name] += g[name]

        grads = {f"enc.{k}": v for k, v in enc_grads.items()}
        grads.update({f"head.{k}": v for k, v in head_grads.items()})
        lrs[it] = sgd_step(params, grads, state, cfg.optim)
        losses[it] = out.total
        gaps[it] = out.alignment_gap
        seconds[it] = time.perf_counter() - t0

    report = TrainReport(
        loss_history=losses,
        gap_history=gaps,
        lr_history=lrs,
        iter_seconds=seconds,
        skipped=skipped,
        embeddings_audited=audit.rows,
        max_norm_error=audit.max_err,
        frozen_checksum_start=checksum_start,
        frozen_checksum_end=checkpoint_checksum(frozen_tensors),
    )
    return enc, head, report
