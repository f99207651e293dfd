"""Request handlers: target registry, augmentation, loss evaluation.

The evaluation contract: losses (and their gradient with respect to the
unaugmented sketch image) of

    total = [geometric] + ws * [semantic]

where semantic is the cosine distance between projected embeddings and
geometric is the per-layer mean squared difference of intermediate
activations, averaged over augmented views. Augmentation (random
perspective + random resized crop, the CLIPDraw recipe) applies the same
transform to sketch and target within a view and lives inside the
autograd graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import wire
from .models import VisionTower

log = logging.getLogger("sidecar")

DEFAULT_LAYERS = (3, 4)
DEFAULT_WS = 0.1


class ServiceError(Exception):
    """Request-level failure; reported to the peer as an ERROR frame."""


@dataclass
class AugmentConfig:
    perspective_distortion: float = 0.5
    crop_scale: tuple[float, float] = (0.8, 1.0)
    crop_ratio: tuple[float, float] = (0.75, 4.0 / 3.0)


@dataclass
class Target:
    image: torch.Tensor            # (1, 3, H, W), float32, [0, 1]
    channels: int                  # channel count the client registered with
    embed: torch.Tensor            # clean features, computed once
    hidden: list[torch.Tensor]
    relevancy: np.ndarray          # (H, W), max-normalized


def _to_tensor(image: np.ndarray) -> tuple[torch.Tensor, int]:
    """(H, W, C) numpy -> (1, 3, H, W) tensor; single channel replicates."""
    t = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).unsqueeze(0)
    channels = t.shape[1]
    if channels == 1:
        t = t.expand(-1, 3, -1, -1)
    return t.float(), channels


def _rand_int(gen: torch.Generator, low: int, high: int) -> int:
    """Uniform integer in [low, high] inclusive."""
    if high <= low:
        return low
    return int(torch.randint(low, high + 1, (1,), generator=gen).item())


def _uniform(gen: torch.Generator, low: float, high: float) -> float:
    return float(torch.empty(1).uniform_(low, high, generator=gen).item())


def _perspective_endpoints(gen: torch.Generator, width: int, height: int,
                           distortion: float):
    """Corner jitter in the style of torchvision's RandomPerspective."""
    dx = int(distortion * width / 2)
    dy = int(distortion * height / 2)
    start = [[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]]
    end = [
        [_rand_int(gen, 0, dx), _rand_int(gen, 0, dy)],
        [width - 1 - _rand_int(gen, 0, dx), _rand_int(gen, 0, dy)],
        [width - 1 - _rand_int(gen, 0, dx), height - 1 - _rand_int(gen, 0, dy)],
        [_rand_int(gen, 0, dx), height - 1 - _rand_int(gen, 0, dy)],
    ]
    return start, end


def _crop_box(gen: torch.Generator, width: int, height: int,
              scale: tuple[float, float], ratio: tuple[float, float]):
    """Area/aspect sampling as in RandomResizedCrop, center-crop fallback."""
    area = float(width * height)
    log_ratio = (np.log(ratio[0]), np.log(ratio[1]))
    for _ in range(10):
        target_area = area * _uniform(gen, scale[0], scale[1])
        aspect = float(np.exp(_uniform(gen, log_ratio[0], log_ratio[1])))
        w = int(round(np.sqrt(target_area * aspect)))
        h = int(round(np.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = _rand_int(gen, 0, height - h)
            left = _rand_int(gen, 0, width - w)
            return top, left, h, w
    side = min(width, height)
    return (height - side) // 2, (width - side) // 2, side, side


def _homography(src_pts, dst_pts) -> np.ndarray:
    """3x3 matrix H with H @ (x, y, 1) ~ (u, v, 1) for the 4 point pairs."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src_pts, dst_pts):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    coeffs = np.linalg.solve(np.asarray(rows, dtype=np.float64),
                             np.asarray(rhs, dtype=np.float64))
    return np.append(coeffs, 1.0).reshape(3, 3)


def _warp_perspective(batch: torch.Tensor, start, end) -> torch.Tensor:
    """Differentiable perspective warp moving content start -> end.

    Regions pulled from outside the source fill with white (canvas, not
    ink): the same warp applied to an all-ones mask measures source
    coverage and the complement blends in 1.0.
    """
    h, w = batch.shape[-2:]
    hom = _homography(end, start)  # output pixel -> source pixel
    ys, xs = np.mgrid[0:h, 0:w]
    ones = np.ones_like(xs)
    coords = np.stack([xs, ys, ones]).reshape(3, -1)
    mapped = hom @ coords
    src = mapped[:2] / mapped[2]
    # align_corners=False: normalized -1/+1 sit half a pixel outside 0/N-1
    norm_x = (2.0 * src[0] + 1.0) / w - 1.0
    norm_y = (2.0 * src[1] + 1.0) / h - 1.0
    grid = torch.from_numpy(
        np.stack([norm_x, norm_y], axis=-1).reshape(1, h, w, 2)).float()
    grid = grid.expand(batch.shape[0], -1, -1, -1)
    warped = F.grid_sample(batch, grid, mode="bilinear", padding_mode="zeros",
                           align_corners=False)
    mask = F.grid_sample(torch.ones_like(batch[:, :1]), grid, mode="bilinear",
                         padding_mode="zeros", align_corners=False)
    return warped + (1.0 - mask)


def augment_pair(batch: torch.Tensor, gen: torch.Generator,
                 config: AugmentConfig) -> torch.Tensor:
    """One sampled perspective + resized crop applied to the whole batch."""
    h, w = batch.shape[-2:]
    start, end = _perspective_endpoints(gen, w, h, config.perspective_distortion)
    out = _warp_perspective(batch, start, end)
    top, left, ch, cw = _crop_box(gen, w, h, config.crop_scale, config.crop_ratio)
    cropped = out[:, :, top:top + ch, left:left + cw]
    return F.interpolate(cropped, size=(h, w), mode="bilinear", align_corners=False)


class LossService:
    """Stateful request processor; one instance per served session."""

    def __init__(self, tower: VisionTower, ws: float = DEFAULT_WS,
                 layers: tuple[int, ...] = DEFAULT_LAYERS,
                 augment: AugmentConfig = AugmentConfig()):
        self.tower = tower
        self.ws = float(ws)
        self.layers = tuple(layers)
        self.augment = augment
        self.targets: dict[int, Target] = {}
        self._next_id = 0

    # -- handlers ---------------------------------------------------------

    def handle_frame(self, msg_type: int, payload: bytes) -> tuple[bytes, bool]:
        """Returns (reply frame, keep_serving)."""
        try:
            if msg_type == wire.MSG_REGISTER_TARGET:
                return self._handle_register(payload), True
            if msg_type == wire.MSG_EVAL_LOSS:
                return self._handle_eval(payload), True
            if msg_type == wire.MSG_SHUTDOWN:
                return wire.encode_frame(wire.MSG_SHUTDOWN_OK), False
            raise ServiceError(f"unknown message type {msg_type}")
        except (ServiceError, wire.WireError, ValueError) as exc:
            log.warning("request failed: %s", exc)
            return wire.error_frame(str(exc)), True

    def _handle_register(self, payload: bytes) -> bytes:
        image = wire.parse_register_target(payload)
        target_id, relevancy = self.register_target(image)
        return wire.encode_target_ready(target_id, relevancy)

    def _handle_eval(self, payload: bytes) -> bytes:
        target_id, views, seed, flags, image = wire.parse_eval_loss(payload)
        total, semantic, geometric, grad = self.eval_loss(target_id, image, views,
                                                          seed, flags)
        return wire.encode_loss_report(total, semantic, geometric, grad)

    # -- operations -------------------------------------------------------

    def register_target(self, image: np.ndarray) -> tuple[int, np.ndarray]:
        tensor, channels = _to_tensor(image)
        with torch.no_grad():
            embed, hidden = self.tower.forward_features(tensor, self.layers)
        grid = self.tower.attention_relevancy(tensor)
        h, w = tensor.shape[-2:]
        upsampled = F.interpolate(grid[None, None], size=(h, w), mode="bilinear",
                                  align_corners=False)[0, 0]
        peak = float(upsampled.max())
        if peak > 0:
            upsampled = upsampled / peak
        relevancy = upsampled.numpy().astype(np.float32)

        target_id = self._next_id
        self._next_id += 1
        self.targets[target_id] = Target(tensor, channels, embed, hidden, relevancy)
        log.info("registered target %d (%dx%d, %d channel(s))", target_id, w, h, channels)
        return target_id, relevancy

    def eval_loss(self, target_id: int, image: np.ndarray, views: int, seed: int,
                  flags: int):
        target = self.targets.get(target_id)
        if target is None:
            raise ServiceError(f"unknown target {target_id}")
        if image.shape != (target.image.shape[2], target.image.shape[3], target.channels):
            raise ServiceError(
                f"image shape {image.shape} does not match registered target")

        if flags & wire.FLAG_L2_PARITY:
            return self._parity_mse(target, image)

        leaf = torch.from_numpy(np.ascontiguousarray(image)).float().requires_grad_(True)
        sketch = leaf.permute(2, 0, 1).unsqueeze(0)
        if target.channels == 1:
            sketch = sketch.expand(-1, 3, -1, -1)

        if views == 0:
            embed_s, hidden_s = self.tower.forward_features(sketch, self.layers)
            semantic, geometric = self._pair_losses(
                embed_s[0], target.embed[0],
                [hs[0] for hs in hidden_s], [ht[0] for ht in target.hidden])
        else:
            batches = []
            for v in range(views):
                gen = torch.Generator().manual_seed((seed * 1_000_003 + v) % 2**63)
                pair = torch.cat([sketch, target.image], dim=0)
                batches.append(augment_pair(pair, gen, self.augment))
            batch = torch.cat(batches, dim=0)  # (2 * views, 3, H, W)
            embed, hidden = self.tower.forward_features(batch, self.layers)
            sem_terms, geo_terms = [], []
            for v in range(views):
                s, t = 2 * v, 2 * v + 1
                sem_v, geo_v = self._pair_losses(
                    embed[s], embed[t], [h[s] for h in hidden], [h[t] for h in hidden])
                sem_terms.append(sem_v)
                geo_terms.append(geo_v)
            semantic = torch.stack(sem_terms).mean()
            geometric = torch.stack(geo_terms).mean()

        total = sketch.new_zeros(())
        if flags & wire.FLAG_GEOMETRIC:
            total = total + geometric
        if flags & wire.FLAG_SEMANTIC:
            total = total + self.ws * semantic
        if total.requires_grad:
            total.backward()
            grad = leaf.grad.detach().numpy()
        else:
            grad = np.zeros_like(image, dtype=np.float32)

        total = float(total.detach())
        sem_out = float(semantic.detach()) if flags & wire.FLAG_SEMANTIC else 0.0
        geo_out = float(geometric.detach()) if flags & wire.FLAG_GEOMETRIC else 0.0
        self._check_finite(total, sem_out, geo_out, grad)
        return total, sem_out, geo_out, grad

    def _pair_losses(self, embed_s, embed_t, hidden_s, hidden_t):
        semantic = 1.0 - F.cosine_similarity(embed_s[None], embed_t[None])[0]
        geometric = sum(((hs - ht) ** 2).mean() for hs, ht in zip(hidden_s, hidden_t))
        return semantic, geometric

    def _parity_mse(self, target: Target, image: np.ndarray):
        """Model-free mean squared error, for cross-implementation checks."""
        ref = target.image[0].permute(1, 2, 0).numpy()
        if target.channels == 1:
            ref = ref[:, :, :1]
        diff = image.astype(np.float64) - ref.astype(np.float64)
        mse = float(np.mean(diff * diff))
        grad = (2.0 * diff / diff.size).astype(np.float32)
        return mse, 0.0, mse, grad

    @staticmethod
    def _check_finite(total, semantic, geometric, grad):
        if not all(map(np.isfinite, (total, semantic, geometric))):
            raise ServiceError("loss came out non-finite")
        if not np.all(np.isfinite(grad)):
            raise ServiceError("gradient came out non-finite")
