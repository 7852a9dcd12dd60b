"""Hybrid RGB-ANN / event-SNN tracker with bidirectional ISTA adapters."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .eventsim import (BoundingBox, CropMap, EventStream, crop_resize, events_to_frames,
                       normalize_event_frames)
from .ista import TDA, CodeInit, IstaAdapter
from .spiking import SpikeBlock, SpikingTokenizer
from .vit import EncoderBlock, PatchEmbed, _init_weights

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hybridtrack-checkpoint"
CHECKPOINT_VERSION = 1

IMAGE_MEAN = 0.45
IMAGE_STD = 0.25


@dataclass
class TrackerConfig:
    ann_depth: int = 4
    snn_depth: int = 3
    adapter_layers: int = 2
    placement: str = "first"            # first | last
    direction: str = "bi"               # bi | i2e | e2i | none
    temporal: str = "tda"               # tda | mean (reduction inside event->RGB adapters)
    modality: str = "hybrid"            # hybrid | rgb | event
    time_steps: int = 3
    embed_dim: int = 64
    latent_dim: int = 8
    heads: int = 4
    snn_heads: int = 1
    mlp_ratio: float = 4.0
    snn_mlp_ratio: float = 4.0
    snn_kernel: int = 1
    patch: int = 16
    template_size: int = 128
    search_size: int = 256
    template_context: float = 2.0
    search_context: float = 4.0
    head_channels: int = 64
    tau_decay: float = 0.5
    v_threshold: float = 1.0
    tda_pool: int = 8
    adapter_skip: bool = True
    dual_chain: bool = False
    literal_wiring: bool = False
    event_cap: float = 5.0
    loss_weights: tuple[float, float, float] = (2.0, 5.0, 1.0)
    focal_alpha: float = 2.0
    focal_beta: float = 4.0

    def __post_init__(self):
        self.loss_weights = tuple(self.loss_weights)
        if self.placement not in ("first", "last"):
            raise ValueError(f"placement must be 'first' or 'last', got {self.placement!r}")
        if self.direction not in ("bi", "i2e", "e2i", "none"):
            raise ValueError(f"unknown adapter direction {self.direction!r}")
        if self.modality not in ("hybrid", "rgb", "event"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.temporal not in ("tda", "mean"):
            raise ValueError(f"unknown temporal reduction {self.temporal!r}")
        if self.embed_dim % self.heads or self.embed_dim % self.snn_heads:
            raise ValueError("embed_dim must be divisible by the head counts")
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if self.template_size * 2 != self.search_size:
            raise ValueError("search crop must be twice the template crop")
        if self.template_size % self.patch:
            raise ValueError("crop sizes must be multiples of the patch size")
        if self.modality == "hybrid":
            if self.adapter_layers < 0 or self.adapter_layers > min(self.ann_depth, self.snn_depth):
                raise ValueError("adapter_layers must lie in [0, min(ann_depth, snn_depth)]")
            if self.snn_depth > self.ann_depth:
                raise ValueError("the spiking branch cannot be deeper than the ANN branch")

    @property
    def feat_size(self) -> int:
        return self.search_size // self.patch

    @property
    def n_template_tokens(self) -> int:
        return (self.template_size // self.patch) ** 2

    def adapter_pairs(self) -> list[tuple[int, int]]:
        """(ANN layer, SNN layer) pairs that carry adapters."""
        if self.modality != "hybrid" or self.direction == "none":
            return []
        k = self.adapter_layers
        if self.placement == "first":
            return [(i, i) for i in range(k)]
        return [(self.ann_depth - k + j, self.snn_depth - k + j) for j in range(k)]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrackerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tracker config keys: {sorted(unknown)}")
        return cls(**d)


class CenterHead(nn.Module):
    """Convolutional center-score, offset and size predictor on the search grid."""

    def __init__(self, dim: int, channels: int = 64, bias: bool = True):
        super().__init__()

        def branch(out):
            return nn.Sequential(
                nn.Conv2d(dim, channels, 3, padding=1, bias=bias), nn.BatchNorm2d(channels), nn.ReLU(),
                nn.Conv2d(channels, channels // 2, 3, padding=1, bias=bias), nn.BatchNorm2d(channels // 2), nn.ReLU(),
                nn.Conv2d(channels // 2, out, 1, bias=bias))

        self.score = branch(1)
        self.offset = branch(2)
        self.size = branch(2)
        if bias:
            # low prior on the centre score keeps the initial focal loss moderate
            nn.init.constant_(self.score[-1].bias, -2.19)

    def forward(self, feat: torch.Tensor) -> dict[str, torch.Tensor]:
        return {
            "score": self.score(feat),                       # logits
            "offset": torch.sigmoid(self.offset(feat)) - 0.5,  # cell units around the cell centre
            "size": torch.sigmoid(self.size(feat)),          # fraction of the search crop
        }


class HybridTracker(nn.Module):
    """Dual-branch one-stream tracker.

    Inputs are RGB crops ``(B, 3, H, W)`` and event crops ``(B, T, 3, H, W)``.
    Tokens are ``(B, M, N)`` for the ANN and ``(T, B, M, N)`` for the SNN.
    """

    def __init__(self, cfg: TrackerConfig):
        super().__init__()
        self.cfg = cfg
        m = cfg.embed_dim
        self.use_rgb = cfg.modality in ("hybrid", "rgb")
        self.use_event = cfg.modality in ("hybrid", "event")
        if self.use_rgb:
            self.embed = PatchEmbed(m, cfg.patch, cfg.template_size, cfg.search_size)
            self.ann_blocks = nn.ModuleList(EncoderBlock(m, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.ann_depth))
            self.ann_norm = nn.LayerNorm(m)
        if self.use_event:
            self.tokenizer = SpikingTokenizer(m, cfg.patch, 3, cfg.tau_decay, cfg.v_threshold)
            self.snn_blocks = nn.ModuleList(
                SpikeBlock(m, cfg.snn_heads, cfg.snn_mlp_ratio, cfg.snn_kernel, cfg.tau_decay, cfg.v_threshold)
                for _ in range(cfg.snn_depth))
        self.apply(_init_weights)

        self.pairs = cfg.adapter_pairs()
        self.adapters = nn.ModuleDict()
        self.p0 = nn.ModuleDict()
        self.tda = None
        directions = []
        if self.pairs:
            directions = {"bi": ["e2i", "i2e"], "e2i": ["e2i"], "i2e": ["i2e"]}[cfg.direction]
        for direction in directions:
            for ai, _ in self.pairs:
                for stage in (1, 2):
                    self.adapters[f"{direction}_{ai}_{stage}"] = IstaAdapter(
                        m, cfg.latent_dim, single_step_target=(direction == "e2i"),
                        temporal=cfg.temporal, skip=cfg.adapter_skip)
            for chain in self._chains(direction):
                self.p0[chain] = CodeInit(m, cfg.latent_dim)
        self.directions = directions
        if "e2i" in directions and cfg.temporal == "tda" and cfg.time_steps > 1:
            self.tda = TDA(cfg.time_steps, cfg.tda_pool)
        self.head = CenterHead(m, cfg.head_channels)

    def _chains(self, direction: str) -> list[str]:
        return [f"{direction}_1", f"{direction}_2"] if self.cfg.dual_chain else [direction]

    def _chain_for(self, direction: str, stage: int) -> str:
        return f"{direction}_{stage}" if self.cfg.dual_chain else direction

    # -- branches ---------------------------------------------------------

    def embed_inputs(self, z_img, x_img, z_evt, x_evt):
        x_ann = self.embed(z_img, x_img) if self.use_rgb else None
        x_snn = None
        if self.use_event:
            x_snn = self.tokenizer(z_evt.transpose(0, 1), x_evt.transpose(0, 1))
        return x_ann, x_snn

    def init_codes(self, x_ann, x_snn) -> dict[str, torch.Tensor]:
        codes = {}
        for direction in self.directions:
            src = x_snn if direction == "e2i" else x_ann
            for chain in self._chains(direction):
                codes[chain] = self.p0[chain](src)
        return codes

    def hybrid_layer(self, x_ann, x_snn, ann_idx: int, snn_idx: int,
                     codes: dict[str, torch.Tensor] | None = None):
        """One aligned ANN/SNN layer with adapters at the MSA and MLP stages.

        ``codes`` maps chain name to the running sparse code and is updated in
        place. Layers without adapters simply run both blocks.
        """
        blk = self.ann_blocks[ann_idx]
        sblk = self.snn_blocks[snn_idx]
        codes = {} if codes is None else codes
        e2i = [k for k in (f"e2i_{ann_idx}_1", f"e2i_{ann_idx}_2") if k in self.adapters]
        i2e = [k for k in (f"i2e_{ann_idx}_1", f"i2e_{ann_idx}_2") if k in self.adapters]

        def adapt(name, src, stage):
            direction = name.split("_")[0]
            chain = self._chain_for(direction, stage)
            mapped, codes[chain] = self.adapters[name](src, codes[chain], self.tda)
            return mapped

        x_ann1 = x_ann + blk.msa(x_ann)
        x_snn1 = x_snn + sblk.msa(x_snn)
        if e2i:
            x_ann1 = x_ann1 + adapt(e2i[0], x_snn, 1)
        if i2e:
            # single-step code broadcast over all T steps
            x_snn1 = x_snn1 + adapt(i2e[0], x_ann, 1)

        mlp_in_ann = x_ann if self.cfg.literal_wiring else x_ann1
        mlp_in_snn = x_snn if self.cfg.literal_wiring else x_snn1
        x_ann2 = x_ann1 + blk.mlp(mlp_in_ann)
        x_snn2 = x_snn1 + sblk.mlp(mlp_in_snn)
        if e2i:
            x_ann2 = x_ann2 + adapt(e2i[1], x_snn1, 2)
        if i2e:
            x_snn2 = x_snn2 + adapt(i2e[1], x_ann1, 2)
        return x_ann2, x_snn2

    def encode(self, z_img, x_img, z_evt, x_evt):
        """Run both encoders; returns final ANN tokens (B, M, N) and SNN tokens (T, B, M, N)."""
        return self.encode_tokens(*self.embed_inputs(z_img, x_img, z_evt, x_evt))

    def encode_tokens(self, x_ann, x_snn):
        """Encoder stack applied to already embedded tokens."""
        if self.cfg.modality == "rgb":
            for blk in self.ann_blocks:
                x_ann = blk(x_ann)
        elif self.cfg.modality == "event":
            for sblk in self.snn_blocks:
                x_snn = sblk(x_snn)
        else:
            codes = self.init_codes(x_ann, x_snn)
            paired = dict(self.pairs)
            j = 0
            for i, blk in enumerate(self.ann_blocks):
                if i in paired:
                    while j < paired[i]:
                        x_snn = self.snn_blocks[j](x_snn)
                        j += 1
                    x_ann, x_snn = self.hybrid_layer(x_ann, x_snn, i, j, codes)
                    j += 1
                else:
                    x_ann = blk(x_ann)
            while j < len(self.snn_blocks):
                x_snn = self.snn_blocks[j](x_snn)
                j += 1
        if x_ann is not None:
            x_ann = self.ann_norm(x_ann.transpose(-1, -2)).transpose(-1, -2)
        return x_ann, x_snn

    def fuse_and_head(self, x_ann, x_snn) -> dict[str, torch.Tensor]:
        fused = 0
        if x_ann is not None:
            fused = x_ann
        if x_snn is not None:
            fused = fused + x_snn.mean(dim=0)
        nz = self.cfg.n_template_tokens
        fs = self.cfg.feat_size
        search = fused[..., nz:]
        feat = search.reshape(search.shape[0], search.shape[1], fs, fs)
        return self.head(feat)

    def forward(self, z_img, x_img, z_evt, x_evt) -> dict[str, torch.Tensor]:
        x_ann, x_snn = self.encode(z_img, x_img, z_evt, x_evt)
        return self.fuse_and_head(x_ann, x_snn)

    def zero_adapters_(self) -> None:
        """Silence every adapter by zeroing its synthesis dictionary."""
        with torch.no_grad():
            for ad in self.adapters.values():
                ad.D_out.zero_()

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {"ann": [], "snn": [], "adapters": [], "tda": [], "head": []}
        for name, p in self.named_parameters():
            if name.startswith(("embed.", "ann_blocks.", "ann_norm.")):
                groups["ann"].append(p)
            elif name.startswith(("tokenizer.", "snn_blocks.")):
                groups["snn"].append(p)
            elif name.startswith(("adapters.", "p0.")):
                groups["adapters"].append(p)
            elif name.startswith("tda."):
                groups["tda"].append(p)
            else:
                groups["head"].append(p)
        return groups


# ---------------------------------------------------------------------------
# targets, decoding and losses
# ---------------------------------------------------------------------------

def encode_box(box_crop: torch.Tensor, feat_size: int, search_size: int):
    """Crop-space (cx, cy, w, h) -> (cell index x, y), offset (2,), normalised size (2,)."""
    stride = search_size / feat_size
    gx = box_crop[..., 0] / stride
    gy = box_crop[..., 1] / stride
    ix = torch.clamp(torch.floor(gx), 0, feat_size - 1).long()
    iy = torch.clamp(torch.floor(gy), 0, feat_size - 1).long()
    off = torch.stack([gx - ix - 0.5, gy - iy - 0.5], dim=-1)
    size = box_crop[..., 2:4] / search_size
    return ix, iy, off, size


def boxes_at(pred: dict[str, torch.Tensor], ix: torch.Tensor, iy: torch.Tensor, search_size: int) -> torch.Tensor:
    """Read crop-space boxes (B, 4) from the offset/size maps at the given cells."""
    fs = pred["offset"].shape[-1]
    stride = search_size / fs
    b = torch.arange(ix.shape[0], device=ix.device)
    off = pred["offset"][b, :, iy, ix]
    size = pred["size"][b, :, iy, ix]
    cx = (ix.to(off.dtype) + 0.5 + off[:, 0]) * stride
    cy = (iy.to(off.dtype) + 0.5 + off[:, 1]) * stride
    return torch.stack([cx, cy, size[:, 0] * search_size, size[:, 1] * search_size], dim=-1)


def decode_box(score, offset, size, crop_map: CropMap | None, search_size: int,
               canvas: tuple[int, int] | None = None) -> BoundingBox:
    """Peak cell plus offset -> crop-space box -> canvas box via the inverse crop map.

    Single-sample maps: ``score`` (fs, fs) or (1, fs, fs), ``offset``/``size`` (2, fs, fs).
    The centre is clamped to the canvas and the size to at least one pixel.
    """
    score = torch.as_tensor(score).reshape(-1, *torch.as_tensor(score).shape[-2:])[0]
    offset = torch.as_tensor(offset)
    size = torch.as_tensor(size)
    for t in (score, offset, size):
        if not bool(torch.isfinite(t).all()):
            raise ValueError("prediction maps contain non-finite values")
    fs = score.shape[-1]
    idx = int(torch.argmax(score))
    iy, ix = divmod(idx, fs)
    pred = {"offset": offset[None], "size": size[None]}
    box = boxes_at(pred, torch.tensor([ix]), torch.tensor([iy]), search_size)[0].double().tolist()
    cx, cy, w, h = box
    w, h = max(w, 1e-3), max(h, 1e-3)
    out = BoundingBox(cx, cy, w, h)
    if crop_map is not None:
        out = crop_map.to_canvas(out)
    if canvas is not None:
        ch, cw = canvas
        out = BoundingBox(float(np.clip(out.cx, 0, cw)), float(np.clip(out.cy, 0, ch)),
                          float(np.clip(out.w, 1.0, cw)), float(np.clip(out.h, 1.0, ch)))
    return out


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """CenterNet radius keeping a shifted box above ``min_overlap`` IoU."""
    a1, b1 = 1, height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2
    a2, b2 = 4, 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2
    a3, b3 = 4 * min_overlap, -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def center_heatmap(box_crop: torch.Tensor, feat_size: int, search_size: int) -> torch.Tensor:
    """Gaussian heatmaps (B, 1, fs, fs) with value exactly 1 at each gt cell."""
    stride = search_size / feat_size
    ix, iy, _, _ = encode_box(box_crop, feat_size, search_size)
    ys = torch.arange(feat_size, dtype=box_crop.dtype).view(1, -1, 1)
    xs = torch.arange(feat_size, dtype=box_crop.dtype).view(1, 1, -1)
    radii = torch.tensor([max(0.0, gaussian_radius(float(h) / stride, float(w) / stride))
                          for w, h in box_crop[:, 2:4].tolist()], dtype=box_crop.dtype)
    sigma = ((2 * radii + 1) / 6).view(-1, 1, 1)
    d2 = (xs - ix.view(-1, 1, 1).to(xs.dtype)) ** 2 + (ys - iy.view(-1, 1, 1).to(ys.dtype)) ** 2
    return torch.exp(-d2 / (2 * sigma ** 2)).unsqueeze(1)


def focal_loss(logits: torch.Tensor, heatmap: torch.Tensor, alpha: float = 2.0, beta: float = 4.0) -> torch.Tensor:
    """Penalty-reduced pixel-wise focal loss, normalised by the number of peaks."""
    p = torch.sigmoid(logits).clamp(1e-6, 1 - 1e-6)
    pos = heatmap.eq(1).to(p.dtype)
    neg = 1.0 - pos
    pos_loss = torch.log(p) * (1 - p) ** alpha * pos
    neg_loss = torch.log(1 - p) * p ** alpha * (1 - heatmap) ** beta * neg
    num_pos = pos.sum().clamp(min=1.0)
    return -(pos_loss.sum() + neg_loss.sum()) / num_pos


def cxcywh_to_xyxy(b: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = b.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def giou(b1: torch.Tensor, b2: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """GIoU and IoU of matching rows of two (..., 4) xyxy tensors."""
    area1 = (b1[..., 2] - b1[..., 0]) * (b1[..., 3] - b1[..., 1])
    area2 = (b2[..., 2] - b2[..., 0]) * (b2[..., 3] - b2[..., 1])
    lt = torch.maximum(b1[..., :2], b2[..., :2])
    rb = torch.minimum(b1[..., 2:], b2[..., 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area1 + area2 - inter
    iou = inter / union
    elt = torch.minimum(b1[..., :2], b2[..., :2])
    erb = torch.maximum(b1[..., 2:], b2[..., 2:])
    ewh = (erb - elt).clamp(min=0)
    enclose = ewh[..., 0] * ewh[..., 1]
    return iou - (enclose - union) / enclose, iou


def loss_total(pred: dict[str, torch.Tensor], gt_crop: torch.Tensor, cfg: TrackerConfig,
               regress_at: str = "gt") -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted focal + L1 + GIoU loss for a batch of crop-space gt boxes (B, 4).

    Boxes are compared in coordinates normalised by the search size. Samples
    whose gt centre lies outside the crop are dropped with a warning.
    ``regress_at="gt"`` reads the regressed box at the gt cell; ``"peak"``
    reads it at the predicted score peak.
    """
    s = cfg.search_size
    inside = (gt_crop[:, 0] >= 0) & (gt_crop[:, 0] < s) & (gt_crop[:, 1] >= 0) & (gt_crop[:, 1] < s)
    if not bool(inside.all()):
        log.warning("skipping %d sample(s) with gt outside the search crop", int((~inside).sum()))
        if not bool(inside.any()):
            zero = pred["score"].sum() * 0.0
            return zero, {"focal": 0.0, "l1": 0.0, "giou": 0.0, "total": 0.0}
        pred = {k: v[inside] for k, v in pred.items()}
        gt_crop = gt_crop[inside]
    fs = pred["score"].shape[-1]
    heat = center_heatmap(gt_crop, fs, s).to(pred["score"].dtype)
    l_focal = focal_loss(pred["score"], heat, cfg.focal_alpha, cfg.focal_beta)
    if regress_at == "peak":
        flat = pred["score"].flatten(1).argmax(dim=1)
        iy, ix = flat // fs, flat % fs
    else:
        ix, iy, _, _ = encode_box(gt_crop, fs, s)
    boxes = boxes_at(pred, ix, iy, s) / s
    gt_n = gt_crop.to(boxes.dtype) / s
    pb, gb = cxcywh_to_xyxy(boxes), cxcywh_to_xyxy(gt_n)
    l1 = F.l1_loss(pb, gb)
    g, _ = giou(pb, gb)
    l_giou = (1.0 - g).mean()
    w1, w2, w3 = cfg.loss_weights
    total = w1 * l_focal + w2 * l1 + w3 * l_giou
    parts = {"focal": l_focal, "l1": l1, "giou": l_giou, "total": total}
    return total, {k: float(v.detach()) for k, v in parts.items()}


# ---------------------------------------------------------------------------
# input preparation and tracking
# ---------------------------------------------------------------------------

def event_window(i: int, timestamps: Sequence[float]) -> tuple[float, float]:
    """Events belonging to frame ``i``: the interval since the previous frame."""
    ts = np.asarray(timestamps, dtype=np.float64)
    if len(ts) < 2:
        return float(ts[0]), float(np.nextafter(ts[0], np.inf))
    if i == 0:
        return float(ts[0]), float(np.nextafter(ts[1], np.inf))
    return float(ts[i - 1]), float(np.nextafter(ts[i], np.inf))


def normalize_image(img: np.ndarray) -> np.ndarray:
    return (img - IMAGE_MEAN) / IMAGE_STD


def prepare_crop(frame: np.ndarray, events: EventStream | None, window: tuple[float, float],
                 box: BoundingBox, context: float, size: int, cfg: TrackerConfig):
    """RGB crop (3, S, S) and normalised event crop (T, 3, S, S) around ``box``."""
    img, cmap = crop_resize(frame, box, context, size)
    if frame.dtype == np.uint8:
        img = img / 255.0
    h, w = frame.shape[-2:]
    if events is None:
        evt = np.zeros((cfg.time_steps, 3, size, size))
    else:
        et = events_to_frames(events, window[0], window[1], cfg.time_steps, (h, w), c_max=cfg.event_cap)
        evt, _ = crop_resize(et.data, box, context, size)
        evt = normalize_event_frames(evt, cfg.event_cap)
    return normalize_image(img), evt, cmap


@dataclass
class TrackState:
    template_img: torch.Tensor
    template_evt: torch.Tensor
    box: BoundingBox
    crop_map: CropMap | None = None
    history: list = field(default_factory=list)


@torch.no_grad()
def track_sequence(model: HybridTracker, frames: Sequence[np.ndarray], events: EventStream | None,
                   b0: BoundingBox, timestamps: Sequence[float] | None = None) -> list[BoundingBox]:
    """Track from the first-frame box; one prediction per frame (frame 0 included)."""
    if len(frames) == 0:
        return []
    cfg = model.cfg
    model.eval()
    dtype = next(model.parameters()).dtype
    if timestamps is None:
        timestamps = np.arange(len(frames), dtype=np.float64)
    z_img, z_evt, _ = prepare_crop(frames[0], events, event_window(0, timestamps), b0,
                                   cfg.template_context, cfg.template_size, cfg)
    state = TrackState(torch.as_tensor(z_img, dtype=dtype)[None], torch.as_tensor(z_evt, dtype=dtype)[None], b0)
    canvas = frames[0].shape[-2:]
    out = []
    for i, frame in enumerate(frames):
        x_img, x_evt, cmap = prepare_crop(frame, events, event_window(i, timestamps), state.box,
                                          cfg.search_context, cfg.search_size, cfg)
        pred = model(state.template_img, torch.as_tensor(x_img, dtype=dtype)[None],
                     state.template_evt, torch.as_tensor(x_evt, dtype=dtype)[None])
        box = decode_box(pred["score"][0], pred["offset"][0], pred["size"][0], cmap, cfg.search_size, canvas)
        state.box, state.crop_map = box, cmap
        out.append(box)
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: HybridTracker, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                "config": model.cfg.to_dict(), "state_dict": model.state_dict(),
                "extra": extra or {}}, path)


def load_checkpoint(path) -> tuple[HybridTracker, dict]:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a tracker checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    model = HybridTracker(TrackerConfig.from_dict(blob["config"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob.get("extra", {})
