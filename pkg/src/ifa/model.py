"""Encoder plus aligner assembled from a RunConfig."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .aligners import FpnDecoder, flops_of_aligner
from .config import RunConfig
from .encoder import Encoder, EncoderConfig
from .grid import FeatureGrid, query_array
from .head import IfaHead, decode, flops_of_head
from .posenc import freqs_for_dim
from .tensor import Parameter, Tensor


class ResolutionError(ValueError):
    """A baseline was asked for a resolution other than its native one."""


class Segmenter:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.train.seed)
        self.enc_cfg = EncoderConfig(list(cfg.enc.widths), cfg.enc.blocks, cfg.enc.extra_pool,
                                     cfg.num_classes)
        self.encoder = Encoder(self.enc_cfg, rng)
        chans = self.enc_cfg.level_channels()
        self.kind = cfg.align.kind
        if self.kind == "ifa":
            self.decoder = IfaHead(
                chans, cfg.num_classes, proj_dim=cfg.head.proj_dim,
                hidden=cfg.head.mlp_widths, pe_mode=cfg.pe.mode,
                pe_freqs=freqs_for_dim(cfg.pe.mode, cfg.pe.total_dim),
                pe_learned=cfg.pe.learned, share_pe=cfg.pe.share_across_levels,
                chunk_size=cfg.head.chunk_size, rng=rng)
        else:
            self.decoder = FpnDecoder(self.kind, chans, cfg.num_classes,
                                      fpn_dim=cfg.align.fpn_dim, rng=rng)

    # ------------------------------------------------------------ params

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = set(named) ^ set(arrays)
        if missing:
            raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)[:5]}")
        for k, p in named.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != {p.shape}")
            p.data = np.asarray(arrays[k], dtype=p.data.dtype).copy()

    def head_params(self) -> int:
        return self.decoder.num_params()

    def total_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    # ----------------------------------------------------------- forward

    def features(self, images: np.ndarray) -> dict[int, Tensor]:
        return self.encoder(Tensor(np.asarray(images, dtype=T.get_dtype())))

    def train_logits(self, feats: dict[int, Tensor], labels: np.ndarray,
                     rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
        """Main logits and the labels they are scored against.

        The IFA head is evaluated at a random subset of pixel centers per
        image; FPN baselines emit stride-4 logits bilinearly resized to the
        label map.
        """
        B, H, W = labels.shape
        if self.kind != "ifa":
            out = self.decoder(feats)
            return T.bilinear_upsample(out, H, W), labels
        n = min(self.cfg.train.query_samples, H * W)
        coords = query_array(H, W)
        picks = [np.sort(rng.choice(H * W, n, replace=False)) for _ in range(B)]
        idx = np.concatenate(picks)
        bidx = np.repeat(np.arange(B), n)
        projected = self.decoder.project(feats)
        logits = self.decoder.query_logits(projected, bidx, coords[idx])
        return logits, labels.reshape(B, -1)[bidx, idx]

    def predict_logits(self, image: np.ndarray, h_out: int | None = None,
                       w_out: int | None = None, row_stable: bool = True) -> np.ndarray:
        """(N, h_out, w_out) logits for one (3, H, W) image."""
        _, H, W = image.shape
        h_out = H if h_out is None else h_out
        w_out = W if w_out is None else w_out
        feats = self.features(image[None])
        if self.kind != "ifa":
            if (h_out, w_out) != (H, W):
                raise ResolutionError(
                    f"{self.kind} aligner only predicts at the input resolution {H}x{W}; "
                    f"arbitrary-resolution decoding needs the ifa aligner")
            out = self.decoder(feats)
            return T.bilinear_upsample(out, H, W).data[0]
        projected = self.decoder.project(feats)
        if row_stable:
            pyr = {lv: FeatureGrid(lv, t.data[0]) for lv, t in projected.items()}
            logits = decode(self.decoder, pyr, query_array(h_out, w_out))
        else:
            coords = query_array(h_out, w_out)
            logits = self.decoder.query_logits(
                projected, np.zeros(len(coords), dtype=np.int64), coords).data
        return logits.T.reshape(self.cfg.num_classes, h_out, w_out)

    def predict(self, image: np.ndarray, h_out: int | None = None, w_out: int | None = None,
                row_stable: bool = True) -> np.ndarray:
        return self.predict_logits(image, h_out, w_out, row_stable).argmax(axis=0)

    # ------------------------------------------------------------- costs

    def flops(self, height: int, width: int, full_res_head: bool = False) -> dict[str, int]:
        """Per-component FLOPs for one image.

        The IFA head is counted at the stride-4 output the FPN baselines
        produce, unless ``full_res_head`` asks for one query per input pixel.
        """
        dims = self.enc_cfg.level_shapes(height, width)
        enc = self.encoder.flops(height, width)
        if self.kind == "ifa":
            h2, w2 = dims[2][1:]
            hq, wq = (height, width) if full_res_head else (h2, w2)
            head = flops_of_head(self.decoder, hq, wq, dims)
        else:
            head = flops_of_aligner(self.kind, dims, self.cfg.align.fpn_dim,
                                    self.cfg.num_classes)
        return {"encoder": enc, "head": head, "total": enc + head}
