"""Model assemblies: conformer audio encoder, ViT video encoder, the
modality-shared reconstruction decoder, and the translation decoder.

Towers register their parameters under fixed path prefixes so that stage
transitions can transfer exactly the audio pathway (`audio_enc.*`), which
is the only component reused after pre-training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import (
    ConformerBlock,
    ConvSubsample,
    EncoderConfig,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    ParamTree,
    ViTBlock,
    causal_mask,
    key_padding_mask,
    positional_embedding,
    positional_embedding_3d,
)
from .video import PatchGeometry


@dataclass(frozen=True)
class ModelConfig:
    """Shapes of the full pre-training model and its data."""

    n_mels: int = 80
    audio_frames: int = 200          # padded LFBE length fed to the subsampler
    clip_dims: tuple = (4, 32, 32, 3)  # (T, H, W, C)
    patch: PatchGeometry = field(default_factory=lambda: PatchGeometry(8, 8, 2))
    audio: EncoderConfig = field(default_factory=lambda: EncoderConfig(4, 2, 64, conv_kernel=7))
    video: EncoderConfig = field(default_factory=lambda: EncoderConfig(4, 2, 64))
    decoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(2, 2, 32))
    clr_dim: int = 64
    subsample_kernel: int = 7
    subsample_stride: int = 4

    @property
    def audio_tokens(self) -> int:
        return -(-self.audio_frames // self.subsample_stride)

    @property
    def video_grid(self) -> tuple[int, int, int]:
        t, h, w, _ = self.clip_dims
        return t // self.patch.p_t, h // self.patch.p_h, w // self.patch.p_w

    @property
    def video_tokens(self) -> int:
        gt, gh, gw = self.video_grid
        return gt * gh * gw

    @property
    def token_dim(self) -> int:
        return self.patch.p_t * self.patch.p_h * self.patch.p_w * self.clip_dims[3]


def desk_config() -> ModelConfig:
    """Defaults small enough that the whole pipeline trains in seconds."""
    return ModelConfig()


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "n_mels": cfg.n_mels,
        "audio_frames": cfg.audio_frames,
        "clip_dims": list(cfg.clip_dims),
        "patch": [cfg.patch.p_h, cfg.patch.p_w, cfg.patch.p_t],
        "audio": [cfg.audio.layers, cfg.audio.heads, cfg.audio.dim,
                  cfg.audio.conv_kernel, cfg.audio.ff_mult],
        "video": [cfg.video.layers, cfg.video.heads, cfg.video.dim,
                  cfg.video.conv_kernel, cfg.video.ff_mult],
        "decoder": [cfg.decoder.layers, cfg.decoder.heads, cfg.decoder.dim,
                    cfg.decoder.conv_kernel, cfg.decoder.ff_mult],
        "clr_dim": cfg.clr_dim,
        "subsample_kernel": cfg.subsample_kernel,
        "subsample_stride": cfg.subsample_stride,
    }


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        n_mels=d["n_mels"],
        audio_frames=d["audio_frames"],
        clip_dims=tuple(d["clip_dims"]),
        patch=PatchGeometry(*d["patch"][:2], d["patch"][2]),
        audio=EncoderConfig(*d["audio"]),
        video=EncoderConfig(*d["video"]),
        decoder=EncoderConfig(*d["decoder"]),
        clr_dim=d["clr_dim"],
        subsample_kernel=d["subsample_kernel"],
        subsample_stride=d["subsample_stride"],
    )


def paper_scale_config() -> ModelConfig:
    """Published geometry: 224x224x16 clips, 16x16x2 patches, 1000->250 audio."""
    return ModelConfig(
        n_mels=80,
        audio_frames=1000,
        clip_dims=(16, 224, 224, 3),
        patch=PatchGeometry(16, 16, 2),
        audio=EncoderConfig(16, 4, 512, conv_kernel=31),
        video=EncoderConfig(12, 12, 768),
        decoder=EncoderConfig(4, 8, 512),
        clr_dim=512,
    )


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-example row gather: x (B, N, D), idx (B, M) -> (B, M, D)."""
    b, n, d = x.shape
    m = idx.shape[1]
    flat = x.reshape(b * n, d)
    gidx = (np.arange(b)[:, None] * n + idx).reshape(-1)
    return ad.take(flat, gidx, axis=0).reshape(b, m, d)


def scatter_rows(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """Per-example row write: base (B, N, D) with rows (B, M, D) at idx (B, M)."""
    b, n, d = base.shape
    m = idx.shape[1]
    gidx = (np.arange(b)[:, None] * n + idx).reshape(-1)
    out = ad.put_rows(base.reshape(b * n, d), gidx, rows.reshape(b * m, d))
    return out.reshape(b, n, d)


def l2_normalize(x: Tensor, tiny: float = 1e-20) -> Tensor:
    """Rows scaled to unit L2 norm; a zero row is a degenerate embedding."""
    sq = (x * x).sum(axis=-1, keepdims=True)
    if (sq.data <= tiny).any():
        raise ValueError("degenerate embedding: zero vector before normalization")
    return x / sq.sqrt()


def masked_temporal_mean(e: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Mean over the sequence axis of (B, T, D), restricted to valid steps."""
    b, t, _ = e.shape
    if valid is None:
        return e.mean(axis=1)
    w = (np.arange(t)[None, :] < np.asarray(valid)[:, None]).astype(e.dtype)
    w = w / w.sum(axis=1, keepdims=True)
    return (e * Tensor(w[:, :, None])).sum(axis=1)


class AudioEncoder:
    """Conv subsampling + sinusoidal positions + conformer stack."""

    def __init__(self, tree: ParamTree, cfg: ModelConfig, prefix: str = "audio_enc"):
        a = cfg.audio
        self.cfg = cfg
        self.subsample = ConvSubsample(
            tree, f"{prefix}.subsample", cfg.n_mels, a.dim,
            kernel=cfg.subsample_kernel, stride=cfg.subsample_stride,
        )
        self.blocks = [
            ConformerBlock(tree, f"{prefix}.block{i}", a) for i in range(a.layers)
        ]
        self.dim = a.dim
        self._pos_cache: dict[int, np.ndarray] = {}
        self._dtype = tree.dtype

    def _pos(self, t: int) -> np.ndarray:
        if t not in self._pos_cache:
            self._pos_cache[t] = positional_embedding(t, self.dim, dtype=self._dtype)
        return self._pos_cache[t]

    def subsampled_length(self, t: int) -> int:
        return self.subsample.output_length(t)

    def __call__(self, feats: Tensor, zero_mask: np.ndarray | None = None,
                 attn_mask=None) -> Tensor:
        x = self.subsample(feats)
        if zero_mask is not None:
            keep = (~zero_mask).astype(x.dtype)[:, :, None]
            x = x * Tensor(keep)
        x = x + Tensor(self._pos(x.shape[1]))
        for blk in self.blocks:
            x = blk(x, mask=attn_mask)
        return x


class VideoEncoder:
    """Linear patch embedding + 3-D sinusoidal positions + ViT stack."""

    def __init__(self, tree: ParamTree, cfg: ModelConfig, prefix: str = "video_enc"):
        v = cfg.video
        self.embed = Linear(tree, f"{prefix}.embed", cfg.token_dim, v.dim)
        self.blocks = [
            ViTBlock(tree, f"{prefix}.block{i}", v.dim, v.heads, v.ff_mult)
            for i in range(v.layers)
        ]
        self.pos = positional_embedding_3d(cfg.video_grid, v.dim, dtype=tree.dtype)
        self.dim = v.dim

    def __call__(self, tokens: Tensor, visible_idx: np.ndarray | None = None) -> Tensor:
        x = self.embed(tokens) + Tensor(self.pos)
        if visible_idx is not None:
            x = gather_rows(x, visible_idx)
        for blk in self.blocks:
            x = blk(x)
        return x


class SharedDecoder:
    """ViT decoder applied to each modality in turn, plus a final norm."""

    def __init__(self, tree: ParamTree, cfg: ModelConfig, prefix: str = "decoder"):
        d = cfg.decoder
        self.blocks = [
            ViTBlock(tree, f"{prefix}.block{i}", d.dim, d.heads, d.ff_mult)
            for i in range(d.layers)
        ]
        self.norm = LayerNorm(tree, f"{prefix}.norm", d.dim)
        self.dim = d.dim

    def __call__(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class PretrainModel:
    """Both encoder towers, the shared decoder, and the pooling heads."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.tree = ParamTree(seed=seed, dtype=dtype)
        self.audio_enc = AudioEncoder(self.tree, cfg)
        self.video_enc = VideoEncoder(self.tree, cfg)
        self.decoder = SharedDecoder(self.tree, cfg)
        dd = cfg.decoder.dim
        self.audio_to_dec = Linear(self.tree, "heads.audio_to_dec", cfg.audio.dim, dd)
        self.video_to_dec = Linear(self.tree, "heads.video_to_dec", cfg.video.dim, dd)
        self.mask_token = self.tree.add("heads.mask_token", (1, 1, dd))
        self.audio_head = Linear(
            self.tree, "heads.audio_out", dd, cfg.subsample_stride * cfg.n_mels
        )
        self.video_head = Linear(self.tree, "heads.video_out", dd, cfg.token_dim)
        self.audio_proj = Linear(self.tree, "heads.audio_proj", cfg.audio.dim, cfg.clr_dim)
        self.video_proj = Linear(self.tree, "heads.video_proj", cfg.video.dim, cfg.clr_dim)
        self._dec_pos_audio = positional_embedding(cfg.audio_tokens, dd, dtype=dtype)
        self._dec_pos_video = positional_embedding_3d(cfg.video_grid, dd, dtype=dtype)

    # -- encoding ---------------------------------------------------------

    def encode_audio(self, feats: np.ndarray, zero_mask: np.ndarray | None = None) -> Tensor:
        return self.audio_enc(Tensor(feats), zero_mask=zero_mask)

    def encode_video(self, tokens: np.ndarray, visible_idx: np.ndarray | None = None) -> Tensor:
        return self.video_enc(Tensor(tokens), visible_idx=visible_idx)

    # -- reconstruction ------------------------------------------------------

    def decode_audio(self, e_a: Tensor, out_frames: int) -> Tensor:
        """Decoder + linear up-sampling back to (B, out_frames, n_mels)."""
        x = self.audio_to_dec(e_a) + Tensor(self._dec_pos_audio)
        x = self.decoder(x)
        y = self.audio_head(x)  # (B, T', stride * F)
        b, t, _ = y.shape
        y = y.reshape(b, t * self.cfg.subsample_stride, self.cfg.n_mels)
        return y[:, :out_frames]

    def decode_video(self, e_visible: Tensor, visible_idx: np.ndarray) -> Tensor:
        """Re-insert mask tokens at masked slots, decode, project to patches."""
        b = e_visible.shape[0]
        n = self.cfg.video_tokens
        dd = self.decoder.dim
        base = self.mask_token + Tensor(np.zeros((b, n, dd), dtype=self.tree.dtype))
        x = scatter_rows(base, visible_idx, self.video_to_dec(e_visible))
        x = x + Tensor(self._dec_pos_video)
        x = self.decoder(x)
        return self.video_head(x)

    # -- pooling ----------------------------------------------------------

    def pool_audio(self, e_a: Tensor, valid_tokens: np.ndarray) -> Tensor:
        """Temporal average over valid positions, projected and normalized."""
        pooled = masked_temporal_mean(e_a, valid_tokens)
        return l2_normalize(self.audio_proj(pooled))

    def pool_video(self, e_v: Tensor) -> Tensor:
        """Spatio-temporal average over all tokens, projected and normalized."""
        pooled = masked_temporal_mean(e_v)
        return l2_normalize(self.video_proj(pooled))


class TranslationDecoderBlock:
    """Pre-norm block: causal self-attention, cross-attention, GELU MLP."""

    def __init__(self, tree: ParamTree, path: str, dim: int, heads: int, ff_mult: int = 4):
        self.norm1 = LayerNorm(tree, f"{path}.norm1", dim)
        self.self_attn = MultiHeadAttention(tree, f"{path}.self_attn", dim, heads)
        self.norm2 = LayerNorm(tree, f"{path}.norm2", dim)
        self.cross_attn = MultiHeadAttention(tree, f"{path}.cross_attn", dim, heads)
        self.norm3 = LayerNorm(tree, f"{path}.norm3", dim)
        self.lin1 = Linear(tree, f"{path}.mlp1", dim, ff_mult * dim)
        self.lin2 = Linear(tree, f"{path}.mlp2", ff_mult * dim, dim)

    def __call__(self, x: Tensor, enc: Tensor, self_mask, cross_mask) -> Tensor:
        x = x + self.self_attn(self.norm1(x), mask=self_mask)
        x = x + self.cross_attn(self.norm2(x), kv_in=enc, mask=cross_mask)
        return x + self.lin2(ad.gelu(self.lin1(self.norm3(x))))


class TranslationModel:
    """Audio encoder + autoregressive token decoder with cross-attention."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int = 0,
                 dec_layers: int = 2, dec_heads: int = 2, dec_dim: int = 64,
                 dtype=np.float32):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.dec_dim = dec_dim
        self.tree = ParamTree(seed=seed, dtype=dtype)
        self.audio_enc = AudioEncoder(self.tree, cfg)
        t = self.tree
        self.token_embed = t.add("translator.embed", (vocab_size, dec_dim))
        self.enc_proj = Linear(t, "translator.enc_proj", cfg.audio.dim, dec_dim)
        self.blocks = [
            TranslationDecoderBlock(t, f"translator.block{i}", dec_dim, dec_heads)
            for i in range(dec_layers)
        ]
        self.out_norm = LayerNorm(t, "translator.out_norm", dec_dim)
        self.out_proj = Linear(t, "translator.out", dec_dim, vocab_size)
        self._dtype = t.dtype

    def encode(self, feats: np.ndarray) -> Tensor:
        return self.audio_enc(Tensor(feats))

    def decode_logits(self, enc: Tensor, enc_valid: np.ndarray,
                      tokens_in: np.ndarray) -> Tensor:
        """Teacher-forced next-token logits, (B, L, vocab)."""
        b, l = tokens_in.shape
        x = ad.take(self.token_embed, tokens_in, axis=0)
        x = x + Tensor(positional_embedding(l, self.dec_dim, dtype=self._dtype))
        enc_p = self.enc_proj(enc)
        self_mask = causal_mask(l, dtype=self._dtype)
        cross_mask = key_padding_mask(enc_valid, enc.shape[1], dtype=self._dtype)
        for blk in self.blocks:
            x = blk(x, enc_p, self_mask, cross_mask)
        return self.out_proj(self.out_norm(x))
