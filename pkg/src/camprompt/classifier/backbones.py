"""Backbone adapters exposing the hook point needed for activation mapping.

Every backbone yields a row-major token sequence from its final normalization
layer (after all attention blocks, before the classification head), which is
the layer the activation-map engine attaches to.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import CapabilityError, ContractViolation


class CamReadyBackbone(nn.Module):
    """Interface contract: tokenized features plus access to the final norm layer."""

    embed_dim: int

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        """Return normalized tokens (B, L, C), row-major over the feature grid."""
        raise NotImplementedError

    def cam_target_layer(self) -> nn.Module:
        """The final normalization layer; activation maps hook here."""
        raise NotImplementedError

    def feature_grid_hw(self, input_hw: tuple[int, int]) -> tuple[int, int]:
        """Token grid (h, w) produced for an input of the given spatial size."""
        raise NotImplementedError


class _WindowBlock(nn.Module):
    """Pre-norm transformer block with attention restricted to square windows."""

    def __init__(self, dim: int, num_heads: int, window: int):
        super().__init__()
        self.window = window
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x: torch.Tensor, grid_hw: tuple[int, int]) -> torch.Tensor:
        b, length, c = x.shape
        h, w = grid_hw
        win = self.window
        t = self.norm1(x).view(b, h, w, c)
        t = (
            t.view(b, h // win, win, w // win, win, c)
            .permute(0, 1, 3, 2, 4, 5)
            .reshape(-1, win * win, c)
        )
        t, _ = self.attn(t, t, t, need_weights=False)
        t = (
            t.view(b, h // win, w // win, win, win, c)
            .permute(0, 1, 3, 2, 4, 5)
            .reshape(b, length, c)
        )
        x = x + t
        return x + self.mlp(self.norm2(x))


class TinyWindowAttentionBackbone(CamReadyBackbone):
    """Small from-scratch window-attention backbone for CPU-scale runs and tests."""

    def __init__(
        self,
        embed_dim: int = 64,
        depth: int = 2,
        num_heads: int = 4,
        patch_size: int = 8,
        window: int = 4,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.patch_size = patch_size
        self.window = window
        self.patch_embed = nn.Conv2d(3, embed_dim, patch_size, patch_size)
        self.blocks = nn.ModuleList(
            _WindowBlock(embed_dim, num_heads, window) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(embed_dim)

    def feature_grid_hw(self, input_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = input_hw
        return h // self.patch_size, w // self.patch_size

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        grid = self.feature_grid_hw(x.shape[-2:])
        if grid[0] % self.window or grid[1] % self.window:
            raise ContractViolation(
                f"token grid {grid} not divisible by window {self.window}; "
                f"pick an input resolution that is a multiple of {self.patch_size * self.window}"
            )
        x = self.patch_embed(x).flatten(2).transpose(1, 2)
        for block in self.blocks:
            x = block(x, grid)
        return self.norm(x)

    def cam_target_layer(self) -> nn.Module:
        return self.norm


class TorchvisionSwinBackbone(CamReadyBackbone):
    """Hierarchical window-attention backbone from torchvision (swin_t/s/b)."""

    VARIANTS = ("swin_t", "swin_s", "swin_b")

    def __init__(self, variant: str = "swin_b", pretrained: bool = True):
        super().__init__()
        if variant not in self.VARIANTS:
            raise CapabilityError(f"unknown torchvision swin variant: {variant}")
        from torchvision import models

        builder = getattr(models, variant)
        weights = "DEFAULT" if pretrained else None
        self.model = builder(weights=weights)
        self.embed_dim = self.model.head.in_features
        self.model.head = nn.Identity()

    def feature_grid_hw(self, input_hw: tuple[int, int]) -> tuple[int, int]:
        return input_hw[0] // 32, input_hw[1] // 32

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.model.features(x)  # (B, H, W, C), channels last
        feats = self.model.norm(feats)
        b, h, w, c = feats.shape
        return feats.reshape(b, h * w, c)

    def cam_target_layer(self) -> nn.Module:
        return self.model.norm


class TimmSwinBackbone(CamReadyBackbone):
    """Large 21k-pretrained window-attention checkpoint via timm (patch 4, window 12, 384)."""

    DEFAULT_MODEL = "swin_large_patch4_window12_384.ms_in22k"

    def __init__(self, model_name: str = DEFAULT_MODEL, pretrained: bool = True):
        super().__init__()
        try:
            import timm
        except ImportError as exc:
            raise CapabilityError(
                "timm is required for the large pretrained backbone; "
                "install the 'timm' package or use the 'swin-b' / 'tiny' backbones"
            ) from exc
        self.model = timm.create_model(model_name, pretrained=pretrained, num_classes=0)
        norm = getattr(self.model, "norm", None)
        if norm is None:
            raise CapabilityError(
                f"{model_name} does not expose a final normalization layer for hooking"
            )
        self.embed_dim = self.model.num_features

    def feature_grid_hw(self, input_hw: tuple[int, int]) -> tuple[int, int]:
        return input_hw[0] // 32, input_hw[1] // 32

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.model.forward_features(x)
        if feats.ndim == 4:  # (B, H, W, C) channels-last layout
            b, h, w, c = feats.shape
            feats = feats.reshape(b, h * w, c)
        return feats

    def cam_target_layer(self) -> nn.Module:
        return self.model.norm


def build_backbone(name: str, **kwargs) -> CamReadyBackbone:
    """Build a backbone by registry name.

    Names: ``tiny``, ``swin-t``/``swin-s``/``swin-b`` (torchvision),
    ``swin-large-in21k-384`` (timm, the reference deployment).
    """
    if name == "tiny":
        return TinyWindowAttentionBackbone(**kwargs)
    if name in ("swin-t", "swin-s", "swin-b"):
        return TorchvisionSwinBackbone(variant=name.replace("-", "_"), **kwargs)
    if name == "swin-large-in21k-384":
        return TimmSwinBackbone(**kwargs)
    raise CapabilityError(f"unknown backbone: {name!r}")
