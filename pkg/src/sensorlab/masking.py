"""Token masking: inherited missingness plus artificial corruption.

A window of C channels by W minutes is tokenized into non-overlapping patches
of `patch_len` consecutive minutes within a single channel, giving a (C, P)
token grid with P = W / patch_len. Tokens are indexed channel-major:
token = c * P + p.

A mask plan distinguishes three layers:
  inherited   tokens containing any unobserved minute (device missingness)
  artificial  tokens hidden on purpose by one of three strategies
  full        union, what the encoder must not see
  loss        artificial and not inherited, the only tokens scored by the
              reconstruction loss (ground truth exists exactly there)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANDOM_PATCH_RATIO = 0.8
BLOCK_RATIO = 0.5
STRATEGIES = ("random_patch", "temporal_block", "modality_block")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def patchify(values: np.ndarray, patch_len: int) -> np.ndarray:
    """(C, W) -> (C, P, L) view (no copy for contiguous input)."""
    C, W = values.shape
    if patch_len < 1 or W % patch_len:
        raise ValueError(
            f"window width {W} not divisible by patch length {patch_len}")
    return values.reshape(C, W // patch_len, patch_len)


def depatchify(patches: np.ndarray) -> np.ndarray:
    C, P, L = patches.shape
    return patches.reshape(C, P * L)


def token_inherited(missing: np.ndarray, patch_len: int) -> np.ndarray:
    """(C, W) minute missingness -> (C, P) token-level inherited mask."""
    return patchify(missing, patch_len).any(axis=2)


def expand_tokens(token_mask: np.ndarray, patch_len: int) -> np.ndarray:
    """(C, P) token mask -> (C, W) minute mask."""
    return np.repeat(token_mask, patch_len, axis=1)


def artificial_mask(rng: np.random.Generator, n_channels: int, n_patches: int,
                    strategy: str | None = None) -> tuple[np.ndarray, str]:
    """Draw an artificial token mask. Strategy None picks one of the three
    uniformly. Counts round half-up."""
    if strategy is None:
        strategy = STRATEGIES[int(rng.integers(0, len(STRATEGIES)))]
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown masking strategy '{strategy}'")
    mask = np.zeros((n_channels, n_patches), dtype=bool)
    if strategy == "random_patch":
        total = n_channels * n_patches
        k = _round_half_up(RANDOM_PATCH_RATIO * total)
        flat = rng.choice(total, size=k, replace=False)
        mask.reshape(-1)[flat] = True
    elif strategy == "temporal_block":
        span = max(_round_half_up(BLOCK_RATIO * n_patches), 1)
        start = int(rng.integers(0, n_patches - span + 1))
        mask[:, start:start + span] = True
    else:  # modality_block
        k = max(_round_half_up(BLOCK_RATIO * n_channels), 1)
        rows = rng.choice(n_channels, size=k, replace=False)
        mask[rows, :] = True
    return mask, strategy


@dataclass
class MaskPlan:
    inherited: np.ndarray   # (C, P) bool
    artificial: np.ndarray  # (C, P) bool
    strategy: str

    def __post_init__(self):
        if self.inherited.shape != self.artificial.shape:
            raise ValueError(
                f"mask shape mismatch: inherited {self.inherited.shape}, "
                f"artificial {self.artificial.shape}")
        if self.inherited.dtype != bool or self.artificial.dtype != bool:
            raise ValueError("mask plans must be boolean")

    @property
    def full(self) -> np.ndarray:
        return self.inherited | self.artificial

    @property
    def loss(self) -> np.ndarray:
        return self.artificial & ~self.inherited

    @property
    def shape(self):
        return self.inherited.shape


def plan_masks(rng: np.random.Generator, missing: np.ndarray, patch_len: int,
               strategy: str | None = None) -> MaskPlan:
    inherited = token_inherited(missing, patch_len)
    art, chosen = artificial_mask(rng, *inherited.shape, strategy=strategy)
    return MaskPlan(inherited=inherited, artificial=art, strategy=chosen)
