"""Reduce a sequence of per-token hidden states to one vector per sample."""

from __future__ import annotations

import numpy as np

POOLING_MODES = ("mean", "last_token")


def pool(token_states: np.ndarray, mode: str, mask: np.ndarray | None = None) -> np.ndarray:
    """Pool a (T, d) token-state matrix down to a d vector.

    mask marks valid (non-padding) tokens; None means all T tokens count.
    """
    token_states = np.asarray(token_states)
    if token_states.ndim != 2 or token_states.shape[0] < 1:
        raise ValueError(f"expected a (T, d) matrix with T >= 1, got {token_states.shape}")
    if mask is None:
        mask = np.ones(token_states.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != (token_states.shape[0],):
            raise ValueError(f"mask shape {mask.shape} does not match T={token_states.shape[0]}")
    if not mask.any():
        raise ValueError("fully-masked input: no valid tokens to pool")
    if mode == "mean":
        return token_states[mask].mean(axis=0)
    if mode == "last_token":
        last = np.nonzero(mask)[0][-1]
        return token_states[last]
    raise ValueError(f"unknown pooling mode {mode!r}; valid: {', '.join(POOLING_MODES)}")


def pool_batch(states: np.ndarray, mode: str, masks: np.ndarray) -> np.ndarray:
    """Pool a (B, T, d) batch with a (B, T) validity mask to (B, d)."""
    return np.stack([pool(states[i], mode, masks[i]) for i in range(states.shape[0])])
