"""Built-in registry of well-known embedding sources and their output dimensions.

Lets storage estimates run from model names alone, without any data files.
"""

from __future__ import annotations

MODEL_DIMS = {
    "llama2": 4096,
    "qwen2.5": 3584,
    "falcon3": 3072,
    "mistral": 4096,
    "gemma2": 2304,
    "nv_embed": 4096,
    "e5": 1024,
}

_ALIASES = {
    "llama-2": "llama2",
    "qwen25": "qwen2.5",
    "qwen": "qwen2.5",
    "falcon-3": "falcon3",
    "falcon 3": "falcon3",
    "gemma-2": "gemma2",
    "gemma 2": "gemma2",
    "nv-embed-v2": "nv_embed",
    "nv_embed_v2": "nv_embed",
    "nv-embed": "nv_embed",
    "e5-large-v2": "e5",
    "e5_large_v2": "e5",
}


def resolve_model_dim(name: str) -> int:
    """Look up a model's embedding dimension; raises KeyError listing known names."""
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in MODEL_DIMS:
        known = ", ".join(sorted(MODEL_DIMS))
        raise KeyError(f"unknown model {name!r}; known models: {known}")
    return MODEL_DIMS[key]
