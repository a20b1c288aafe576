"""Walk through the on-disk embedding store: write a matrix, read it back,
build a manifest, and estimate what fused embedding tables cost to hold.
"""

import tempfile
from pathlib import Path

import numpy as np

from layerfuse import (
    estimate_memory,
    format_gib,
    load_manifest,
    read_embedding_file,
    save_manifest,
    write_embedding_file,
    write_label_file,
)

workdir = Path(tempfile.mkdtemp(prefix="layerfuse_demo_"))
print(f"writing under {workdir}\n")

# a tiny 3-sample, 4-dim embedding matrix
mat = np.array(
    [[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, 0.0], [2.0, 2.0, 2.0, 2.0]],
    dtype=np.float32,
)
write_embedding_file(mat, workdir / "toy_train_demo_L00.lef")
back = read_embedding_file(workdir / "toy_train_demo_L00.lef")
print("round trip bit-exact:", back.tobytes() == mat.tobytes())

# matching labels and a manifest tying everything together
write_label_file(np.array([0, 1, 1]), 2, workdir / "toy_train.lbl")
entries = [
    {
        "dataset": "toy",
        "split": "train",
        "model": "demo",
        "layer": 0,
        "dim": 4,
        "n_samples": 3,
        "path": "toy_train_demo_L00.lef",
    }
]
save_manifest(entries, {"train": "toy_train.lbl"}, workdir / "manifest.json")
manifest = load_manifest(workdir / "manifest.json")
print("manifest models:", manifest.models(), "layers:", manifest.layers("demo"))

# storage cost of fused embedding tables at realistic scales
print("\nstorage for 67,349 samples:")
for names, dims in [
    (["nv_embed", "e5"], [4096, 1024]),
    (["nv_embed", "e5", "llama2", "qwen2.5", "mistral"], [4096, 1024, 4096, 3584, 4096]),
]:
    n_bytes = estimate_memory(67349, dims)
    print(f"  {'+'.join(names):45s} {sum(dims):6d} dims  {n_bytes:>14,d} bytes  {format_gib(n_bytes)} GiB")
