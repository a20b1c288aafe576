"""Build a tiny local checkpoint, extract per-layer embeddings for a toy
sentiment TSV, and run a layer sweep over the dump with layerfuse.
"""

import tempfile
from pathlib import Path

import torch
from transformers import BertConfig, BertModel, BertTokenizer

from embed_extractor import ExtractionSpec, extract
from layerfuse import TrainConfig, layer_sweep, load_manifest

workdir = Path(tempfile.mkdtemp(prefix="extractor_demo_"))

# a throwaway 2-layer encoder with a 16-word vocabulary
vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
         "good", "bad", "movie", "great", "awful", "boring", "fun",
         "a", "the", "was", "!"]
(workdir / "vocab.txt").write_text("\n".join(vocab) + "\n")
tokenizer = BertTokenizer(str(workdir / "vocab.txt"))
torch.manual_seed(0)
model = BertModel(BertConfig(vocab_size=len(vocab), hidden_size=32,
                             num_hidden_layers=2, num_attention_heads=2,
                             intermediate_size=64, max_position_embeddings=64))
ckpt = workdir / "tiny-encoder"
model.save_pretrained(ckpt)
tokenizer.save_pretrained(ckpt)

rows = {
    "train": [("good movie !", "pos"), ("great fun", "pos"), ("fun !", "pos"),
              ("the movie was good", "pos"), ("awful boring movie", "neg"),
              ("bad !", "neg"), ("boring", "neg"), ("the movie was awful", "neg")],
    "test": [("good fun movie", "pos"), ("awful !", "neg"),
             ("the movie was great", "pos"), ("bad boring", "neg")],
}
for split, pairs in rows.items():
    lines = ["text\tlabel"] + [f"{t}\t{l}" for t, l in pairs]
    (workdir / f"{split}.tsv").write_text("\n".join(lines) + "\n")

manifest_path = extract(ExtractionSpec(
    checkpoint=str(ckpt),
    data_files={"train": str(workdir / "train.tsv"), "test": str(workdir / "test.tsv")},
    output_dir=str(workdir / "dump"),
    layers="all",
    pooling="mean",
    max_seq_len=16,
    dataset="toy",
    model_name="tiny",
))
manifest = load_manifest(manifest_path)
print(f"extracted layers {manifest.layers('tiny')} for splits train/test")

result = layer_sweep(manifest, "tiny", TrainConfig(epochs=40, seed=0))
for row in result.rows:
    print(f"  layer {row.inputs[0][1]}: accuracy {row.accuracy:.4f}"
          + ("  <- best" if row.best else ""))
print(f"outputs under {workdir}")
