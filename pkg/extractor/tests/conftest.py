import os

import pytest

os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "good", "bad", "movie", "great", "awful", "boring", "fun",
    "a", "the", "was", "!",
]

TRAIN_ROWS = [
    ("good movie !", "pos"),
    ("great fun", "pos"),
    ("the movie was good", "pos"),
    ("awful boring movie", "neg"),
    ("bad !", "neg"),
    ("the movie was awful", "neg"),
    ("fun !", "pos"),
    ("boring", "neg"),
]

TEST_ROWS = [
    ("good fun movie", "pos"),
    ("awful !", "neg"),
    ("the movie was great", "pos"),
    ("bad boring", "neg"),
]


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory):
    """A tiny local 2-layer encoder checkpoint plus tokenizer files."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    root = tmp_path_factory.mktemp("ckpt")
    (root / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizer(str(root / "vocab.txt"))
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(1234)
    model = BertModel(config)
    out = root / "tiny-bert"
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    return out


def _write_tsv(path, rows):
    lines = ["text\tlabel"] + [f"{text}\t{label}" for text, label in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def dataset_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("tsv")
    _write_tsv(root / "train.tsv", TRAIN_ROWS)
    _write_tsv(root / "test.tsv", TEST_ROWS)
    return {"train": str(root / "train.tsv"), "test": str(root / "test.tsv")}
