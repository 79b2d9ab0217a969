import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizer

from cloneadapt.corpus import Corpus, Program, write_corpus


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A tiny randomly-initialized encoder saved locally (no downloads)."""
    root = tmp_path_factory.mktemp("tinybert")
    vocab = (
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        + list("abcdefghijklmnopqrstuvwxyz0123456789(){};=+")
        + ["int", "return", "fn", "let", "##a", "##b", "##1"]
    )
    vocab_file = root / "vocab.txt"
    vocab_file.write_text("\n".join(vocab) + "\n")
    tokenizer = BertTokenizer(str(vocab_file))
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    model = BertModel(config)
    model.save_pretrained(root)
    tokenizer.save_pretrained(root)
    return str(root)


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    programs = [
        Program("p0", "rust", "fn a(b) { return b + 1; }"),
        Program("p1", "rust", "fn c(d) { let e = d; return e; }"),
        Program("p2", "rust", "fn f() { return 42; }"),
        Program("p3", "rust", "fn g(h) { return h; } " * 30),  # long one
        Program("p4", "rust", "let z = 9;"),
    ]
    corpus = Corpus(programs, "rust", "target")
    path = root / "tgt.jsonl"
    write_corpus(corpus, path)
    return str(path)
