"""Exporter acceptance: round-trip fidelity against a direct forward pass."""

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from cloneadapt.corpus import load_corpus
from cloneadapt.embedding import load_precomputed
from cloneadapt_exporter.exporter import ExportJob, export, verify


def criterion(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_exporter_round_trip(tiny_model_dir, corpus_file, tmp_path):
    out = tmp_path / "emb.bin"
    job = ExportJob(corpus_file, tiny_model_dir, str(out), pooling="cls",
                    max_sequence_length=64)
    export(job)

    # independent forward pass, compared against the re-read file
    corpus = load_corpus(corpus_file, "target")
    tokenizer = AutoTokenizer.from_pretrained(tiny_model_dir)
    model = AutoModel.from_pretrained(tiny_model_dir)
    model.eval()
    with torch.no_grad():
        enc = tokenizer([p.source for p in corpus.programs], padding=True,
                        truncation=True, max_length=64, return_tensors="pt")
        expected = model(**enc).last_hidden_state[:, 0, :].numpy()

    feats = load_precomputed(out, corpus)
    eps = np.finfo(np.float32).eps
    max_err = float(np.abs(feats.matrix - expected).max())
    ok = max_err <= 8 * eps * max(1.0, float(np.abs(expected).max()))
    ok &= verify(out).ok

    clipped = tmp_path / "bad.bin"
    clipped.write_bytes(out.read_bytes()[:-4])
    (tmp_path / "bad.bin.ids.jsonl").write_text(
        (tmp_path / "emb.bin.ids.jsonl").read_text()
    )
    ok &= not verify(clipped).ok

    criterion(
        "exporter round-trip",
        ok,
        f"max abs re-read error {max_err:.2e} (f32 eps {eps:.1e}); "
        "verify ok on valid file, fails on truncated file",
    )
