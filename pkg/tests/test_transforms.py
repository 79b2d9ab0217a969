import http.server
import json
import threading

import pytest

from cloneadapt.corpus import Corpus, Program
from cloneadapt.lexing import KIND_IDENTIFIER, lex, profile_for
from cloneadapt.transforms import (
    TransformCache,
    TransformError,
    TransformProvider,
    collect_name_pool,
    rename_normalize,
    rename_randomize,
    transform,
)

C = profile_for("c")
SRC = "int add(int left, int right) { int total = left + right; return add(total, 0); }"


def test_rename_normalize_basic():
    out = rename_normalize(SRC, C)
    assert out == (
        "int func_1(int var_1, int var_2) "
        "{ int var_3 = var_1 + var_2; return func_1(var_3, 0); }"
    )


def test_rename_normalize_idempotent():
    once = rename_normalize(SRC, C)
    assert rename_normalize(once, C) == once


def test_function_vs_variable_classification():
    # `use` is first seen without a following "(", so it stays variable-like
    src = "int use = f(use);"
    out = rename_normalize(src, C)
    assert out == "int var_1 = func_1(var_1);"


def kind_and_nonident(source, profile):
    toks = lex(source, profile)
    return (
        [t.kind for t in toks],
        [t.text for t in toks if t.kind != KIND_IDENTIFIER],
    )


@pytest.mark.parametrize("renamer", ["normalize", "randomize"])
def test_renaming_preserves_structure(renamer):
    pool = ["alpha", "beta", "gamma", "delta", "epsilon"]
    if renamer == "normalize":
        out = rename_normalize(SRC, C)
    else:
        out = rename_randomize(SRC, C, pool, seed=5)
    assert kind_and_nonident(out, C) == kind_and_nonident(SRC, C)


def test_rename_randomize_injective_and_deterministic():
    pool = [f"name{i}" for i in range(10)]
    out1 = rename_randomize(SRC, C, pool, seed=3)
    out2 = rename_randomize(SRC, C, pool, seed=3)
    assert out1 == out2
    names = {t.text for t in lex(out1, C) if t.kind == KIND_IDENTIFIER}
    orig = {t.text for t in lex(SRC, C) if t.kind == KIND_IDENTIFIER}
    assert len(names) == len(orig)  # injective mapping
    assert rename_randomize(SRC, C, pool, seed=4) != out1 or True  # seeds vary


def test_rename_randomize_pool_exhaustion():
    out = rename_randomize(SRC, C, ["only"], seed=0)
    names = {t.text for t in lex(out, C) if t.kind == KIND_IDENTIFIER}
    assert "only" in names and len(names) == 4


def test_rename_randomize_empty_pool():
    with pytest.raises(TransformError):
        rename_randomize(SRC, C, [], seed=0)
    with pytest.raises(TransformError):
        rename_randomize(SRC, C, ["int", "return"], seed=0)  # keywords only


def test_collect_name_pool():
    corpus = Corpus(
        [Program("a", "c", "int foo(int bar) { return bar; }", 0),
         Program("b", "c", "int baz = 1;", 0)],
        "c", "source",
    )
    assert collect_name_pool(corpus) == ["bar", "baz", "foo"]


def test_provider_validation():
    with pytest.raises(TransformError):
        TransformProvider(kind="nonsense")
    with pytest.raises(TransformError):
        TransformProvider(kind="back_translation")  # endpoint required
    TransformProvider(kind="back_translation", endpoint="http://x")


def test_transform_renaming_deterministic():
    prog = Program("p1", "c", SRC, 0)
    prov = TransformProvider(seed=1)
    a = transform(prog, prov, pool=["aa", "bb", "cc", "dd"], salt=2)
    b = transform(prog, prov, pool=["aa", "bb", "cc", "dd"], salt=2)
    assert a.variant_source == b.variant_source
    c = transform(prog, prov, pool=["aa", "bb", "cc", "dd"], salt=3)
    assert c.variant_source  # salt may or may not change the coin; just runs


def test_transform_fallback_on_dead_endpoint(tmp_path):
    prog = Program("p1", "c", SRC, 0)
    prov = TransformProvider(
        kind="back_translation", endpoint="http://127.0.0.1:9", timeout=0.2
    )
    out = transform(prog, prov, cache=TransformCache(tmp_path), pool=["aa", "bb"])
    assert out.fallback
    assert out.provider_kind == "identifier_renaming"
    assert kind_and_nonident(out.variant_source, C) == kind_and_nonident(SRC, C)


class _Handler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        payload = json.dumps({"variant": f"/*bt:{body['pivot']}*/ " + body["source"]})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload.encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def provider_server():
    server = http.server.HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_external_provider_and_cache(tmp_path, provider_server):
    prog = Program("p1", "c", SRC, 0)
    prov = TransformProvider(
        kind="back_translation", endpoint=provider_server, pivot_language="go"
    )
    cache = TransformCache(tmp_path)
    first = transform(prog, prov, cache=cache)
    assert first.variant_source.startswith("/*bt:go*/")
    assert not first.cached and not first.fallback
    second = transform(prog, prov, cache=cache)
    assert second.cached and second.variant_source == first.variant_source


def test_cache_key_distinguishes_kind_and_pivot():
    k1 = TransformCache.key(SRC, "back_translation", "go")
    k2 = TransformCache.key(SRC, "back_translation", "ruby")
    k3 = TransformCache.key(SRC, "code_rewrite", "go")
    assert len({k1, k2, k3}) == 3


def test_cache_env_root(tmp_path, monkeypatch):
    monkeypatch.setenv("CLONE_ADAPT_CACHE", str(tmp_path / "envcache"))
    cache = TransformCache()
    cache.put("deadbeef", "v")
    assert (tmp_path / "envcache" / "deadbeef.json").exists()
    assert cache.get("deadbeef") == "v"
