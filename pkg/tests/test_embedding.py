import json
import threading

import numpy as np
import pytest

from ideolab.corpus import ContentItem, Ideology
from ideolab.coverage import bsr
from ideolab.embedding import (
    DimensionMismatchError,
    EmbeddingCache,
    EmbeddingError,
    HashedProvider,
    HttpProvider,
    PrecomputedFileProvider,
    ProviderUnreachableError,
    TokenEmbeddingSet,
    embed_item,
    embed_many,
    fields_hash,
    load_provider,
)
from ideolab.prompting import FieldConfig

TITLE = FieldConfig()
TITLE_SOURCE = FieldConfig(include_source=True)


def item(item_id="a", title="budget vote delayed again", source="Metro Daily"):
    return ContentItem(id=item_id, title=title, source=source, label=Ideology.NEUTRAL)


class StubProvider:
    """Returns fixed raw vectors; lets tests control normalization and dim."""

    def __init__(self, tokens, sentence, dim):
        self.tokens = np.asarray(tokens, dtype=np.float64)
        self.sentence = np.asarray(sentence, dtype=np.float64)
        self.dim = dim

    def fetch(self, item_id, fields_hash, text):
        return self.tokens, self.sentence


class TestTokenEmbeddingSet:
    def test_rejects_unnormalized_rows(self):
        with pytest.raises(EmbeddingError):
            TokenEmbeddingSet("x", 2, np.array([[2.0, 0.0]]), np.array([1.0, 0.0]))

    def test_rejects_empty_tokens(self):
        with pytest.raises(EmbeddingError):
            TokenEmbeddingSet("x", 2, np.zeros((0, 2)), np.array([1.0, 0.0]))

    def test_from_raw_normalizes(self):
        ts = TokenEmbeddingSet.from_raw("x", [[2.0, 0.0], [0.0, -3.0]], [1.0, 1.0])
        assert np.allclose(np.linalg.norm(ts.token_vectors, axis=1), 1.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(ts.sentence_vector), 1.0, atol=1e-12)


class TestHashedProvider:
    def test_deterministic_across_instances(self):
        a = embed_item(item(), TITLE, HashedProvider(dim=16))
        b = embed_item(item(), TITLE, HashedProvider(dim=16))
        assert np.array_equal(a.token_vectors, b.token_vectors)
        assert np.array_equal(a.sentence_vector, b.sentence_vector)

    def test_shared_words_share_vectors(self):
        provider = HashedProvider(dim=16)
        a = embed_item(item("a", "alpha beta"), TITLE, provider)
        b = embed_item(item("b", "beta gamma"), TITLE, provider)
        assert np.allclose(a.token_vectors[1], b.token_vectors[0])

    def test_empty_tokenization(self):
        with pytest.raises(EmbeddingError, match="tokenized to nothing"):
            embed_item(item(title="!!!"), TITLE, HashedProvider(dim=16))


class TestEmbedItem:
    def test_unnormalized_provider_output_normalized(self):
        provider = StubProvider([[2.0, 0.0, 0.0]], [0.0, 4.0, 0.0], dim=3)
        ts = embed_item(item(), TITLE, provider)
        assert abs(np.linalg.norm(ts.token_vectors[0]) - 1.0) <= 1e-4
        assert abs(np.linalg.norm(ts.sentence_vector) - 1.0) <= 1e-4

    def test_dim_mismatch(self):
        provider = StubProvider([[1.0, 0.0]], [1.0, 0.0], dim=3)
        with pytest.raises(DimensionMismatchError):
            embed_item(item(), TITLE, provider)

    def test_embed_many_covers_all_items(self):
        items = [item(f"i{n}", f"title {n} words") for n in range(9)]
        out = embed_many(items, TITLE, HashedProvider(dim=8), max_workers=4)
        assert set(out) == {it.id for it in items}


class TestFieldsHash:
    def test_differs_by_config(self):
        assert fields_hash(TITLE) != fields_hash(TITLE_SOURCE)

    def test_stable(self):
        assert fields_hash(TITLE) == fields_hash(FieldConfig())


class TestCache:
    def test_round_trip_within_1e6(self, tmp_path):
        cache = EmbeddingCache(tmp_path)
        provider = HashedProvider(dim=32)
        original = embed_item(item(), TITLE, provider, cache)
        cached = cache.get("a", fields_hash(TITLE))
        assert cached is not None
        assert np.max(np.abs(cached.token_vectors - original.token_vectors)) <= 1e-6
        assert np.max(np.abs(cached.sentence_vector - original.sentence_vector)) <= 1e-6

    def test_cold_cache_misses(self, tmp_path):
        assert EmbeddingCache(tmp_path).get("nope", "abc") is None

    def test_corrupt_entry_evicted(self, tmp_path, caplog):
        cache = EmbeddingCache(tmp_path)
        embed_item(item(), TITLE, HashedProvider(dim=8), cache)
        (path,) = list(tmp_path.iterdir())
        path.write_text(path.read_text(encoding="utf-8")[:40], encoding="utf-8")
        with caplog.at_level("WARNING"):
            assert cache.get("a", fields_hash(TITLE)) is None
        assert "corrupt" in caplog.text
        assert not path.exists()

    def test_no_cross_config_contamination(self, tmp_path):
        cache = EmbeddingCache(tmp_path)
        embed_item(item(), TITLE, HashedProvider(dim=8), cache)
        assert cache.get("a", fields_hash(TITLE_SOURCE)) is None

    def test_bsr_from_cache_matches_fresh(self, tmp_path):
        cache = EmbeddingCache(tmp_path)
        provider = HashedProvider(dim=16)
        q_fresh = embed_item(item("q", "alpha beta gamma"), TITLE, provider)
        d_fresh = embed_item(item("d", "beta gamma delta"), TITLE, provider, cache)
        d_cached = cache.get("d", fields_hash(TITLE))
        assert abs(bsr(q_fresh, d_cached) - bsr(q_fresh, d_fresh)) <= 1e-5

    def test_concurrent_same_key_access(self, tmp_path):
        cache = EmbeddingCache(tmp_path)
        provider = HashedProvider(dim=8)
        reference = embed_item(item(), TITLE, provider)
        errors = []

        def worker():
            try:
                for _ in range(25):
                    cache.put(reference, fields_hash(TITLE))
                    got = cache.get("a", fields_hash(TITLE))
                    if got is not None and not np.array_equal(got.token_vectors, reference.token_vectors):
                        errors.append("mismatch")
            except Exception as exc:  # pragma: no cover
                errors.append(repr(exc))

        threads = [threading.Thread(target=worker) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []


class TestPrecomputedFile:
    def write_file(self, tmp_path, dim=4, declared=None):
        ts = TokenEmbeddingSet.from_raw("a", np.eye(dim)[:2], np.eye(dim)[0])
        record = ts.to_record(fields_hash(TITLE))
        record["dim"] = declared or dim
        path = tmp_path / "emb.jsonl"
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        return path

    def test_fetch(self, tmp_path):
        path = self.write_file(tmp_path)
        provider = PrecomputedFileProvider(path, dim=4)
        ts = embed_item(item(), TITLE, provider)
        assert ts.dim == 4

    def test_declared_dim_mismatch(self, tmp_path):
        path = self.write_file(tmp_path, dim=4, declared=512)
        with pytest.raises(DimensionMismatchError):
            PrecomputedFileProvider(path, dim=4)

    def test_missing_id(self, tmp_path):
        path = self.write_file(tmp_path)
        provider = PrecomputedFileProvider(path, dim=4)
        with pytest.raises(EmbeddingError, match="no precomputed"):
            embed_item(item("other"), TITLE, provider)


class TestHttpProvider:
    @pytest.fixture
    def embed_endpoint(self):
        import json as json_module
        import threading
        from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

        requests_seen = []

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json_module.loads(self.rfile.read(int(self.headers["Content-Length"])))
                requests_seen.append(body)
                ts = TokenEmbeddingSet.from_raw("x", np.eye(4)[:2], np.eye(4)[0])
                payload = json_module.dumps(
                    {"dim": 4, "tokens": ts.token_vectors.tolist(), "sentence": ts.sentence_vector.tolist()}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        yield f"http://127.0.0.1:{server.server_address[1]}/embed", requests_seen
        server.shutdown()

    def test_wire_format(self, embed_endpoint):
        url, seen = embed_endpoint
        provider = HttpProvider(url, dim=4)
        ts = embed_item(item(), TITLE, provider)
        assert ts.dim == 4
        assert seen[0] == {"text": "budget vote delayed again"}

    def test_dim_mismatch_from_service(self, embed_endpoint):
        url, _ = embed_endpoint
        provider = HttpProvider(url, dim=8)
        with pytest.raises(DimensionMismatchError):
            embed_item(item(), TITLE, provider)

    def test_unreachable_raises_after_retries(self):
        provider = HttpProvider("http://127.0.0.1:9", dim=4, timeout=0.2, retries=1)
        with pytest.raises(ProviderUnreachableError):
            provider.fetch("a", "fh", "text")


def test_load_provider_specs(tmp_path):
    assert isinstance(load_provider("hashed", 8), HashedProvider)
    with pytest.raises(ValueError):
        load_provider("magic", 8)
