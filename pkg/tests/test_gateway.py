import json
import math
import threading
import time

import pytest

from recombkb.gateway import (
    BackendError,
    EmbedRequest,
    Gateway,
    GenRequest,
    MockBackend,
    RetryExhausted,
    TransportError,
    hash_embedding,
    prompt_digest,
)

# extraction reply recorded for a deterministic temperature-0 run
RECORDED_BLEND_REPLY = json.dumps({
    "recombination_type": "combination",
    "combination-element": ["advanced deep learning techniques",
                            "archaeological knowledge"],
})


def gw(backend, **kwargs):
    kwargs.setdefault("sleep", lambda s: None)
    return Gateway(backend, **kwargs)


class TestRequests:
    def test_max_tokens_positive(self):
        with pytest.raises(ValueError):
            GenRequest(model_id="m", prompt="p", max_tokens=0)

    def test_embed_texts_nonempty(self):
        with pytest.raises(ValueError):
            EmbedRequest("m", [])

    def test_temperature_nonnegative(self):
        with pytest.raises(ValueError):
            GenRequest(model_id="m", prompt="p", temperature=-0.5)


class TestGenerate:
    def test_cache_hit_skips_network(self, tmp_path):
        backend = MockBackend().script("P", "yes")
        gateway = gw(backend, cache_dir=tmp_path / "cache")
        req = GenRequest(model_id="m", prompt="P")
        assert gateway.generate(req) == "yes"
        assert gateway.generate(req) == "yes"
        assert backend.generate_calls == 1
        assert gateway.stats.cache_hits == 1

    def test_unscripted_prompt_errors(self):
        with pytest.raises(BackendError):
            gw(MockBackend()).generate(GenRequest(model_id="m", prompt="???"))

    def test_replay_returns_recorded_bytes(self, tmp_path):
        cache_dir = tmp_path / "cache"
        backend = MockBackend().script("bronze prompt", RECORDED_BLEND_REPLY)
        req = GenRequest(model_id="m", prompt="bronze prompt", temperature=0.0)
        gw(backend, cache_dir=cache_dir).generate(req)
        # a fresh gateway over an empty (unscripted) backend replays the recording
        replayed = gw(MockBackend(), cache_dir=cache_dir).generate(req)
        assert replayed == RECORDED_BLEND_REPLY

    def test_cache_hit_preserves_created_timestamp(self, tmp_path):
        backend = MockBackend().script("P", "yes")
        gateway = gw(backend, cache_dir=tmp_path / "cache")
        req = GenRequest(model_id="m", prompt="P")
        first = gateway.generate_detailed(req)
        second = gateway.generate_detailed(req)
        assert second.cached and not first.cached
        assert second.created == first.created

    def test_different_params_miss_cache(self, tmp_path):
        backend = MockBackend().script("P", "yes")
        gateway = gw(backend, cache_dir=tmp_path / "cache")
        gateway.generate(GenRequest(model_id="m", prompt="P", max_tokens=10))
        gateway.generate(GenRequest(model_id="m", prompt="P", max_tokens=20))
        assert backend.generate_calls == 2


class TestRetries:
    class FlakyBackend:
        def __init__(self, failures, exc_factory):
            self.failures = failures
            self.exc_factory = exc_factory
            self.calls = 0

        def generate(self, req):
            self.calls += 1
            if self.calls <= self.failures:
                raise self.exc_factory()
            return "ok"

    def test_recovers_from_transient_errors(self):
        backend = self.FlakyBackend(2, lambda: TransportError("boom"))
        gateway = gw(backend)
        assert gateway.generate(GenRequest(model_id="m", prompt="p")) == "ok"
        assert gateway.stats.retries == 2

    def test_exhaustion(self):
        backend = self.FlakyBackend(99, lambda: TransportError("boom"))
        with pytest.raises(RetryExhausted):
            gw(backend, max_attempts=5).generate(GenRequest(model_id="m", prompt="p"))
        assert backend.calls == 5

    def test_429_is_retryable(self):
        backend = self.FlakyBackend(1, lambda: BackendError("slow down", status=429))
        assert gw(backend).generate(GenRequest(model_id="m", prompt="p")) == "ok"

    def test_400_is_not_retried(self):
        backend = self.FlakyBackend(99, lambda: BackendError("bad", status=400))
        with pytest.raises(BackendError):
            gw(backend).generate(GenRequest(model_id="m", prompt="p"))
        assert backend.calls == 1


class TestEmbed:
    def test_identical_texts_identical_vectors(self):
        backend = MockBackend().script_embedding("a", [1.0, 0.0, 0.0, 0.0])
        vecs = gw(backend).embed(EmbedRequest("m", ["a", "a"], normalize=False))
        assert vecs[0] == vecs[1]

    def test_normalization_unit_norm(self):
        backend = MockBackend().script_embedding("a", [3.0, 4.0])
        (vec,) = gw(backend).embed(EmbedRequest("m", ["a"], normalize=True))
        assert vec == pytest.approx([0.6, 0.8])
        assert abs(math.hypot(*vec) - 1.0) <= 1e-6

    def test_fixture_table_exact(self):
        table = {"x": [1.0, 0.0, 0.0, 0.0], "y": [0.0, 1.0, 0.0, 0.0]}
        backend = MockBackend()
        for text, vec in table.items():
            backend.script_embedding(text, vec)
        out = gw(backend).embed(EmbedRequest("m", ["x", "y"], normalize=False))
        assert out == [table["x"], table["y"]]

    def test_embed_cache(self, tmp_path):
        backend = MockBackend().script_embedding("a", [1.0, 0.0])
        gateway = gw(backend, cache_dir=tmp_path / "c")
        gateway.embed(EmbedRequest("m", ["a"]))
        gateway.embed(EmbedRequest("m", ["a"]))
        assert backend.embed_calls == 1

    def test_zero_vector_cannot_normalize(self):
        backend = MockBackend().script_embedding("z", [0.0, 0.0])
        with pytest.raises(BackendError):
            gw(backend).embed(EmbedRequest("m", ["z"], normalize=True))

    def test_hash_embedding_deterministic_unit(self):
        v1, v2 = hash_embedding("same text"), hash_embedding("same text")
        assert v1 == v2
        assert abs(math.sqrt(sum(x * x for x in v1)) - 1.0) < 1e-9


class TestBatchExecute:
    def test_serial_preserves_order(self):
        backend = MockBackend()
        reqs = []
        for i in range(10):
            backend.script(f"p{i}", f"r{i}")
            reqs.append(GenRequest(model_id="m", prompt=f"p{i}"))
        out = gw(backend).batch_execute(reqs, max_in_flight=1)
        assert out == [f"r{i}" for i in range(10)]
        assert backend.max_in_flight_seen == 1

    def test_failures_reported_positionally(self):
        backend = MockBackend()
        reqs = []
        fail_at = {7, 33, 81}
        for i in range(100):
            if i in fail_at:
                backend.fail_on(f"p{i}", BackendError(f"bad {i}", status=400))
            else:
                backend.script(f"p{i}", f"r{i}")
            reqs.append(GenRequest(model_id="m", prompt=f"p{i}"))
        out = gw(backend).batch_execute(reqs, max_in_flight=8)
        errors = [i for i, r in enumerate(out) if isinstance(r, Exception)]
        assert errors == sorted(fail_at)
        assert sum(1 for r in out if not isinstance(r, Exception)) == 97
        for i, r in enumerate(out):
            if i not in fail_at:
                assert r == f"r{i}"

    def test_empty_batch(self):
        assert gw(MockBackend()).batch_execute([], max_in_flight=3) == []

    def test_bound_respected(self):
        class SlowBackend(MockBackend):
            def generate(self, req):
                self._enter()
                try:
                    time.sleep(0.005)
                    return "ok"
                finally:
                    self._exit()

        backend = SlowBackend()
        reqs = [GenRequest(model_id="m", prompt=f"p{i}") for i in range(30)]
        gw(backend).batch_execute(reqs, max_in_flight=3)
        assert backend.max_in_flight_seen <= 3

    def test_parallelism_actually_happens(self):
        barrier = threading.Barrier(3)

        class BarrierBackend(MockBackend):
            def generate(self, req):
                barrier.wait(timeout=5)  # only passes if 3 run concurrently
                return "ok"

        reqs = [GenRequest(model_id="m", prompt=f"p{i}") for i in range(3)]
        out = gw(BarrierBackend()).batch_execute(reqs, max_in_flight=3)
        assert out == ["ok", "ok", "ok"]


def test_prompt_digest_stable():
    assert prompt_digest("abc") == prompt_digest("abc")
    assert prompt_digest("abc") != prompt_digest("abd")


def test_mock_script_file(tmp_path):
    spec = {
        "generate": [
            {"model": "x", "contains": ["needle"], "reply": "found"},
            {"model": "x", "default": True, "reply": "fallback"},
        ],
        "embeddings": {"a": [1.0, 0.0]},
        "embedding_dim": 8,
        "embedding_fallback": "hash",
    }
    path = tmp_path / "script.json"
    path.write_text(json.dumps(spec), "utf-8")
    backend = MockBackend.from_script_file(path)
    assert backend.generate(GenRequest(model_id="x", prompt="hay needle stack")) == "found"
    assert backend.generate(GenRequest(model_id="x", prompt="nothing")) == "fallback"
    assert backend.embed(EmbedRequest("e", ["a"], normalize=False)) == [[1.0, 0.0]]
    assert len(backend.embed(EmbedRequest("e", ["unknown"], normalize=False))[0]) == 8
