"""HTTP contract of the query service."""

import pytest
from fastapi.testclient import TestClient

from periosearch import encoders as enc
from periosearch import evaluation as ev
from periosearch import retrieval as rt
from periosearch import service as sv
from periosearch import training as tr

STAGE_TWO = "An image with Periodontal Stage Two."


@pytest.fixture(scope="module")
def service_files(tiny_checkpoint, small_corpus, tmp_path_factory):
    base = tmp_path_factory.mktemp("svc") / "index"
    rt.build_index(tiny_checkpoint, small_corpus, "train", base=base)
    return tiny_checkpoint, base, small_corpus.root


@pytest.fixture(scope="module")
def svc_config(service_files):
    ckpt, base, root = service_files
    return sv.ServiceConfig(checkpoint=ckpt, index_base=base, data_dir=root)


@pytest.fixture(scope="module")
def client(svc_config):
    return TestClient(sv.create_app(svc_config))


@pytest.fixture(scope="module")
def searcher(service_files):
    ckpt, base, _ = service_files
    model, _ = rt.load_model(ckpt)
    return rt.EmbeddingIndex.load(base), model


# ---------------------------------------------------------------------------
# config validation


def test_config_rejects_bad_settings(service_files, tmp_path):
    ckpt, base, root = service_files
    with pytest.raises(sv.ServiceConfigError):
        sv.ServiceConfig(checkpoint=ckpt, index_base=base, data_dir=root, max_k=0)
    with pytest.raises(sv.ServiceConfigError):
        sv.ServiceConfig(
            checkpoint=ckpt, index_base=base, data_dir=root, timeout_seconds=0
        )
    with pytest.raises(sv.ServiceConfigError):
        sv.ServiceConfig(checkpoint=tmp_path / "no.ckpt", index_base=base, data_dir=root)
    with pytest.raises(sv.ServiceConfigError):
        sv.ServiceConfig(checkpoint=ckpt, index_base=tmp_path / "no_index", data_dir=root)
    with pytest.raises(sv.ServiceConfigError):
        sv.ServiceConfig(checkpoint=ckpt, index_base=base, data_dir=tmp_path / "nowhere")


def test_snapshot_refuses_foreign_checkpoint(service_files, small_corpus, tmp_path):
    _, base, root = service_files
    cfg = tr.TrainConfig(
        n=8, m=8, d=4, embed_dim=4, seq_len=12, channels=(2, 2, 2),
        batch_size=4, epochs=0, seed=9, augmentation=False, pooling="flatten",
    )
    _, other = tr.train(cfg, small_corpus)
    other_ckpt = tmp_path / "other.ckpt"
    enc.save_checkpoint(other, other_ckpt)
    with pytest.raises(rt.FingerprintError):
        sv.load_snapshot(
            sv.ServiceConfig(checkpoint=other_ckpt, index_base=base, data_dir=root)
        )


# ---------------------------------------------------------------------------
# /api/query


def test_query_returns_ranked_results_with_tier(client):
    r = client.post("/api/query", json={"text": STAGE_TWO, "k": 3})
    assert r.status_code == 200
    body = r.json()
    assert body["tier"] == "Low"
    assert body["elapsed_ms"] >= 0
    assert len(body["results"]) == 3
    scores = [item["score"] for item in body["results"]]
    assert scores == sorted(scores, reverse=True)
    for item in body["results"]:
        assert item["image_url"] == f"/api/image/{item['id']}"
        assert item["summary"].startswith("stage ")


def test_query_k_defaults_to_three(client):
    r = client.post("/api/query", json={"text": STAGE_TWO})
    assert r.status_code == 200
    assert len(r.json()["results"]) == 3


def test_query_matches_library_search_exactly(client, searcher, small_corpus):
    index, model = searcher
    suite = ev.generate_query_suite(
        small_corpus.manifest.split("train"), small_corpus.lexicon,
        per_tier=34, seed=11,
    )
    assert len(suite) >= 100
    for q in suite:
        got = client.post("/api/query", json={"text": q.text, "k": 3}).json()
        want = rt.query(q.text, 3, index, model).items
        assert [(item["id"], item["score"]) for item in got["results"]] == want


def test_query_k_clamps_to_max(client, searcher):
    index, _ = searcher
    r = client.post("/api/query", json={"text": STAGE_TWO, "k": 999})
    assert r.status_code == 200
    assert len(r.json()["results"]) == min(sv.MAX_K, index.size)


def test_query_honors_configured_max_k(svc_config):
    cfg = sv.ServiceConfig(
        checkpoint=svc_config.checkpoint, index_base=svc_config.index_base,
        data_dir=svc_config.data_dir, max_k=2,
    )
    local = TestClient(sv.create_app(cfg))
    r = local.post("/api/query", json={"text": STAGE_TWO, "k": 5})
    assert len(r.json()["results"]) == 2


def test_query_without_stage_is_unprocessable(client):
    for text in ("", "an image of the upper jaw"):
        r = client.post("/api/query", json={"text": text, "k": 3})
        assert r.status_code == 422
        assert r.json()["detail"]["code"] == "unparseable_query"


def test_query_overlong_text_is_bad_request(client):
    r = client.post("/api/query", json={"text": "stage two " + "x" * 200, "k": 3})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "bad_argument"


def test_query_k_below_one_is_bad_request(client):
    r = client.post("/api/query", json={"text": STAGE_TWO, "k": 0})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "bad_argument"


def test_query_malformed_body_is_bad_request(client):
    for payload in ({}, {"k": 3}, {"text": 42, "k": 3}):
        r = client.post("/api/query", json=payload)
        assert r.status_code == 400
        assert r.json()["detail"]["code"] == "malformed_body"
    r = client.post(
        "/api/query", content=b"not json",
        headers={"content-type": "application/json"},
    )
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "malformed_body"


# ---------------------------------------------------------------------------
# /api/image


def test_image_bytes_match_disk(client, searcher, small_corpus):
    index, _ = searcher
    rid = int(index.ids[0])
    r = client.get(f"/api/image/{rid}")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert "immutable" in r.headers.get("cache-control", "")
    on_disk = (small_corpus.root / index.records[rid].image_path).read_bytes()
    assert r.content == on_disk


def test_image_head_sends_headers_only(client, searcher):
    index, _ = searcher
    rid = int(index.ids[0])
    r = client.head(f"/api/image/{rid}")
    assert r.status_code == 200
    assert int(r.headers["content-length"]) > 0
    assert r.content == b""


def test_image_unknown_id_is_not_found(client):
    r = client.get("/api/image/99999999")
    assert r.status_code == 404
    assert r.json()["detail"]["code"] == "unknown_image"


def test_image_non_integer_id_is_bad_request(client):
    assert client.get("/api/image/abc").status_code == 400


# ---------------------------------------------------------------------------
# /api/health and lifecycle


def test_health_reports_loaded_index(client, svc_config, searcher):
    index, _ = searcher
    r = client.get("/api/health")
    assert r.status_code == 200
    body = r.json()
    assert body["ready"] is True
    assert body["size"] == index.size
    assert body["fingerprint"] == rt.checkpoint_fingerprint(svc_config.checkpoint)
    assert body["uptime_seconds"] >= 0


def test_empty_service_is_alive_but_not_ready():
    bare = TestClient(sv.create_app())
    body = bare.get("/api/health").json()
    assert body == {
        "ready": False,
        "size": 0,
        "fingerprint": "",
        "uptime_seconds": body["uptime_seconds"],
    }
    r = bare.post("/api/query", json={"text": STAGE_TWO, "k": 3})
    assert r.status_code == 503
    assert r.json()["detail"]["code"] == "not_ready"
    assert bare.get("/api/image/1").status_code == 503


def test_swap_replaces_whole_snapshot(svc_config, small_corpus, tmp_path):
    cfg = tr.TrainConfig(
        n=8, m=8, d=4, embed_dim=4, seq_len=12, channels=(2, 2, 2),
        batch_size=4, epochs=0, seed=21, augmentation=False, pooling="flatten",
    )
    _, other = tr.train(cfg, small_corpus)
    other_ckpt = tmp_path / "other.ckpt"
    enc.save_checkpoint(other, other_ckpt)
    rt.build_index(other_ckpt, small_corpus, "train", base=tmp_path / "other_index")
    other_cfg = sv.ServiceConfig(
        checkpoint=other_ckpt, index_base=tmp_path / "other_index",
        data_dir=small_corpus.root,
    )

    app = sv.create_app(svc_config)
    local = TestClient(app)
    before = local.get("/api/health").json()["fingerprint"]
    sv.swap_snapshot(app, other_cfg)
    after = local.get("/api/health").json()["fingerprint"]
    assert before == rt.checkpoint_fingerprint(svc_config.checkpoint)
    assert after == rt.checkpoint_fingerprint(other_ckpt)
    assert after != before
    assert local.post("/api/query", json={"text": STAGE_TWO, "k": 3}).status_code == 200


# ---------------------------------------------------------------------------
# static hosting


def test_root_serves_ui_bundle_when_configured(svc_config, tmp_path):
    static = tmp_path / "dist"
    static.mkdir()
    (static / "index.html").write_text("<html><body>search ui</body></html>")
    cfg = sv.ServiceConfig(
        checkpoint=svc_config.checkpoint, index_base=svc_config.index_base,
        data_dir=svc_config.data_dir, static_dir=static,
    )
    local = TestClient(sv.create_app(cfg))
    r = local.get("/")
    assert r.status_code == 200
    assert "search ui" in r.text
    assert local.get("/api/health").status_code == 200


def test_root_without_bundle_lists_endpoints(client):
    body = client.get("/").json()
    assert body["service"] == "periosearch"
    assert "/api/query" in body["endpoints"]
