"""Remote labeling engine: stubbed HTTP behavior, fallbacks, credential hygiene."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
import requests

from twotsd.domain import Trend, TrustState
from twotsd.errors import (
    ConfigError,
    RemoteAuthError,
    RemoteEngineError,
    SchemaViolationError,
)
from twotsd.remote_engine import (
    RemoteEngineConfig,
    RemoteSemanticsEngine,
    parse_label_reply,
)
from twotsd.semantics import extract_semantics

from _builders import make_records

SECRET = "sekret-test-credential-123"


class StubResponse:
    def __init__(self, status_code: int, doc=None):
        self.status_code = status_code
        self._doc = doc

    def json(self):
        if self._doc is None:
            raise ValueError("not json")
        return self._doc


class StubSession:
    """Scripted session: each post() pops the next canned outcome."""

    def __init__(self, *outcomes):
        self.outcomes = list(outcomes)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def chat_reply(state="trusted", loss_rate="normal"):
    content = json.dumps({
        "state": state,
        "comm_trends": {"throughput": "normal", "loss_rate": loss_rate},
        "comp_trends": {"accuracy": "normal", "proc_speed": "normal"},
    })
    return StubResponse(200, {"choices": [{"message": {"content": content}}]})


def _engine(*outcomes, **cfg_over):
    cfg = RemoteEngineConfig(
        endpoint="https://example.test/v1/chat", max_retries=2, backoff_s=0.01,
        **cfg_over,
    )
    session = StubSession(*outcomes)
    slept = []
    engine = RemoteSemanticsEngine(cfg, session=session, sleep=slept.append)
    return engine, session, slept


@pytest.fixture(autouse=True)
def credential(monkeypatch):
    monkeypatch.setenv("TWOTSD_REMOTE_KEY", SECRET)


def test_happy_path_uses_remote_labels_and_local_bookkeeping():
    engine, session, _ = _engine(chat_reply(state="untrusted", loss_rate="increasing"))
    records = make_records(8)
    result = engine.extract("a_j", "video_transcoding", records)
    local = extract_semantics("a_j", "video_transcoding", records)
    assert result.state is TrustState.UNTRUSTED  # remote label wins
    assert result.comm_trends["loss_rate"] is Trend.INCREASING
    assert result.window == local.window  # bookkeeping is computed locally
    assert result.extracted_at == local.extracted_at
    assert result.record_count == 8
    assert engine.calls == 1 and engine.fallbacks == 0


def test_request_shape_and_credential_header():
    engine, session, _ = _engine(chat_reply())
    engine.extract("a_j", "video_transcoding", make_records(6))
    (post,) = session.posts
    assert post["headers"] == {"Authorization": f"Bearer {SECRET}"}
    assert post["timeout"] == engine.cfg.timeout_s
    body = post["json"]
    assert body["model"] == "trust-extractor-1"
    assert body["temperature"] == 0
    prompt = json.loads(body["messages"][1]["content"])
    assert prompt["device"] == "a_j"
    assert prompt["task_type"] == "video_transcoding"
    assert prompt["trust_threshold"] == 0.8
    assert len(prompt["records"]) == 6


def test_cold_start_never_touches_network():
    engine, session, _ = _engine()
    records = make_records(4)  # below the state n_min of 5
    result = engine.extract("a_j", "video_transcoding", records)
    assert result == extract_semantics("a_j", "video_transcoding", records)
    assert result.state is TrustState.INSUFFICIENT_DATA
    assert session.posts == []


def test_auth_failure_propagates_without_retry():
    engine, session, slept = _engine(StubResponse(401))
    with pytest.raises(RemoteAuthError) as exc_info:
        engine.extract("a_j", "video_transcoding", make_records(6))
    assert len(session.posts) == 1
    assert slept == []
    assert SECRET not in str(exc_info.value)


def test_missing_credential_is_auth_error_before_any_call(monkeypatch):
    monkeypatch.delenv("TWOTSD_REMOTE_KEY")
    engine, session, _ = _engine(chat_reply())
    with pytest.raises(RemoteAuthError):
        engine.extract("a_j", "video_transcoding", make_records(6))
    assert session.posts == []


def test_rate_limit_retries_with_backoff_then_succeeds():
    engine, session, slept = _engine(StubResponse(429), chat_reply())
    result = engine.extract("a_j", "video_transcoding", make_records(6))
    assert result.state is TrustState.TRUSTED
    assert len(session.posts) == 2
    assert engine.retries == 1
    assert slept == [0.01]


def test_persistent_server_errors_exhaust_retries_and_propagate():
    engine, session, slept = _engine(
        StubResponse(500), requests.Timeout(), StubResponse(503)
    )
    with pytest.raises(RemoteEngineError) as exc_info:
        engine.extract("a_j", "video_transcoding", make_records(6))
    assert not isinstance(exc_info.value, SchemaViolationError)
    assert "3 attempts" in str(exc_info.value)
    assert len(session.posts) == 3
    assert slept == [0.01, 0.02]


def test_schema_violations_fall_back_to_deterministic_labels(caplog):
    bad = StubResponse(200, {"choices": [{"message": {"content": "not json at all"}}]})
    engine, session, _ = _engine(bad, bad, bad)
    records = make_records(8)
    with caplog.at_level(logging.WARNING, logger="twotsd.remote_engine"):
        result = engine.extract("a_j", "video_transcoding", records)
    assert result == extract_semantics("a_j", "video_transcoding", records)
    assert engine.fallbacks == 1
    assert len(session.posts) == 3  # initial try plus two retries
    assert any("deterministic" in message for message in caplog.messages)
    assert all(SECRET not in message for message in caplog.messages)


def test_broken_envelope_is_a_schema_violation():
    engine, _, _ = _engine(
        StubResponse(200, {"unexpected": "shape"}),
        StubResponse(200, None),
        chat_reply(),
    )
    result = engine.extract("a_j", "video_transcoding", make_records(6))
    assert result.state is TrustState.TRUSTED  # third attempt succeeded
    assert engine.retries == 2


def test_remote_insufficient_data_forces_normal_trends():
    content = json.dumps({
        "state": "insufficient_data",
        "comm_trends": {"throughput": "normal", "loss_rate": "normal"},
        "comp_trends": {"accuracy": "normal", "proc_speed": "normal"},
    })
    engine, _, _ = _engine(StubResponse(200, {"choices": [{"message": {"content": content}}]}))
    result = engine.extract("a_j", "video_transcoding", make_records(6))
    assert result.state is TrustState.INSUFFICIENT_DATA
    assert set(result.all_trends().values()) == {Trend.NORMAL}


def test_parse_label_reply_accepts_exact_schema():
    state, comm, comp = parse_label_reply(json.dumps({
        "state": "trusted",
        "comm_trends": {"throughput": "increasing", "loss_rate": "normal"},
        "comp_trends": {"accuracy": "normal", "proc_speed": "decreasing"},
    }))
    assert state is TrustState.TRUSTED
    assert comm["throughput"] is Trend.INCREASING
    assert comp["proc_speed"] is Trend.DECREASING


@pytest.mark.parametrize("reply", [
    "not json",
    '"just a string"',
    '{"state": "trusted"}',  # missing trend sections
    json.dumps({"state": "excellent",
                "comm_trends": {"throughput": "normal", "loss_rate": "normal"},
                "comp_trends": {"accuracy": "normal", "proc_speed": "normal"}}),
    json.dumps({"state": "trusted",
                "comm_trends": {"throughput": "normal"},
                "comp_trends": {"accuracy": "normal", "proc_speed": "normal"}}),
    json.dumps({"state": "trusted",
                "comm_trends": {"throughput": "up", "loss_rate": "normal"},
                "comp_trends": {"accuracy": "normal", "proc_speed": "normal"}}),
    json.dumps({"state": "trusted", "extra": 1,
                "comm_trends": {"throughput": "normal", "loss_rate": "normal"},
                "comp_trends": {"accuracy": "normal", "proc_speed": "normal"}}),
    json.dumps({"state": "insufficient_data",
                "comm_trends": {"throughput": "increasing", "loss_rate": "normal"},
                "comp_trends": {"accuracy": "normal", "proc_speed": "normal"}}),
])
def test_parse_label_reply_rejects_offschema(reply):
    with pytest.raises(SchemaViolationError):
        parse_label_reply(reply)


def test_engine_config_validation():
    with pytest.raises(ConfigError):
        RemoteEngineConfig(endpoint="")
    with pytest.raises(ConfigError):
        RemoteEngineConfig(endpoint="https://x", timeout_s=0)
    with pytest.raises(ConfigError):
        RemoteEngineConfig(endpoint="https://x", max_retries=-1)


class _CannedHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        self.rfile.read(int(self.headers["Content-Length"]))
        body = json.dumps({
            "choices": [{"message": {"content": json.dumps({
                "state": "trusted",
                "comm_trends": {"throughput": "normal", "loss_rate": "normal"},
                "comp_trends": {"accuracy": "normal", "proc_speed": "normal"},
            })}}]
        }).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def test_real_http_round_trip():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _CannedHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        host, port = server.server_address
        cfg = RemoteEngineConfig(endpoint=f"http://{host}:{port}/v1/chat")
        engine = RemoteSemanticsEngine(cfg)
        result = engine.extract("a_j", "video_transcoding", make_records(8))
        assert result.state is TrustState.TRUSTED
        assert result.record_count == 8
    finally:
        server.shutdown()
        server.server_close()
