"""Wire protocol: framing round-trips, decode fuzzing, TCP service mode."""

from __future__ import annotations

import socket

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twotsd.domain import Verdict
from twotsd.errors import (
    MalformedFrameError,
    ProtocolError,
    UnknownKindError,
    VersionMismatchError,
)
from twotsd.protocol import (
    MAX_FRAME_BYTES,
    PROTOCOL_VERSION,
    Ack,
    DeviceClient,
    ErrorInfo,
    Message,
    MessageKind,
    TrustServer,
    decode,
    encode,
    read_frame,
)
from twotsd.teacher import TeacherAgent

from _builders import make_profile, make_record, make_records, make_task


def _sample_bundle():
    teacher = TeacherAgent()
    teacher.handle_resource_report(make_profile(device="a_k", updated_at=50_000))
    for rec in make_records(8, collaborator="a_k"):
        teacher.handle_performance_record(rec)
    return teacher.handle_task_request(make_task(), now=50_000)


def _messages():
    return [
        Message(MessageKind.RESOURCE_REPORT, "a_k", make_profile(), "a_k-1", 10),
        Message(MessageKind.PERFORMANCE_RECORD, "a_i", make_record(), "a_i-1", 11),
        Message(MessageKind.TASK_REQUEST, "a_i", make_task(), "a_i-2", 12),
        Message(MessageKind.CANDIDATE_BUNDLE, "server", _sample_bundle(), "a_i-2", 13),
        Message(MessageKind.ACK, "server", Ack(detail="stored"), "a_k-1", 14),
        Message(MessageKind.ERROR, "server", ErrorInfo("stale_update", "old report"), "a_k-2", 15),
    ]


@pytest.mark.parametrize("msg", _messages(), ids=lambda m: m.kind.value)
def test_round_trip_every_kind(msg):
    assert decode(encode(msg)) == msg


def test_encode_is_deterministic_and_framed():
    msg = _messages()[0]
    frame = encode(msg)
    assert frame == encode(msg)
    length = int.from_bytes(frame[:4], "big")
    assert length == len(frame) - 4
    assert frame[4] == PROTOCOL_VERSION
    body = frame[5:].decode("ascii")  # raises if the document is not pure ascii
    # top-level keys appear in sorted order in the canonical document
    keys = ["kind", "msg_id", "payload", "sender", "sent_at"]
    positions = [body.index(f'"{k}"') for k in keys]
    assert positions == sorted(positions)


@given(
    sender=st.text(min_size=1, max_size=20),
    msg_id=st.text(min_size=1, max_size=20),
    sent_at=st.integers(0, 2**48),
    at=st.integers(0, 2**48),
    throughput=st.floats(1e-3, 1e5),
    loss=st.floats(0, 1),
    proc=st.floats(1e-3, 1e5),
    acc=st.floats(0, 1),
    verdict=st.sampled_from(list(Verdict)),
)
def test_round_trip_survives_value_ranges(sender, msg_id, sent_at, at, throughput, loss, proc, acc, verdict):
    record = make_record(
        at=at, throughput_mbps=throughput, loss_rate=loss,
        proc_speed_mbps=proc, accuracy=acc, verdict=verdict,
    )
    msg = Message(MessageKind.PERFORMANCE_RECORD, sender, record, msg_id, sent_at)
    assert decode(encode(msg)) == msg


def test_version_byte_is_checked():
    frame = bytearray(encode(_messages()[0]))
    frame[4] = 2
    with pytest.raises(VersionMismatchError):
        decode(bytes(frame))


def test_unknown_kind_is_distinguished_from_malformed():
    frame = encode(_messages()[4])
    tampered = frame.replace(b'"kind":"ack"', b'"kind":"abc"')  # same length, frame stays valid
    with pytest.raises(UnknownKindError):
        decode(tampered)


def test_truncation_trailing_and_cap_are_malformed():
    frame = encode(_messages()[0])
    with pytest.raises(MalformedFrameError):
        decode(frame[:3])  # short length prefix
    with pytest.raises(MalformedFrameError):
        decode(frame[:-1])  # body shorter than declared
    with pytest.raises(MalformedFrameError):
        decode(frame + b"x")  # trailing bytes
    with pytest.raises(MalformedFrameError):
        decode((MAX_FRAME_BYTES + 1).to_bytes(4, "big") + b"\x01{}")


@given(st.binary(max_size=200))
def test_decode_never_crashes_on_garbage(data):
    try:
        decode(data)
    except ProtocolError:
        pass  # the only acceptable failure mode


@given(st.data())
def test_decode_never_crashes_on_corrupted_frames(data):
    frame = bytearray(encode(_messages()[1]))
    index = data.draw(st.integers(0, len(frame) - 1))
    frame[index] = data.draw(st.integers(0, 255))
    try:
        decode(bytes(frame))
    except ProtocolError:
        pass


@pytest.fixture()
def server():
    srv = TrustServer(TeacherAgent(), clock=lambda: 77_000)
    srv.serve_background()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_tcp_ingest_and_request_flow(server):
    host, port = server.address
    with DeviceClient(host, port, "a_k") as collaborator:
        ack = collaborator.call(
            MessageKind.RESOURCE_REPORT, make_profile(device="a_k", updated_at=70_000)
        )
        assert ack.kind is MessageKind.ACK
        assert ack.msg_id == "a_k-1"
        assert ack.sender == "server"
    with DeviceClient(host, port, "a_i") as owner:
        for rec in make_records(8, collaborator="a_k"):
            ack = owner.call(MessageKind.PERFORMANCE_RECORD, rec)
            assert ack.kind is MessageKind.ACK
        reply = owner.call(MessageKind.TASK_REQUEST, make_task())
        assert reply.kind is MessageKind.CANDIDATE_BUNDLE
        assert reply.msg_id == "a_i-9"
        assert reply.payload.devices() == ["a_k"]
        assert reply.sent_at == 77_000


def test_tcp_application_error_echoes_msg_id(server):
    host, port = server.address
    with DeviceClient(host, port, "a_k") as client:
        client.call(MessageKind.RESOURCE_REPORT, make_profile(updated_at=5_000))
        reply = client.call(MessageKind.RESOURCE_REPORT, make_profile(updated_at=1_000))
        assert reply.kind is MessageKind.ERROR
        assert reply.payload.code == "stale_update"
        assert reply.msg_id == "a_k-2"
        # connection survives an application error
        ok = client.call(MessageKind.RESOURCE_REPORT, make_profile(updated_at=6_000))
        assert ok.kind is MessageKind.ACK


def test_tcp_rejects_unservable_kinds(server):
    host, port = server.address
    with DeviceClient(host, port, "a_k") as client:
        reply = client.call(MessageKind.ACK, Ack())
        assert reply.kind is MessageKind.ERROR
        assert reply.payload.code == "unknown_kind"


def test_tcp_pipelined_frames_answered_in_order(server):
    host, port = server.address
    first = Message(MessageKind.RESOURCE_REPORT, "a_k", make_profile(updated_at=1), "p-1", 0)
    second = Message(MessageKind.RESOURCE_REPORT, "a_k", make_profile(updated_at=2), "p-2", 0)
    with socket.create_connection((host, port)) as sock:
        sock.sendall(encode(first) + encode(second))
        replies = [read_frame(sock), read_frame(sock)]
    assert [r.msg_id for r in replies] == ["p-1", "p-2"]
    assert all(r.kind is MessageKind.ACK for r in replies)


def test_tcp_malformed_frame_gets_error_then_close(server):
    host, port = server.address
    with socket.create_connection((host, port)) as sock:
        sock.sendall((5).to_bytes(4, "big") + b"\x02abcd")  # wrong version byte
        reply = read_frame(sock)
        assert reply.kind is MessageKind.ERROR
        assert reply.payload.code == "version_mismatch"
        assert read_frame(sock) is None  # server hangs up after a framing error


def test_read_frame_clean_eof_vs_midframe_cut(server):
    host, port = server.address
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    lhost, lport = listener.getsockname()
    frame = encode(_messages()[0])

    with socket.create_connection((lhost, lport)) as client:
        peer, _ = listener.accept()
        with peer:
            peer.sendall(frame)
            peer.shutdown(socket.SHUT_WR)
            assert read_frame(client) is not None
            assert read_frame(client) is None  # EOF at a frame boundary

    with socket.create_connection((lhost, lport)) as client:
        peer, _ = listener.accept()
        with peer:
            peer.sendall(frame[: len(frame) // 2])
            peer.shutdown(socket.SHUT_WR)
            with pytest.raises(MalformedFrameError):
                read_frame(client)
    listener.close()
