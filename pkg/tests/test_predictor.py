"""Analytic predictor behavior and the wire-protocol client."""

import json
import socket
import struct
import sys
import threading

import numpy as np
import pytest

from cono import (
    AnalyticPredictor,
    BridgeError,
    InvalidArgumentError,
    LatentClip,
    ProtocolError,
    SeededRng,
    StepRef,
    analytic_eps,
    build_schedule,
    cfg_combine,
    close_bridge,
    make_plan,
    null_scene,
    open_bridge,
    predict,
    sample_standard_normal,
)
from cono.predictor import BridgeSession, recv_message, send_message
from helpers import prompt

DIMS = (3, 2, 4, 4)


class TestAnalyticPredictor:
    @pytest.fixture()
    def pred(self, sched):
        return AnalyticPredictor(sched, DIMS, sigma0=0.3)

    def _step(self, sched):
        return make_plan(sched, 10).step_ref(0)

    def test_dims_property(self, pred):
        assert pred.dims == DIMS

    def test_cfg_one_is_pure_conditional(self, pred, sched):
        z = sample_standard_normal(SeededRng(1), DIMS)
        p = prompt("p")
        step = self._step(sched)
        out = predict(pred, z, p, step, 1.0)
        ref = analytic_eps(pred.scene_for(p), z, step.timestep, sched)
        assert np.array_equal(out.data, ref.data)

    def test_cfg_zero_is_pure_unconditional(self, pred, sched):
        z = sample_standard_normal(SeededRng(2), DIMS)
        step = self._step(sched)
        out = predict(pred, z, prompt("p"), step, 0.0)
        ref = analytic_eps(null_scene(DIMS, DIMS[0]), z, step.timestep, sched)
        assert np.array_equal(out.data, ref.data)

    def test_cfg_combination_matches_manual(self, pred, sched):
        z = sample_standard_normal(SeededRng(3), DIMS)
        p = prompt("p")
        step = self._step(sched)
        out = predict(pred, z, p, step, 7.5)
        eps_u = analytic_eps(null_scene(DIMS, DIMS[0]), z, step.timestep, sched)
        eps_c = analytic_eps(pred.scene_for(p), z, step.timestep, sched)
        assert np.array_equal(out.data, cfg_combine(eps_u, eps_c, 7.5).data)

    def test_scene_cache_reuses_objects(self, pred):
        p = prompt("p")
        assert pred.scene_for(p) is pred.scene_for(p)
        assert pred.scene_for(p) is not pred.scene_for(prompt("q", vx=0, vy=2))

    def test_dims_mismatch_rejected(self, pred, sched):
        z = sample_standard_normal(SeededRng(4), (2, 2, 4, 4))
        with pytest.raises(InvalidArgumentError):
            predict(pred, z, prompt("p"), self._step(sched), 1.0)

    def test_bad_dims_rejected_at_construction(self, sched):
        with pytest.raises(InvalidArgumentError):
            AnalyticPredictor(sched, (0, 1, 2, 2))
        with pytest.raises(InvalidArgumentError):
            AnalyticPredictor(sched, (1, 2, 2))


SERVER_SCRIPT = r'''
import json, struct, sys
import numpy as np

def read_exact(n):
    buf = b""
    while len(buf) < n:
        chunk = sys.stdin.buffer.read(n - len(buf))
        if not chunk:
            sys.exit(0)
        buf += chunk
    return buf

def send(header, payload=b""):
    raw = json.dumps(header).encode("utf-8")
    sys.stdout.buffer.write(struct.pack("<I", len(raw)) + raw + payload)
    sys.stdout.buffer.flush()

def recv():
    (n,) = struct.unpack("<I", read_exact(4))
    header = json.loads(read_exact(n).decode("utf-8"))
    count = 0
    if header.get("op") in ("predict", "epsilon"):
        s = header["shape"]
        count = 4 * s[0] * s[1] * s[2] * s[3]
    return header, read_exact(count)

mode = sys.argv[1] if len(sys.argv) > 1 else "echo"
hello, _ = recv()
if mode == "version":
    send({"op": "hello", "protocol": 2, "shape": hello["shape"]})
    sys.exit(0)
if mode == "shape":
    send({"op": "hello", "protocol": 1, "shape": [1, 1, 1, 1]})
    sys.exit(0)
if mode == "die":
    sys.exit(0)
if mode == "hugeheader":
    sys.stdout.buffer.write(struct.pack("<I", 2 * 1024 * 1024))
    sys.stdout.buffer.flush()
    read_exact(10**9)
if mode == "notjson":
    sys.stdout.buffer.write(struct.pack("<I", 3) + b"\xff\xfe\xfd")
    sys.stdout.buffer.flush()
    read_exact(10**9)
send({"op": "hello", "protocol": 1, "shape": hello["shape"]})
while True:
    header, payload = recv()
    if mode == "error":
        send({"op": "error", "message": "model exploded"})
    elif mode == "wrongshape":
        send({"op": "epsilon", "shape": [1, 1, 1, 1]}, b"\x00" * 4)
    elif mode == "truncate":
        raw = json.dumps({"op": "epsilon", "shape": header["shape"]}).encode("utf-8")
        sys.stdout.buffer.write(struct.pack("<I", len(raw)) + raw + payload[:-4])
        sys.stdout.buffer.flush()
        sys.exit(0)
    else:
        arr = np.frombuffer(payload, dtype="<f4") * np.float32(0.5)
        send({"op": "epsilon", "shape": header["shape"]}, arr.astype("<f4").tobytes())
'''


@pytest.fixture(scope="module")
def server_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bridge") / "server.py"
    path.write_text(SERVER_SCRIPT)
    return str(path)


def _cmd(server_path, mode="echo"):
    return f"{sys.executable} {server_path} {mode}"


class TestBridgeStdio:
    def test_handshake_and_echo_roundtrip(self, server_path, sched):
        step = make_plan(sched, 10).step_ref(0)
        with open_bridge(_cmd(server_path), DIMS, timeout=10.0) as session:
            assert session.dims == DIMS
            z = sample_standard_normal(SeededRng(5), DIMS)
            out = predict(session, z, prompt("p"), step, 7.5)
            assert np.array_equal(out.data, (z.data * np.float32(0.5)))

    def test_soak_many_predicts_zero_deviations(self, server_path, sched):
        step = make_plan(sched, 10).step_ref(0)
        rng = SeededRng(6)
        with open_bridge(_cmd(server_path), DIMS, timeout=10.0) as session:
            for _ in range(200):
                z = sample_standard_normal(rng, DIMS)
                out = session.predict_eps(z, prompt("p"), step, 7.5)
                assert out.data.tobytes() == (z.data * np.float32(0.5)).tobytes()

    def test_version_mismatch_rejected(self, server_path):
        with pytest.raises(ProtocolError, match="version"):
            open_bridge(_cmd(server_path, "version"), DIMS, timeout=10.0)

    def test_shape_mismatch_rejected(self, server_path):
        with pytest.raises(ProtocolError, match="shape"):
            open_bridge(_cmd(server_path, "shape"), DIMS, timeout=10.0)

    def test_server_exit_during_handshake(self, server_path):
        with pytest.raises(BridgeError):
            open_bridge(_cmd(server_path, "die"), DIMS, timeout=10.0)

    def test_oversized_header_rejected(self, server_path):
        with pytest.raises(ProtocolError, match="header length"):
            open_bridge(_cmd(server_path, "hugeheader"), DIMS, timeout=10.0)

    def test_non_json_header_rejected(self, server_path):
        with pytest.raises(ProtocolError, match="JSON"):
            open_bridge(_cmd(server_path, "notjson"), DIMS, timeout=10.0)

    def test_error_response_raises_bridge_error(self, server_path, sched):
        step = make_plan(sched, 10).step_ref(0)
        with open_bridge(_cmd(server_path, "error"), DIMS, timeout=10.0) as session:
            with pytest.raises(BridgeError, match="model exploded"):
                session.predict_eps(
                    sample_standard_normal(SeededRng(7), DIMS), prompt("p"), step, 7.5
                )

    def test_wrong_response_shape_rejected(self, server_path, sched):
        step = make_plan(sched, 10).step_ref(0)
        with open_bridge(_cmd(server_path, "wrongshape"), DIMS, timeout=10.0) as session:
            with pytest.raises(ProtocolError, match="shape"):
                session.predict_eps(
                    sample_standard_normal(SeededRng(8), DIMS), prompt("p"), step, 7.5
                )

    def test_truncated_payload_raises(self, server_path, sched):
        step = make_plan(sched, 10).step_ref(0)
        with open_bridge(_cmd(server_path, "truncate"), DIMS, timeout=10.0) as session:
            with pytest.raises(BridgeError):
                session.predict_eps(
                    sample_standard_normal(SeededRng(9), DIMS), prompt("p"), step, 7.5
                )

    def test_nonexistent_command_raises(self):
        with pytest.raises(BridgeError):
            open_bridge("/definitely/not/a/real/binary", DIMS, timeout=5.0)

    def test_closed_session_rejects_predicts(self, server_path, sched):
        step = make_plan(sched, 10).step_ref(0)
        session = open_bridge(_cmd(server_path), DIMS, timeout=10.0)
        close_bridge(session)
        with pytest.raises(BridgeError, match="closed"):
            session.predict_eps(sample_standard_normal(SeededRng(10), DIMS), prompt("p"), step, 7.5)


class _SocketWrapper:
    def __init__(self, conn):
        self._conn = conn

    def write(self, data):
        self._conn.sendall(data)

    def read_exact(self, n, deadline=None):
        buf = b""
        while len(buf) < n:
            chunk = self._conn.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("peer closed")
            buf += chunk
        return buf

    def close(self):
        self._conn.close()


def _tcp_echo_server(listener, n_requests):
    conn, _ = listener.accept()
    t = _SocketWrapper(conn)
    try:
        hello, _ = recv_message(t)
        send_message(t, {"op": "hello", "protocol": 1, "shape": hello["shape"]})
        for _ in range(n_requests):
            header, payload = recv_message(t)
            arr = np.frombuffer(payload, dtype="<f4") * np.float32(0.5)
            send_message(t, {"op": "epsilon", "shape": header["shape"]}, arr.astype("<f4").tobytes())
    finally:
        t.close()
        listener.close()


class TestBridgeTcp:
    def test_tcp_roundtrip(self, sched):
        listener = socket.socket()
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        port = listener.getsockname()[1]
        n = 5
        thread = threading.Thread(target=_tcp_echo_server, args=(listener, n), daemon=True)
        thread.start()
        step = make_plan(sched, 10).step_ref(0)
        rng = SeededRng(11)
        with open_bridge(f"tcp:127.0.0.1:{port}", DIMS, timeout=10.0) as session:
            for _ in range(n):
                z = sample_standard_normal(rng, DIMS)
                out = session.predict_eps(z, prompt("p"), step, 7.5)
                assert np.array_equal(out.data, z.data * np.float32(0.5))
        thread.join(timeout=5.0)

    def test_bad_tcp_target_rejected(self):
        with pytest.raises(InvalidArgumentError):
            open_bridge("tcp:127.0.0.1", DIMS)

    def test_connection_refused(self):
        listener = socket.socket()
        listener.bind(("127.0.0.1", 0))
        port = listener.getsockname()[1]
        listener.close()
        with pytest.raises(BridgeError):
            open_bridge(f"tcp:127.0.0.1:{port}", DIMS, timeout=2.0)


class _ScriptedTransport:
    """Transport whose reads replay a pre-built byte string."""

    def __init__(self, blob):
        self._blob = blob
        self._pos = 0
        self.sent = b""

    def write(self, data):
        self.sent += data

    def read_exact(self, n, deadline=None):
        if self._pos + n > len(self._blob):
            raise BridgeError("scripted stream exhausted")
        out = self._blob[self._pos : self._pos + n]
        self._pos += n
        return out

    def close(self):
        pass


def _frame(header, payload=b""):
    raw = json.dumps(header).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + payload


class TestFraming:
    def _session(self, blob):
        return BridgeSession(_ScriptedTransport(blob), DIMS, timeout=None)

    def _predict(self, session):
        step = StepRef(step_index=0, timestep=19)
        return session.predict_eps(
            sample_standard_normal(SeededRng(12), DIMS), prompt("p"), step, 7.5
        )

    def test_request_bytes_exact(self):
        transport = _ScriptedTransport(
            _frame({"op": "epsilon", "shape": list(DIMS)}, b"\x00" * (4 * 96))
        )
        session = BridgeSession(transport, DIMS, timeout=None)
        z = sample_standard_normal(SeededRng(13), DIMS)
        session.predict_eps(z, prompt("p"), StepRef(3, 599), 7.5)
        (hlen,) = struct.unpack("<I", transport.sent[:4])
        header = json.loads(transport.sent[4 : 4 + hlen].decode("utf-8"))
        assert header == {
            "op": "predict",
            "t": 599,
            "step_index": 3,
            "prompt": "p",
            "cfg_scale": 7.5,
            "shape": [3, 2, 4, 4],
        }
        assert transport.sent[4 + hlen :] == z.data.tobytes()

    def test_zero_header_length_rejected(self):
        with pytest.raises(ProtocolError, match="header length"):
            self._predict(self._session(struct.pack("<I", 0)))

    def test_missing_op_rejected(self):
        with pytest.raises(ProtocolError, match="op"):
            self._predict(self._session(_frame({"shape": list(DIMS)})))

    def test_bad_shape_entries_rejected(self):
        blob = _frame({"op": "epsilon", "shape": [3, 2, 4, "x"]})
        with pytest.raises(ProtocolError, match="shape"):
            self._predict(self._session(blob))

    def test_unexpected_op_rejected(self):
        with pytest.raises(ProtocolError, match="epsilon"):
            self._predict(self._session(_frame({"op": "hello", "protocol": 1})))
