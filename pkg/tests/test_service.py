import json
import socket
import time

import pytest

from fwmission import fixtures
from fwmission.mission import MissionConfig, World
from fwmission.service import FrameStream, MissionService, encode_frame

from worlds import write_config


@pytest.fixture(scope="module")
def service():
    import tempfile
    from pathlib import Path

    tmp = Path(tempfile.mkdtemp())
    dem = fixtures.flat_dem(130, 70, 10.0)
    cfg_path = write_config(tmp, dem)
    world = World.build(MissionConfig.load(cfg_path))
    svc = MissionService(world, port=0)
    svc.start()
    yield svc
    svc.stop()


class Client:
    def __init__(self, svc):
        self.sock = socket.create_connection((svc.host, svc.port), timeout=5.0)
        self.stream = FrameStream(self.sock)

    def send(self, obj):
        self.sock.sendall(encode_frame(obj))

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def recv(self, timeout=5.0):
        self.sock.settimeout(timeout)
        return self.stream.read_frame()

    def recv_until(self, pred, timeout=5.0, limit=200):
        deadline = time.time() + timeout
        for _ in range(limit):
            remaining = deadline - time.time()
            if remaining <= 0:
                break
            frame = self.recv(timeout=remaining)
            if frame is None:
                break
            if pred(frame):
                return frame
        raise AssertionError("expected frame not received")

    def close(self):
        self.sock.close()


def test_first_frame_is_scene(service):
    c = Client(service)
    try:
        frame = c.recv()
        assert frame["type"] == "scene"
        assert frame["dem"]["ncols"] == 130
        assert isinstance(frame["mask_rle"], list) and len(frame["mask_rle"]) == 70
        assert frame["band"] == {"d_min": 50.0, "d_max": 120.0}
        assert len(frame["dem"]["hillshade"]) == 70
    finally:
        c.close()


def test_telemetry_streams_and_operator_role(service):
    a = Client(service)
    try:
        a.recv_until(lambda f: f.get("type") == "role")
        t1 = a.recv_until(lambda f: f.get("type") == "telemetry")
        t2 = a.recv_until(lambda f: f.get("type") == "telemetry")
        assert t2["seq"] > t1["seq"]
        assert t1["fsm"] == "Hold"
        assert t1["paused"] is True
    finally:
        a.close()


def test_invalid_goal_rejected_with_reason(service):
    c = Client(service)
    try:
        role = c.recv_until(lambda f: f.get("type") == "role")
        assert role["operator"] is True
        c.send({"v": 1, "cmd": "resume"})
        c.recv_until(lambda f: f.get("event") == "resumed")
        c.send({"v": 1, "cmd": "navigate", "goal": [20.0, 20.0]})
        rej = c.recv_until(lambda f: f.get("event") == "rejected")
        assert rej["reason"] == "InvalidGoal"
        c.send({"v": 1, "cmd": "pause"})
        c.recv_until(lambda f: f.get("event") == "paused")
    finally:
        c.close()


def test_two_clients_share_telemetry_sequence(service):
    a = Client(service)
    b = Client(service)
    try:
        fa = a.recv_until(lambda f: f.get("type") == "telemetry")
        target = fa["seq"] + 3
        fa2 = a.recv_until(lambda f: f.get("type") == "telemetry" and f["seq"] >= target)
        fb2 = b.recv_until(lambda f: f.get("type") == "telemetry" and f["seq"] == fa2["seq"])
        assert fb2["t"] == fa2["t"]
        assert fb2["pose"] == fa2["pose"]
    finally:
        a.close()
        b.close()


def test_non_operator_commands_rejected(service):
    a = Client(service)
    b = Client(service)
    try:
        ra = a.recv_until(lambda f: f.get("type") == "role")
        rb = b.recv_until(lambda f: f.get("type") == "role")
        assert ra["operator"] is True and rb["operator"] is False
        b.send({"v": 1, "cmd": "navigate", "goal": [650.0, 300.0]})
        rej = b.recv_until(lambda f: f.get("event") == "rejected")
        assert rej["reason"] == "not_operator"
    finally:
        a.close()
        b.close()


def test_malformed_frame_keeps_connection(service):
    c = Client(service)
    try:
        c.recv_until(lambda f: f.get("type") == "role")
        c.send_raw(b"zzz\n")
        err = c.recv_until(lambda f: f.get("event") == "error")
        assert err["reason"] == "malformed_frame"
        # still alive: telemetry keeps flowing
        c.recv_until(lambda f: f.get("type") == "telemetry")
    finally:
        c.close()


def test_pause_preserves_queued_commands():
    import tempfile
    from pathlib import Path

    tmp = Path(tempfile.mkdtemp())
    dem = fixtures.flat_dem(130, 70, 10.0)
    cfg_path = write_config(tmp, dem)
    world = World.build(MissionConfig.load(cfg_path))
    svc = MissionService(world, port=0)
    svc.start()
    c = Client(svc)
    try:
        c.recv_until(lambda f: f.get("type") == "role")
        # paused at start; command goes into the queue and waits
        c.send({"v": 1, "cmd": "navigate", "goal": [650.0, 300.0]})
        time.sleep(0.3)
        assert svc.runner.fsm.tag.value == "Hold"  # not applied yet
        c.send({"v": 1, "cmd": "speed", "factor": 50.0})
        c.recv_until(lambda f: f.get("event") == "speed")
        c.send({"v": 1, "cmd": "resume"})
        state = c.recv_until(lambda f: f.get("event") == "state", timeout=20.0)
        assert state["state"] == "Navigate"
    finally:
        c.close()
        svc.stop()
