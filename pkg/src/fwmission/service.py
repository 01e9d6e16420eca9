"""Telemetry/command service: length-delimited JSON frames over TCP.

Frame wire format: the payload byte length as ASCII decimal, a newline, then
exactly that many bytes of UTF-8 JSON. One mission loop owns all mutable
state; client sockets feed a command queue that is drained between sim
ticks, and telemetry snapshots are broadcast to every client at 5 Hz with a
shared sequence number. The first connected client holds the operator role
(commands from others are rejected); the role passes on when it disconnects.

The simulator starts paused. Pause freezes sim time but keeps queued
operator commands; they apply on resume.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from .fsm import MissionTag, Rejection
from .mission import MissionConfig, MissionRunner, World, command_from_frame

TELEMETRY_PERIOD = 0.2  # wall seconds between telemetry frames (5 Hz)


def encode_frame(obj: dict) -> bytes:
    payload = json.dumps(obj, sort_keys=True).encode("utf-8")
    return str(len(payload)).encode("ascii") + b"\n" + payload


class FrameStream:
    """Blocking reader for length-delimited JSON frames on a socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = b""

    def _read_more(self) -> bool:
        chunk = self.sock.recv(4096)
        if not chunk:
            return False
        self.buf += chunk
        return True

    def read_frame(self) -> dict | None:
        """Next frame, None on EOF; raises ValueError on malformed data."""
        while b"\n" not in self.buf:
            if not self._read_more():
                return None
        head, rest = self.buf.split(b"\n", 1)
        try:
            n = int(head.decode("ascii").strip())
        except (UnicodeDecodeError, ValueError):
            self.buf = rest
            raise ValueError(f"bad frame length header {head[:32]!r}")
        if n < 0 or n > 16_000_000:
            self.buf = rest
            raise ValueError("unreasonable frame length")
        while len(rest) < n:
            if not self._read_more():
                return None
            head2, rest = self.buf.split(b"\n", 1)
            assert head2 == head
        payload, self.buf = rest[:n], rest[n:]
        try:
            return json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"bad frame payload: {e}")


@dataclass
class _Client:
    sock: socket.socket
    addr: tuple
    outbox: "queue.Queue[bytes]" = field(default_factory=lambda: queue.Queue(maxsize=512))
    alive: bool = True

    def send(self, data: bytes) -> None:
        # Telemetry must never block the mission loop: drop-oldest on backlog.
        while True:
            try:
                self.outbox.put_nowait(data)
                return
            except queue.Full:
                try:
                    self.outbox.get_nowait()
                except queue.Empty:
                    pass


class MissionService:
    """TCP service wrapping one MissionRunner; see module docstring."""

    def __init__(self, world: World, port: int, host: str = "127.0.0.1",
                 seed: int | None = None):
        self.world = world
        self.runner = MissionRunner(world, seed=seed)
        self.listener = socket.create_server((host, port))
        self.host, self.port = self.listener.getsockname()[:2]
        self.clients: list[_Client] = []
        self.clients_lock = threading.Lock()
        self.commands: "queue.Queue[tuple[_Client, dict]]" = queue.Queue()
        self.paused = True
        self.speed = 1.0
        self.running = False
        self.threads: list[threading.Thread] = []

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self.running = True
        for fn in (self._accept_loop, self._mission_loop):
            th = threading.Thread(target=fn, daemon=True)
            th.start()
            self.threads.append(th)

    def stop(self) -> None:
        self.running = False
        try:
            self.listener.close()
        except OSError:
            pass
        with self.clients_lock:
            for c in self.clients:
                c.alive = False
                try:
                    c.sock.close()
                except OSError:
                    pass

    # -- networking ----------------------------------------------------------

    def _accept_loop(self) -> None:
        while self.running:
            try:
                sock, addr = self.listener.accept()
            except OSError:
                return
            client = _Client(sock, addr)
            with self.clients_lock:
                self.clients.append(client)
            threading.Thread(target=self._client_reader, args=(client,), daemon=True).start()
            threading.Thread(target=self._client_sender, args=(client,), daemon=True).start()
            client.send(encode_frame(self._scene_frame()))
            client.send(encode_frame({"v": 1, "type": "role",
                                      "operator": self._is_operator(client)}))

    def _is_operator(self, client: _Client) -> bool:
        with self.clients_lock:
            live = [c for c in self.clients if c.alive]
            return bool(live) and live[0] is client

    def _client_reader(self, client: _Client) -> None:
        stream = FrameStream(client.sock)
        while self.running and client.alive:
            try:
                frame = stream.read_frame()
            except ValueError as e:
                client.send(encode_frame({"v": 1, "type": "event", "event": "error",
                                          "reason": "malformed_frame", "detail": str(e)}))
                continue
            except OSError:
                break
            if frame is None:
                break
            self._handle_frame(client, frame)
        client.alive = False
        with self.clients_lock:
            if client in self.clients:
                self.clients.remove(client)
        try:
            client.sock.close()
        except OSError:
            pass

    def _client_sender(self, client: _Client) -> None:
        while self.running and client.alive:
            try:
                data = client.outbox.get(timeout=0.2)
            except queue.Empty:
                continue
            try:
                client.sock.sendall(data)
            except OSError:
                client.alive = False
                return

    def _broadcast(self, obj: dict) -> None:
        data = encode_frame(obj)
        with self.clients_lock:
            for c in self.clients:
                if c.alive:
                    c.send(data)

    # -- frames ----------------------------------------------------------------

    def _scene_frame(self) -> dict:
        dem = self.world.dem
        mask = self.world.mask
        home = self.world.home_loiter()
        return {
            "v": 1,
            "type": "scene",
            "dem": {
                "ncols": dem.ncols,
                "nrows": dem.nrows,
                "origin": [dem.origin_x, dem.origin_y],
                "cellsize": dem.cellsize,
                "z_range": [float(dem.heights.min()), float(dem.heights.max())],
                "hillshade": _hillshade_rows(dem),
            },
            "mask_rle": mask.rle_rows(),
            "roi": [list(p) for p in (self.world.cfg.roi or [])],
            "home": {"center": list(home.center), "radius": home.radius,
                     "direction": home.direction.value},
            "band": {"d_min": self.world.cfg.band.d_min, "d_max": self.world.cfg.band.d_max},
        }

    def _handle_frame(self, client: _Client, frame: dict) -> None:
        if not isinstance(frame, dict) or "cmd" not in frame:
            client.send(encode_frame({"v": 1, "type": "event", "event": "error",
                                      "reason": "missing_cmd"}))
            return
        kind = frame.get("cmd")
        if kind == "pause":
            self.paused = True
            self._broadcast({"v": 1, "type": "event", "event": "paused"})
            return
        if kind == "resume":
            self.paused = False
            self._broadcast({"v": 1, "type": "event", "event": "resumed"})
            return
        if kind == "speed":
            try:
                factor = float(frame["factor"])
                if not (0.01 <= factor <= 1000.0):
                    raise ValueError
            except (KeyError, TypeError, ValueError):
                client.send(encode_frame({"v": 1, "type": "event", "event": "error",
                                          "reason": "bad_speed"}))
                return
            self.speed = factor
            self._broadcast({"v": 1, "type": "event", "event": "speed", "factor": factor})
            return
        if not self._is_operator(client):
            client.send(encode_frame({"v": 1, "type": "event", "event": "rejected",
                                      "reason": "not_operator"}))
            return
        self.commands.put((client, frame))

    # -- mission loop -----------------------------------------------------------

    def _mission_loop(self) -> None:
        last_telemetry = 0.0
        while self.running:
            now = time.monotonic()
            if not self.paused:
                self._drain_commands()
                self.runner.step()
            if now - last_telemetry >= TELEMETRY_PERIOD:
                last_telemetry = now
                frame = self.runner.telemetry_frame()
                frame["paused"] = self.paused
                if not math.isfinite(frame["q"]):
                    frame["q"] = None
                self._broadcast(frame)
            sleep = self.runner.cfg.sim.dt / self.speed if not self.paused else 0.02
            time.sleep(min(sleep, 0.05) if not self.paused else 0.02)

    def _drain_commands(self) -> None:
        while True:
            try:
                client, frame = self.commands.get_nowait()
            except queue.Empty:
                return
            try:
                cmd = command_from_frame(frame)
            except ValueError as e:
                client.send(encode_frame({"v": 1, "type": "event", "event": "rejected",
                                          "reason": "bad_command", "detail": str(e)}))
                continue
            out = self.runner.apply_command(cmd)
            if isinstance(out, Rejection):
                client.send(encode_frame({
                    "v": 1, "type": "event", "event": "rejected",
                    "reason": out.reason, "detail": out.detail, "cmd": frame.get("cmd"),
                }))
            else:
                self._broadcast({
                    "v": 1, "type": "event", "event": "state",
                    "state": out.tag.value, "cmd": frame.get("cmd"),
                })


def _hillshade_rows(dem, azimuth_deg: float = 315.0, altitude_deg: float = 45.0) -> list[list[int]]:
    """8-bit hillshade per grid row for the console's raster underlay."""
    import numpy as np

    gy, gx = np.gradient(dem.heights, dem.cellsize)
    az = math.radians(azimuth_deg)
    alt = math.radians(altitude_deg)
    lx = math.cos(alt) * math.cos(az)
    ly = math.cos(alt) * math.sin(az)
    lz = math.sin(alt)
    norm = np.sqrt(gx * gx + gy * gy + 1.0)
    shade = (-gx * lx - gy * ly + lz) / norm
    vals = np.clip((shade * 0.5 + 0.5) * 255.0, 0, 255).astype(int)
    return [row.tolist() for row in vals]


def serve(config_path: str, port: int, host: str = "127.0.0.1") -> None:
    """Blocking CLI entry for the service."""
    cfg = MissionConfig.load(config_path)
    world = World.build(cfg)
    service = MissionService(world, port, host=host)
    service.start()
    print(f"serving mission on {service.host}:{service.port} (paused; send resume)")
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        service.stop()
