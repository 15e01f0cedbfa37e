"""Newline-delimited JSON protocol client for an external oracle bridge.

The bridge is a subprocess speaking one JSON object per line on stdio:

    request:  {"id": 1, "kind": "edit", "inputs": {"original": "a.png", ...},
               "params": {"prompt": "...", "t": 750, "w": 7.5, "seed": 0}}
    response: {"id": 1, "ok": true, "outputs": {"image": "out.png"}}
              {"id": 1, "ok": false, "error": "..."}

Image payloads travel as workspace file paths (PNG for color, PFM for float
maps, .npy for latent-shaped tensors) so nothing is recompressed in
transport. The bridge may send {"kind": "hello", "alpha_bars": [...]} once,
at any point before a response; the client records it. Scalars may appear
directly in ``outputs``.

Timeouts, malformed responses, and bridge deaths are reported as distinct
exception types so the CLI can map them to exit codes.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from pathlib import Path

import numpy as np

from .depth_init import DisparityMap
from .errors import (
    BridgeExitError, OracleError, OracleProtocolError, OracleTimeoutError,
)
from .imagefiles import load_pfm, load_png, save_png
from .oracles import OracleSuite

DEFAULT_TIMEOUT = 120.0


class BridgeClient:
    """Owns one bridge subprocess; one request in flight at a time."""

    def __init__(self, cmd, workspace, timeout: float = DEFAULT_TIMEOUT):
        if isinstance(cmd, str):
            cmd = shlex.split(cmd)
        self.workspace = Path(workspace)
        self.workspace.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout
        self.handshake: dict | None = None
        self._next_id = 0
        self._lines: queue.Queue = queue.Queue()
        try:
            self._proc = subprocess.Popen(
                cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                cwd=self.workspace, text=True, bufsize=1)
        except OSError as e:
            raise BridgeExitError(f"cannot start bridge {cmd!r}: {e}") from e
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _next_line(self):
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise OracleTimeoutError(
                f"bridge silent for {self.timeout:.0f}s") from None
        if line is None:
            code = self._proc.wait()
            raise BridgeExitError(f"bridge exited with status {code}")
        return line

    def call(self, kind: str, inputs: dict | None = None,
             params: dict | None = None) -> dict:
        """Send one request and return its outputs dict."""
        if self._proc.poll() is not None:
            raise BridgeExitError(
                f"bridge already exited with status {self._proc.returncode}")
        self._next_id += 1
        req = {"id": self._next_id, "kind": kind,
               "inputs": inputs or {}, "params": params or {}}
        try:
            self._proc.stdin.write(json.dumps(req) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BridgeExitError(f"bridge pipe closed: {e}") from e

        while True:
            line = self._next_line()
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as e:
                raise OracleProtocolError(f"bridge sent malformed JSON: {line!r}") from e
            if not isinstance(msg, dict):
                raise OracleProtocolError(f"bridge sent a non-object: {line!r}")
            if msg.get("kind") == "hello":
                self.handshake = msg
                continue
            if msg.get("id") != self._next_id:
                raise OracleProtocolError(
                    f"response id {msg.get('id')} does not match request {self._next_id}")
            if not msg.get("ok"):
                raise OracleError(f"bridge error: {msg.get('error', 'unspecified')}")
            return msg.get("outputs", {})

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.workspace / p

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_call(client: BridgeClient, kind: str, inputs: dict | None = None,
                params: dict | None = None) -> dict:
    return client.call(kind, inputs, params)


class _RemoteBase:
    def __init__(self, client: BridgeClient):
        self.client = client
        self._counter = 0

    def _stash(self, name: str, image) -> str:
        self._counter += 1
        fname = f"{name}_{self._counter:06d}.png"
        save_png(image, self.client.workspace / fname)
        return fname


class RemoteEditor(_RemoteBase):
    def edit(self, original, coarse, prompt, start_t, guidance):
        inputs = {"original": self._stash("original", original),
                  "coarse": self._stash("coarse", coarse)}
        out = self.client.call("edit", inputs,
                               {"prompt": prompt, "t": int(start_t),
                                "w": float(guidance), "seed": 0})
        return load_png(self.client.resolve(out["image"]))


class RemoteNoisePredictor(_RemoteBase):
    def predict_noise(self, image, prompt, tau, seed):
        inputs = {"image": self._stash("image", image)}
        out = self.client.call("predict_noise", inputs,
                               {"prompt": prompt, "tau": int(tau), "seed": int(seed)})
        return np.load(self.client.resolve(out["noise"]))


class RemoteDepth(_RemoteBase):
    def estimate(self, image):
        inputs = {"image": self._stash("image", image)}
        out = self.client.call("disparity", inputs, {})
        values = load_pfm(self.client.resolve(out["disparity"]))
        return DisparityMap(values=np.maximum(values, 0.0), valid=values > 0,
                            source="monocular")


class RemotePerceptual(_RemoteBase):
    def distance(self, image, target):
        inputs = {"image": self._stash("image", image),
                  "target": self._stash("target", target)}
        out = self.client.call("perceptual", inputs, {})
        grad = load_pfm(self.client.resolve(out["grad"]))
        return float(out["distance"]), grad


def remote_suite(client: BridgeClient) -> OracleSuite:
    """All four oracle roles backed by one bridge process."""
    return OracleSuite(editor=RemoteEditor(client),
                       noise=RemoteNoisePredictor(client),
                       depth=RemoteDepth(client),
                       perceptual=RemotePerceptual(client))
