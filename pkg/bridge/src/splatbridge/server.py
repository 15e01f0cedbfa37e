"""Stdio serve loop for the oracle protocol.

One JSON object per line. The hello handshake (schedule table, backend and
model identifiers, determinism flag) goes out before any request is served.
Request failures are answered in-band as {"id", "ok": false, "error"}; only
fatal load problems terminate the process.

Request kinds:
  echo          -> outputs = params (health check)
  edit          -> inputs {original, coarse}, params {prompt, t, w, seed}
  predict_noise -> inputs {image}, params {prompt, tau, seed[, w]}
  disparity     -> inputs {image}
  perceptual    -> inputs {image, target}
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .guidance import DEFAULT_SAMPLE_STEPS, denoise_from, guided_noise
from .io_files import load_png, save_pfm, save_png
from .schedule import add_noise, alpha_bars


def _noise_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                               spawn_key=(0xE45, int(t)))))


@dataclass
class BridgeSession:
    """Loaded backend plus the schedule table and workspace root."""

    backend: object
    workspace: Path = field(default_factory=Path.cwd)
    sample_steps: int = DEFAULT_SAMPLE_STEPS

    def __post_init__(self):
        self.alpha_bars = alpha_bars()
        self.workspace = Path(self.workspace)
        self._counter = 0

    def hello(self) -> dict:
        return {
            "kind": "hello",
            "alpha_bars": self.alpha_bars.tolist(),
            "backend": self.backend.name,
            "models": self.backend.models,
            "deterministic": bool(self.backend.deterministic),
            "sample_steps": self.sample_steps,
            "version": __version__,
        }

    def _path(self, stem: str, suffix: str) -> Path:
        self._counter += 1
        return self.workspace / f"{stem}_{self._counter:06d}{suffix}"

    def _load_image(self, inputs: dict, key: str) -> np.ndarray:
        if key not in inputs:
            raise ValueError(f"request is missing input '{key}'")
        path = Path(inputs[key])
        if not path.is_absolute():
            path = self.workspace / path
        return load_png(path)

    def handle(self, req: dict) -> dict:
        kind = req.get("kind")
        inputs = req.get("inputs", {}) or {}
        params = req.get("params", {}) or {}
        if kind == "echo":
            return dict(params)
        if kind == "edit":
            return self._edit(inputs, params)
        if kind == "predict_noise":
            return self._predict_noise(inputs, params)
        if kind == "disparity":
            return self._disparity(inputs, params)
        if kind == "perceptual":
            return self._perceptual(inputs, params)
        raise ValueError(f"unknown request kind '{kind}'")

    def _edit(self, inputs, params) -> dict:
        original = self._load_image(inputs, "original")
        coarse = self._load_image(inputs, "coarse")
        prompt = str(params.get("prompt", ""))
        t = int(params.get("t", 750))
        w = float(params.get("w", 7.5))
        seed = int(params.get("seed", 0))

        image_latent = self.backend.encode(original)
        z0 = self.backend.encode(coarse)
        if t <= 0:
            out = coarse
        else:
            eps = _noise_rng(seed, t).standard_normal(z0.shape)
            z_t = add_noise(z0, t, eps, self.alpha_bars)
            x0 = denoise_from(self.backend, z_t, image_latent, prompt, w, t,
                              self.alpha_bars, seed, steps=self.sample_steps)
            out = self.backend.decode(x0, coarse.shape[:2])
        path = self._path("edited", ".png")
        save_png(out, path)
        return {"image": path.name}

    def _predict_noise(self, inputs, params) -> dict:
        image = self._load_image(inputs, "image")
        prompt = str(params.get("prompt", ""))
        tau = int(params.get("tau", params.get("t", 600)))
        seed = int(params.get("seed", 0))

        image_latent = self.backend.encode(image)
        eps = _noise_rng(seed, tau).standard_normal(image_latent.shape)
        z_tau = add_noise(image_latent, tau, eps, self.alpha_bars)
        if "w" in params:
            pred = guided_noise(self.backend, z_tau, image_latent, prompt,
                                float(params["w"]), tau, seed)
        else:
            pred = self.backend.predict_noise(z_tau, image_latent, prompt, tau, seed)
        path = self._path("noise", ".npy")
        np.save(path, np.asarray(pred))
        return {"noise": path.name}

    def _disparity(self, inputs, params) -> dict:
        image = self._load_image(inputs, "image")
        disp = self.backend.disparity(image, seed=int(params.get("seed", 0)))
        path = self._path("disparity", ".pfm")
        save_pfm(disp, path)
        return {"disparity": path.name}

    def _perceptual(self, inputs, params) -> dict:
        image = self._load_image(inputs, "image")
        target = self._load_image(inputs, "target")
        value, grad = self.backend.perceptual(image, target)
        path = self._path("grad", ".pfm")
        save_pfm(grad, path)
        return {"distance": float(value), "grad": path.name}


def serve(session: BridgeSession, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def emit(obj):
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    emit(session.hello())
    for line in stdin:
        if not line.strip():
            continue
        rid = None
        try:
            req = json.loads(line)
            rid = req.get("id")
            outputs = session.handle(req)
            emit({"id": rid, "ok": True, "outputs": outputs})
        except Exception as e:
            emit({"id": rid, "ok": False, "error": f"{type(e).__name__}: {e}"})
    return 0
