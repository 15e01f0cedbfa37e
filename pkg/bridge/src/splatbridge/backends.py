"""Model backends behind one small interface.

``ProceduralBackend`` is a dependency-free, bit-deterministic stand-in that
keeps every protocol path exercisable offline: a fixed folding encoder to a
4-channel latent at 1/8 resolution, seeded counter-based pseudo-noise
predictions that depend on the prompt, luminance-driven disparity, and a
pyramid-L2 perceptual distance with its exact input gradient.

``DiffusersBackend`` wraps real pretrained models (instruction-conditioned
diffusion editing, monocular depth, learned perceptual distance). Its heavy
imports happen inside ``load`` so the module stays importable everywhere;
a missing stack raises BackendLoadError, which the server turns into a
nonzero exit.
"""

from __future__ import annotations

from zlib import crc32

import numpy as np

LATENT_CHANNELS = 4
LATENT_DOWN = 8


class BackendLoadError(RuntimeError):
    pass


def _rng(*keys) -> np.random.Generator:
    parts = []
    for k in keys:
        parts.append(crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=0xB21D6E, spawn_key=tuple(parts))))


def _resize_bilinear(grid: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w = grid.shape[:2]
    if (h, w) == (oh, ow):
        return grid.copy()

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            z = np.zeros(n_out, dtype=int)
            return np.zeros(n_out), z, z
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
        return pos - lo, lo, lo + 1

    fy, y0, y1 = coords(h, oh)
    fx, x0, x1 = coords(w, ow)
    top = grid[y0][:, x0] * _bc(1 - fx, grid) + grid[y0][:, x1] * _bc(fx, grid)
    bot = grid[y1][:, x0] * _bc(1 - fx, grid) + grid[y1][:, x1] * _bc(fx, grid)
    return top * _bc2(1 - fy, grid) + bot * _bc2(fy, grid)


def _bc(fx, grid):
    return fx[None, :, None] if grid.ndim == 3 else fx[None, :]


def _bc2(fy, grid):
    return fy[:, None, None] if grid.ndim == 3 else fy[:, None]


class ProceduralBackend:
    """Deterministic pseudo-model; no downloads, no third-party weights."""

    name = "procedural"
    deterministic = True
    models = {"editor": "procedural-fold-v1", "depth": "procedural-luma-v1",
              "perceptual": "procedural-pyramid-v1"}

    def load(self):
        return self

    # --- latent codec: a (4, h/8, w/8) tensor; resolution travels separately
    def encode(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        lh, lw = max(1, h // LATENT_DOWN), max(1, w // LATENT_DOWN)
        chans = [_resize_bilinear(image[:, :, c], lh, lw) for c in range(3)]
        luma = image @ np.array([0.299, 0.587, 0.114])
        chans.append(_resize_bilinear(luma, lh, lw))
        return np.stack(chans, axis=0) * 2.0 - 1.0

    def decode(self, latent: np.ndarray, out_hw) -> np.ndarray:
        h, w = out_hw
        rgb = np.stack([_resize_bilinear((latent[c] + 1.0) / 2.0, h, w)
                        for c in range(3)], axis=2)
        return np.clip(rgb, 0.0, 1.0)

    # --- oracle roles ------------------------------------------------------
    def predict_noise(self, z: np.ndarray, image_latent: np.ndarray,
                      prompt: str, t: int, seed: int) -> np.ndarray:
        base = _rng(seed, t, "eps").standard_normal(z.shape)
        if prompt:
            # prompt-dependent component concentrated where the image is bright,
            # so conditional and unconditional predictions differ structurally
            focus = np.clip(image_latent[3], -1.0, 1.0)
            drift = _rng(seed, t, "prompt:" + prompt).standard_normal(z.shape)
            base = base + 0.6 * drift * (0.5 + 0.5 * focus)[None, :, :]
        return base + 0.05 * z

    def disparity(self, image: np.ndarray, seed: int = 0) -> np.ndarray:
        # Bright-is-near heuristic with a smooth vertical ramp, strictly > 0.
        luma = image @ np.array([0.299, 0.587, 0.114])
        h = image.shape[0]
        ramp = np.linspace(0.3, 0.7, h)[:, None]
        return 0.1 + 0.8 * (0.6 * luma + 0.4 * ramp)

    def perceptual(self, image: np.ndarray, target: np.ndarray):
        levels = 3
        value = 0.0
        grad = np.zeros_like(image)
        a, b = image, target
        weight = 1.0
        acc_scale = 1
        for _ in range(levels):
            diff = a - b
            value += weight * float(np.mean(diff**2))
            # exact adjoint of the repeated 2x2 block means (cropped rows of
            # odd levels never contributed, so they stay at zero gradient)
            g = _upsample_repeat(weight * 2.0 * diff / diff.size, acc_scale) \
                / (acc_scale * acc_scale)
            grad[:g.shape[0], :g.shape[1]] += g
            if min(a.shape[0], a.shape[1]) < 4:
                break
            a = _downsample2(a)
            b = _downsample2(b)
            weight *= 0.5
            acc_scale *= 2
        return value, grad


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return x.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3)).reshape(
        h // 2, w // 2, x.shape[2])


def _upsample_repeat(x: np.ndarray, k: int) -> np.ndarray:
    return np.repeat(np.repeat(x, k, axis=0), k, axis=1)


class DiffusersBackend:
    """Real-model wrapper: instruction-following latent-diffusion editor,
    monocular depth transformer, and a learned perceptual metric.

    Everything loads lazily; environments without the ML stack (or without
    the pretrained weights) fail at load time, not import time.
    """

    name = "diffusers"
    deterministic = False

    def __init__(self, device: str = "cpu",
                 editor_id: str = "timbrooks/instruct-pix2pix",
                 depth_id: str = "LiheYoung/depth-anything-small-hf"):
        self.device = device
        self.editor_id = editor_id
        self.depth_id = depth_id
        self.models = {"editor": editor_id, "depth": depth_id,
                       "perceptual": "lpips-vgg"}
        self._pipe = None
        self._depth = None
        self._lpips = None

    def load(self):
        try:
            import lpips
            import torch
            from diffusers import StableDiffusionInstructPix2PixPipeline
            from transformers import pipeline as hf_pipeline
        except ImportError as e:
            raise BackendLoadError(
                f"diffusers backend needs torch/diffusers/transformers/lpips: {e}")
        try:
            self._pipe = StableDiffusionInstructPix2PixPipeline.from_pretrained(
                self.editor_id).to(self.device)
            self._depth = hf_pipeline("depth-estimation", model=self.depth_id,
                                      device=self.device)
            self._lpips = lpips.LPIPS(net="vgg").to(self.device)
        except Exception as e:
            raise BackendLoadError(f"failed to load pretrained models: {e}")
        self._torch = __import__("torch")
        return self

    def encode(self, image):
        torch = self._torch
        x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))
        x = (x[None].float().to(self.device) * 2 - 1)
        with torch.no_grad():
            z = self._pipe.vae.encode(x).latent_dist.mode()
            z = z * self._pipe.vae.config.scaling_factor
        return z[0].cpu().numpy().astype(np.float64)

    def decode(self, latent, out_hw):
        torch = self._torch
        zt = torch.from_numpy(np.asarray(latent)[None]).float().to(self.device)
        zt = zt / self._pipe.vae.config.scaling_factor
        with torch.no_grad():
            img = self._pipe.vae.decode(zt).sample[0]
        out = ((img.clamp(-1, 1) + 1) / 2).cpu().numpy().transpose(1, 2, 0)
        return out[:out_hw[0], :out_hw[1]]

    def predict_noise(self, z, image_latent, prompt, t, seed):
        torch = self._torch
        zi = np.asarray(image_latent)
        unet = self._pipe.unet
        with torch.no_grad():
            emb = self._pipe._encode_prompt(
                prompt or "", device=self.device, num_images_per_prompt=1,
                do_classifier_free_guidance=False)
            lat = torch.from_numpy(np.concatenate([z[None], zi[None]], axis=1)) \
                .float().to(self.device)
            eps = unet(lat, t, encoder_hidden_states=emb).sample
        return eps[0].cpu().numpy().astype(np.float64)

    def disparity(self, image, seed: int = 0):
        from PIL import Image as PILImage
        pil = PILImage.fromarray((image * 255).astype(np.uint8))
        pred = self._depth(pil)["predicted_depth"].numpy()
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != image.shape[:2]:
            pred = _resize_bilinear(pred, image.shape[0], image.shape[1])
        return np.maximum(pred, 1e-6)  # raw disparity, never calibrated here

    def perceptual(self, image, target):
        torch = self._torch

        def to_t(x, grad=False):
            t = torch.from_numpy(np.ascontiguousarray(
                x.transpose(2, 0, 1)))[None].float().to(self.device) * 2 - 1
            t.requires_grad_(grad)
            return t

        a = to_t(image, grad=True)
        b = to_t(target)
        dist = self._lpips(a, b)
        dist.backward()
        grad = a.grad[0].cpu().numpy().transpose(1, 2, 0) * 2.0
        return float(dist.item()), grad.astype(np.float64)


def make_backend(name: str, device: str = "cpu"):
    if name == "procedural":
        return ProceduralBackend().load()
    if name == "diffusers":
        return DiffusersBackend(device=device).load()
    if name == "auto":
        try:
            return DiffusersBackend(device=device).load()
        except BackendLoadError:
            return ProceduralBackend().load()
    raise BackendLoadError(f"unknown backend '{name}'")
