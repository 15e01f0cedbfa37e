"""Minimal stdio bridge used to test the remote-oracle client.

Modes via argv: "silent" never answers (timeout testing), "garbage" emits a
non-JSON line, "die" exits nonzero after the first request. Default mode
answers every request kind with trivial artifacts.
"""

import json
import sys

import numpy as np


def write(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
    betas = np.linspace(1e-4, 2e-2, 1000)
    write({"kind": "hello", "alpha_bars": np.cumprod(1 - betas).tolist(),
           "backend": "fake"})

    for line in sys.stdin:
        req = json.loads(line)
        if mode == "silent":
            continue
        if mode == "garbage":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            continue
        if mode == "die":
            sys.exit(3)

        kind = req["kind"]
        rid = req["id"]
        if kind == "echo":
            write({"id": rid, "ok": True, "outputs": req.get("params", {})})
        elif kind == "edit":
            from PIL import Image
            img = Image.open(req["inputs"]["coarse"])
            out = f"edited_{rid}.png"
            img.save(out)
            write({"id": rid, "ok": True, "outputs": {"image": out}})
        elif kind == "predict_noise":
            out = f"noise_{rid}.npy"
            np.save(out, np.zeros((4, 8, 8), dtype=np.float32))
            write({"id": rid, "ok": True, "outputs": {"noise": out}})
        elif kind == "disparity":
            from PIL import Image
            img = Image.open(req["inputs"]["image"])
            w, h = img.size
            out = f"disp_{rid}.pfm"
            data = np.ones((h, w), dtype="<f4")
            with open(out, "wb") as f:
                f.write(b"Pf\n" + f"{w} {h}\n".encode() + b"-1.0\n")
                f.write(data[::-1].tobytes())
            write({"id": rid, "ok": True, "outputs": {"disparity": out}})
        elif kind == "perceptual":
            from PIL import Image
            img = Image.open(req["inputs"]["image"])
            w, h = img.size
            out = f"grad_{rid}.pfm"
            data = np.zeros((h, w, 3), dtype="<f4")
            with open(out, "wb") as f:
                f.write(b"PF\n" + f"{w} {h}\n".encode() + b"-1.0\n")
                f.write(data[::-1].tobytes())
            write({"id": rid, "ok": True,
                   "outputs": {"distance": 0.0, "grad": out}})
        else:
            write({"id": rid, "ok": False, "error": f"unknown kind {kind!r}"})


if __name__ == "__main__":
    main()
