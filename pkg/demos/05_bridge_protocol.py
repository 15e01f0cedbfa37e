"""Drive the oracle bridge over its stdio protocol.

Spawns the bridge subprocess (procedural backend: no model downloads),
inspects the handshake, verifies the classifier-free-guidance identity on
raw noise predictions, and runs an edit round trip.

Run:  python3 demos/05_bridge_protocol.py
Needs the splatbridge package installed (pip install -e bridge/).
"""

import importlib.util
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

if importlib.util.find_spec("splatbridge") is None:
    sys.exit("splatbridge is not installed; run: pip install -e bridge/")

from splatedit.imagefiles import save_png
from splatedit.remote import BridgeClient, remote_suite

workspace = Path(tempfile.mkdtemp(prefix="bridge_demo_"))
client = BridgeClient([sys.executable, "-m", "splatbridge",
                       "--backend", "procedural"], workspace=workspace)
try:
    print("echo:", client.call("echo", params={"hello": "bridge"}))
    hello = client.handshake
    ab = np.asarray(hello["alpha_bars"])
    print(f"handshake: backend={hello['backend']} deterministic="
          f"{hello['deterministic']} alpha_bars={ab.size} "
          f"(first {ab[0]:.6f}, last {ab[-1]:.2e}, decreasing "
          f"{bool(np.all(np.diff(ab) < 0))})")

    rng = np.random.default_rng(0)
    image = rng.uniform(0, 1, (40, 40, 3))
    save_png(image, workspace / "probe.png")
    w = 7.5
    cond = np.load(client.resolve(client.call(
        "predict_noise", {"image": "probe.png"},
        {"prompt": "add a hat", "tau": 600, "seed": 2})["noise"]))
    uncond = np.load(client.resolve(client.call(
        "predict_noise", {"image": "probe.png"},
        {"prompt": "", "tau": 600, "seed": 2})["noise"]))
    guided = np.load(client.resolve(client.call(
        "predict_noise", {"image": "probe.png"},
        {"prompt": "add a hat", "tau": 600, "seed": 2, "w": w})["noise"]))
    gap = np.max(np.abs(guided - (cond + w * (cond - uncond))))
    print(f"guidance identity |guided - (cond + w*(cond-uncond))| = {gap:.2e}")

    suite = remote_suite(client)
    edited = suite.editor.edit(image, image, "make it red", 600, w)
    print(f"edit round trip: {edited.shape[1]}x{edited.shape[0]} image, "
          f"mean change {np.abs(edited - image).mean():.3f}")
    disp = suite.depth.estimate(image)
    print(f"disparity: range [{disp.values.min():.3f}, {disp.values.max():.3f}], "
          f"all positive: {bool((disp.values > 0).all())}")
finally:
    client.close()
    shutil.rmtree(workspace, ignore_errors=True)
