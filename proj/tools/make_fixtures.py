#!/usr/bin/env python3
"""Generates the fixture models shipped under fixtures/.

Two small classifiers are trained against fixed random teachers:

  mlp  dense-relu-dense-relu-dense-relu-dense on 20-d Gaussian inputs
  cnn  five 3x3 convs (one residual add) + dense on 1x8x8 smoothed-noise images

Each fixture directory holds the manifest, weight/bias .qtn files, a
1024-sample calibration set, a 4000-sample held-out set, and expected.json
with values the C++ tests pin: FP accuracy/loss computed here in float64,
and the MMSE (p = 2) layer-wise step sizes found by a dense grid scan that is
independent of the C++ search.

Requires numpy and torch. Run once; the outputs are committed.
"""

import argparse
import json
import pathlib
import struct

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

NUM_CLASSES = 10
N_TRAIN = 40000
N_CALIB = 1024
N_TEST = 4000


def write_qtn(path, array):
    a = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"QTNS")
        f.write(struct.pack("<BB", 1, a.ndim))
        for d in a.shape:
            f.write(struct.pack("<I", d))
        f.write(a.tobytes())


# ---------------------------------------------------------------- teachers


def mlp_data(rng, n):
    return rng.standard_normal((n, 20))


def smooth_images(rng, n):
    x = rng.standard_normal((n, 1, 10, 10))
    x = 0.25 * x[:, :, :-2, :] + 0.5 * x[:, :, 1:-1, :] + 0.25 * x[:, :, 2:, :]
    x = 0.25 * x[:, :, :, :-2] + 0.5 * x[:, :, :, 1:-1] + 0.25 * x[:, :, :, 2:]
    return x / x.std()


class MlpTeacher:
    def __init__(self, rng):
        self.w1 = rng.standard_normal((32, 20)) / np.sqrt(20)
        self.w2 = rng.standard_normal((NUM_CLASSES, 32)) / np.sqrt(32) * 3.0
        self.b = np.zeros(NUM_CLASSES)

    def logits(self, x):
        return np.tanh(x @ self.w1.T) @ self.w2.T + self.b


class CnnTeacher:
    def __init__(self, rng):
        g = torch.Generator().manual_seed(int(rng.integers(1 << 30)))
        self.c1 = torch.randn(6, 1, 3, 3, generator=g, dtype=torch.float64) / 3.0
        self.c2 = torch.randn(12, 6, 3, 3, generator=g, dtype=torch.float64) / np.sqrt(54)
        self.fc = torch.randn(NUM_CLASSES, 12, generator=g, dtype=torch.float64) * 4.0
        self.b = torch.zeros(NUM_CLASSES, dtype=torch.float64)

    def logits(self, x):
        t = torch.as_tensor(x, dtype=torch.float64)
        h = torch.tanh(F.conv2d(t, self.c1, padding=1))
        h = F.avg_pool2d(h, 2)
        h = torch.tanh(F.conv2d(h, self.c2, padding=1))
        h = h.mean(dim=(2, 3))
        return (h @ self.fc.T + self.b).numpy()


def balance(teacher, x):
    z = teacher.logits(x)
    teacher.b = teacher.b - (z.mean(axis=0) if isinstance(teacher.b, np.ndarray) else torch.as_tensor(z.mean(axis=0)))


# ---------------------------------------------------------------- students


class Mlp(nn.Module):
    def __init__(self):
        super().__init__()
        self.fc = nn.ModuleList([nn.Linear(20, 64), nn.Linear(64, 64), nn.Linear(64, 64), nn.Linear(64, NUM_CLASSES)])

    def forward(self, x):
        for i, fc in enumerate(self.fc):
            x = fc(x)
            if i < 3:
                x = F.relu(x)
        return x

    def manifest(self):
        layers = []
        for i, fc in enumerate(self.fc):
            layers.append(("dense", fc, {}))
            if i < 3:
                layers.append(("relu", None, {}))
        return layers


class Cnn(nn.Module):
    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(1, 4, 3, padding=1)
        self.c2 = nn.Conv2d(4, 4, 3, padding=1)
        self.c3 = nn.Conv2d(4, 4, 3, padding=1)
        self.c4 = nn.Conv2d(4, 8, 3, padding=1)
        self.c5 = nn.Conv2d(8, 16, 3, padding=1)
        self.fc = nn.Linear(16, NUM_CLASSES)

    def forward(self, x):
        a = F.relu(self.c1(x))
        h = F.relu(self.c2(a))
        h = F.relu(self.c3(h) + a)
        h = F.avg_pool2d(h, 2)
        h = F.relu(self.c4(h))
        h = F.relu(self.c5(h))
        h = F.avg_pool2d(h, 4).flatten(1)
        return self.fc(h)

    def manifest(self):
        return [
            ("conv2d", self.c1, {"pad": 1}),
            ("relu", None, {}),
            ("conv2d", self.c2, {"pad": 1}),
            ("relu", None, {}),
            ("conv2d", self.c3, {"pad": 1}),
            ("residual-add", None, {"residual_from": 1}),
            ("relu", None, {}),
            ("avgpool", None, {"pool": 2}),
            ("conv2d", self.c4, {"pad": 1}),
            ("relu", None, {}),
            ("conv2d", self.c5, {"pad": 1}),
            ("relu", None, {}),
            ("avgpool", None, {"pool": 0}),
            ("flatten", None, {}),
            ("dense", self.fc, {}),
        ]


def train(model, x, y, epochs, lr, seed):
    torch.manual_seed(seed)
    xt = torch.as_tensor(x, dtype=torch.float32)
    yt = torch.as_tensor(y, dtype=torch.long)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, epochs)
    for _ in range(epochs):
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 128):
            idx = perm[i:i + 128]
            opt.zero_grad()
            F.cross_entropy(model(xt[idx]), yt[idx]).backward()
            opt.step()
        sched.step()
    return model


# ------------------------------------------------- float64 reference engine


def f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def run_layers(layers, x, act_steps=None, abits=None, taps=None):
    """Plain float64 forward over exported (f32-rounded) weights."""
    outs = {}
    act_index = 0
    for i, (kind, w, b, meta) in enumerate(layers):
        if kind == "dense":
            x = x @ w.T + b
        elif kind == "conv2d":
            x = F.conv2d(torch.as_tensor(x), torch.as_tensor(w), torch.as_tensor(b), padding=meta.get("pad", 0)).numpy()
        elif kind == "relu":
            x = np.maximum(x, 0.0)
            if taps is not None:
                taps.append(x.reshape(-1).copy())
            if act_steps is not None:
                d = act_steps[act_index]
                x = np.clip(np.round(x / d), 0, 2**abits - 1) * d
            act_index += 1
        elif kind == "residual-add":
            x = x + outs[meta["residual_from"]]
        elif kind == "avgpool":
            k = meta["pool"] or x.shape[2]
            x = F.avg_pool2d(torch.as_tensor(x), k).numpy()
        elif kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        outs[i] = x
    return x


def cross_entropy(z, y):
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return lse - z[np.arange(len(y)), y]


def lp_err2(x, delta, lo, hi):
    q = np.clip(np.round(x / delta), lo, hi) * delta
    return float(np.sqrt(((q - x) ** 2).sum()))


def grid_scan_mmse(x, bits, signed):
    """Dense two-stage grid scan of the p = 2 quantization error."""
    lo, hi = (-(2 ** (bits - 1)), 2 ** (bits - 1)) if signed else (0, 2**bits - 1)
    top = (np.abs(x).max() if signed else x.max()) / hi
    grid = np.linspace(top / 1000.0, top, 4001)
    errs = np.array([lp_err2(x, d, lo, hi) for d in grid])
    k = int(errs.argmin())
    fine = np.linspace(grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)], 2001)
    ferrs = np.array([lp_err2(x, d, lo, hi) for d in fine])
    j = int(ferrs.argmin())
    return float(fine[j]), float(ferrs[j])


def export(name, model, calib, test, out_root, bits):
    out = out_root / name
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    ref_layers = []
    for i, (kind, mod, meta) in enumerate(model.manifest()):
        e = {"kind": kind, "weight_file": None, "bias_file": None, "stride": 1, "pad": meta.get("pad", 0),
             "quantize_weights": mod is not None, "quantize_activations": kind == "relu",
             "residual_from": meta.get("residual_from")}
        if kind == "avgpool":
            e["pool"] = meta["pool"]
        w = b = None
        if mod is not None:
            w = mod.weight.detach().numpy()
            b = mod.bias.detach().numpy()
            write_qtn(out / f"l{i}_w.qtn", w)
            write_qtn(out / f"l{i}_b.qtn", b)
            e["weight_file"] = f"l{i}_w.qtn"
            e["bias_file"] = f"l{i}_b.qtn"
            w, b = f32(w), f32(b)
        entries.append(e)
        ref_layers.append((kind, w, b, meta))
    (out / f"{name}.json").write_text(json.dumps({"name": name, "num_classes": NUM_CLASSES, "layers": entries}, indent=2) + "\n")

    for tag, (x, y) in {"calib": calib, "test": test}.items():
        write_qtn(out / f"{tag}_x.qtn", x)
        write_qtn(out / f"{tag}_y.qtn", y.astype(np.float32))

    cx, cy = f32(calib[0]), calib[1]
    tx, ty = f32(test[0]), test[1]
    z_test = run_layers(ref_layers, tx)
    z_cal = run_layers(ref_layers, cx)

    # MMSE layer-wise steps, default layout: first and last weight layers
    # unquantized, every relu output quantized.
    weight_layers = [i for i, l in enumerate(ref_layers) if l[0] in ("dense", "conv2d")]
    taps = []
    run_layers(ref_layers, cx, taps=taps)
    mmse = []
    for i in weight_layers[1:-1]:
        d, e = grid_scan_mmse(ref_layers[i][1].reshape(-1), bits, True)
        mmse.append({"layer": i, "kind": "weight", "bits": bits, "delta": d, "error": e})
    relu_layers = [i for i, l in enumerate(ref_layers) if l[0] == "relu"]
    for i, t in zip(relu_layers, taps):
        d, e = grid_scan_mmse(t, bits, False)
        mmse.append({"layer": i, "kind": "activation", "bits": bits, "delta": d, "error": e})

    expected = {
        "fp_test_accuracy": float((z_test.argmax(axis=1) == ty).mean()),
        "fp_calib_loss": float(np.sort(cross_entropy(z_cal, cy)).sum() / len(cy)),
        "mmse_bits": bits,
        "mmse_steps": mmse,
        "probe_logits": z_test[:4].tolist(),
    }
    (out / "expected.json").write_text(json.dumps(expected, indent=2) + "\n")
    print(f"{name}: fp test accuracy {expected['fp_test_accuracy']:.4f}, calib loss {expected['fp_calib_loss']:.4f}")


def make_set(rng, teacher, sampler, n):
    x = sampler(rng, n)
    y = teacher.logits(x).argmax(axis=1)
    return x.astype(np.float32), y


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "fixtures"))
    ap.add_argument("--seed", type=int, default=20200318)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    torch.set_num_threads(1)

    rng = np.random.default_rng(args.seed)
    teacher = MlpTeacher(rng)
    balance(teacher, mlp_data(rng, 20000))
    tr = make_set(rng, teacher, mlp_data, N_TRAIN)
    cal = make_set(rng, teacher, mlp_data, N_CALIB)
    te = make_set(rng, teacher, mlp_data, N_TEST)
    mlp = train(Mlp(), *tr, epochs=40, lr=3e-3, seed=args.seed)
    export("mlp", mlp, cal, te, out, bits=4)

    rng = np.random.default_rng(args.seed + 1)
    teacher = CnnTeacher(rng)
    balance(teacher, smooth_images(rng, 20000))
    tr = make_set(rng, teacher, smooth_images, N_TRAIN)
    cal = make_set(rng, teacher, smooth_images, N_CALIB)
    te = make_set(rng, teacher, smooth_images, N_TEST)
    cnn = train(Cnn(), *tr, epochs=40, lr=3e-3, seed=args.seed)
    export("cnn", cnn, cal, te, out, bits=4)


if __name__ == "__main__":
    main()
