"""The deep metric model.

A 6-conv CNN with SimAM attention after conv layers 3, 5 and 6, dropout
before a single fully-connected embedding layer. Trained from scratch with
a triplet loss over randomly sampled (target, positive, negative) examples
of unweighted persistence images, Adam updates, and an L2 penalty on the
three embedding norms. Classification goes through a prototype softmax
head: class scores are softmax(cos(embedding, prototype_k) / tau), which is
differentiable through the whole network and therefore usable as the class
score that Grad-CAM backpropagates.

Training is bit-reproducible: (seed, data, config) determine the model file
bytes. All random draws come from keyed Philox streams and batches are
processed in a fixed chunked order.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ParseError, ShapeError
from .io import _atomic_write, tensor_from_bytes, tensor_to_bytes
from .neural import Conv2D, Dense, Dropout, Flatten, Network, ReLULayer, SimAM
from .rng import stream
from .vectorize import (
    PersistenceImage,
    PersistenceImageSpec,
    WeightSpec,
    persistence_image,
)

MODEL_MAGIC = b"TLNS"
MODEL_VERSION = 1

_CHUNK_TRIPLETS = 16  # fixed micro-batch size; part of the determinism contract


@dataclass
class ArchitectureSpec:
    channels: tuple = (32, 32, 64, 64, 128, 128)
    kernel: int = 3
    pad: int = 1
    strides: tuple = (1, 1, 2, 1, 2, 1)
    simam_sites: tuple = (3, 5, 6)  # 1-indexed conv layers
    simam_lambda: float = 1e-4
    embedding_dim: int = 64
    dropout_rate: float = 0.5
    in_channels: int = 1
    input_hw: tuple = (40, 40)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(int(s) for s in self.strides)
        self.simam_sites = tuple(int(s) for s in self.simam_sites)
        if len(self.strides) != len(self.channels):
            raise InvalidInputError("need one stride per conv layer")
        if any(s not in (1, 2) for s in self.strides):
            raise InvalidInputError("strides must be 1 or 2")
        bad = [s for s in self.simam_sites if not 1 <= s <= len(self.channels)]
        if bad:
            raise InvalidInputError(f"simam sites out of range: {bad}")

    def spatial_sizes(self):
        """(H, W) after each conv layer, floor-division semantics."""
        h, w = self.input_hw
        sizes = []
        for s in self.strides:
            h = (h + 2 * self.pad - self.kernel) // s + 1
            w = (w + 2 * self.pad - self.kernel) // s + 1
            if h < 1 or w < 1:
                raise ShapeError("architecture collapses the spatial map")
            sizes.append((h, w))
        return sizes

    def flat_dim(self):
        h, w = self.spatial_sizes()[-1]
        return self.channels[-1] * h * w


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    margin: float = 0.1
    distance: str = "cosine"  # or "squared_euclidean"
    epochs: int = 30
    seed: int = 0
    reg_coeff: float = 1e-4
    train_frac: float = 0.9
    patience: int | None = 5
    tau: float = 0.1
    dtype: str = "float32"  # training dtype; float64 for gradient checks

    def __post_init__(self):
        if self.distance not in ("cosine", "squared_euclidean"):
            raise InvalidInputError(f"unknown distance {self.distance!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidInputError("dtype must be float32 or float64")
        for name in ("learning_rate", "batch_size", "margin", "epochs", "tau"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if not 0 < self.train_frac < 1:
            raise InvalidInputError("train_frac must be in (0, 1)")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class Triplet:
    target: object
    positive: object
    negative: object


@dataclass
class ModelParams:
    arch: ArchitectureSpec
    image_spec: PersistenceImageSpec
    classes: list
    network: Network
    prototypes: np.ndarray  # (K, emb), L2-normalized rows
    train_embeddings: np.ndarray | None = None
    train_labels: np.ndarray | None = None
    tau: float = 0.1
    distance: str = "cosine"

    def explain_tap(self):
        """Layer index whose output Grad-CAM attributes (post-SimAM of the
        last conv layer when that site is attended, else its post-ReLU)."""
        return self._tap_index

    _tap_index: int = 0


def build_network(arch, seed=0, dtype=np.float64):
    """Assemble the layer stack. Returns (network, tap_index) where
    tap_index points at the last conv layer's post-attention output."""
    layers = []
    in_ch = arch.in_channels
    li = 0
    tap = None
    for conv_idx, (out_ch, s) in enumerate(zip(arch.channels, arch.strides), start=1):
        layers.append(
            Conv2D(
                in_ch,
                out_ch,
                k=arch.kernel,
                stride=s,
                pad=arch.pad,
                rng=stream(seed, "init", li),
                dtype=dtype,
            )
        )
        li += 1
        layers.append(ReLULayer())
        li += 1
        if conv_idx in arch.simam_sites:
            layers.append(SimAM(arch.simam_lambda))
            li += 1
        if conv_idx == len(arch.channels):
            tap = li - 1
        in_ch = out_ch
    layers.append(Dropout(arch.dropout_rate))
    li += 1
    layers.append(Flatten())
    li += 1
    layers.append(Dense(arch.flat_dim(), arch.embedding_dim, rng=stream(seed, "init", li), dtype=dtype))
    return Network(layers), tap


# ------------------------------------------------------------- vectorization


def diagram_to_input(diagram, image_spec, in_channels):
    """Stack a diagram into the model's input tensor (C, H, W)."""
    if in_channels == 1:
        img = persistence_image(diagram, image_spec)
        return img.pixels[None, :, :]
    ordinary = persistence_image(diagram, image_spec, channel="ordinary").pixels
    extended = persistence_image(diagram, image_spec, channel="extended").pixels
    return np.stack([ordinary, extended])


def _image_to_input(params, image):
    if isinstance(image, PersistenceImage):
        if image.pixels.shape != (params.image_spec.n_y, params.image_spec.n_x):
            raise ShapeError("image resolution does not match the model's spec")
        if image.spec.extents != params.image_spec.extents:
            raise ShapeError("image extents do not match the model's spec")
        x = image.pixels[None, :, :]
    else:
        x = np.asarray(image)
        if x.ndim == 2:
            x = x[None]
    if x.shape[0] != params.arch.in_channels:
        raise ShapeError(
            f"model expects {params.arch.in_channels} channel(s), got {x.shape[0]}"
        )
    want_hw = tuple(params.arch.input_hw)
    if x.shape[1:] != want_hw:
        raise ShapeError(f"model expects spatial size {want_hw}, got {x.shape[1:]}")
    return x.astype(params.network.layers[0].w.dtype)


def embed(params, image):
    """Deterministic eval-mode embedding of one image."""
    x = _image_to_input(params, image)
    return params.network.forward(x, train=False)


# --------------------------------------------------------------- triplet loss


def _cosine_dist_and_grads(x, y):
    nx = np.linalg.norm(x, axis=1, keepdims=True)
    ny = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any(nx < 1e-30) or np.any(ny < 1e-30):
        raise InvalidInputError("zero embedding vector in cosine mode")
    dot = (x * y).sum(axis=1, keepdims=True)
    c = dot / (nx * ny)
    dx = -(y / (nx * ny) - c * x / nx**2)
    dy = -(x / (nx * ny) - c * y / ny**2)
    return (1.0 - c[:, 0]), dx, dy


def _sqeuclid_dist_and_grads(x, y):
    diff = x - y
    d = (diff * diff).sum(axis=1)
    return d, 2.0 * diff, -2.0 * diff


def batch_triplet_loss(eT, eP, eN, margin, mode="cosine", reg_coeff=0.0):
    """Vectorized triplet loss over rows.

    Returns (margin_losses, total_losses, gT, gP, gN); gradients are of the
    per-triplet total loss (margin term plus embedding-norm penalty).
    """
    eT, eP, eN = (np.atleast_2d(np.asarray(e, dtype=np.float64)) for e in (eT, eP, eN))
    dist = _cosine_dist_and_grads if mode == "cosine" else _sqeuclid_dist_and_grads
    if mode not in ("cosine", "squared_euclidean"):
        raise InvalidInputError(f"unknown distance {mode!r}")
    dp, dp_dT, dp_dP = dist(eT, eP)
    dn, dn_dT, dn_dN = dist(eT, eN)
    raw = dp - dn + margin
    active = (raw > 0).astype(eT.dtype)[:, None]
    margin_losses = np.maximum(raw, 0.0)
    gT = active * (dp_dT - dn_dT)
    gP = active * dp_dP
    gN = -active * dn_dN
    total_losses = margin_losses.copy()
    if reg_coeff:
        total_losses += reg_coeff * (
            (eT**2).sum(axis=1) + (eP**2).sum(axis=1) + (eN**2).sum(axis=1)
        )
        gT = gT + 2.0 * reg_coeff * eT
        gP = gP + 2.0 * reg_coeff * eP
        gN = gN + 2.0 * reg_coeff * eN
    return margin_losses, total_losses, gT, gP, gN


def triplet_loss(eT, eP, eN, margin=0.1, mode="cosine", reg_coeff=0.0):
    """Scalar triplet loss for one (target, positive, negative) triple."""
    _, total, *_ = batch_triplet_loss(eT, eP, eN, margin, mode, reg_coeff)
    return float(total[0])


# ------------------------------------------------------------------ sampling


def _class_members(labels):
    members = {}
    for i, l in enumerate(labels):
        members.setdefault(l, []).append(i)
    return members


def _sample_triplet_indices(labels, classes, members, rng, count):
    n = len(labels)
    t_idx = np.empty(count, dtype=np.int64)
    p_idx = np.empty(count, dtype=np.int64)
    n_idx = np.empty(count, dtype=np.int64)
    for b in range(count):
        t = int(rng.integers(n))
        same = members[labels[t]]
        p = t
        while p == t:
            p = same[int(rng.integers(len(same)))]
        other_classes = [c for c in classes if c != labels[t]]
        oc = other_classes[int(rng.integers(len(other_classes)))]
        pool = members[oc]
        neg = pool[int(rng.integers(len(pool)))]
        t_idx[b], p_idx[b], n_idx[b] = t, p, neg
    return t_idx, p_idx, n_idx


def sample_triplet(dataset, rng):
    """Uniform random valid triplet from [(item, label), ...]."""
    labels = [l for _, l in dataset]
    members = _class_members(labels)
    if len(members) < 2 or any(len(v) < 2 for v in members.values()):
        raise InvalidInputError(
            "triplet sampling needs >=2 classes with >=2 members each"
        )
    classes = sorted(members)
    t, p, n = (int(a[0]) for a in _sample_triplet_indices(labels, classes, members, rng, 1))
    return Triplet(target=dataset[t][0], positive=dataset[p][0], negative=dataset[n][0])


# ---------------------------------------------------------------------- adam


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """Bias-corrected Adam update, in place. state holds first/second moments."""
    if t < 1:
        raise InvalidInputError("adam step count t starts at 1")
    if not state:
        state["m"] = {k: np.zeros_like(v) for k, v in params.items()}
        state["v"] = {k: np.zeros_like(v) for k, v in params.items()}
    for k, p in params.items():
        g = grads[k]
        m = state["m"][k]
        v = state["v"][k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    return params, state


# ------------------------------------------------------------------ training


def _forward_triplet_batch(net, inputs, t_idx, p_idx, n_idx, cfg, rng):
    """One gradient step's loss and parameter gradients, chunked.

    Concatenates (T, P, N) along the batch axis so the three share dropout
    statistics and a single backward pass per chunk. Gradients are summed in
    fixed chunk order then averaged; returns (mean margin loss, mean total
    loss, {param: grad}).
    """
    count = len(t_idx)
    grad_sum = {name: np.zeros_like(arr) for name, arr in net.param_items()}
    margin_sum = 0.0
    total_sum = 0.0
    for lo in range(0, count, _CHUNK_TRIPLETS):
        hi = min(lo + _CHUNK_TRIPLETS, count)
        k = hi - lo
        batch = np.concatenate(
            [
                inputs[t_idx[lo:hi]],
                inputs[p_idx[lo:hi]],
                inputs[n_idx[lo:hi]],
            ]
        )
        emb = net.forward(batch, train=True, rng=rng)
        eT, eP, eN = emb[:k], emb[k : 2 * k], emb[2 * k :]
        ml, tl, gT, gP, gN = batch_triplet_loss(
            eT, eP, eN, cfg.margin, cfg.distance, cfg.reg_coeff
        )
        margin_sum += float(ml.sum())
        total_sum += float(tl.sum())
        gemb = np.concatenate([gT, gP, gN]).astype(emb.dtype)
        net.backward(gemb)
        for name, g in net.grad_items():
            grad_sum[name] += g
    for name in grad_sum:
        grad_sum[name] /= count
    return margin_sum / count, total_sum / count, grad_sum


def fit_prototypes(embeddings, labels, classes):
    """Per-class prototype = L2-normalized mean of that class's embeddings."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    protos = np.zeros((len(classes), embeddings.shape[1]))
    for ci, c in enumerate(classes):
        rows = embeddings[[i for i, l in enumerate(labels) if l == c]]
        if rows.size == 0:
            raise InvalidInputError(f"class {c!r} has no members")
        mean = rows.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise InvalidInputError(f"class {c!r} mean embedding has zero norm")
        protos[ci] = mean / norm
    return protos


def train_model(labeled_diagrams, config=None, arch=None, image_spec=None):
    """Train the metric model on labeled diagrams (the training split).

    Returns (ModelParams, history) with history = {"triplet": [...],
    "total": [...]} of per-epoch batch-mean losses. An epoch is
    ceil(n_train / batch_size) batches of freshly sampled triplets. Training
    stops early when the epoch-mean triplet loss has not improved for
    `config.patience` epochs (set patience=None to always run all epochs).
    """
    from .vectorize import auto_extents, has_downward_pairs

    config = config or TrainConfig()
    diagrams = [d for d, _ in labeled_diagrams]
    labels = [l for _, l in labeled_diagrams]
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise InvalidInputError("training needs at least 2 classes")

    two_channel = has_downward_pairs(diagrams)
    if image_spec is None:
        image_spec = PersistenceImageSpec(
            resolution=(40, 40),
            extents=auto_extents(diagrams, sigma=0.1),
            sigma=0.1,
            weight=WeightSpec("uniform"),
        )
    if arch is None:
        arch = ArchitectureSpec(in_channels=2 if two_channel else 1)
    if arch.in_channels != (2 if two_channel else 1):
        raise InvalidInputError(
            "arch.in_channels does not match the dataset (extended pairs "
            f"{'present' if two_channel else 'absent'})"
        )
    if tuple(arch.input_hw) != (image_spec.n_y, image_spec.n_x):
        raise InvalidInputError("arch.input_hw must match the image resolution")

    dtype = config.np_dtype
    inputs = np.stack(
        [diagram_to_input(d, image_spec, arch.in_channels) for d in diagrams]
    ).astype(dtype)

    net, tap = build_network(arch, seed=config.seed, dtype=dtype)
    members = _class_members(labels)
    if any(len(v) < 2 for v in members.values()):
        raise InvalidInputError("every class needs >=2 training members")

    n = len(diagrams)
    batches_per_epoch = max(1, math.ceil(n / config.batch_size))
    params = dict(net.param_items())
    state = {}
    history = {"triplet": [], "total": []}
    best = math.inf
    stall = 0
    t = 0
    for epoch in range(config.epochs):
        epoch_margin = 0.0
        epoch_total = 0.0
        for b in range(batches_per_epoch):
            srng = stream(config.seed, "triplets", epoch, b)
            drng = stream(config.seed, "dropout", epoch, b)
            t_idx, p_idx, n_idx = _sample_triplet_indices(
                labels, classes, members, srng, config.batch_size
            )
            ml, tl, grads = _forward_triplet_batch(
                net, inputs, t_idx, p_idx, n_idx, config, drng
            )
            t += 1
            adam_step(params, grads, state, config.learning_rate, t=t)
            epoch_margin += ml
            epoch_total += tl
        history["triplet"].append(epoch_margin / batches_per_epoch)
        history["total"].append(epoch_total / batches_per_epoch)
        if config.patience is not None:
            current = history["triplet"][-1]
            if current < best - 1e-12:
                best = current
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    break

    train_emb = np.concatenate(
        [net.forward(inputs[lo : lo + 64], train=False) for lo in range(0, n, 64)]
    ).astype(np.float64)
    protos = fit_prototypes(train_emb, labels, classes)
    model = ModelParams(
        arch=arch,
        image_spec=image_spec,
        classes=classes,
        network=net,
        prototypes=protos,
        train_embeddings=train_emb,
        train_labels=np.array([classes.index(l) for l in labels], dtype=np.int64),
        tau=config.tau,
        distance=config.distance,
    )
    model._tap_index = tap
    return model, history


# ------------------------------------------------------------ classification


def class_scores(params, image, tau=None):
    """Softmax over cosine similarity to the class prototypes."""
    tau = params.tau if tau is None else tau
    e = np.asarray(embed(params, image), dtype=np.float64)
    return _scores_from_embedding(e, params.prototypes, tau)


def _scores_from_embedding(e, prototypes, tau):
    norm = np.linalg.norm(e)
    if norm < 1e-30:
        raise InvalidInputError("zero embedding; cannot score")
    sims = prototypes @ (e / norm)
    z = sims / tau
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def classify(params, image, mode="prototype", k=1):
    """Predict a class label. Ties break toward the lowest class index."""
    if mode == "prototype":
        scores = class_scores(params, image)
        return params.classes[int(np.argmax(scores))]
    if mode == "knn":
        if params.train_embeddings is None:
            raise InvalidInputError("model file carries no training embeddings")
        e = np.asarray(embed(params, image), dtype=np.float64)
        en = np.linalg.norm(e)
        if en < 1e-30:
            raise InvalidInputError("zero embedding; cannot classify")
        base = params.train_embeddings
        sims = (base @ e) / (np.linalg.norm(base, axis=1) * en + 1e-300)
        nearest = np.argsort(-sims, kind="stable")[:k]
        votes = np.bincount(params.train_labels[nearest], minlength=len(params.classes))
        return params.classes[int(np.argmax(votes))]
    raise InvalidInputError(f"unknown classify mode {mode!r}")


# ------------------------------------------------------------- model file IO


def _spec_to_doc(image_spec):
    doc = {
        "resolution": list(image_spec.resolution),
        "extents": list(image_spec.extents),
        "sigma": image_spec.sigma,
        "weight": {"kind": image_spec.weight.kind},
    }
    if image_spec.weight.table is not None:
        doc["weight"]["table"] = image_spec.weight.table.tolist()
    return doc


def _spec_from_doc(doc):
    w = doc["weight"]
    return PersistenceImageSpec(
        resolution=tuple(doc["resolution"]),
        extents=tuple(doc["extents"]),
        sigma=doc["sigma"],
        weight=WeightSpec(w["kind"], table=np.array(w["table"]) if "table" in w else None),
    )


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_model(path, model):
    arch_doc = {
        "channels": list(model.arch.channels),
        "kernel": model.arch.kernel,
        "pad": model.arch.pad,
        "strides": list(model.arch.strides),
        "simam_sites": list(model.arch.simam_sites),
        "simam_lambda": model.arch.simam_lambda,
        "embedding_dim": model.arch.embedding_dim,
        "dropout_rate": model.arch.dropout_rate,
        "in_channels": model.arch.in_channels,
        "input_hw": list(model.arch.input_hw),
        "tau": model.tau,
        "distance": model.distance,
    }
    blob = MODEL_MAGIC + struct.pack("<I", MODEL_VERSION)
    blob += _pack_str(json.dumps(arch_doc, sort_keys=True, separators=(",", ":")))
    blob += _pack_str(
        json.dumps(_spec_to_doc(model.image_spec), sort_keys=True, separators=(",", ":"))
    )
    blob += _pack_str(json.dumps(list(model.classes), separators=(",", ":")))
    tensors = [(name, arr) for name, arr in model.network.param_items()]
    tensors.append(("prototypes", model.prototypes))
    if model.train_embeddings is not None:
        tensors.append(("train_embeddings", model.train_embeddings))
        tensors.append(("train_labels", model.train_labels))
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        blob += _pack_str(name)
        blob += tensor_to_bytes(arr)
    _atomic_write(path, blob)


def load_model(path):
    data = open(path, "rb").read()
    if data[:4] != MODEL_MAGIC:
        raise ParseError("not a model file (bad magic)", path=path, offset=0)
    (version,) = struct.unpack("<I", data[4:8])
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version {version}", path=path, offset=4)
    off = 8

    def read_str():
        nonlocal off
        if off + 4 > len(data):
            raise ParseError("truncated model file", path=path, offset=off)
        (ln,) = struct.unpack("<I", data[off : off + 4])
        off += 4
        if off + ln > len(data):
            raise ParseError("truncated model string", path=path, offset=off)
        s = data[off : off + ln].decode("utf-8")
        off += ln
        return s

    arch_doc = json.loads(read_str())
    tau = arch_doc.pop("tau")
    distance = arch_doc.pop("distance")
    arch_doc["channels"] = tuple(arch_doc["channels"])
    arch_doc["strides"] = tuple(arch_doc["strides"])
    arch_doc["simam_sites"] = tuple(arch_doc["simam_sites"])
    arch_doc["input_hw"] = tuple(arch_doc["input_hw"])
    arch = ArchitectureSpec(**arch_doc)
    image_spec = _spec_from_doc(json.loads(read_str()))
    classes = json.loads(read_str())
    if off + 4 > len(data):
        raise ParseError("truncated model file", path=path, offset=off)
    (count,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    tensors = {}
    for _ in range(count):
        name = read_str()
        arr, off = tensor_from_bytes(data, off, path=path)
        tensors[name] = arr
    if off != len(data):
        raise ParseError("trailing bytes in model file", path=path, offset=off)

    dtype = tensors["layer0.w"].dtype
    net, tap = build_network(arch, seed=0, dtype=dtype)
    for name, arr in net.param_items():
        if name not in tensors:
            raise ParseError(f"model file missing tensor {name}", path=path)
        if tensors[name].shape != arr.shape:
            raise ParseError(f"tensor {name} has wrong shape", path=path)
        arr[...] = tensors[name]
    model = ModelParams(
        arch=arch,
        image_spec=image_spec,
        classes=classes,
        network=net,
        prototypes=tensors["prototypes"],
        train_embeddings=tensors.get("train_embeddings"),
        train_labels=tensors.get("train_labels"),
        tau=tau,
        distance=distance,
    )
    model._tap_index = tap
    return model
