"""File formats, dataset manifests, synthetic data, and train/test splits.

Formats
-------
Diagram CSV    header `birth,death,dim,kind,birth_cell,death_cell`; floats
               as shortest round-trip decimals; death `inf` for essentials;
               empty cell columns for points without provenance.
Grid           8-bit grayscale PNG, or PGM (ASCII P2 / binary P5).
Graph          text: first line `n m`, then n node values, then m `u v` lines.
Tensor binary  magic TNSR, u32 version, u8 dtype tag (0=f64, 1=f32, 2=i64),
               u8 ndim, u64 dims, little-endian payload.
Manifest       JSON {"entries": [{"path", "label"}], "seed", "split"}.

All writes go through a temp file + atomic rename. All generation and
splitting is a pure function of (spec, seed).
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .diagram import KINDS, ORDINARY, PersistenceDiagram, PersistencePoint
from .errors import InvalidInputError, ParseError
from .filtration import FilteredGraph, ScalarGrid, extended_pd_graph, sublevel_pd0
from .rng import stream

TENSOR_MAGIC = b"TNSR"
TENSOR_VERSION = 1
_DTYPE_TAGS = {0: np.float64, 1: np.float32, 2: np.int64}
_TAG_FOR = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.int64): 2}


def _atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-topolens-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -------------------------------------------------------------- diagram CSV


def diagram_to_csv(diagram):
    lines = ["birth,death,dim,kind,birth_cell,death_cell"]
    for p in diagram.points:
        death = "inf" if math.isinf(p.death) else repr(float(p.death))
        bc = "" if p.birth_cell is None else str(p.birth_cell)
        dc = "" if p.death_cell is None else str(p.death_cell)
        lines.append(f"{float(p.birth)!r},{death},{p.dim},{p.kind},{bc},{dc}")
    return "\n".join(lines) + "\n"


def save_diagram(path, diagram):
    _atomic_write(path, diagram_to_csv(diagram).encode("utf-8"))


def load_diagram(path):
    try:
        text = open(path, "r", encoding="utf-8").read()
    except OSError as e:
        raise ParseError(str(e), path=path) from e
    lines = text.splitlines()
    if not lines or lines[0].strip() != "birth,death,dim,kind,birth_cell,death_cell":
        raise ParseError("missing or wrong header", path=path, line=1)
    points = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields, got {len(parts)}", path=path, line=ln)
        try:
            birth = float(parts[0])
            death = float(parts[1])
            dim = int(parts[2])
            kind = parts[3].strip()
            if kind not in KINDS:
                raise ValueError(f"unknown kind {kind!r}")
            bc = int(parts[4]) if parts[4].strip() else None
            dc = int(parts[5]) if parts[5].strip() else None
            points.append(PersistencePoint(birth, death, dim, kind, bc, dc))
        except ValueError as e:
            raise ParseError(str(e), path=path, line=ln) from e
    return PersistenceDiagram(points, source_id=os.path.basename(path))


# -------------------------------------------------------------------- grids


def load_grid(path):
    """Load a scalar grid from PNG (8-bit grayscale) or PGM."""
    lower = str(path).lower()
    if lower.endswith(".png"):
        img = Image.open(path)
        if img.mode not in ("L", "I;16", "P", "1"):
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim != 2:
            raise ParseError("PNG did not decode to a single channel", path=path)
        return ScalarGrid.from_array(arr)
    if lower.endswith(".pgm"):
        return _load_pgm(path)
    raise ParseError("unsupported grid format (want .png or .pgm)", path=path)


def _load_pgm(path):
    data = open(path, "rb").read()
    if data[:2] not in (b"P2", b"P5"):
        raise ParseError("not a PGM file", path=path, offset=0)
    binary = data[:2] == b"P5"
    # header tokens: magic, width, height, maxval (comments start with #)
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if i == j:
            raise ParseError("truncated PGM header", path=path, offset=i)
        tokens.append(data[i:j])
        i = j
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise ParseError(f"bad PGM header: {e}", path=path, offset=2) from e
    if binary:
        i += 1  # single whitespace after maxval
        need = w * h * (2 if maxval > 255 else 1)
        raw = data[i : i + need]
        if len(raw) < need:
            raise ParseError("truncated PGM payload", path=path, offset=i + len(raw))
        dt = ">u2" if maxval > 255 else "u1"
        arr = np.frombuffer(raw, dtype=dt).astype(np.float64).reshape(h, w)
    else:
        try:
            vals = [int(t) for t in data[i:].split()]
        except ValueError as e:
            raise ParseError(f"bad PGM sample: {e}", path=path, offset=i) from e
        if len(vals) != w * h:
            raise ParseError(
                f"expected {w * h} samples, got {len(vals)}", path=path, offset=i
            )
        arr = np.array(vals, dtype=np.float64).reshape(h, w)
    return ScalarGrid.from_array(arr)


def save_grid(path, grid):
    """Save a grid as 8-bit grayscale PNG or ASCII PGM (values clipped 0..255)."""
    arr = np.clip(np.rint(grid.as_2d()), 0, 255).astype(np.uint8)
    lower = str(path).lower()
    if lower.endswith(".png"):
        import io as _io

        buf = _io.BytesIO()
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
        _atomic_write(path, buf.getvalue())
    elif lower.endswith(".pgm"):
        lines = [f"P2\n{grid.width} {grid.height}\n255"]
        for row in arr:
            lines.append(" ".join(str(int(v)) for v in row))
        _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))
    else:
        raise InvalidInputError("unsupported grid format (want .png or .pgm)")


# -------------------------------------------------------------------- graphs


def load_graph(path):
    try:
        text = open(path, "r", encoding="utf-8").read()
    except OSError as e:
        raise ParseError(str(e), path=path) from e
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise ParseError("empty graph file", path=path, line=1)
    try:
        n, m = (int(t) for t in lines[0].split())
    except ValueError as e:
        raise ParseError(f"bad graph size line: {e}", path=path, line=1) from e
    if len(lines) < 1 + n + m:
        raise ParseError(
            f"expected {1 + n + m} lines, got {len(lines)}", path=path, line=len(lines)
        )
    values = []
    for ln in range(1, 1 + n):
        try:
            values.append(float(lines[ln].strip()))
        except ValueError as e:
            raise ParseError(f"bad node value: {e}", path=path, line=ln + 1) from e
    edges = []
    for ln in range(1 + n, 1 + n + m):
        parts = lines[ln].split()
        try:
            u, v = int(parts[0]), int(parts[1])
        except (IndexError, ValueError) as e:
            raise ParseError(f"bad edge line: {e}", path=path, line=ln + 1) from e
        edges.append((u, v))
    try:
        return FilteredGraph(np.array(values), np.array(edges).reshape(-1, 2))
    except InvalidInputError as e:
        raise ParseError(str(e), path=path) from e


def save_graph(path, graph):
    lines = [f"{graph.n_nodes} {graph.n_edges}"]
    lines += [repr(float(v)) for v in graph.node_values]
    lines += [f"{int(u)} {int(v)}" for u, v in graph.edges]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


# ------------------------------------------------------------ tensor binary


def tensor_to_bytes(arr):
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _TAG_FOR:
        raise InvalidInputError(f"unsupported tensor dtype {arr.dtype}")
    head = TENSOR_MAGIC + struct.pack("<IBB", TENSOR_VERSION, _TAG_FOR[arr.dtype], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
    return head + dims + payload


def tensor_from_bytes(data, offset=0, path=None):
    """Decode one tensor; returns (array, next_offset)."""

    def need(k, what):
        if offset_ + k > len(data):
            raise ParseError(f"truncated tensor ({what})", path=path, offset=offset_)
        return data[offset_ : offset_ + k]

    offset_ = offset
    if need(4, "magic") != TENSOR_MAGIC:
        raise ParseError("bad tensor magic", path=path, offset=offset_)
    offset_ += 4
    version, tag, ndim = struct.unpack("<IBB", need(6, "header"))
    offset_ += 6
    if version != TENSOR_VERSION:
        raise ParseError(f"unsupported tensor version {version}", path=path, offset=offset)
    if tag not in _DTYPE_TAGS:
        raise ParseError(f"unknown dtype tag {tag}", path=path, offset=offset)
    dims = struct.unpack(f"<{ndim}Q", need(8 * ndim, "dims")) if ndim else ()
    offset_ += 8 * ndim
    dtype = np.dtype(_DTYPE_TAGS[tag]).newbyteorder("<")
    count = int(np.prod(dims)) if dims else 1
    nbytes = count * dtype.itemsize
    payload = need(nbytes, "payload")
    offset_ += nbytes
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(_DTYPE_TAGS[tag])
    return arr, offset_


def save_tensor(path, arr):
    _atomic_write(path, tensor_to_bytes(arr))


def load_tensor(path):
    data = open(path, "rb").read()
    arr, end = tensor_from_bytes(data, path=path)
    if end != len(data):
        raise ParseError("trailing bytes after tensor", path=path, offset=end)
    return arr


# ---------------------------------------------------------------- manifests


@dataclass
class ManifestEntry:
    path: str
    label: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    seed: int = 0
    split: tuple = (0.9, 0.1)
    base_dir: str = "."

    def labels(self):
        return sorted({e.label for e in self.entries})

    def validate(self):
        if len(self.labels()) < 2:
            raise InvalidInputError("manifest needs at least 2 classes")
        if abs(sum(self.split) - 1.0) > 1e-12:
            raise InvalidInputError("split fractions must sum to 1")
        for e in self.entries:
            if not os.path.exists(os.path.join(self.base_dir, e.path)):
                raise InvalidInputError(f"missing dataset file: {e.path}")


def save_manifest(path, manifest):
    doc = {
        "entries": [{"path": e.path, "label": e.label} for e in manifest.entries],
        "seed": manifest.seed,
        "split": list(manifest.split),
    }
    _atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def load_manifest(path):
    try:
        doc = json.loads(open(path, "r", encoding="utf-8").read())
    except json.JSONDecodeError as e:
        raise ParseError(f"bad manifest JSON: {e}", path=path, line=e.lineno) from e
    try:
        entries = [ManifestEntry(d["path"], str(d["label"])) for d in doc["entries"]]
        manifest = DatasetManifest(
            entries=entries,
            seed=int(doc.get("seed", 0)),
            split=tuple(doc.get("split", (0.9, 0.1))),
            base_dir=os.path.dirname(os.path.abspath(path)),
        )
    except (KeyError, TypeError) as e:
        raise ParseError(f"bad manifest structure: {e}", path=path) from e
    return manifest


def load_entry_diagram(manifest, entry, connectivity=4):
    """Load an entry and reduce it to a diagram, whatever its source kind."""
    path = os.path.join(manifest.base_dir, entry.path)
    lower = path.lower()
    if lower.endswith(".csv"):
        return load_diagram(path)
    if lower.endswith((".png", ".pgm")):
        d, _ = sublevel_pd0(load_grid(path), connectivity=connectivity)
        return d
    if lower.endswith((".graph", ".txt")):
        return extended_pd_graph(load_graph(path))
    raise InvalidInputError(f"cannot infer input kind of {entry.path}")


def input_to_diagram(path, connectivity=4):
    """Same dispatch as load_entry_diagram for a bare path."""
    m = DatasetManifest(base_dir=os.path.dirname(os.path.abspath(path)) or ".")
    return load_entry_diagram(m, ManifestEntry(os.path.basename(path), ""), connectivity)


# ----------------------------------------------------------- synthetic data


@dataclass
class SynthClassSpec:
    """One synthetic class: an exact anchor plus a band of noise points.

    Coordinates are birth-persistence. Noise births are uniform over
    noise_birth_range; noise persistences uniform over (noise_p_min, bound].
    An optional cluster adds n points at cluster_b +- spread with
    persistences in cluster_p_range (the shared-anchor experiment).
    """

    anchor: tuple  # (b, p)
    n_noise: int = 100
    noise_bound: float = 0.0975
    noise_birth_range: tuple = (0.0, 0.9)
    noise_p_min: float = 0.003
    cluster: dict | None = None  # {"b": float, "n": int, "spread": float, "p_range": (lo, hi)}


@dataclass
class SynthSpec:
    classes: list  # of SynthClassSpec
    per_class: int = 80
    seed: int = 0

    def __post_init__(self):
        anchors = [tuple(c.anchor) for c in self.classes]
        if len(set(anchors)) != len(anchors) and len(self.classes) > 1:
            # identical anchors are allowed only when clusters distinguish classes
            if not all(c.cluster for c in self.classes):
                raise InvalidInputError("classes need distinct anchors or clusters")
        for c in self.classes:
            if c.n_noise < 0:
                raise InvalidInputError("n_noise must be >= 0")


def synth_generate(spec):
    """Generate labeled diagrams: [(PersistenceDiagram, label), ...].

    Each diagram holds its class anchor exactly plus seeded noise (and the
    optional cluster). Diagram RNG is keyed by (seed, class, index) so any
    single diagram can be regenerated independently.
    """
    out = []
    for ci, cls in enumerate(spec.classes):
        ab, ap = cls.anchor
        for di in range(spec.per_class):
            rng = stream(spec.seed, "synth", ci, di)
            pts = [PersistencePoint(float(ab), float(ab + ap), 0, ORDINARY)]
            births = rng.uniform(*cls.noise_birth_range, size=cls.n_noise)
            pers = rng.uniform(cls.noise_p_min, cls.noise_bound, size=cls.n_noise)
            for b, p in zip(births, pers):
                pts.append(PersistencePoint(float(b), float(b + p), 0, ORDINARY))
            if cls.cluster:
                cb = cls.cluster["b"]
                nc = cls.cluster["n"]
                spread = cls.cluster["spread"]
                plo, phi = cls.cluster["p_range"]
                cbs = rng.uniform(cb - spread, cb + spread, size=nc)
                cps = rng.uniform(plo, phi, size=nc)
                for b, p in zip(cbs, cps):
                    pts.append(PersistencePoint(float(b), float(b + p), 0, ORDINARY))
            out.append(
                (PersistenceDiagram(pts, source_id=f"synth-{ci}-{di}"), f"class{ci}")
            )
    return out


def default_two_class_spec(seed=0, per_class=80, n_noise=100):
    """The two-class persistence-recovery construction.

    One high-persistence anchor per class amid low-persistence noise whose
    lifetimes stay below 15% of the anchor persistence. Anchors sit inside
    the fixed [0,1]^2 birth-persistence frame used by the synthetic presets.
    """
    return SynthSpec(
        classes=[
            SynthClassSpec(anchor=(0.325, 0.65), n_noise=n_noise),
            SynthClassSpec(anchor=(0.65, 0.45), n_noise=n_noise),
        ],
        per_class=per_class,
        seed=seed,
    )


def shared_anchor_spec(seed=0, per_class=150, n_noise=100):
    """Both classes share one identical high-persistence anchor and differ
    only in where a near-diagonal low-persistence cluster sits. Persistence
    weighting sees almost nothing; uniform-weight densities differ plainly.
    """
    cluster = dict(n=20, spread=0.03, p_range=(0.001, 0.02))
    return SynthSpec(
        classes=[
            SynthClassSpec(anchor=(0.45, 0.65), n_noise=n_noise, cluster=dict(cluster, b=0.15)),
            SynthClassSpec(anchor=(0.45, 0.65), n_noise=n_noise, cluster=dict(cluster, b=0.75)),
        ],
        per_class=per_class,
        seed=seed,
    )


SYNTH_PRESETS = {
    "default": default_two_class_spec,
    "shared-anchor": shared_anchor_spec,
}

# the synthetic presets share one fixed vectorization frame so that anchor
# pixel positions do not drift with the noise draw
SYNTH_EXTENTS = (0.0, 1.0, 0.0, 1.0)


# ------------------------------------------------------------------- splits


def split_manifest_entries(labeled, seed, train_frac=0.9):
    """Stratified deterministic split of [(item, label), ...].

    Per class, items are shuffled by a class-keyed stream and the first
    round(n * train_frac) go to train. Classes with a single member are
    rejected.
    """
    by_label = {}
    for item, label in labeled:
        by_label.setdefault(label, []).append(item)
    if len(by_label) < 2:
        raise InvalidInputError("need at least 2 classes to split")
    train, test = [], []
    for li, label in enumerate(sorted(by_label)):
        items = by_label[label]
        if len(items) < 2:
            raise InvalidInputError(f"class {label!r} has a single member")
        order = stream(seed, "split", li).permutation(len(items))
        n_train = int(round(len(items) * train_frac))
        n_train = min(max(n_train, 1), len(items) - 1)
        for k, idx in enumerate(order):
            (train if k < n_train else test).append((items[idx], label))
    return train, test
