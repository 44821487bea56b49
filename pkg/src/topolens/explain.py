"""Grad-CAM importance fields over persistence-image coordinates.

The class score y_k = softmax(cos(embedding, prototypes)/tau)[k] is
backpropagated to the last conv layer's post-attention activation map A.
Channel weights alpha_c are the spatial average of dy_k/dA_c, the field is
ReLU(sum_c alpha_c * A_c), bilinearly upsampled to the persistence-image
resolution. Fields are stored raw (not normalized); normalization to the
field maximum happens at render time, where the paper-style contours are
defined as fractions of the maximum.
"""

from dataclasses import dataclass

import numpy as np

from .diagram import EXTENDED, RELATIVE
from .errors import InvalidInputError
from .model import _image_to_input, _scores_from_embedding


@dataclass
class ImportanceField:
    values: np.ndarray  # (n_y, n_x), nonnegative, aligned to spec extents
    extents: tuple  # (b_min, b_max, p_min, p_max)
    class_label: str
    class_index: int
    conv_hw: tuple  # spatial size of the source conv activation map


def cam_combine(activations, gradients):
    """ReLU-weighted channel combination of an activation map.

    activations, gradients: (C, H, W). alpha_c = mean over (H, W) of the
    gradient; returns ReLU(sum_c alpha_c * A_c) of shape (H, W).
    """
    activations = np.asarray(activations, dtype=np.float64)
    gradients = np.asarray(gradients, dtype=np.float64)
    if activations.shape != gradients.shape or activations.ndim != 3:
        raise InvalidInputError("activations and gradients must share (C,H,W)")
    alpha = gradients.mean(axis=(1, 2))
    cam = np.tensordot(alpha, activations, axes=([0], [0]))
    return np.maximum(cam, 0.0)


def bilinear_upsample(field, out_hw):
    """Separable bilinear resize with corner-aligned sampling.

    Output values are convex combinations of input values, so the maximum
    never increases.
    """
    field = np.asarray(field, dtype=np.float64)
    in_h, in_w = field.shape
    out_h, out_w = out_hw
    if (in_h, in_w) == (out_h, out_w):
        return field.copy()

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys = axis_coords(in_h, out_h)
    xs = axis_coords(in_w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    ty = ys - y0
    tx = xs - x0
    rows = field[y0] * (1 - ty)[:, None] + field[y1] * ty[:, None]
    out = rows[:, x0] * (1 - tx)[None, :] + rows[:, x1] * tx[None, :]
    return out


def grad_cam(params, image, k=None):
    """Importance field of class k for one input image.

    k defaults to the predicted class. The input may be a PersistenceImage
    (single channel models) or a raw (C, H, W) stack from diagram_to_input.
    """
    if params.prototypes is None or len(params.prototypes) == 0:
        raise InvalidInputError("model has no fitted prototypes")
    x = _image_to_input(params, image)
    net = params.network
    emb = np.asarray(net.forward(x, train=False), dtype=np.float64)
    scores = _scores_from_embedding(emb, params.prototypes, params.tau)
    if k is None:
        k = int(np.argmax(scores))
    if not 0 <= k < len(params.classes):
        raise InvalidInputError(f"class index {k} out of range")

    # dy_k/demb through the softmax-over-cosine head
    protos = np.asarray(params.prototypes, dtype=np.float64)
    norm = np.linalg.norm(emb)
    unit = emb / norm
    # du_j/demb for u_j = cos(emb, p_j), prototypes already unit-norm
    du = protos / norm - np.outer(protos @ unit, unit) / norm
    dy_du = scores[k] * (np.eye(len(scores))[k] - scores) / params.tau
    demb = dy_du @ du

    tap = params.explain_tap()
    grad_at_tap = net.backward(demb.astype(emb.dtype), stop_at=tap + 1)
    acts = net.output_of(tap)
    if acts.ndim == 4:
        acts = acts[0]
        grad_at_tap = grad_at_tap[0]
    cam = cam_combine(acts, grad_at_tap)
    up = bilinear_upsample(cam, (params.image_spec.n_y, params.image_spec.n_x))
    return ImportanceField(
        values=up,
        extents=tuple(params.image_spec.extents),
        class_label=params.classes[k],
        class_index=k,
        conv_hw=cam.shape,
    )


def field_lookup(field, point):
    """Importance of a diagram point: bilinear interpolation in the field.

    The point transforms to birth-persistence exactly like vectorization
    (downward pairs fold to (min(b,d), |d-b|)); coordinates outside the
    extents clamp to the boundary.
    """
    downward = point.kind == RELATIVE or (point.kind == EXTENDED and point.dim == 1)
    b = min(point.birth, point.death) if downward else point.birth
    p = abs(point.death - point.birth)
    return field_lookup_bp(field, b, p)


def field_lookup_bp(field, b, p):
    values = field.values
    ny, nx = values.shape
    b0, b1, p0, p1 = field.extents
    fx = (b - b0) / (b1 - b0) * nx - 0.5
    fy = (p - p0) / (p1 - p0) * ny - 0.5
    fx = min(max(fx, 0.0), nx - 1.0)
    fy = min(max(fy, 0.0), ny - 1.0)
    x0, y0 = int(np.floor(fx)), int(np.floor(fy))
    x1, y1 = min(x0 + 1, nx - 1), min(y0 + 1, ny - 1)
    tx, ty = fx - x0, fy - y0
    top = values[y0, x0] * (1 - tx) + values[y0, x1] * tx
    bot = values[y1, x0] * (1 - tx) + values[y1, x1] * tx
    return float(top * (1 - ty) + bot * ty)
