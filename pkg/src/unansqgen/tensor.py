"""Minimal reverse-mode autodiff over dense float64 arrays.

Every numeric operation the generation models need is a recorded primitive
on a Tape. Calling a primitive validates shapes, checks inputs are finite,
computes the forward value with numpy, and records a vector-Jacobian
closure so `backward` can accumulate gradients by reverse traversal.
"""

from __future__ import annotations

import struct

import numpy as np


class TapeError(ValueError):
    """Raised for shape mismatches, non-finite values, or misuse of the tape."""


class CheckpointError(ValueError):
    """Raised for malformed or version-incompatible checkpoint files."""


class Tensor:
    """Dense float64 array with an optional gradient slot.

    `data` is a shaped numpy array; `values` exposes the row-major flat view.
    Leaf tensors created with requires_grad=True collect gradients in
    `backward`; tensors produced by tape primitives track gradient flow
    automatically.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tracked")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tracked = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.ravel()

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.data.shape}{label} requires_grad={self.requires_grad}>"


def constant(data, name=None):
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _row_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


# Each forward rule returns (output array, vjp) where vjp maps the output
# gradient to a list of input gradients aligned with the inputs.

def _fw_matmul(arrays, meta):
    a, b = arrays
    ta, tb = meta.get("transpose_a", False), meta.get("transpose_b", False)
    if a.ndim != 2 or b.ndim != 2:
        raise TapeError(f"matmul: expected 2-D operands, got shapes {a.shape} and {b.shape}")
    aop = a.T if ta else a
    bop = b.T if tb else b
    if aop.shape[1] != bop.shape[0]:
        raise TapeError(f"matmul: incompatible shapes {a.shape} and {b.shape} "
                        f"(transpose_a={ta}, transpose_b={tb})")
    out = aop @ bop

    def vjp(g):
        da_op = g @ bop.T
        db_op = aop.T @ g
        return [da_op.T if ta else da_op, db_op.T if tb else db_op]

    return out, vjp


def _fw_add(arrays, meta):
    a, b = arrays
    try:
        out = a + b
    except ValueError:
        raise TapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return out, vjp


def _fw_mul(arrays, meta):
    a, b = arrays
    try:
        out = a * b
    except ValueError:
        raise TapeError(f"elementwise-multiply: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]

    return out, vjp


def _fw_concat_cols(arrays, meta):
    rows = {a.shape[0] for a in arrays}
    if any(a.ndim != 2 for a in arrays) or len(rows) != 1:
        raise TapeError("concat-last-axis: operands must be 2-D with equal row counts, got shapes "
                        + " and ".join(str(a.shape) for a in arrays))
    out = np.concatenate(arrays, axis=1)
    widths = [a.shape[1] for a in arrays]

    def vjp(g):
        pieces, col = [], 0
        for w in widths:
            pieces.append(g[:, col:col + w])
            col += w
        return pieces

    return out, vjp


def _fw_stack_rows(arrays, meta):
    cols = {a.shape[1] for a in arrays}
    if any(a.ndim != 2 for a in arrays) or len(cols) != 1:
        raise TapeError("stack-rows: operands must be 2-D with equal column counts, got shapes "
                        + " and ".join(str(a.shape) for a in arrays))
    out = np.concatenate(arrays, axis=0)
    heights = [a.shape[0] for a in arrays]

    def vjp(g):
        pieces, row = [], 0
        for h in heights:
            pieces.append(g[row:row + h, :])
            row += h
        return pieces

    return out, vjp


def _fw_tanh(arrays, meta):
    out = np.tanh(arrays[0])
    return out, lambda g: [g * (1.0 - out * out)]


def _fw_sigmoid(arrays, meta):
    out = _stable_sigmoid(arrays[0])
    return out, lambda g: [g * out * (1.0 - out)]


def _fw_row_softmax(arrays, meta):
    x = arrays[0]
    if x.ndim != 2:
        raise TapeError(f"row-softmax: expected a 2-D operand, got shape {x.shape}")
    out = _row_softmax(x)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return [out * (g - dot)]

    return out, vjp


def _fw_embedding(arrays, meta):
    table = arrays[0]
    ids = np.asarray(meta["ids"], dtype=np.int64)
    if table.ndim != 2:
        raise TapeError(f"embedding-lookup: table must be 2-D, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TapeError(f"embedding-lookup: id out of range for table shape {table.shape}")
    out = table[ids]

    def vjp(g):
        dt = np.zeros_like(table)
        np.add.at(dt, ids, g)
        return [dt]

    return out, vjp


def _fw_max_pool_rows(arrays, meta):
    x = arrays[0]
    if x.ndim != 2 or x.shape[0] < 1:
        raise TapeError(f"max-pool-over-rows: expected a non-empty 2-D operand, got shape {x.shape}")
    winners = np.argmax(x, axis=0)  # first maximal row per column: deterministic tie-break
    out = x[winners, np.arange(x.shape[1])][None, :]

    def vjp(g):
        dx = np.zeros_like(x)
        dx[winners, np.arange(x.shape[1])] = g[0]
        return [dx]

    return out, vjp


def _fw_dropout(arrays, meta):
    x = arrays[0]
    keep = meta["keep"]
    seed = meta["seed"]
    if not 0.0 < keep <= 1.0:
        raise TapeError(f"dropout: keep probability must be in (0, 1], got {keep}")
    if seed is None:
        raise TapeError("dropout: an explicit seed is required")
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.shape) < keep) / keep
    out = x * mask
    return out, lambda g: [g * mask]


def _fw_scale(arrays, meta):
    c = float(meta["factor"])
    return arrays[0] * c, lambda g: [g * c]


def _fw_slice_rows(arrays, meta):
    x = arrays[0]
    start, stop = meta["start"], meta["stop"]
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[0]:
        raise TapeError(f"slice-rows: rows [{start}:{stop}] invalid for shape {x.shape}")
    out = x[start:stop]

    def vjp(g):
        dx = np.zeros_like(x)
        dx[start:stop] = g
        return [dx]

    return out, vjp


def _fw_sum(arrays, meta):
    x = arrays[0]
    return np.asarray(x.sum()), lambda g: [np.full(x.shape, float(g))]


def _fw_log(arrays, meta):
    x = arrays[0]
    out = np.log(x, where=x > 0, out=np.full_like(x, -np.inf))
    return out, lambda g: [g / x]


_FORWARD = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "elementwise-multiply": _fw_mul,
    "concat-last-axis": _fw_concat_cols,
    "stack-rows": _fw_stack_rows,
    "tanh": _fw_tanh,
    "sigmoid": _fw_sigmoid,
    "row-softmax": _fw_row_softmax,
    "embedding-lookup": _fw_embedding,
    "max-pool-over-rows": _fw_max_pool_rows,
    "dropout": _fw_dropout,
    "scalar-multiply": _fw_scale,
    "slice-rows": _fw_slice_rows,
    "sum": _fw_sum,
    "log": _fw_log,
}

PRIMITIVE_KINDS = tuple(_FORWARD)


class _Entry:
    __slots__ = ("kind", "inputs", "output", "vjp", "meta")

    def __init__(self, kind, inputs, output, vjp, meta):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.meta = meta


class Tape:
    """Ordered record of primitive applications, confined to one worker."""

    def __init__(self):
        self.entries = []

    def primitive(self, kind, inputs, **meta):
        """Apply a primitive and record it. `inputs` is a list of Tensors."""
        if kind not in _FORWARD:
            raise TapeError(f"unknown primitive kind {kind!r}")
        arrays = []
        for t in inputs:
            if not isinstance(t, Tensor):
                raise TapeError(f"{kind}: inputs must be Tensors, got {type(t).__name__}")
            if not np.isfinite(t.data).all():
                raise TapeError(f"{kind}: non-finite input value")
            arrays.append(t.data)
        out_data, vjp = _FORWARD[kind](arrays, meta)
        if not np.isfinite(out_data).all():
            raise TapeError(f"{kind}: produced a non-finite output")
        out = Tensor(out_data)
        out._tracked = any(t._tracked for t in inputs)
        self.entries.append(_Entry(kind, list(inputs), out, vjp, meta))
        return out

    # convenience wrappers

    def matmul(self, a, b, transpose_a=False, transpose_b=False):
        return self.primitive("matmul", [a, b], transpose_a=transpose_a, transpose_b=transpose_b)

    def add(self, a, b):
        return self.primitive("add", [a, b])

    def mul(self, a, b):
        return self.primitive("elementwise-multiply", [a, b])

    def concat_cols(self, tensors):
        return self.primitive("concat-last-axis", list(tensors))

    def stack_rows(self, tensors):
        return self.primitive("stack-rows", list(tensors))

    def tanh(self, x):
        return self.primitive("tanh", [x])

    def sigmoid(self, x):
        return self.primitive("sigmoid", [x])

    def row_softmax(self, x):
        return self.primitive("row-softmax", [x])

    def embedding(self, table, ids):
        return self.primitive("embedding-lookup", [table], ids=list(ids))

    def max_pool_rows(self, x):
        return self.primitive("max-pool-over-rows", [x])

    def dropout(self, x, keep, seed):
        return self.primitive("dropout", [x], keep=keep, seed=seed)

    def scale(self, x, factor):
        return self.primitive("scalar-multiply", [x], factor=factor)

    def slice_rows(self, x, start, stop):
        return self.primitive("slice-rows", [x], start=start, stop=stop)

    def sum(self, x):
        return self.primitive("sum", [x])

    def log(self, x):
        return self.primitive("log", [x])

    def replay(self):
        """Recompute every entry from its recorded inputs and meta.

        Dropout entries reuse their recorded seed, so a replay is
        bit-identical to the original forward pass. Raises TapeError if any
        recomputed value differs.
        """
        for i, e in enumerate(self.entries):
            redone, _ = _FORWARD[e.kind]([t.data for t in e.inputs], e.meta)
            if not np.array_equal(redone, e.output.data):
                raise TapeError(f"replay: entry {i} ({e.kind}) did not reproduce its output")


def backward(loss, tape):
    """Accumulate d(loss)/d(leaf) for every tracked leaf by reverse traversal.

    Returns the gradient map {leaf Tensor: gradient array}; leaves that did
    not participate in the loss are absent. Also stores each gradient in the
    leaf's `grad` slot.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    produced = {id(e.output) for e in tape.entries}
    grads = {id(loss): np.ones_like(loss.data)}
    holder = {id(loss): loss}
    for e in reversed(tape.entries):
        g = grads.pop(id(e.output), None)
        holder.pop(id(e.output), None)
        if g is None:
            continue
        for t, gi in zip(e.inputs, e.vjp(g)):
            if not t._tracked:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                holder[key] = t
    result = {}
    for key, g in grads.items():
        t = holder[key]
        if t.requires_grad and id(t) not in produced:
            result[t] = g
            t.grad = g
    return result


def grad_check(build_loss, params, step=1e-5):
    """Compare tape gradients against central finite differences.

    `build_loss(params)` must deterministically return `(loss Tensor, Tape)`.
    Returns the max over all parameter coordinates of
    |g_auto - g_fd| / max(1e-8, |g_auto| + |g_fd|).
    """
    if not 0.0 < step <= 1e-3:
        raise ValueError(f"grad_check: step must be in (0, 1e-3], got {step}")
    loss_a, tape = build_loss(params)
    loss_b, _ = build_loss(params)
    if not np.array_equal(loss_a.data, loss_b.data):
        raise TapeError("grad_check: build_loss is not deterministic")
    gmap = backward(loss_a, tape)

    def loss_value():
        value, _ = build_loss(params)
        return float(value.data)

    worst = 0.0
    for p in params:
        auto = gmap.get(p)
        auto = np.zeros_like(p.data) if auto is None else auto
        flat = p.data.ravel()
        auto_flat = auto.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            rel = abs(auto_flat[i] - fd) / max(1e-8, abs(auto_flat[i]) + abs(fd))
            worst = max(worst, rel)
    return worst


# Checkpoint files: little-endian binary, one record per named tensor.

_CKPT_MAGIC = b"UQGCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_tensors):
    """Write (name, shape, float64 values) records; order follows the mapping."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(named_tensors)))
        for name, tensor in named_tensors.items():
            raw = name.encode("utf-8")
            data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back as an ordered {name: float64 array} mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}")
    offset = 16
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
        offset += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).astype(np.float64)
        offset += 8 * size
        out[name] = values.reshape(shape)
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after the last record")
    return out
