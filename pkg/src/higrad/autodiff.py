"""Tape-based reverse-mode automatic differentiation.

Graphs are static: a topologically ordered list of primitive nodes built
once per experiment (affine maps, tanh/relu, pointwise arithmetic, slicing
and concatenation, complex tridiagonal matvec/solve). Values flow through
as float64 arrays of shape (batch, dim); complex vectors are packed as
[re | im] along the last axis.

The backward pass carries cotangents with an extra leading axis of shape
(k, batch, dim), so a full per-sample Jacobian is a single reverse sweep
with k = m unit cotangents instead of m separate passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import thomas_solve


class AutodiffError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# parameter vector


def layer_slices(layers):
    """Flat (weight, bias) slices for a sequence of (n_in, n_out) layers."""
    slices = []
    pos = 0
    for n_in, n_out in layers:
        ws = slice(pos, pos + n_in * n_out)
        pos += n_in * n_out
        bs = slice(pos, pos + n_out)
        pos += n_out
        slices.append((ws, bs))
    return slices, pos


@dataclass
class ParamVector:
    """Flat float64 parameter vector with per-layer (weight, bias) offsets."""

    values: np.ndarray
    layers: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.layers = tuple((int(a), int(b)) for a, b in self.layers)
        _, total = layer_slices(self.layers)
        if self.values.shape != (total,):
            raise ValueError(f"parameter vector length {self.values.shape} does not "
                             f"partition into layers {self.layers} (need {total})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite values")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layers)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.asarray(values, dtype=np.float64), self.layers)


@dataclass
class JacobianStack:
    """Stacked per-sample Jacobian (b*m, t) plus stacked loss gradients (b*m,).

    Row block i holds d y_i / d theta for sample i; rows are ordered
    sample-major, then output component.
    """

    jac: np.ndarray
    loss_grads: np.ndarray
    b: int
    m: int

    def __post_init__(self):
        if self.jac.shape[0] != self.b * self.m:
            raise ValueError("jacobian stack row count must equal b*m")
        if self.loss_grads.shape != (self.b * self.m,):
            raise ValueError("loss_grads must have length b*m")


# ---------------------------------------------------------------------------
# graph


@dataclass
class Node:
    op: str
    args: tuple
    dim: int
    attrs: dict = field(default_factory=dict)


class Graph:
    """Static computation graph over (batch, dim) float64 values.

    Node 0 is the external input. Affine nodes consume parameter slices in
    the order the layers were added; the matching ParamVector must have
    identical layer shapes.
    """

    def __init__(self, input_dim: int):
        self.nodes: list[Node] = [Node("input", (), int(input_dim))]
        self.layers: list[tuple[int, int]] = []
        self.output: int | None = None
        self.hidden_activations: list[int] = []
        self._slices = None

    # -- construction -----------------------------------------------------

    @property
    def input_node(self) -> int:
        return 0

    def _add(self, op, args, dim, **attrs) -> int:
        self.nodes.append(Node(op, tuple(args), int(dim), attrs))
        return len(self.nodes) - 1

    def const(self, value) -> int:
        value = np.asarray(value, dtype=np.float64)
        return self._add("const", (), value.shape[-1], value=value)

    def affine(self, x: int, n_in: int, n_out: int) -> int:
        if self.nodes[x].dim != n_in:
            raise ValueError("affine input dim mismatch")
        layer = len(self.layers)
        self.layers.append((n_in, n_out))
        self._slices = None
        return self._add("affine", (x,), n_out, layer=layer)

    def const_affine(self, x: int, a: np.ndarray, c: np.ndarray | None = None) -> int:
        a = np.asarray(a, dtype=np.float64)
        if self.nodes[x].dim != a.shape[0]:
            raise ValueError("const_affine input dim mismatch")
        c = np.zeros(a.shape[1]) if c is None else np.asarray(c, dtype=np.float64)
        return self._add("const_affine", (x,), a.shape[1], a=a, c=c)

    def tanh(self, x: int) -> int:
        return self._add("tanh", (x,), self.nodes[x].dim)

    def relu(self, x: int) -> int:
        return self._add("relu", (x,), self.nodes[x].dim)

    def square(self, x: int) -> int:
        return self._add("square", (x,), self.nodes[x].dim)

    def add(self, x: int, y: int) -> int:
        return self._add("add", (x, y), self.nodes[x].dim)

    def sub(self, x: int, y: int) -> int:
        return self._add("sub", (x, y), self.nodes[x].dim)

    def mul(self, x: int, y: int) -> int:
        return self._add("mul", (x, y), self.nodes[x].dim)

    def scale(self, x: int, c: float) -> int:
        return self._add("scale", (x,), self.nodes[x].dim, c=float(c))

    def dot(self, x: int, y: int) -> int:
        return self._add("dot", (x, y), 1)

    def slice(self, x: int, start: int, stop: int) -> int:
        return self._add("slice", (x,), stop - start, start=start, stop=stop)

    def concat(self, *xs: int) -> int:
        dim = sum(self.nodes[x].dim for x in xs)
        return self._add("concat", xs, dim)

    def ctridiag_matvec(self, lower: int, diag: int, upper: int, v: int) -> int:
        """y = T v for complex-packed bands and vector ([re | im] layout)."""
        return self._add("cmatvec", (lower, diag, upper, v), self.nodes[v].dim)

    def ctridiag_solve(self, lower: int, diag: int, upper: int, rhs: int) -> int:
        """x with T x = rhs, T complex tridiagonal, everything complex-packed."""
        return self._add("csolve", (lower, diag, upper, rhs), self.nodes[rhs].dim)

    def mark_output(self, x: int) -> None:
        self.output = x

    def mark_hidden(self, x: int) -> None:
        self.hidden_activations.append(x)

    # -- metadata ----------------------------------------------------------

    @property
    def output_dim(self) -> int:
        return self.nodes[self.output].dim

    @property
    def input_dim(self) -> int:
        return self.nodes[0].dim

    def param_slices(self):
        if self._slices is None:
            self._slices = layer_slices(self.layers)
        return self._slices

    @property
    def param_count(self) -> int:
        return self.param_slices()[1]

    def check_theta(self, theta: ParamVector):
        if tuple(theta.layers) != tuple(self.layers):
            raise ValueError(f"parameter layers {theta.layers} do not match "
                             f"graph layers {tuple(self.layers)}")


# ---------------------------------------------------------------------------
# complex packing helpers


def _cview(v: np.ndarray) -> np.ndarray:
    n = v.shape[-1] // 2
    return v[..., :n] + 1j * v[..., n:]


def _cpack(c: np.ndarray) -> np.ndarray:
    return np.concatenate([c.real, c.imag], axis=-1)


def pack_complex(c: np.ndarray) -> np.ndarray:
    """[re | im] packing of a complex array along the last axis."""
    return _cpack(np.asarray(c, dtype=np.complex128))


def unpack_complex(v: np.ndarray) -> np.ndarray:
    return _cview(np.asarray(v, dtype=np.float64))


# ---------------------------------------------------------------------------
# forward


def forward(graph: Graph, theta: ParamVector, x: np.ndarray) -> list:
    """Forward evaluation returning the full value tape.

    x has shape (dim,) or (batch, dim); all node values come out as
    (batch, dim) arrays.
    """
    graph.check_theta(theta)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != graph.input_dim:
        raise ValueError("input length does not match graph input arity")
    b = x.shape[0]
    slices, _ = graph.param_slices()
    t = theta.values

    vals = [None] * len(graph.nodes)
    vals[0] = x
    for i, node in enumerate(graph.nodes[1:], start=1):
        op = node.op
        a = node.args
        if op == "affine":
            ws, bs = slices[node.attrs["layer"]]
            n_in, n_out = graph.layers[node.attrs["layer"]]
            w = t[ws].reshape(n_in, n_out)
            vals[i] = vals[a[0]] @ w + t[bs]
        elif op == "const_affine":
            vals[i] = vals[a[0]] @ node.attrs["a"] + node.attrs["c"]
        elif op == "tanh":
            vals[i] = np.tanh(vals[a[0]])
        elif op == "relu":
            vals[i] = np.maximum(vals[a[0]], 0.0)
        elif op == "square":
            v = vals[a[0]]
            vals[i] = v * v
        elif op == "add":
            vals[i] = vals[a[0]] + vals[a[1]]
        elif op == "sub":
            vals[i] = vals[a[0]] - vals[a[1]]
        elif op == "mul":
            vals[i] = vals[a[0]] * vals[a[1]]
        elif op == "scale":
            vals[i] = node.attrs["c"] * vals[a[0]]
        elif op == "dot":
            vals[i] = np.sum(vals[a[0]] * vals[a[1]], axis=-1, keepdims=True)
        elif op == "slice":
            vals[i] = vals[a[0]][..., node.attrs["start"]:node.attrs["stop"]]
        elif op == "concat":
            vals[i] = np.concatenate([np.broadcast_to(vals[j], (b, graph.nodes[j].dim))
                                      for j in a], axis=-1)
        elif op == "const":
            vals[i] = np.broadcast_to(node.attrs["value"], (b, node.dim))
        elif op == "cmatvec":
            lo, d, up, v = (_cview(vals[j]) for j in a)
            y = d * v
            y = y.copy() if y.base is not None else y
            y[..., 1:] += lo * v[..., :-1]
            y[..., :-1] += up * v[..., 1:]
            vals[i] = _cpack(y)
        elif op == "csolve":
            lo, d, up, rhs = (_cview(vals[j]) for j in a)
            vals[i] = _cpack(thomas_solve(lo, d, up, rhs))
        else:  # pragma: no cover
            raise AutodiffError(f"unknown op {op!r}")

    out = vals[graph.output]
    if not np.all(np.isfinite(out)):
        for i, v in enumerate(vals):
            if v is not None and not np.all(np.isfinite(v)):
                raise AutodiffError(
                    f"non-finite value at node {i} (op {graph.nodes[i].op!r})")
    return vals


def evaluate(graph: Graph, theta: ParamVector, x: np.ndarray) -> np.ndarray:
    """Forward evaluation of the graph output."""
    squeeze = np.asarray(x).ndim == 1
    out = forward(graph, theta, x)[graph.output]
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# backward


def backward(graph: Graph, theta: ParamVector, vals: list, cotangent: np.ndarray,
             pgrad_out: np.ndarray | None = None, want_input_grad: bool = False):
    """Reverse sweep.

    cotangent has shape (k, b, m): k simultaneous cotangent rows for every
    sample. Returns parameter gradients of shape (k, b, t) (per sample, not
    summed over the batch) or fills a zero-initialized pgrad_out when given, plus
    the input cotangent (k, b, n) if requested.
    """
    slices, total = graph.param_slices()
    t = theta.values
    b = vals[0].shape[0]
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.ndim == 2:
        cotangent = cotangent[None]
    k = cotangent.shape[0]
    if cotangent.shape != (k, b, graph.output_dim):
        raise ValueError("cotangent must have shape (k, batch, m)")

    if pgrad_out is None:
        pgrad_out = np.zeros((k, b, total))
    cots: list = [None] * len(graph.nodes)
    owns = [False] * len(graph.nodes)
    cots[graph.output] = cotangent
    seen_layers: set[int] = set()

    def acc(idx, g):
        # first store keeps a reference (may be shared between siblings);
        # later accumulations must not mutate a shared array in place
        if cots[idx] is None:
            cots[idx] = g
        elif owns[idx]:
            cots[idx] += g
        else:
            cots[idx] = cots[idx] + g
            owns[idx] = True

    for i in range(len(graph.nodes) - 1, 0, -1):
        g = cots[i]
        if g is None:
            continue
        node = graph.nodes[i]
        op = node.op
        a = node.args
        if op == "affine":
            layer = node.attrs["layer"]
            ws, bs = slices[layer]
            n_in, n_out = graph.layers[layer]
            w = t[ws].reshape(n_in, n_out)
            x = vals[a[0]]
            wg = pgrad_out[..., ws]
            shaped = wg.reshape(wg.shape[:-1] + (n_in, n_out))
            if layer not in seen_layers and np.shares_memory(shaped, pgrad_out):
                np.einsum("bi,kbo->kbio", x, g, out=shaped)
            else:
                pgrad_out[..., ws] += np.einsum(
                    "bi,kbo->kbio", x, g).reshape(k, b, n_in * n_out)
            seen_layers.add(layer)
            pgrad_out[..., bs] += g
            acc(a[0], g @ w.T)
        elif op == "const_affine":
            acc(a[0], g @ node.attrs["a"].T)
        elif op == "tanh":
            y = vals[i]
            acc(a[0], g * (1.0 - y * y))
        elif op == "relu":
            acc(a[0], g * (vals[a[0]] > 0.0))
        elif op == "square":
            acc(a[0], g * (2.0 * vals[a[0]]))
        elif op == "add":
            acc(a[0], g)
            acc(a[1], g)
        elif op == "sub":
            acc(a[0], g)
            acc(a[1], -g)
        elif op == "mul":
            acc(a[0], g * vals[a[1]])
            acc(a[1], g * vals[a[0]])
        elif op == "scale":
            acc(a[0], node.attrs["c"] * g)
        elif op == "dot":
            acc(a[0], g * vals[a[1]])
            acc(a[1], g * vals[a[0]])
        elif op == "slice":
            p = a[0]
            if cots[p] is None:
                cots[p] = np.zeros((k, b, graph.nodes[p].dim))
                owns[p] = True
            elif not owns[p]:
                cots[p] = cots[p].copy()
                owns[p] = True
            cots[p][..., node.attrs["start"]:node.attrs["stop"]] += g
        elif op == "concat":
            pos = 0
            for j in a:
                d = graph.nodes[j].dim
                if graph.nodes[j].op != "const":
                    acc(j, g[..., pos:pos + d])
                pos += d
        elif op == "const":
            pass
        elif op == "cmatvec":
            lo, d, up, v = (_cview(vals[j]) for j in a)
            gc = _cview(g)
            vbar = np.conj(d) * gc
            vbar = vbar.copy() if vbar.base is not None else vbar
            vbar[..., :-1] += np.conj(lo) * gc[..., 1:]
            vbar[..., 1:] += np.conj(up) * gc[..., :-1]
            acc(a[3], _cpack(vbar))
            if graph.nodes[a[1]].op != "const":
                acc(a[1], _cpack(gc * np.conj(v)))
            if graph.nodes[a[0]].op != "const":
                acc(a[0], _cpack(gc[..., 1:] * np.conj(v[..., :-1])))
            if graph.nodes[a[2]].op != "const":
                acc(a[2], _cpack(gc[..., :-1] * np.conj(v[..., 1:])))
        elif op == "csolve":
            # x = T^{-1} d: rhs cotangent solves the conjugate-transpose
            # system, band cotangents are -dbar_i * conj(x_j).
            lo, d, up, _ = (_cview(vals[j]) for j in a)
            x = _cview(vals[i])
            gc = _cview(g)
            dbar = thomas_solve(np.conj(up), np.conj(d), np.conj(lo), gc)
            acc(a[3], _cpack(dbar))
            if graph.nodes[a[1]].op != "const":
                acc(a[1], _cpack(-dbar * np.conj(x)))
            if graph.nodes[a[0]].op != "const":
                acc(a[0], _cpack(-dbar[..., 1:] * np.conj(x[..., :-1])))
            if graph.nodes[a[2]].op != "const":
                acc(a[2], _cpack(-dbar[..., :-1] * np.conj(x[..., 1:])))
        else:  # pragma: no cover
            raise AutodiffError(f"unknown op {op!r}")
        cots[i] = None  # release early

    if want_input_grad:
        g_in = cots[0]
        if g_in is None:
            g_in = np.zeros((k, b, graph.input_dim))
        return pgrad_out, g_in
    return pgrad_out


def vjp(graph: Graph, theta: ParamVector, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Per-sample c_i^T (dy_i/dtheta), shape (b, t); linear in the cotangent."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    vals = forward(graph, theta, x)
    c = np.asarray(cotangent, dtype=np.float64).reshape(1, x.shape[0], -1)
    return backward(graph, theta, vals, c)[0]


def batch_gradient(graph: Graph, theta: ParamVector, inputs: np.ndarray,
                   loss_grads: np.ndarray) -> np.ndarray:
    """Sum over samples of (dl/dy_i) (dy_i/dtheta): the plain batch gradient."""
    vals = forward(graph, theta, inputs)
    pg = backward(graph, theta, vals, loss_grads[None])
    return pg[0].sum(axis=0)


def per_sample_jacobian(graph: Graph, theta: ParamVector, inputs: np.ndarray) -> np.ndarray:
    """Stacked per-sample Jacobian of shape (b*m, t), sample-major rows."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None]
    b = inputs.shape[0]
    m = graph.output_dim
    t = graph.param_count
    vals = forward(graph, theta, inputs)
    cot = np.zeros((m, b, m))
    for j in range(m):
        cot[j, :, j] = 1.0
    jac = np.zeros((b, m, t))
    # (m, b, t) view of the sample-major stack, filled in one reverse sweep
    backward(graph, theta, vals, cot, pgrad_out=jac.transpose(1, 0, 2))
    return jac.reshape(b * m, t)
