"""Dense float64 kernels and a reverse-mode gradient tape.

Everything the recurrent models need is built from a small set of primitive
operations recorded on a :class:`GradientTape`. Each primitive knows how to
push gradients back to its inputs, so the full backward pass is just a walk
over the tape in reverse execution order. A central finite-difference
estimator is provided as an independent oracle for gradient verification.

All kernels operate on 64-bit floats; gradient checks at the tolerances used
in the test suite are not feasible in single precision. Ops accept an
optional ``tape`` argument: with ``tape=None`` they compute values only,
which is the evaluation path.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when a caller violates an operation's contract."""


class Tensor:
    """A dense float64 array plus the graph metadata needed for backprop.

    Leaf tensors (parameters, constants) are created directly; interior
    tensors are created by the ops below, which attach the inputs and the
    local backward rule.
    """

    __slots__ = ("data", "grad", "_inputs", "_backward")

    def __init__(self, data, _inputs=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._inputs = _inputs
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return "Tensor(shape=%s)" % (self.shape,)


def tensor(data):
    return Tensor(data)


def zeros(shape):
    return Tensor(np.zeros(shape))


class GradientTape:
    """Ordered record of primitive operations plus per-parameter gradients.

    One tape per training step. ``backward`` may be called repeatedly; each
    call starts from a clean gradient state, so replay is idempotent.
    """

    def __init__(self):
        self.nodes = []
        self.watched = []

    def watch(self, t):
        """Mark ``t`` as a parameter whose gradient should be reported."""
        self.watched.append(t)

    def record(self, t):
        self.nodes.append(t)
        return t

    def backward(self, loss):
        """Accumulate d(loss)/d(param) for every watched parameter.

        ``loss`` must be a scalar tensor. Returns a dict mapping each watched
        tensor to its gradient array (zeros if the parameter does not reach
        the loss).
        """
        if not isinstance(loss, Tensor) or loss.data.shape != ():
            raise ContractError(
                "backward requires a scalar loss node, got shape %s"
                % (getattr(loss, "data", np.empty(0)).shape,))
        # Clear any state from a previous replay.
        for node in self.nodes:
            node.grad = None
            for inp in node._inputs:
                if isinstance(inp, Tensor):
                    inp.grad = None
        for p in self.watched:
            p.grad = None
        loss.grad = np.ones(())
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward()
        out = {}
        for p in self.watched:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            out[p] = p.grad
        return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _emit(tape, out):
    if tape is not None:
        tape.record(out)
    return out


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def matvec(a, x, tape=None):
    """Matrix-vector product ``a @ x``."""
    if a.data.ndim != 2 or x.data.ndim != 1 or a.data.shape[1] != x.data.shape[0]:
        raise ShapeError("matvec: cannot multiply %s by %s"
                         % (a.data.shape, x.data.shape))
    out = Tensor(np.dot(a.data, x.data), (a, x))

    def backward():
        g = out.grad
        _accum(a, np.outer(g, x.data))
        _accum(x, np.dot(a.data.T, g))
    out._backward = backward
    return _emit(tape, out)


def add(a, b, tape=None):
    if a.data.shape != b.data.shape:
        raise ShapeError("add: shape mismatch %s vs %s"
                         % (a.data.shape, b.data.shape))
    out = Tensor(a.data + b.data, (a, b))

    def backward():
        _accum(a, out.grad)
        _accum(b, out.grad)
    out._backward = backward
    return _emit(tape, out)


def mul(a, b, tape=None):
    if a.data.shape != b.data.shape:
        raise ShapeError("mul: shape mismatch %s vs %s"
                         % (a.data.shape, b.data.shape))
    out = Tensor(a.data * b.data, (a, b))

    def backward():
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)
    out._backward = backward
    return _emit(tape, out)


def scale(x, c, tape=None):
    """Multiply by a python-float constant (no gradient through ``c``)."""
    c = float(c)
    out = Tensor(x.data * c, (x,))

    def backward():
        _accum(x, out.grad * c)
    out._backward = backward
    return _emit(tape, out)


def mul_mask(x, mask, tape=None):
    """Elementwise product with a constant array (dropout masks)."""
    out = Tensor(x.data * mask, (x,))

    def backward():
        _accum(x, out.grad * mask)
    out._backward = backward
    return _emit(tape, out)


def concat(parts, tape=None):
    parts = tuple(parts)
    out = Tensor(np.concatenate([p.data for p in parts]), parts)
    sizes = [p.data.shape[0] for p in parts]

    def backward():
        g = out.grad
        off = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[off:off + n])
            off += n
    out._backward = backward
    return _emit(tape, out)


def dot(a, b, tape=None):
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise ShapeError("dot: need equal-length vectors, got %s and %s"
                         % (a.data.shape, b.data.shape))
    out = Tensor(np.dot(a.data, b.data), (a, b))

    def backward():
        g = out.grad
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    out._backward = backward
    return _emit(tape, out)


def gather_row(m, idx, tape=None):
    """Row ``m[idx]`` of a matrix; gradient scatters back into that row."""
    idx = int(idx)
    out = Tensor(m.data[idx].copy(), (m,))

    def backward():
        if m.grad is None:
            m.grad = np.zeros_like(m.data)
        m.grad[idx] += out.grad
    out._backward = backward
    return _emit(tape, out)


def slice_vec(x, start, stop, tape=None):
    out = Tensor(x.data[start:stop].copy(), (x,))

    def backward():
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[start:stop] += out.grad
    out._backward = backward
    return _emit(tape, out)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x, tape=None):
    out = Tensor(np.maximum(x.data, 0.0), (x,))

    def backward():
        # derivative at exactly 0 is taken from the positive side
        _accum(x, out.grad * (x.data >= 0.0))
    out._backward = backward
    return _emit(tape, out)


def prelu(x, alpha, tape=None):
    """PReLU with a learnable scalar slope (pass a float for a fixed slope)."""
    learnable = isinstance(alpha, Tensor)
    a = float(alpha.data) if learnable else float(alpha)
    pos = x.data >= 0.0
    out = Tensor(np.where(pos, x.data, a * x.data),
                 (x, alpha) if learnable else (x,))

    def backward():
        g = out.grad
        _accum(x, g * np.where(pos, 1.0, a))
        if learnable:
            _accum(alpha, np.sum(g * np.where(pos, 0.0, x.data)))
    out._backward = backward
    return _emit(tape, out)


def sigmoid(x, tape=None):
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, (x,))

    def backward():
        _accum(x, out.grad * s * (1.0 - s))
    out._backward = backward
    return _emit(tape, out)


def tanh(x, tape=None):
    t = np.tanh(x.data)
    out = Tensor(t, (x,))

    def backward():
        _accum(x, out.grad * (1.0 - t * t))
    out._backward = backward
    return _emit(tape, out)


def square(x, tape=None):
    out = Tensor(x.data * x.data, (x,))

    def backward():
        _accum(x, out.grad * 2.0 * x.data)
    out._backward = backward
    return _emit(tape, out)


def activate(x, kind, alpha=None, tape=None):
    """Elementwise activation dispatch: relu, prelu, sigmoid or tanh."""
    if kind == "relu":
        return relu(x, tape)
    if kind == "prelu":
        if alpha is None or not np.isfinite(
                alpha.data if isinstance(alpha, Tensor) else alpha):
            raise ContractError("prelu requires a finite slope")
        return prelu(x, alpha, tape)
    if kind == "sigmoid":
        return sigmoid(x, tape)
    if kind == "tanh":
        return tanh(x, tape)
    raise ValueError("unknown activation kind: %r" % (kind,))


# ---------------------------------------------------------------------------
# fused sequence cells
#
# The recurrent loops dominate the runtime, so the per-step updates are
# implemented as single tape nodes with hand-derived local backward rules.
# Gradients that cross between the user- and item-side networks still flow
# through the tape; every cell is checked against finite differences in the
# test suite.
# ---------------------------------------------------------------------------

def recurrent_cell(w, prev, h, x, b, tape=None):
    """One ReLU recurrence step: ``relu(w @ prev + h @ x + b)``."""
    if w.data.shape[1] != prev.data.shape[0] or h.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            "recurrent_cell: w %s / prev %s, h %s / x %s"
            % (w.data.shape, prev.data.shape, h.data.shape, x.data.shape))
    z = np.dot(w.data, prev.data) + np.dot(h.data, x.data) + b.data
    out = Tensor(np.maximum(z, 0.0), (w, prev, h, x, b))
    mask = z >= 0.0

    def backward():
        gz = out.grad * mask
        _accum(w, np.outer(gz, prev.data))
        _accum(prev, np.dot(w.data.T, gz))
        _accum(h, np.outer(gz, x.data))
        _accum(x, np.dot(h.data.T, gz))
        _accum(b, gz)
    out._backward = backward
    return _emit(tape, out)


def attention_cell(m, l, b, parts, tape=None):
    """Two-layer scorer ``sigmoid(m . tanh(l @ concat(parts) + b))``.

    ``parts`` is a sequence of vector tensors that are concatenated to form
    the fusion-layer input. Returns a scalar in (0, 1).
    """
    parts = tuple(parts)
    c = np.concatenate([p.data for p in parts])
    if l.data.shape[1] != c.shape[0]:
        raise ShapeError("attention_cell: fusion weight %s vs input %s"
                         % (l.data.shape, c.shape))
    t = np.tanh(np.dot(l.data, c) + b.data)
    s = np.dot(m.data, t)
    a = 1.0 / (1.0 + np.exp(-s))
    out = Tensor(np.asarray(a), (m, l, b) + parts)
    sizes = [p.data.shape[0] for p in parts]

    def backward():
        gs = out.grad * a * (1.0 - a)
        _accum(m, gs * t)
        gz = (gs * m.data) * (1.0 - t * t)
        _accum(l, np.outer(gz, c))
        _accum(b, gz)
        gc = np.dot(l.data.T, gz)
        off = 0
        for p, n in zip(parts, sizes):
            _accum(p, gc[off:off + n])
            off += n
    out._backward = backward
    return _emit(tape, out)


def gate_blend(a, prev, cand, tape=None):
    """Convex blend ``(1 - a) * prev + a * cand`` with scalar gate ``a``."""
    av = float(a.data)
    out = Tensor((1.0 - av) * prev.data + av * cand.data, (a, prev, cand))

    def backward():
        g = out.grad
        _accum(prev, g * (1.0 - av))
        _accum(cand, g * av)
        _accum(a, np.sum(g * (cand.data - prev.data)))
    out._backward = backward
    return _emit(tape, out)


def lstm_cell(wx, wh, b, x, h_prev, c_prev, tape=None):
    """One LSTM step; returns the packed vector ``[h_new; c_new]``.

    Gate pre-activations are stacked as [input; forget; output; candidate]
    along the rows of ``wx``/``wh``/``b``. Use :func:`slice_vec` to split the
    result.
    """
    n = h_prev.data.shape[0]
    if wx.data.shape[0] != 4 * n or wh.data.shape != (4 * n, n):
        raise ShapeError("lstm_cell: expected 4h-row gate weights, got wx %s wh %s"
                         % (wx.data.shape, wh.data.shape))
    z = np.dot(wx.data, x.data) + np.dot(wh.data, h_prev.data) + b.data
    i = 1.0 / (1.0 + np.exp(-z[:n]))
    f = 1.0 / (1.0 + np.exp(-z[n:2 * n]))
    o = 1.0 / (1.0 + np.exp(-z[2 * n:3 * n]))
    gbar = np.tanh(z[3 * n:])
    c_new = f * c_prev.data + i * gbar
    tc = np.tanh(c_new)
    h_new = o * tc
    out = Tensor(np.concatenate([h_new, c_new]), (wx, wh, b, x, h_prev, c_prev))

    def backward():
        gh = out.grad[:n]
        gc = out.grad[n:] + gh * o * (1.0 - tc * tc)
        dz = np.empty(4 * n)
        dz[:n] = gc * gbar * i * (1.0 - i)
        dz[n:2 * n] = gc * c_prev.data * f * (1.0 - f)
        dz[2 * n:3 * n] = gh * tc * o * (1.0 - o)
        dz[3 * n:] = gc * i * (1.0 - gbar * gbar)
        _accum(wx, np.outer(dz, x.data))
        _accum(x, np.dot(wx.data.T, dz))
        _accum(wh, np.outer(dz, h_prev.data))
        _accum(h_prev, np.dot(wh.data.T, dz))
        _accum(b, dz)
        _accum(c_prev, gc * f)
    out._backward = backward
    return _emit(tape, out)


def mean_squared_error(preds, targets, tape=None):
    """Fused mean of squared residuals over a batch of scalar predictions."""
    preds = tuple(preds)
    targets = np.asarray(targets, dtype=np.float64)
    if len(preds) != targets.shape[0] or len(preds) == 0:
        raise ContractError("mean_squared_error: %d predictions vs %d targets"
                            % (len(preds), targets.shape[0]))
    n = len(preds)
    resid = np.array([float(p.data) for p in preds]) - targets
    out = Tensor(np.asarray(np.mean(resid * resid)), preds)

    def backward():
        g = out.grad
        for p, r in zip(preds, resid):
            _accum(p, g * 2.0 * r / n)
    out._backward = backward
    return _emit(tape, out)


# ---------------------------------------------------------------------------
# fused sequence chains
#
# The cells above define one step; the chains below run a whole sequence as a
# single tape node, looping in numpy inside both passes. They are the hot
# path of training: per-step graph bookkeeping dominated the runtime before
# fusing. Each chain is tested against the composition of its per-step cell.
# ---------------------------------------------------------------------------

def gather_rows(m, idxs, tape=None):
    """Rows ``m[idxs]`` as a matrix; duplicate indices accumulate gradient."""
    idxs = np.asarray(idxs, dtype=np.intp)
    out = Tensor(m.data[idxs], (m,))

    def backward():
        if m.grad is None:
            m.grad = np.zeros_like(m.data)
        np.add.at(m.grad, idxs, out.grad)
    out._backward = backward
    return _emit(tape, out)


def rows_matvec(m, x, tape=None):
    """Apply ``m`` to every row of ``x``: returns ``x @ m.T``."""
    if m.data.ndim != 2 or x.data.ndim != 2 or m.data.shape[1] != x.data.shape[1]:
        raise ShapeError("rows_matvec: cannot apply %s to rows of %s"
                         % (m.data.shape, x.data.shape))
    out = Tensor(np.dot(x.data, m.data.T), (m, x))

    def backward():
        g = out.grad
        _accum(m, np.dot(g.T, x.data))
        _accum(x, np.dot(g, m.data))
    out._backward = backward
    return _emit(tape, out)


def relu_chain(w_in, h_rec, b, x, reverse=False, tape=None):
    """Full ReLU recurrence over the rows of ``x``; returns all states (T, h).

    Row t is ``relu(w_in @ x[t] + h_rec @ state + b)`` with a zero initial
    state, scanning left to right (or right to left when ``reverse``).
    """
    if x.data.ndim != 2:
        raise ShapeError("relu_chain expects a (T, d) input matrix")
    t_len = x.data.shape[0]
    n = b.data.shape[0]
    wi, hr, bd, xd = w_in.data, h_rec.data, b.data, x.data
    states = np.empty((t_len, n))
    masks = np.empty((t_len, n), dtype=bool)
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    s = np.zeros(n)
    for t in order:
        z = np.dot(wi, xd[t])
        z += np.dot(hr, s)
        z += bd
        masks[t] = z >= 0.0
        s = np.maximum(z, 0.0)
        states[t] = s
    out = Tensor(states, (w_in, h_rec, b, x))

    def backward():
        g = out.grad
        dwi = np.zeros_like(wi)
        dhr = np.zeros_like(hr)
        db = np.zeros_like(bd)
        dx = np.zeros_like(xd)
        carry = np.zeros(n)
        back = range(t_len) if reverse else range(t_len - 1, -1, -1)
        for t in back:
            gz = (g[t] + carry) * masks[t]
            if reverse:
                prev = states[t + 1] if t + 1 < t_len else None
            else:
                prev = states[t - 1] if t > 0 else None
            dwi += np.outer(gz, xd[t])
            if prev is not None:
                dhr += np.outer(gz, prev)
            db += gz
            dx[t] = np.dot(wi.T, gz)
            carry = np.dot(hr.T, gz)
        _accum(w_in, dwi)
        _accum(h_rec, dhr)
        _accum(b, db)
        _accum(x, dx)
    out._backward = backward
    return _emit(tape, out)


def attention_block(m, l, b, own_fwd, own_bwd, cross_f, cross_b, tape=None):
    """All attention scores of one side at once: a (T,) vector in (0, 1).

    Row t of the fusion input concatenates the own-side forward/backward
    summary states at t with the other side's whole-sequence summaries
    (constant across rows). Equivalent to one attention_cell per step.
    """
    t_len = own_fwd.data.shape[0]
    c = np.concatenate([own_fwd.data, own_bwd.data,
                        np.repeat(cross_f.data[None, :], t_len, axis=0),
                        np.repeat(cross_b.data[None, :], t_len, axis=0)],
                       axis=1)
    if l.data.shape[1] != c.shape[1]:
        raise ShapeError("attention_block: fusion weight %s vs input rows %s"
                         % (l.data.shape, c.shape))
    u = np.tanh(np.dot(c, l.data.T) + b.data)
    a = 1.0 / (1.0 + np.exp(-np.dot(u, m.data)))
    out = Tensor(a, (m, l, b, own_fwd, own_bwd, cross_f, cross_b))
    n = own_fwd.data.shape[1]

    def backward():
        gs = out.grad * a * (1.0 - a)
        _accum(m, np.dot(u.T, gs))
        gz = np.outer(gs, m.data) * (1.0 - u * u)
        _accum(l, np.dot(gz.T, c))
        _accum(b, np.sum(gz, axis=0))
        gc = np.dot(gz, l.data)
        _accum(own_fwd, gc[:, :n])
        _accum(own_bwd, gc[:, n:2 * n])
        _accum(cross_f, np.sum(gc[:, 2 * n:3 * n], axis=0))
        _accum(cross_b, np.sum(gc[:, 3 * n:], axis=0))
    out._backward = backward
    return _emit(tape, out)


def gated_chain(w, h_rec, b, x, scores, drop_mask=None, tape=None,
                states_out=None):
    """Attention-gated recurrence over the rows of ``x``; returns the final
    state.

    Per step: candidate ``relu(w @ state + h_rec @ x[t] + b)``, blended as
    ``(1 - a_t) * state + a_t * candidate``. ``scores`` is a (T,) tensor with
    every entry strictly inside (0, 1). Pass ``scores=None`` for the plain
    (ungated) recursion. ``drop_mask`` (T, h) is multiplied onto each step's
    output. ``states_out`` collects (prev, candidate, blended) arrays.
    """
    t_len = x.data.shape[0]
    n = b.data.shape[0]
    gated = scores is not None
    if gated:
        av = scores.data
        if av.shape != (t_len,):
            raise ContractError("need one attention score per step (%d steps)"
                                % t_len)
        if np.any(av <= 0.0) or np.any(av >= 1.0):
            bad = av[(av <= 0.0) | (av >= 1.0)][0]
            raise ContractError("attention score %r outside (0, 1)" % bad)
    wd, hd, bd, xd = w.data, h_rec.data, b.data, x.data
    prevs = np.zeros((t_len, n))     # state entering each step (post-dropout)
    cands = np.empty((t_len, n))
    masks = np.empty((t_len, n), dtype=bool)
    s = np.zeros(n)
    for t in range(t_len):
        prevs[t] = s
        z = np.dot(wd, s)
        z += np.dot(hd, xd[t])
        z += bd
        masks[t] = z >= 0.0
        cand = np.maximum(z, 0.0)
        cands[t] = cand
        blended = (1.0 - av[t]) * s + av[t] * cand if gated else cand
        if states_out is not None:
            states_out.append((prevs[t].copy(), cand.copy(), blended.copy()))
        s = blended * drop_mask[t] if drop_mask is not None else blended
    inputs = (w, h_rec, b, x, scores) if gated else (w, h_rec, b, x)
    out = Tensor(s, inputs)

    def backward():
        dw = np.zeros_like(wd)
        dh = np.zeros_like(hd)
        db = np.zeros_like(bd)
        dx = np.zeros_like(xd)
        da = np.zeros(t_len) if gated else None
        carry = out.grad
        for t in range(t_len - 1, -1, -1):
            gp = carry * drop_mask[t] if drop_mask is not None else carry
            if gated:
                da[t] = np.dot(gp, cands[t] - prevs[t])
                gc = gp * av[t]
                gprev = gp * (1.0 - av[t])
            else:
                gc = gp
                gprev = 0.0
            gz = gc * masks[t]
            dw += np.outer(gz, prevs[t])
            dh += np.outer(gz, xd[t])
            db += gz
            dx[t] = np.dot(hd.T, gz)
            carry = gprev + np.dot(wd.T, gz)
        _accum(w, dw)
        _accum(h_rec, dh)
        _accum(b, db)
        _accum(x, dx)
        if gated:
            _accum(scores, da)
    out._backward = backward
    return _emit(tape, out)


def lstm_chain(wx, wh, b, x, drop_mask=None, tape=None):
    """LSTM over the rows of ``x``; returns the final hidden state.

    Gate pre-activations stack as [input; forget; output; candidate] like
    :func:`lstm_cell`. ``drop_mask`` (T, h) applies to each step's hidden
    output (the cell state is never dropped).
    """
    t_len = x.data.shape[0]
    n = wh.data.shape[1]
    wxd, whd, bd, xd = wx.data, wh.data, b.data, x.data
    i_s = np.empty((t_len, n))
    f_s = np.empty((t_len, n))
    o_s = np.empty((t_len, n))
    g_s = np.empty((t_len, n))
    c_s = np.empty((t_len, n))
    tc_s = np.empty((t_len, n))
    h_prevs = np.zeros((t_len, n))
    c_prev = np.zeros(n)
    h = np.zeros(n)
    for t in range(t_len):
        h_prevs[t] = h
        z = np.dot(wxd, xd[t]) + np.dot(whd, h) + bd
        i = 1.0 / (1.0 + np.exp(-z[:n]))
        f = 1.0 / (1.0 + np.exp(-z[n:2 * n]))
        o = 1.0 / (1.0 + np.exp(-z[2 * n:3 * n]))
        g = np.tanh(z[3 * n:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if drop_mask is not None:
            h = h * drop_mask[t]
        i_s[t], f_s[t], o_s[t], g_s[t] = i, f, o, g
        c_s[t], tc_s[t] = c, tc
        c_prev = c
    out = Tensor(h, (wx, wh, b, x))

    def backward():
        dwx = np.zeros_like(wxd)
        dwh = np.zeros_like(whd)
        db = np.zeros_like(bd)
        dx = np.zeros_like(xd)
        gh_carry = out.grad
        gc_carry = np.zeros(n)
        dz = np.empty(4 * n)
        for t in range(t_len - 1, -1, -1):
            gh = gh_carry * drop_mask[t] if drop_mask is not None else gh_carry
            gc = gc_carry + gh * o_s[t] * (1.0 - tc_s[t] * tc_s[t])
            c_prev_t = c_s[t - 1] if t > 0 else np.zeros(n)
            dz[:n] = gc * g_s[t] * i_s[t] * (1.0 - i_s[t])
            dz[n:2 * n] = gc * c_prev_t * f_s[t] * (1.0 - f_s[t])
            dz[2 * n:3 * n] = gh * tc_s[t] * o_s[t] * (1.0 - o_s[t])
            dz[3 * n:] = gc * i_s[t] * (1.0 - g_s[t] * g_s[t])
            dwx += np.outer(dz, xd[t])
            dwh += np.outer(dz, h_prevs[t])
            db += dz
            dx[t] = np.dot(wxd.T, dz)
            gh_carry = np.dot(whd.T, dz)
            gc_carry = gc * f_s[t]
        _accum(wx, dwx)
        _accum(wh, dwh)
        _accum(b, db)
        _accum(x, dx)
    out._backward = backward
    return _emit(tape, out)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def max_relative_error(analytic, estimate, floor=1e-5):
    """Worst relative gap between two gradient arrays.

    The denominator is floored at the finite-difference noise scale (the
    step size by default): below it, a central difference at h=1e-5 in
    double precision carries ~1e-10 absolute roundoff, so raw ratios there
    measure noise rather than gradient quality.
    """
    analytic = np.asarray(analytic)
    estimate = np.asarray(estimate)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(estimate)), floor)
    return float(np.max(np.abs(analytic - estimate) / denom))


def finite_difference(f, params, h=1e-5):
    """Central-difference gradient estimate ``(f(p+h) - f(p-h)) / 2h``.

    ``f`` is a zero-argument callable returning a scalar; it must read the
    parameter values live, because each coordinate of each tensor in
    ``params`` is perturbed in place and restored. ``params`` may be a dict
    of tensors or a sequence of tensors; the result mirrors its structure.
    """
    if h <= 0:
        raise ContractError("finite_difference step must be positive")
    if isinstance(params, dict):
        return {k: finite_difference(f, [t], h)[0] for k, t in params.items()}
    grads = []
    for t in params:
        flat = t.data.reshape(-1)
        g = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = float(f())
            flat[k] = orig - h
            fm = float(f())
            flat[k] = orig
            g[k] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(t.data.shape))
    return grads
