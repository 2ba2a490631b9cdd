"""Hot loss/gradient kernels for flat parameter vectors.

Two interchangeable backends evaluate the same objectives:

* ``numba``: per-example loops compiled with ``@njit``; the fast path for
  the small dense problems the trainer and the convex solver iterate on.
* ``numpy``: batched array code delegating to :mod:`resnet_landscape.model`.

The numba path is used when numba imports and the environment variable
``RESNET_LANDSCAPE_DISABLE_JIT`` is unset or ``0``.  Both paths are
deterministic; they agree to rounding but not bit-for-bit.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


__all__ = ["HAVE_NUMBA", "jit_enabled", "backend_name", "ResNetObjective", "LinearObjective", "jit_descent"]

_FALSY = ("", "0", "false", "no", "off")


def jit_enabled():
    flag = os.environ.get("RESNET_LANDSCAPE_DISABLE_JIT", "0").strip().lower()
    return HAVE_NUMBA and flag in _FALSY


def backend_name():
    return "numba" if jit_enabled() else "numpy"


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _act(code, u):
    if code == 0:
        if u > 0.0:
            return u, 1.0
        return 0.0, 0.0
    if code == 1:
        t = np.tanh(u)
        return t, 1.0 - t * t
    if code == 2:
        if u >= 0.0:
            s = 1.0 / (1.0 + np.exp(-u))
        else:
            e = np.exp(u)
            s = e / (1.0 + e)
        return s, s * (1.0 - s)
    return u, 1.0


@njit(cache=True)
def _row_loss(code, h, y, d):
    """Loss of one example; writes dl/dh into ``d``."""
    n = h.shape[0]
    val = 0.0
    if code == 0:
        for k in range(n):
            r = h[k] - y[k]
            val += r * r
            d[k] = 2.0 * r
    elif code == 1:
        t = h[0]
        if t >= 0.0:
            e = np.exp(-t)
            val = t + np.log1p(e) - y[0] * t
            d[0] = 1.0 / (1.0 + e) - y[0]
        else:
            e = np.exp(t)
            val = np.log1p(e) - y[0] * t
            d[0] = e / (1.0 + e) - y[0]
    elif code == 2:
        shift = h[0]
        for k in range(1, n):
            if h[k] > shift:
                shift = h[k]
        s = 0.0
        for k in range(n):
            d[k] = np.exp(h[k] - shift)
            s += d[k]
        val = shift + np.log(s)
        for k in range(n):
            val -= y[k] * h[k]
            d[k] = d[k] / s - y[k]
    else:
        for k in range(n):
            t = y[k] * h[k]
            if t >= 1.0:
                d[k] = 0.0
            elif t >= 0.0:
                val += 0.5 * (1.0 - t) * (1.0 - t)
                d[k] = y[k] * (t - 1.0)
            else:
                val += 0.5 - t
                d[k] = -y[k]
    return val


@njit(cache=True)
def _nb_resnet(flat, X, Y, offs, rows, cols, meta, want_grad):
    d_x = meta[0]
    d_y = meta[1]
    d_z = meta[2]
    depth = meta[3]
    core = meta[4]
    act = meta[5]
    skip = meta[6]
    bias = meta[7]
    loss_code = meta[8]
    m = X.shape[0]
    inv_m = 1.0 / m
    oW = offs[0]
    oV = offs[1]

    stage_off = np.zeros(depth + 1, dtype=np.int64)
    maxw = d_x
    for l in range(depth):
        w = rows[3] if skip == 1 else rows[2 + l]
        stage_off[l + 1] = stage_off[l] + w
        if w > maxw:
            maxw = w
    acts = np.empty(stage_off[depth])
    ders = np.empty(stage_off[depth])
    zc = np.empty(maxw)
    z = np.zeros(d_z)
    xt = np.empty(d_x)
    h = np.empty(d_y)
    d = np.empty(d_y)
    gxt = np.empty(d_x)
    g = np.empty(maxw)
    gn = np.empty(maxw)
    grad = np.zeros(flat.shape[0] if want_grad else 0)
    total = 0.0

    for i in range(m):
        x = X[i]
        # residual stack
        if depth > 0:
            if skip == 1:
                oE = offs[2]
                w = rows[2]
                # column-outer products: the inner loops walk contiguous memory
                for r in range(w):
                    zc[r] = 0.0
                for c in range(d_x):
                    xc = x[c]
                    col = oE + c * w
                    for r in range(w):
                        zc[r] += flat[col + r] * xc
                for l in range(depth):
                    oA = offs[3 + l]
                    base = stage_off[l]
                    for r in range(w):
                        a, da = _act(act, zc[r])
                        acts[base + r] = a
                        ders[base + r] = da
                    for c in range(w):
                        ac = acts[base + c]
                        col = oA + c * w
                        for r in range(w):
                            zc[r] += flat[col + r] * ac
                for r in range(w):
                    z[r] = zc[r]
            else:
                for l in range(depth):
                    oA = offs[2 + l]
                    nr = rows[2 + l]
                    nc = cols[2 + l]
                    base = stage_off[l]
                    pbase = stage_off[l - 1] if l > 0 else 0
                    for r in range(nr):
                        zc[r] = 0.0
                    for c in range(nc):
                        inp = x[c] if l == 0 else acts[pbase + c]
                        col = oA + c * nr
                        for r in range(nr):
                            zc[r] += flat[col + r] * inp
                    for r in range(nr):
                        a, da = _act(act, zc[r])
                        acts[base + r] = a
                        ders[base + r] = da
                last = stage_off[depth - 1]
                for r in range(core):
                    z[r] = acts[last + r]
        if bias == 1:
            z[d_z - 1] = 1.0
        # output h = W (x + V z)
        for r in range(d_x):
            xt[r] = x[r]
        for c in range(d_z):
            zv = z[c]
            col = oV + c * d_x
            for r in range(d_x):
                xt[r] += flat[col + r] * zv
        for r in range(d_y):
            h[r] = 0.0
        for c in range(d_x):
            xc = xt[c]
            col = oW + c * d_y
            for r in range(d_y):
                h[r] += flat[col + r] * xc
        total += _row_loss(loss_code, h, Y[i], d)
        if not want_grad:
            continue
        for k in range(d_y):
            d[k] *= inv_m
        # dW, then back through W
        for c in range(d_x):
            for r in range(d_y):
                grad[oW + r + c * d_y] += d[r] * xt[c]
        for c in range(d_x):
            s = 0.0
            for r in range(d_y):
                s += d[r] * flat[oW + r + c * d_y]
            gxt[c] = s
        for c in range(d_z):
            for r in range(d_x):
                grad[oV + r + c * d_x] += gxt[r] * z[c]
        if depth == 0:
            continue
        for c in range(core):
            s = 0.0
            for r in range(d_x):
                s += gxt[r] * flat[oV + r + c * d_x]
            g[c] = s
        if skip == 1:
            w = rows[2]
            for l in range(depth - 1, -1, -1):
                oA = offs[3 + l]
                base = stage_off[l]
                for c in range(w):
                    for r in range(w):
                        grad[oA + r + c * w] += g[r] * acts[base + c]
                for c in range(w):
                    s = 0.0
                    for r in range(w):
                        s += g[r] * flat[oA + r + c * w]
                    gn[c] = g[c] + ders[base + c] * s
                for c in range(w):
                    g[c] = gn[c]
            oE = offs[2]
            for c in range(d_x):
                for r in range(w):
                    grad[oE + r + c * w] += g[r] * x[c]
        else:
            for l in range(depth - 1, -1, -1):
                oA = offs[2 + l]
                nr = rows[2 + l]
                nc = cols[2 + l]
                base = stage_off[l]
                pbase = stage_off[l - 1] if l > 0 else 0
                for r in range(nr):
                    g[r] *= ders[base + r]
                for c in range(nc):
                    inp = x[c] if l == 0 else acts[pbase + c]
                    s = 0.0
                    for r in range(nr):
                        grad[oA + r + c * nr] += g[r] * inp
                        s += g[r] * flat[oA + r + c * nr]
                    gn[c] = s
                for c in range(nc):
                    g[c] = gn[c]
    return total * inv_m, grad


@njit(cache=True)
def _nb_linear(flat, Phi, Y, loss_code, want_grad):
    m = Phi.shape[0]
    n = Phi.shape[1]
    d_y = Y.shape[1]
    inv_m = 1.0 / m
    h = np.empty(d_y)
    d = np.empty(d_y)
    grad = np.zeros(flat.shape[0] if want_grad else 0)
    total = 0.0
    for i in range(m):
        p = Phi[i]
        for r in range(d_y):
            s = 0.0
            for c in range(n):
                s += flat[r + c * d_y] * p[c]
            h[r] = s
        total += _row_loss(loss_code, h, Y[i], d)
        if want_grad:
            for c in range(n):
                for r in range(d_y):
                    grad[r + c * d_y] += d[r] * p[c] * inv_m
    return total * inv_m, grad


# ---------------------------------------------------------------------------
# compiled descent loop (same algorithm as optim.armijo_descent)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _nb_descent(
    X, Y, offs, rows, cols, meta, x0, grad_tol, max_iter, lbfgs, memory, step0, warm, shrink, c1, max_halvings, max_flat, fs, gs
):
    """Returns ``(x, f, gnorm, iterations, status)``; status 0 converged, 1 max_iter, 2 stalled, 3 non-finite.

    ``fs[k]``/``gs[k]`` receive loss and gradient norm after ``k`` accepted steps.
    The objective is always the ResNet kernel; linear models enter as
    depth-0 stacks (see ``LinearObjective``).
    """
    n = x0.shape[0]
    x = x0.copy()
    f, g = _nb_resnet(x, X, Y, offs, rows, cols, meta, True)
    gnorm = np.sqrt(np.dot(g, g))
    fs[0] = f
    gs[0] = gnorm
    if not (np.isfinite(f) and np.isfinite(gnorm)):
        return x, f, gnorm, 0, 3
    S = np.zeros((memory, n))
    Yv = np.zeros((memory, n))
    rho = np.zeros(memory)
    alpha = np.zeros(memory)
    count = 0
    head = 0  # slot of the next pair
    last_step = step0
    it = 0
    flat = 0  # consecutive accepted steps that left f unchanged
    d = np.empty(n)
    while gnorm > grad_tol:
        if it >= max_iter:
            return x, f, gnorm, it, 1
        if lbfgs and count > 0:
            for k in range(n):
                d[k] = g[k]
            for j in range(count):
                i = (head - 1 - j) % memory
                alpha[i] = rho[i] * np.dot(S[i], d)
                for k in range(n):
                    d[k] -= alpha[i] * Yv[i, k]
            newest = (head - 1) % memory
            gamma = np.dot(S[newest], Yv[newest]) / np.dot(Yv[newest], Yv[newest])
            for k in range(n):
                d[k] *= gamma
            for j in range(count - 1, -1, -1):
                i = (head - 1 - j) % memory
                b = rho[i] * np.dot(Yv[i], d)
                for k in range(n):
                    d[k] += (alpha[i] - b) * S[i, k]
            for k in range(n):
                d[k] = -d[k]
        else:
            for k in range(n):
                d[k] = -g[k]
        slope = np.dot(g, d)
        if slope >= 0.0:
            count = 0
            for k in range(n):
                d[k] = -g[k]
            slope = -gnorm * gnorm
        if warm and not lbfgs:
            t = min(2.0 * last_step, 1e12)
        else:
            t = step0
        accepted = False
        x_new = np.empty(n)
        for _ in range(max_halvings):
            for k in range(n):
                x_new[k] = x[k] + t * d[k]
            f_new = _nb_resnet(x_new, X, Y, offs, rows, cols, meta, False)[0]
            if f_new <= f + c1 * t * slope:
                accepted = True
                break
            t *= shrink
        if not accepted:
            if count > 0:
                count = 0
                continue
            return x, f, gnorm, it, 2
        f_new, g_new = _nb_resnet(x_new, X, Y, offs, rows, cols, meta, True)
        if not np.isfinite(f_new):
            return x, f, gnorm, it, 3
        if f_new < f:
            flat = 0
        else:
            flat += 1
        if lbfgs:
            sy = 0.0
            ss = 0.0
            yy = 0.0
            for k in range(n):
                sk = x_new[k] - x[k]
                yk = g_new[k] - g[k]
                sy += sk * yk
                ss += sk * sk
                yy += yk * yk
            if sy > 1e-12 * np.sqrt(ss) * np.sqrt(yy):
                for k in range(n):
                    S[head, k] = x_new[k] - x[k]
                    Yv[head, k] = g_new[k] - g[k]
                rho[head] = 1.0 / sy
                head = (head + 1) % memory
                if count < memory:
                    count += 1
        it += 1
        last_step = t
        x = x_new
        f = f_new
        g = g_new
        gnorm = np.sqrt(np.dot(g, g))
        fs[it] = f
        gs[it] = gnorm
        if flat >= max_flat and gnorm > grad_tol:
            return x, f, gnorm, it, 2
    return x, f, gnorm, it, 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _meta(layout, kind):
    cfg = layout.config
    return np.array(
        [
            layout.d_x,
            layout.d_y,
            cfg.out_dim,
            cfg.depth,
            cfg.core_dim,
            cfg.activation.code,
            int(cfg.use_skip),
            int(cfg.append_bias_unit),
            kind.code,
        ],
        dtype=np.int64,
    )


class ResNetObjective:
    """Empirical objective of the ResNet as a function of the flat parameter vector.

    Targets are validated once at construction; calls do no validation.
    """

    def __init__(self, data, layout, kind, use_jit=None):
        from .losses import LossKind, validate_targets

        self.kind = LossKind.parse(kind)
        self.X = np.ascontiguousarray(data.X)
        self.Y = np.ascontiguousarray(validate_targets(self.kind, data.Y))
        self.layout = layout
        self.use_jit = jit_enabled() if use_jit is None else (use_jit and HAVE_NUMBA)
        self._offs = np.ascontiguousarray(layout.offsets[:-1])
        self._rows = np.array([s[0] for s in layout.shapes], dtype=np.int64)
        self._cols = np.array([s[1] for s in layout.shapes], dtype=np.int64)
        self._meta = _meta(layout, self.kind)
        self._data = data
        self.nb_args = (self.X, self.Y, self._offs, self._rows, self._cols, self._meta)
        self.nb_pad = 0

    def _numpy(self, flat, want_grad):
        from .model import loss_and_grad, predict_batch
        from .losses import batch_loss

        params = self.layout.unpack(flat)
        if not want_grad:
            values, _ = batch_loss(self.kind, predict_batch(self.X, params, self.layout.config), self.Y)
            return float(np.mean(values)), None
        loss, g = loss_and_grad(self._data, params, self.layout.config, self.kind)
        return loss, self.layout.pack(g)

    def value(self, flat):
        if self.use_jit:
            return _nb_resnet(flat, self.X, self.Y, self._offs, self._rows, self._cols, self._meta, False)[0]
        return self._numpy(flat, False)[0]

    def value_grad(self, flat):
        if self.use_jit:
            return _nb_resnet(flat, self.X, self.Y, self._offs, self._rows, self._cols, self._meta, True)
        return self._numpy(flat, True)

    __call__ = value


class LinearObjective:
    """Objective ``(1/m) sum_i l(R phi_i, y_i)`` over ``vec(R)`` for fixed features ``Phi``."""

    def __init__(self, Phi, Y, kind, use_jit=None):
        from .losses import LossKind, validate_targets

        self.kind = LossKind.parse(kind)
        self.Phi = np.ascontiguousarray(Phi, dtype=np.float64)
        self.Y = np.ascontiguousarray(validate_targets(self.kind, Y))
        self.d_y = self.Y.shape[1]
        self.n = self.Phi.shape[1]
        self.use_jit = jit_enabled() if use_jit is None else (use_jit and HAVE_NUMBA)
        # for the compiled descent: R phi is a depth-0 stack h = R (phi + V z)
        # with z == 0, so the trailing V block (n entries) never moves
        n, d_y = self.n, self.d_y
        self.nb_args = (
            self.Phi,
            self.Y,
            np.array([0, d_y * n], dtype=np.int64),
            np.array([d_y, n], dtype=np.int64),
            np.array([n, 1], dtype=np.int64),
            np.array([n, d_y, 1, 0, 0, 3, 0, 0, self.kind.code], dtype=np.int64),
        )
        self.nb_pad = n

    def _numpy(self, flat, want_grad):
        from .losses import batch_loss

        R = flat.reshape(self.d_y, self.n, order="F")
        values, D = batch_loss(self.kind, self.Phi @ R.T, self.Y)
        loss = float(np.mean(values))
        if not want_grad:
            return loss, None
        return loss, ((D.T @ self.Phi) / self.Phi.shape[0]).reshape(-1, order="F")

    def value(self, flat):
        if self.use_jit:
            return _nb_linear(flat, self.Phi, self.Y, self.kind.code, False)[0]
        return self._numpy(flat, False)[0]

    def value_grad(self, flat):
        if self.use_jit:
            return _nb_linear(flat, self.Phi, self.Y, self.kind.code, True)
        return self._numpy(flat, True)

    __call__ = value


def jit_descent(objective, x0, grad_tol, max_iter, lbfgs, memory, step0, warm, shrink, c1, max_halvings, max_flat):
    """Run the compiled descent loop on an objective exposing ``nb_args``/``nb_pad``.

    Returns ``(x, f, gnorm, iterations, status_code, fs, gs)`` with the
    per-step traces truncated to ``iterations + 1`` entries.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    n = x0.size
    start = np.concatenate([x0, np.zeros(objective.nb_pad)])
    fs = np.empty(max_iter + 1)
    gs = np.empty(max_iter + 1)
    x, f, gnorm, it, code = _nb_descent(
        *objective.nb_args,
        start,
        float(grad_tol),
        int(max_iter),
        bool(lbfgs),
        int(max(memory, 1)),
        float(step0),
        bool(warm),
        float(shrink),
        float(c1),
        int(max_halvings),
        int(max_flat),
        fs,
        gs,
    )
    return x[:n].copy(), float(f), float(gnorm), int(it), int(code), fs[: it + 1], gs[: it + 1]
