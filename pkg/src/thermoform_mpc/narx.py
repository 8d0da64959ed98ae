"""Wavelet-network NARX identification, validation and linearization.

Each output channel is modelled as

    y = z . L + sum_k w_k psi(a_k (z_q - b_k)) + sum_k v_k phi(c_k (z_q - d_k)) + eps

where ``x`` is the z-scored regressor, ``z = P^T x`` its principal-axis
coordinates and ``z_q`` the leading ``q`` of them.  ``psi`` is the radial
Mexican hat and ``phi`` the Gaussian.  ``P`` is orthonormal, so the linear
term spans every regressor; by default its leading axes are the principal
directions of the channel's own output and input lags, which is where the
units live.  All channels share the regressor layout and the normalization.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = "narx-wavenet 1"


class FitError(RuntimeError):
    pass


class BoundaryError(IndexError):
    """Not enough history to form a regressor."""


@dataclass(frozen=True)
class RegressorLayout:
    n: int = 2
    m: int = 2
    Z: int = 15
    H: int = 15

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.Z < 1 or self.H < 1:
            raise ValueError(f"invalid layout {self}")

    @property
    def dim(self) -> int:
        return self.Z * self.n + self.H * self.m

    @property
    def lag(self) -> int:
        return max(self.n, self.m)


def build_regressor(Y: np.ndarray, U: np.ndarray, layout: RegressorLayout, t: int) -> np.ndarray:
    """Regressor for predicting ``Y[t]``: ``[y_{t-1}, ..., y_{t-n}, u_{t-1}, ..., u_{t-m}]``,
    each lag block holding all channels."""
    if t < layout.lag or t > len(Y) or t > len(U):
        raise BoundaryError(f"t={t} needs lags 1..{layout.lag} within the history")
    ys = [Y[t - k] for k in range(1, layout.n + 1)]
    us = [U[t - k] for k in range(1, layout.m + 1)]
    return np.concatenate(ys + us).astype(float)


def regressor_matrix(Y: np.ndarray, U: np.ndarray, layout: RegressorLayout) -> np.ndarray:
    """Stacked regressors for ``t = lag .. T-1`` (one row per target sample)."""
    T, p = len(Y), layout.lag
    if T <= p:
        raise BoundaryError(f"series of length {T} too short for lag {p}")
    blocks = [Y[p - k:T - k] for k in range(1, layout.n + 1)]
    blocks += [U[p - k:T - k] for k in range(1, layout.m + 1)]
    return np.hstack(blocks).astype(float)


def mexican_hat(r: np.ndarray) -> np.ndarray:
    s = np.sum(r * r, axis=-1)
    return (r.shape[-1] - s) * np.exp(-0.5 * s)


def gaussian(r: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * np.sum(r * r, axis=-1))


@dataclass
class WaveletChannel:
    """One output channel. Unit arrays: dilation ``(K,)``, translation ``(K, q)``, weight ``(K,)``."""

    P: np.ndarray
    L: np.ndarray
    offset: float
    q: int
    wav_dil: np.ndarray = field(default_factory=lambda: np.zeros(0))
    wav_trans: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    wav_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sc_dil: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sc_trans: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    sc_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_units(self) -> int:
        return len(self.wav_weight) + len(self.sc_weight)


def _sq_dist(zq, dil, trans):
    """``||dil_k (z_n - trans_k)||^2`` for all rows and units, shape ``(N, K)``."""
    d2 = (np.sum(zq * zq, axis=1)[:, None] - 2.0 * zq @ trans.T
          + np.sum(trans * trans, axis=1)[None, :])
    return np.maximum(d2, 0.0) * dil[None, :] ** 2


def _eval_projected(ch: "WaveletChannel", z: np.ndarray) -> np.ndarray:
    y = z @ ch.L + ch.offset
    zq = z[:, :ch.q]
    if len(ch.wav_weight):
        s = _sq_dist(zq, ch.wav_dil, ch.wav_trans)
        y = y + ((ch.q - s) * np.exp(-0.5 * s)) @ ch.wav_weight
    if len(ch.sc_weight):
        s = _sq_dist(zq, ch.sc_dil, ch.sc_trans)
        y = y + np.exp(-0.5 * s) @ ch.sc_weight
    return y


def eval_channel(ch: WaveletChannel, x: np.ndarray) -> np.ndarray:
    """Channel output for normalized regressor(s) ``x`` (shape ``(dim,)`` or ``(N, dim)``)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    y = _eval_projected(ch, np.atleast_2d(x) @ ch.P)
    return y[0] if single else y


def channel_gradient(ch: WaveletChannel, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`eval_channel` with respect to the normalized regressor."""
    x = np.asarray(x, dtype=float)
    z = ch.P.T @ x
    zq = z[:ch.q]
    g = ch.L.copy()
    gq = np.zeros(ch.q)
    if len(ch.wav_weight):
        r = ch.wav_dil[:, None] * (zq[None, :] - ch.wav_trans)
        s = np.sum(r * r, axis=1)
        coef = -(2.0 + ch.q - s) * np.exp(-0.5 * s) * ch.wav_weight * ch.wav_dil
        gq += coef @ r
    if len(ch.sc_weight):
        r = ch.sc_dil[:, None] * (zq[None, :] - ch.sc_trans)
        s = np.sum(r * r, axis=1)
        coef = -np.exp(-0.5 * s) * ch.sc_weight * ch.sc_dil
        gq += coef @ r
    g[:ch.q] += gq
    return ch.P @ g


@dataclass
class NarxModel:
    layout: RegressorLayout
    channels: list[WaveletChannel]
    x_mean: np.ndarray
    x_scale: np.ndarray

    def __post_init__(self):
        if len(self.channels) != self.layout.Z:
            raise ValueError(f"expected {self.layout.Z} channels, got {len(self.channels)}")
        if np.any(self.x_scale <= 0):
            raise ValueError("normalization scales must be positive")

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Outputs for raw regressor(s); ``(dim,) -> (Z,)`` or ``(N, dim) -> (N, Z)``."""
        x = self.normalize(X)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        cache = {}
        out = np.empty((len(x), len(self.channels)))
        for j, ch in enumerate(self.channels):
            key = id(ch.P)
            if key not in cache:
                cache[key] = x @ ch.P
            out[:, j] = _eval_projected(ch, cache[key])
        return out[0] if single else out

    def jacobian(self, X: np.ndarray) -> np.ndarray:
        """d output / d raw regressor, shape ``(Z, dim)``."""
        x = self.normalize(X)
        return np.stack([channel_gradient(ch, x) for ch in self.channels]) / self.x_scale

    # --- persistence -------------------------------------------------------

    def dumps(self) -> str:
        buf = io.StringIO()
        lay = self.layout
        buf.write(f"# {FORMAT_VERSION}\n")
        buf.write(f"layout {lay.n} {lay.m} {lay.Z} {lay.H}\n")
        _write_vec(buf, "x_mean", self.x_mean)
        _write_vec(buf, "x_scale", self.x_scale)
        for j, ch in enumerate(self.channels):
            buf.write(f"channel {j} {ch.P.shape[1]} {ch.q} {len(ch.wav_weight)} {len(ch.sc_weight)}\n")
            buf.write(f"offset {_f(ch.offset)}\n")
            _write_vec(buf, "L", ch.L)
            for row in ch.P:
                _write_vec(buf, "P", row)
            for d, b, w in zip(ch.wav_dil, ch.wav_trans, ch.wav_weight):
                _write_vec(buf, "wavelet", np.concatenate([[d, w], b]))
            for d, b, w in zip(ch.sc_dil, ch.sc_trans, ch.sc_weight):
                _write_vec(buf, "scaling", np.concatenate([[d, w], b]))
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "NarxModel":
        lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not text.startswith(f"# {FORMAT_VERSION}"):
            raise ValueError("unsupported model file version")
        it = iter(lines)
        tok = next(it)
        layout = RegressorLayout(*map(int, tok[1:5]))
        x_mean = _read_vec(next(it), "x_mean")
        x_scale = _read_vec(next(it), "x_scale")
        channels = []
        for _ in range(layout.Z):
            head = next(it)
            if head[0] != "channel":
                raise ValueError(f"expected channel record, got {head[0]!r}")
            p, q, kw, ks = map(int, head[2:6])
            offset = float(next(it)[1])
            L = _read_vec(next(it), "L")
            P = np.array([_read_vec(next(it), "P") for _ in range(layout.dim)])
            wav = np.array([_read_vec(next(it), "wavelet") for _ in range(kw)]).reshape(kw, 2 + q)
            sc = np.array([_read_vec(next(it), "scaling") for _ in range(ks)]).reshape(ks, 2 + q)
            channels.append(WaveletChannel(
                P=P.reshape(layout.dim, p), L=L, offset=offset, q=q,
                wav_dil=wav[:, 0], wav_weight=wav[:, 1], wav_trans=wav[:, 2:],
                sc_dil=sc[:, 0], sc_weight=sc[:, 1], sc_trans=sc[:, 2:],
            ))
        for ch in channels[1:]:
            # share identical projections so prediction projects once
            if np.array_equal(ch.P, channels[0].P):
                ch.P = channels[0].P
        return cls(layout, channels, x_mean, x_scale)

    @classmethod
    def load(cls, path) -> "NarxModel":
        with open(path) as fh:
            return cls.loads(fh.read())


def _f(v: float) -> str:
    return format(float(v), ".17g")


def _write_vec(buf, tag, v):
    buf.write(tag + " " + " ".join(_f(a) for a in np.ravel(v)) + "\n")


def _read_vec(tok, tag):
    if tok[0] != tag:
        raise ValueError(f"expected {tag!r} record, got {tok[0]!r}")
    return np.array([float(a) for a in tok[1:]])


# --- fitting ---------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    max_q: int = 20
    variance_kept: float = 0.999
    levels: int = 3
    min_occupancy: float = 0.002   # fraction of training rows a grid cell needs to host a unit
    unit_counts: tuple = (0, 10, 20, 40, 80)
    prune_tol: float = 1e-6
    val_fraction: float = 0.2
    subspace: str = "own_y"        # "own_y": channel's output lags; "own": also its input lags; "all": every regressor
    seed: int = 0  # unused by the deterministic fit; kept for manifests

    def validate(self) -> None:
        if self.subspace not in ("own", "own_y", "all"):
            raise ValueError(f"subspace must be 'own', 'own_y' or 'all', got {self.subspace!r}")
        if not 0 < self.variance_kept <= 1:
            raise ValueError("variance_kept must lie in (0, 1]")
        if self.max_q < 1 or self.levels < 0:
            raise ValueError("max_q must be >= 1 and levels >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if any(k < 0 for k in self.unit_counts) or not self.unit_counts:
            raise ValueError("unit_counts must be non-negative and non-empty")


@dataclass
class _Basis:
    P: np.ndarray
    q: int
    kind: np.ndarray       # 0 scaling, 1 wavelet
    dil: np.ndarray
    trans: np.ndarray      # in z coordinates


def own_columns(layout: RegressorLayout, j: int, inputs: bool = True) -> np.ndarray:
    """Regressor columns holding the lags of output ``j`` and of input ``j``."""
    cols = [k * layout.Z + j for k in range(layout.n)]
    if inputs and j < layout.H:
        cols += [layout.n * layout.Z + k * layout.H + j for k in range(layout.m)]
    return np.array(cols, dtype=int)


def _principal_axes(x: np.ndarray, cfg: FitConfig) -> tuple[np.ndarray, int, np.ndarray]:
    cov = x.T @ x / len(x)
    w, V = np.linalg.eigh(cov)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    # fix eigenvector signs so the basis is reproducible
    V = V * np.where(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])] < 0, -1.0, 1.0)
    w = np.clip(w, 0.0, None)
    frac = np.cumsum(w) / max(np.sum(w), 1e-300)
    q = int(min(cfg.max_q, np.searchsorted(frac, cfg.variance_kept - 1e-12) + 1, x.shape[1]))
    return V, q, w


def _dyadic_candidates(zq: np.ndarray, cfg: FitConfig):
    """Occupied cells of a dyadic lattice at levels ``0..levels``.

    Level ``j`` has cell width ``2**-j`` and units of dilation ``2**j``.  Only
    coordinates whose spread reaches the cell width are gridded; the others sit
    at the centroid of the cell's points.  Scaling units use level-0 cells,
    wavelets every level.  Within a level, cells are ranked by occupancy.
    """
    N = len(zq)
    need = max(2, int(np.ceil(cfg.min_occupancy * N)))
    spread = zq.std(axis=0)
    kinds, dils, trans = [], [], []
    for j in range(cfg.levels + 1):
        width = 2.0 ** -j
        active = spread >= width
        active[0] = True
        cells = np.floor(zq[:, active] / width).astype(np.int64)
        uniq, inv, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        sums = np.zeros((len(uniq), zq.shape[1]))
        np.add.at(sums, inv, zq)
        centres = sums / counts[:, None]
        centres[:, active] = (uniq + 0.5) * width
        keep = np.flatnonzero(counts >= need)
        # most populated first; cell index breaks ties
        keep = keep[np.lexsort(tuple(uniq[keep].T[::-1]) + (-counts[keep],))]
        for k in keep:
            if j == 0:
                kinds.append(0)
                dils.append(1.0)
                trans.append(centres[k])
            kinds.append(1)
            dils.append(2.0 ** j)
            trans.append(centres[k])
    return np.array(kinds, dtype=int), np.array(dils), np.array(trans).reshape(-1, zq.shape[1])


def _activations(zq: np.ndarray, kind, dil, trans) -> np.ndarray:
    s = _sq_dist(zq, dil, trans)
    g = np.exp(-0.5 * s)
    return np.where(kind[None, :] == 1, (zq.shape[1] - s) * g, g)


def _build_basis(x: np.ndarray, cols: np.ndarray, cfg: FitConfig) -> _Basis:
    """Orthonormal ``P`` whose leading columns are the principal axes of ``x[:, cols]``.

    The remaining columns complete the basis with unit vectors, so the linear
    term still spans every regressor while the units live in ``q`` dimensions.
    """
    dim = x.shape[1]
    V, q, w = _principal_axes(x[:, cols], cfg)
    P = np.zeros((dim, dim))
    P[cols, :len(cols)] = V
    rest = np.setdiff1d(np.arange(dim), cols)
    P[rest, len(cols) + np.arange(len(rest))] = 1.0
    zs = float(np.sqrt(max(w[0], 1e-300)))
    kind, dil, trans = _dyadic_candidates(x[:, cols] @ V[:, :q] / zs, cfg)
    # move units to unscaled coordinates: a (z/s - b) == (a/s)(z - s b)
    return _Basis(P, q, kind, dil / zs, trans * zs)


def _order_units(kind: np.ndarray, dil: np.ndarray) -> np.ndarray:
    """Candidate order used for prefix selection: scaling units, then wavelets
    by level, alternating across levels by within-level rank."""
    idx = np.arange(len(kind))
    sc = idx[kind == 0]
    wav = idx[kind == 1]
    levels = np.unique(dil[wav])
    per_level = [wav[dil[wav] == lv] for lv in levels]
    rr = []
    for r in range(max((len(p) for p in per_level), default=0)):
        rr += [p[r] for p in per_level if r < len(p)]
    # scaling and wavelet candidates alternate as well
    out = []
    for r in range(max(len(sc), len(rr))):
        if r < len(sc):
            out.append(sc[r])
        if r < len(rr):
            out.append(rr[r])
    return np.array(out, dtype=int)


def _solve(D: np.ndarray, y: np.ndarray) -> np.ndarray:
    sol, *_ = np.linalg.lstsq(D, y, rcond=None)
    return sol


def _nrmse(y, yhat):
    rng = np.max(y) - np.min(y)
    return np.sqrt(np.mean((y - yhat) ** 2)) / rng if rng > 0 else np.inf


def fit_regression(X: np.ndarray, Y: np.ndarray, layout: RegressorLayout,
                   cfg: FitConfig = FitConfig()) -> NarxModel:
    """Fit every output channel on a regressor matrix ``X`` (rows) and targets ``Y``."""
    cfg.validate()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if X.shape[1] != layout.dim or Y.shape[1] != layout.Z:
        raise ValueError("regressor/target shapes do not match the layout")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    x = (X - mean) / scale
    n_val = int(round(cfg.val_fraction * len(x)))
    n_tr = len(x) - n_val
    lin = np.hstack([x, np.ones((len(x), 1))])
    full_rank = np.linalg.matrix_rank(lin[:n_tr]) == lin.shape[1]

    shared = _build_basis(x, np.arange(layout.dim), cfg) if cfg.subspace == "all" else None
    channels = []
    for j in range(layout.Z):
        if not full_rank:
            raise FitError(f"channel {j + 1}: regressor matrix is rank deficient")
        basis = shared if shared is not None else _build_basis(
            x, own_columns(layout, j, cfg.subspace == "own"), cfg)
        z = x @ basis.P
        order = _order_units(basis.kind, basis.dil)
        A_all = _activations(z[:, :basis.q], basis.kind[order], basis.dil[order], basis.trans[order])
        lin_z = np.hstack([z, np.ones((len(z), 1))])
        y = Y[:, j]
        best_k, best_err = 0, np.inf
        for K in cfg.unit_counts:
            K = min(K, A_all.shape[1])
            D = np.hstack([lin_z, A_all[:, :K]])
            sol = _solve(D[:n_tr], y[:n_tr])
            err = _nrmse(y[n_tr:], D[n_tr:] @ sol) if n_val else 0.0
            if err < best_err - 1e-12:
                best_k, best_err = K, err
        channels.append(_fit_channel(lin_z, A_all[:, :best_k], order[:best_k], y, basis, cfg))
    return NarxModel(layout, channels, mean, scale)


def _fit_channel(lin, A, units, y, basis: _Basis, cfg: FitConfig) -> WaveletChannel:
    D = np.hstack([lin, A])
    sol = _solve(D, y)
    dim = lin.shape[1] - 1
    keep = np.arange(A.shape[1])
    if len(keep):
        w = np.abs(sol[dim + 1:])
        keep = keep[w >= cfg.prune_tol * np.max(w)]
        if len(keep) < A.shape[1]:
            sol = _solve(np.hstack([lin, A[:, keep]]), y)
    L, offset, w = sol[:dim], sol[dim], sol[dim + 1:]
    u = units[keep]
    kind = basis.kind[u]
    q = basis.q
    wav, sc = kind == 1, kind == 0
    return WaveletChannel(
        P=basis.P, L=L, offset=float(offset), q=q,
        wav_dil=basis.dil[u][wav], wav_trans=basis.trans[u][wav].reshape(-1, q), wav_weight=w[wav],
        sc_dil=basis.dil[u][sc], sc_trans=basis.trans[u][sc].reshape(-1, q), sc_weight=w[sc],
    )


@dataclass
class Dataset:
    dt: float
    U: np.ndarray
    Y: np.ndarray
    train_fraction: float = 0.75

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if len(self.U) != len(self.Y):
            raise ValueError("U and Y must have equal row counts")
        if not self.dt > 0:
            raise ValueError("sample time must be positive")

    @property
    def split(self) -> int:
        return int(round(self.train_fraction * len(self.Y)))

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.split
        return self.U[:s], self.Y[:s]

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.split
        return self.U[s:], self.Y[s:]


def fit_narx(data: Dataset, layout: RegressorLayout = RegressorLayout(),
             cfg: FitConfig = FitConfig()) -> NarxModel:
    U, Y = data.train()
    X = regressor_matrix(Y, U, layout)
    if len(X) < 10 * (layout.dim + 1):
        raise FitError(f"training split has {len(X)} rows; need at least {10 * (layout.dim + 1)}")
    return fit_regression(X, Y[layout.lag:], layout, cfg)


# --- simulation and validation ----------------------------------------------

def predict_n_step(model: NarxModel, Y_hist: np.ndarray, U_hist: np.ndarray,
                   U_future: np.ndarray, N: int) -> np.ndarray:
    """Recursive rollout of ``N`` outputs.

    ``Y_hist``/``U_hist`` hold at least ``lag`` past samples (most recent last);
    ``U_future[k]`` is the input applied at step ``k`` (``U_future[0]`` is the
    input concurrent with the first prediction and so never enters it).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    lay = model.layout
    Y = [np.asarray(y, dtype=float) for y in Y_hist[-lay.n:]]
    U = [np.asarray(u, dtype=float) for u in U_hist[-lay.m:]]
    out = np.empty((N, lay.Z))
    for k in range(N):
        X = np.concatenate(Y[::-1][:lay.n] + U[::-1][:lay.m])
        y = model.predict(X)
        out[k] = y
        Y = (Y + [y])[-lay.n:]
        U = (U + [np.asarray(U_future[k], dtype=float)])[-lay.m:]
    return out


def n_step_predictions(model: NarxModel, Y: np.ndarray, U: np.ndarray, N: int) -> np.ndarray:
    """``N``-step-ahead predictions for every sample of a record.

    Entry ``t`` predicts ``Y[t]`` from measured outputs up to ``t - N`` and
    inputs up to ``t - 1``; the first ``lag + N - 1`` entries are NaN.
    """
    lay = model.layout
    T = len(Y)
    p = lay.lag
    starts = np.arange(p, T - N + 1)       # first predicted index of each rollout
    Yh = [Y[starts - k] for k in range(lay.n, 0, -1)]   # oldest .. newest
    out = np.full_like(Y, np.nan, dtype=float)
    for k in range(N):
        t = starts + k
        X = np.hstack(Yh[::-1] + [U[t - j] for j in range(1, lay.m + 1)])
        y = model.predict(X)
        Yh = Yh[1:] + [y]
    out[starts + N - 1] = y
    return out


def fit_percent(y, yhat) -> float:
    """``100 (1 - NRMSE)`` with NRMSE normalized by the range of ``y``."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError("y and yhat must have equal shapes")
    rng = np.max(y) - np.min(y)
    if not rng > 0:
        raise ValueError("fit percent undefined for constant y")
    return float(100.0 * (1.0 - np.sqrt(np.mean((y - yhat) ** 2)) / rng))


def residual_autocorrelation(e, max_lag: int = 25, conf_z: float = 2.576):
    """Normalized autocorrelation at lags ``0..max_lag`` and the +- band half-width."""
    e = np.asarray(e, dtype=float) - np.mean(e)
    n = len(e)
    c0 = np.dot(e, e)
    if not c0 > 0:
        raise ValueError("residuals have zero variance")
    r = np.array([np.dot(e[k:], e[:n - k]) / c0 for k in range(max_lag + 1)])
    return r, conf_z / np.sqrt(n)


def input_residual_crosscorrelation(u, e, max_lag: int = 25, conf_z: float = 2.576):
    """Cross-correlation ``r_ue(k) ~ corr(u_{t-k}, e_t)`` for ``k = -max_lag..max_lag``.

    Returns ``(lags, values, band)``.
    """
    u = np.asarray(u, dtype=float) - np.mean(u)
    e = np.asarray(e, dtype=float) - np.mean(e)
    n = len(e)
    den = np.sqrt(np.dot(u, u) * np.dot(e, e))
    if not den > 0:
        raise ValueError("input or residual has zero variance")
    lags = np.arange(-max_lag, max_lag + 1)
    vals = np.array([
        np.dot(u[:n - k], e[k:]) if k >= 0 else np.dot(u[-k:], e[:n + k])
        for k in lags
    ]) / den
    return lags, vals, conf_z / np.sqrt(n)


HORIZONS = (1, 10, 30, 50, 80, 100)


def validation_table(model: NarxModel, data: Dataset, horizons=HORIZONS) -> np.ndarray:
    """Fit percent per zone (rows) and horizon (columns) on the test split.

    Every horizon is scored on the same samples, those predictable at the
    longest one.
    """
    U, Y = data.test()
    lay = model.layout
    first = lay.lag + max(horizons) - 1
    if len(Y) <= first + 1:
        raise ValueError(f"test split of {len(Y)} rows is too short for horizon {max(horizons)}")
    out = np.empty((lay.Z, len(horizons)))
    for c, N in enumerate(horizons):
        P = n_step_predictions(model, Y, U, N)
        for z in range(lay.Z):
            out[z, c] = fit_percent(Y[first:, z], P[first:, z])
    return out


@dataclass
class WhitenessReport:
    inside_auto: np.ndarray     # per zone, fraction of lags 1..max_lag inside the band
    inside_cross: np.ndarray    # per zone, fraction of cross lags inside the band (worst input)
    band: float


def whiteness(model: NarxModel, data: Dataset, max_lag: int = 25,
              conf_z: float = 2.576) -> WhitenessReport:
    """One-step residual tests on the test split.

    The cross-correlation fraction of a zone is the smallest over the inputs
    of the fraction of lags ``-max_lag..max_lag`` inside the band.
    """
    U, Y = data.test()
    lay = model.layout
    P = n_step_predictions(model, Y, U, 1)
    E = (Y - P)[lay.lag:]
    Uc = U[lay.lag:]
    auto = np.empty(lay.Z)
    cross = np.empty(lay.Z)
    band = conf_z / np.sqrt(len(E))
    for z in range(lay.Z):
        r, band = residual_autocorrelation(E[:, z], max_lag, conf_z)
        auto[z] = np.mean(np.abs(r[1:]) <= band)
        worst = 1.0
        for j in range(lay.H):
            _, v, b = input_residual_crosscorrelation(Uc[:, j], E[:, z], max_lag, conf_z)
            worst = min(worst, float(np.mean(np.abs(v) <= b)))
        cross[z] = worst
    return WhitenessReport(auto, cross, band)


# --- linearization -----------------------------------------------------------

def shift_matrices(layout: RegressorLayout) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Selection matrices of the regressor update ``X+ = A X + B1 y + B2 u``."""
    Z, H, n, m = layout.Z, layout.H, layout.n, layout.m
    d = layout.dim
    A = np.zeros((d, d))
    B1 = np.zeros((d, Z))
    B2 = np.zeros((d, H))
    for k in range(1, n):
        A[k * Z:(k + 1) * Z, (k - 1) * Z:k * Z] = np.eye(Z)
    off = n * Z
    for k in range(1, m):
        A[off + k * H:off + (k + 1) * H, off + (k - 1) * H:off + k * H] = np.eye(H)
    B1[:Z] = np.eye(Z)
    B2[off:off + H] = np.eye(H)
    return A, B1, B2


@dataclass
class LinearizedPlant:
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D: np.ndarray
    X_op: np.ndarray
    u_op: np.ndarray
    y_op: np.ndarray

    @property
    def A_cl(self) -> np.ndarray:
        """State matrix of the linear model, ``A + B1 F_X``."""
        return self.A + self.B1 @ self.C

    @property
    def B_cl(self) -> np.ndarray:
        """Input matrix of the linear model, ``B1 F_u + B2``."""
        return self.B1 @ self.D + self.B2

    def drift(self, y_bias: np.ndarray | None = None) -> np.ndarray:
        """One-step state drift at the operating point, ``A X_op + B1 y_op + B2 u_op - X_op``.

        Zero when the operating point is an equilibrium of the model.
        """
        y = self.y_op if y_bias is None else self.y_op + y_bias
        return self.A @ self.X_op + self.B1 @ y + self.B2 @ self.u_op - self.X_op


def linearize(model: NarxModel, X_op: np.ndarray, u_op: np.ndarray) -> LinearizedPlant:
    X_op = np.asarray(X_op, dtype=float)
    u_op = np.asarray(u_op, dtype=float)
    A, B1, B2 = shift_matrices(model.layout)
    C = model.jacobian(X_op)
    # the regressor holds only lagged inputs, so there is no direct feedthrough
    D = np.zeros((model.layout.Z, model.layout.H))
    return LinearizedPlant(A, B1, B2, C, D, X_op, u_op, model.predict(X_op))
