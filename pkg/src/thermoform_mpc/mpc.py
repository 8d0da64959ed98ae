"""Receding-horizon controller on a relinearized NARX model.

At every sample the model is linearized at the measured regressor, the
predictions are stacked over the horizon and the resulting condensed QP
(decision: input increments plus one slack per output and step) is solved.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .narx import LinearizedPlant, NarxModel, linearize
from .qp import QpError, QpProblem, QpResult, solve_qp
from .thermal_sim import ConfigError


@dataclass(frozen=True)
class MpcConfig:
    Np: int = 20
    Nc: int = 5
    alpha: float = 1.0
    beta: float = 0.01
    u_min: float = 0.0
    u_max: float = 500.0
    T_over: float = 0.0
    slack_weight: float = 1e4
    qp_tol: float = 1e-6
    qp_max_iter: int = 1000
    bias_correction: bool = True

    def validate(self) -> None:
        if not 1 <= self.Nc <= self.Np:
            raise ConfigError(f"need 1 <= Nc <= Np, got Nc={self.Nc}, Np={self.Np}")
        if not self.alpha > self.beta > 0:
            raise ConfigError("need alpha > beta > 0")
        if not self.u_min < self.u_max:
            raise ConfigError("need u_min < u_max")
        if not self.slack_weight > self.alpha:
            raise ConfigError("slack_weight must exceed alpha")
        if self.T_over < 0:
            raise ConfigError("T_over must be >= 0")
        if not self.qp_tol > 0 or self.qp_max_iter < 1:
            raise ConfigError("qp_tol must be > 0 and qp_max_iter >= 1")


@dataclass
class Prediction:
    """``y_k = y0 + Phi[k] dX0 + Gamma[k] du + Psi[k] drift`` for ``k = 1..Np``.

    ``du`` stacks input deviations from ``u_op`` for steps ``0..Nc-1``; the last
    one is held to the end of the horizon.
    """
    Phi: np.ndarray     # (Np*Z, nx)
    Gamma: np.ndarray   # (Np*Z, Nc*H)
    Psi: np.ndarray     # (Np*Z, nx), response to a constant state drift from step 2 on
    Np: int
    Nc: int
    Z: int
    H: int


def build_prediction(plant: LinearizedPlant, Np: int, Nc: int) -> Prediction:
    if not 1 <= Nc <= Np:
        raise ConfigError(f"need 1 <= Nc <= Np, got Nc={Nc}, Np={Np}")
    A, B, C = plant.A_cl, plant.B_cl, plant.C
    nx, H = B.shape
    Z = C.shape[0]
    if A.shape != (nx, nx) or C.shape[1] != nx:
        raise ConfigError("state-space dimensions do not match")
    # CA^k for k = 0..Np
    CA = [C]
    for _ in range(Np):
        CA.append(CA[-1] @ A)
    Phi = np.vstack(CA[1:])
    imp = [M @ B for M in CA[:Np]]            # C A^k B
    Gamma = np.zeros((Np * Z, Nc * H))
    for i in range(Np):
        for j in range(min(i + 1, Nc)):
            if j < Nc - 1:
                blk = imp[i - j]
            else:
                blk = sum(imp[:i - j + 1])   # held input from step Nc-1 on
            Gamma[i * Z:(i + 1) * Z, j * H:(j + 1) * H] = blk
    Psi = np.zeros((Np * Z, nx))
    acc = np.zeros((Z, nx))
    for i in range(1, Np):
        acc = acc + CA[i - 1]
        Psi[i * Z:(i + 1) * Z] = acc
    return Prediction(Phi, Gamma, Psi, Np, Nc, Z, H)


@dataclass
class QpLayout:
    n_u: int
    n_s: int
    S: np.ndarray        # increments -> deviations, (Nc*H, Nc*H)
    y_free: np.ndarray   # predicted outputs with du = 0


def assemble_qp(pred: Prediction, dX0: np.ndarray, ref: np.ndarray, y0: np.ndarray,
                u_prev: np.ndarray, cfg: MpcConfig, drift: np.ndarray | None = None,
                warnings: list | None = None) -> tuple[QpProblem, QpLayout]:
    """Condensed QP in the input increments and output slacks.

    ``y0`` is the output level the deviations are measured from (``y_op``
    plus any bias estimate); ``u_prev`` is both the linearization input and the
    last applied input.
    """
    Np, Nc, Z, H = pred.Np, pred.Nc, pred.Z, pred.H
    ref = np.asarray(ref, dtype=float).ravel()
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    if len(ref) != Z or len(u_prev) != H or len(y0) != Z:
        raise ConfigError("reference/input dimensions do not match the model")
    if np.any(u_prev < cfg.u_min) or np.any(u_prev > cfg.u_max):
        if warnings is not None:
            warnings.append("u_prev outside input bounds; clamped")
        u_prev = np.clip(u_prev, cfg.u_min, cfg.u_max)
    y_free = np.tile(y0, Np) + pred.Phi @ dX0
    if drift is not None:
        y_free = y_free + pred.Psi @ drift
    S = np.kron(np.tril(np.ones((Nc, Nc))), np.eye(H))
    GS = pred.Gamma @ S
    r = np.tile(ref, Np)
    n_u, n_s = Nc * H, Np * Z
    Hq = np.zeros((n_u + n_s, n_u + n_s))
    Hq[:n_u, :n_u] = 2.0 * (cfg.alpha * GS.T @ GS + cfg.beta * np.eye(n_u))
    Hq[n_u:, n_u:] = 2.0 * cfg.slack_weight * np.eye(n_s)
    g = np.zeros(n_u + n_s)
    g[:n_u] = -2.0 * cfg.alpha * GS.T @ (r - y_free)
    # u_min <= u_prev + S dv <= u_max ; y_free + GS dv - s <= r + T_over
    up = np.tile(u_prev, Nc)
    G = np.zeros((2 * n_u + n_s, n_u + n_s))
    G[:n_u, :n_u] = S
    G[n_u:2 * n_u, :n_u] = -S
    G[2 * n_u:, :n_u] = GS
    G[2 * n_u:, n_u:] = -np.eye(n_s)
    h = np.concatenate([cfg.u_max - up, up - cfg.u_min, r + cfg.T_over - y_free])
    Hq = 0.5 * (Hq + Hq.T)
    return QpProblem(Hq, g, G, h), QpLayout(n_u, n_s, S, y_free)


@dataclass
class StepRecord:
    t: float
    y: np.ndarray
    ref: np.ndarray
    u: np.ndarray
    qp_iters: int
    qp_residual: float
    slack_max: float
    fallback: bool = False
    solve_time: float = 0.0
    warnings: list = field(default_factory=list)


class MpcController:
    """Stateful wrapper: keeps the measured history and the last applied input."""

    def __init__(self, model: NarxModel, cfg: MpcConfig = MpcConfig()):
        cfg.validate()
        self.model = model
        self.cfg = cfg
        lay = model.layout
        self._Y: list[np.ndarray] = []
        self._U: list[np.ndarray] = []
        self.u_prev = np.full(lay.H, cfg.u_min)
        self.log: list[StepRecord] = []

    def reset(self, Y_hist=None, U_hist=None) -> None:
        self._Y = [np.asarray(y, dtype=float) for y in (Y_hist if Y_hist is not None else [])]
        self._U = [np.asarray(u, dtype=float) for u in (U_hist if U_hist is not None else [])]
        if self._U:
            self.u_prev = self._U[-1].copy()
        self.log = []

    def step(self, y: np.ndarray, ref: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Take the measurement ``y_t`` and return the input to apply over the next sample."""
        lay = self.model.layout
        cfg = self.cfg
        y = np.asarray(y, dtype=float).ravel()
        ref = np.asarray(ref, dtype=float).ravel()
        # pad a short history with the first measurement / last input
        Y = self._Y + [y]
        while len(Y) < lay.n + 1:
            Y.insert(0, Y[0])
        U = list(self._U)
        while len(U) < lay.m:
            U.insert(0, self.u_prev.copy())
        t0 = time.perf_counter()
        u_new, rec = control_step(self.model, cfg, Y, U, self.u_prev, ref, t)
        rec.solve_time = time.perf_counter() - t0
        self._Y = (self._Y + [y])[-(lay.n + 1):]
        self._U = (self._U + [u_new])[-(lay.m + 1):]
        self.u_prev = u_new
        self.log.append(rec)
        return u_new


def control_step(model: NarxModel, cfg: MpcConfig, Y_hist: list, U_hist: list,
                 u_prev: np.ndarray, ref: np.ndarray, t: float = 0.0) -> tuple[np.ndarray, StepRecord]:
    """One controller evaluation.

    ``Y_hist`` ends with the current measurement ``y_t`` and holds at least
    ``n + 1`` samples; ``U_hist`` ends with ``u_{t-1}``.  The model is
    linearized at ``X_op``, the regressor that will predict ``y_{t+1}``, with
    the not-yet-chosen input slot held at ``u_prev``.
    """
    lay = model.layout
    y_t = np.asarray(Y_hist[-1], dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    X_op = np.concatenate([Y_hist[-1 - k] for k in range(lay.n)]
                          + [u_prev] + [U_hist[-k] for k in range(1, lay.m)])
    plant = linearize(model, X_op, u_prev)
    bias = np.zeros(lay.Z)
    if cfg.bias_correction:
        X_t = np.concatenate([Y_hist[-2 - k] for k in range(lay.n)]
                             + [U_hist[-k] for k in range(1, lay.m + 1)])
        bias = y_t - model.predict(X_t)
    pred = build_prediction(plant, cfg.Np, cfg.Nc)
    warns: list = []
    qp, layout = assemble_qp(pred, np.zeros(lay.dim), ref, plant.y_op + bias, u_prev, cfg,
                             drift=plant.drift(bias), warnings=warns)
    u_base = np.clip(u_prev, cfg.u_min, cfg.u_max)
    try:
        res: QpResult = solve_qp(qp, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
    except QpError as exc:
        warns.append(f"qp failure: {exc}")
        return u_base.copy(), StepRecord(t, y_t, ref, u_base.copy(), exc.iterations, exc.residual,
                                         np.nan, fallback=True, warnings=warns)
    du0 = res.x[:lay.H]
    u = np.clip(u_base + du0, cfg.u_min, cfg.u_max)
    slack_max = float(np.max(res.x[layout.n_u:], initial=0.0))
    return u, StepRecord(t, y_t, ref, u, res.iterations, res.residual, slack_max, warnings=warns)


LOG_HEADER_NOTE = "# temperatures in deg C, powers in W, t in s"


def log_columns(Z: int = 15, H: int = 15) -> list[str]:
    return (["t"] + [f"y{i + 1}" for i in range(Z)] + [f"r{i + 1}" for i in range(Z)]
            + [f"u{i + 1}" for i in range(H)] + ["qp_iters", "qp_residual", "slack_max"])


def write_log(records: list[StepRecord], path=None) -> str:
    """Per-step controller log as CSV text (also written to ``path`` if given)."""
    Z = len(records[0].y) if records else 15
    H = len(records[0].u) if records else 15
    buf = io.StringIO()
    buf.write(LOG_HEADER_NOTE + "\n")
    buf.write(",".join(log_columns(Z, H)) + "\n")
    for r in records:
        vals = [r.t, *r.y, *r.ref, *r.u, r.qp_iters, r.qp_residual, r.slack_max]
        buf.write(",".join(repr(float(v)) if not isinstance(v, int) else str(v) for v in vals) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    return text
