"""sLSTM and classic LSTM recurrent cells with hand-written BPTT.

The sLSTM cell replaces the sigmoid input/forget gates of the classic LSTM
with exponentials and divides the cell state by a running normalizer before
the output gate:

    z_t = tanh(Wz x + Rz h + bz)          cell input
    i_t = exp(...)   f_t = exp(...)        input / forget gates
    o_t = sigmoid(...)                     output gate
    c_t = f_t * c_{t-1} + i_t * z_t
    n_t = f_t * n_{t-1} + i_t
    h_t = o_t * c_t / n_t

Exponential gates overflow for positive pre-activations, so a log-space
stabilizer m_t = max(log f_t + m_{t-1}, log i_t) is tracked in stabilized
mode; the hidden state is algebraically unchanged because the exp(-m)
rescaling cancels in the c/n ratio. Raw mode keeps the textbook arithmetic
(including its overflow) for the memory-property probe.

Recurrent weight matrices are block-diagonal with ``n_heads`` equal blocks:
memory mixing happens within a head but never across heads.

All arrays are batch-first: states are (B, d), sequences (B, S, d).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensorops import Rng, ShapeError, log_sigmoid, sigmoid

_ACTIVATIONS = ("exponential", "sigmoid")


@dataclass(frozen=True)
class GateMode:
    """Cell configuration switches.

    memory_mixing=False freezes every recurrent matrix at zero (gates see
    only the current input). normalizer=False drops the normalizer state
    and applies tanh to the cell state instead, which together with sigmoid
    gates reproduces the classic LSTM exactly.
    """

    forget_activation: str = "exponential"
    input_activation: str = "exponential"
    stabilized: bool = True
    memory_mixing: bool = True
    normalizer: bool = True

    def __post_init__(self):
        if self.forget_activation not in _ACTIVATIONS:
            raise ValueError(f"bad forget_activation {self.forget_activation!r}")
        if self.input_activation not in _ACTIVATIONS:
            raise ValueError(f"bad input_activation {self.input_activation!r}")
        if self.stabilized and not self.normalizer:
            raise ValueError("stabilizer requires the normalizer state")


#: The classic LSTM as a GateMode: sigmoid gates, no normalizer, tanh(c).
LSTM_MODE = GateMode(
    forget_activation="sigmoid",
    input_activation="sigmoid",
    stabilized=False,
    memory_mixing=True,
    normalizer=False,
)


def block_diagonal_mask(d: int, n_heads: int) -> np.ndarray:
    """1/0 mask selecting the n_heads diagonal blocks of a (d, d) matrix."""
    if d % n_heads != 0:
        raise ValueError(f"hidden size {d} not divisible by {n_heads} heads")
    mask = np.zeros((d, d))
    s = d // n_heads
    for k in range(n_heads):
        mask[k * s:(k + 1) * s, k * s:(k + 1) * s] = 1.0
    return mask


@dataclass
class SLSTMParams:
    """Gate weights. W_*: (d_hidden, d_input); R_*: (d_hidden, d_hidden),
    block-diagonal with n_heads equal blocks; b_*: (d_hidden,)."""

    W_z: np.ndarray
    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    R_z: np.ndarray
    R_i: np.ndarray
    R_f: np.ndarray
    R_o: np.ndarray
    b_z: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    n_heads: int = 1

    @property
    def d_hidden(self) -> int:
        return self.W_z.shape[0]

    @property
    def d_input(self) -> int:
        return self.W_z.shape[1]

    def recurrent_mask(self) -> np.ndarray:
        return block_diagonal_mask(self.d_hidden, self.n_heads)

    def as_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def init(cls, rng: Rng, d_input: int, d_hidden: int, n_heads: int = 1,
             memory_mixing: bool = True, forget_bias: float = -1.0) -> "SLSTMParams":
        """Gaussian fan-in init; b_f starts at -1 so the exponential forget
        gate opens around exp(-1) ~ 0.37, inside the contraction regime."""
        mask = block_diagonal_mask(d_hidden, n_heads)
        w_std = 1.0 / np.sqrt(d_input)
        r_std = 1.0 / np.sqrt(d_hidden)
        kw = {}
        for g in "zifo":
            kw[f"W_{g}"] = rng.normal((d_hidden, d_input), 0.0, w_std)
            if memory_mixing:
                kw[f"R_{g}"] = rng.normal((d_hidden, d_hidden), 0.0, r_std) * mask
            else:
                kw[f"R_{g}"] = np.zeros((d_hidden, d_hidden))
            kw[f"b_{g}"] = np.zeros(d_hidden)
        kw["b_f"] = np.full(d_hidden, float(forget_bias))
        return cls(n_heads=n_heads, **kw)


PARAM_NAMES = ("W_z", "W_i", "W_f", "W_o", "R_z", "R_i", "R_f", "R_o",
               "b_z", "b_i", "b_f", "b_o")


@dataclass
class SLSTMState:
    """Recurrent state. m is the log-space stabilizer; None means the
    analytic -inf sentinel (nothing accumulated yet)."""

    h: np.ndarray
    c: np.ndarray
    n: np.ndarray
    m: np.ndarray | None = None

    @classmethod
    def zeros(cls, batch: int, d_hidden: int) -> "SLSTMState":
        z = np.zeros((batch, d_hidden))
        return cls(h=z, c=z.copy(), n=z.copy(), m=None)


@dataclass
class StepCache:
    """Everything the backward pass needs for one timestep.

    In stabilized mode c/n/c_prev/n_prev hold the rescaled (primed)
    quantities and d_eff/i_eff the rescaled gate factors; the gradient
    algebra is identical in both modes because h depends only on ratios.
    """

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    n_prev: np.ndarray
    z: np.ndarray
    o: np.ndarray
    i_eff: np.ndarray
    d_eff: np.ndarray
    dgate_i: np.ndarray   # d i_eff / d i_pre
    dgate_f: np.ndarray   # d d_eff / d f_pre
    c: np.ndarray
    n: np.ndarray
    hbar: np.ndarray


CellTape = list  # list[StepCache]


def _gate_raw(pre: np.ndarray, activation: str) -> tuple[np.ndarray, np.ndarray]:
    """Gate value and its derivative wrt the pre-activation."""
    if activation == "exponential":
        g = np.exp(pre)
        return g, g
    g = sigmoid(pre)
    return g, g * (1.0 - g)


def _log_gate(pre: np.ndarray, activation: str) -> tuple[np.ndarray, np.ndarray]:
    """log(gate) and d log(gate) / d pre, overflow-free."""
    if activation == "exponential":
        return pre, np.ones_like(pre)
    return log_sigmoid(pre), 1.0 - sigmoid(pre)


def slstm_step(params: SLSTMParams, x: np.ndarray, prev: SLSTMState,
               mode: GateMode = GateMode()) -> tuple[SLSTMState, StepCache]:
    """One recurrent step. x: (B, d_input); returns the new state and the
    cache needed for the exact backward pass."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.d_input:
        raise ShapeError(f"slstm_step: input {x.shape} vs d_input {params.d_input}")
    if prev.h.shape != (x.shape[0], params.d_hidden):
        raise ShapeError(f"slstm_step: state {prev.h.shape} vs "
                         f"expected {(x.shape[0], params.d_hidden)}")

    z_pre = x @ params.W_z.T + prev.h @ params.R_z.T + params.b_z
    i_pre = x @ params.W_i.T + prev.h @ params.R_i.T + params.b_i
    f_pre = x @ params.W_f.T + prev.h @ params.R_f.T + params.b_f
    o_pre = x @ params.W_o.T + prev.h @ params.R_o.T + params.b_o

    z = np.tanh(z_pre)
    o = sigmoid(o_pre)

    if not mode.normalizer:
        f, df = _gate_raw(f_pre, mode.forget_activation)
        i, di = _gate_raw(i_pre, mode.input_activation)
        c = f * prev.c + i * z
        hbar = np.tanh(c)
        h = o * hbar
        cache = StepCache(x=x, h_prev=prev.h, c_prev=prev.c, n_prev=prev.n,
                          z=z, o=o, i_eff=i, d_eff=f, dgate_i=di, dgate_f=df,
                          c=c, n=np.ones_like(c), hbar=hbar)
        return SLSTMState(h=h, c=c, n=prev.n, m=None), cache

    if mode.stabilized:
        log_f, dlog_f = _log_gate(f_pre, mode.forget_activation)
        log_i, dlog_i = _log_gate(i_pre, mode.input_activation)
        if prev.m is None:
            # -inf sentinel: the forget branch cannot win the max, and the
            # decay factor keeps the raw exp(log_f) scaling for c_0, n_0.
            m = log_i
            d_eff = np.exp(log_f - m)
        else:
            m = np.maximum(log_f + prev.m, log_i)
            d_eff = np.exp(log_f + prev.m - m)
        i_eff = np.exp(log_i - m)
        c = d_eff * prev.c + i_eff * z
        n = d_eff * prev.n + i_eff
        hbar = c / n
        h = o * hbar
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("stabilized slstm_step produced a "
                                     "non-finite hidden state")
        cache = StepCache(x=x, h_prev=prev.h, c_prev=prev.c, n_prev=prev.n,
                          z=z, o=o, i_eff=i_eff, d_eff=d_eff,
                          dgate_i=i_eff * dlog_i, dgate_f=d_eff * dlog_f,
                          c=c, n=n, hbar=hbar)
        return SLSTMState(h=h, c=c, n=n, m=m), cache

    # Raw mode: textbook arithmetic, overflow allowed (probe relies on it).
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        f, df = _gate_raw(f_pre, mode.forget_activation)
        i, di = _gate_raw(i_pre, mode.input_activation)
        c = f * prev.c + i * z
        n = f * prev.n + i
        hbar = c / n
        h = o * hbar
    cache = StepCache(x=x, h_prev=prev.h, c_prev=prev.c, n_prev=prev.n,
                      z=z, o=o, i_eff=i, d_eff=f, dgate_i=di, dgate_f=df,
                      c=c, n=n, hbar=hbar)
    return SLSTMState(h=h, c=c, n=n, m=None), cache


def slstm_forward(params: SLSTMParams, x_seq: np.ndarray,
                  init: SLSTMState | None = None,
                  mode: GateMode = GateMode()) -> tuple[np.ndarray, CellTape]:
    """Run the cell over a sequence. x_seq: (B, S, d_input) or (S, d_input).

    Returns h_seq with a matching leading layout and the tape for backward.
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    squeeze = x_seq.ndim == 2
    if squeeze:
        x_seq = x_seq[None]
    if x_seq.ndim != 3:
        raise ShapeError(f"slstm_forward: expected (B, S, d), got {x_seq.shape}")
    B, S, _ = x_seq.shape
    if S < 1:
        raise ShapeError("slstm_forward: empty sequence")
    state = init if init is not None else SLSTMState.zeros(B, params.d_hidden)
    h_seq = np.empty((B, S, params.d_hidden))
    tape: CellTape = []
    for t in range(S):
        state, cache = slstm_step(params, x_seq[:, t, :], state, mode)
        h_seq[:, t, :] = state.h
        tape.append(cache)
    if squeeze:
        h_seq = h_seq[0]
    return h_seq, tape


def slstm_backward(params: SLSTMParams, tape: CellTape, grad_h_seq: np.ndarray,
                   mode: GateMode = GateMode()
                   ) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact BPTT for sum_t <grad_h_seq[t], h_t>.

    Returns (param grads keyed like PARAM_NAMES, grad wrt the inputs).
    Off-block entries of every R gradient are forced to exact zero.
    """
    grad_h_seq = np.asarray(grad_h_seq, dtype=np.float64)
    squeeze = grad_h_seq.ndim == 2
    if squeeze:
        grad_h_seq = grad_h_seq[None]
    if len(tape) != grad_h_seq.shape[1]:
        raise ShapeError(f"slstm_backward: tape length {len(tape)} vs "
                         f"grad sequence length {grad_h_seq.shape[1]}")

    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_NAMES}
    B = grad_h_seq.shape[0]
    d = params.d_hidden
    gh_carry = np.zeros((B, d))
    gc_carry = np.zeros((B, d))
    gn_carry = np.zeros((B, d))
    grad_x = np.empty((B, len(tape), params.d_input))

    for t in range(len(tape) - 1, -1, -1):
        cc = tape[t]
        gh = grad_h_seq[:, t, :] + gh_carry
        g_o = gh * cc.hbar
        if mode.normalizer:
            gc = gh * cc.o / cc.n + gc_carry
            gn = -gh * cc.o * cc.c / (cc.n * cc.n) + gn_carry
        else:
            gc = gh * cc.o * (1.0 - cc.hbar * cc.hbar) + gc_carry
            gn = np.zeros_like(gc)

        g_opre = g_o * cc.o * (1.0 - cc.o)
        g_zpre = gc * cc.i_eff * (1.0 - cc.z * cc.z)
        g_ipre = (gc * cc.z + gn) * cc.dgate_i
        g_fpre = (gc * cc.c_prev + gn * cc.n_prev) * cc.dgate_f

        for g, gpre in (("z", g_zpre), ("i", g_ipre), ("f", g_fpre), ("o", g_opre)):
            grads[f"W_{g}"] += gpre.T @ cc.x
            grads[f"R_{g}"] += gpre.T @ cc.h_prev
            grads[f"b_{g}"] += gpre.sum(axis=0)

        gh_carry = (g_zpre @ params.R_z + g_ipre @ params.R_i
                    + g_fpre @ params.R_f + g_opre @ params.R_o)
        gc_carry = gc * cc.d_eff
        gn_carry = gn * cc.d_eff
        grad_x[:, t, :] = (g_zpre @ params.W_z + g_ipre @ params.W_i
                           + g_fpre @ params.W_f + g_opre @ params.W_o)

    mask = params.recurrent_mask()
    for g in "zifo":
        grads[f"R_{g}"] *= mask
    if squeeze:
        grad_x = grad_x[0]
    return grads, grad_x


# Classic LSTM wrappers.

def lstm_step(params: SLSTMParams, x: np.ndarray,
              prev: SLSTMState) -> tuple[SLSTMState, StepCache]:
    return slstm_step(params, x, prev, LSTM_MODE)


def lstm_forward(params: SLSTMParams, x_seq: np.ndarray,
                 init: SLSTMState | None = None) -> tuple[np.ndarray, CellTape]:
    return slstm_forward(params, x_seq, init, LSTM_MODE)


def lstm_backward(params: SLSTMParams, tape: CellTape,
                  grad_h_seq: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    return slstm_backward(params, tape, grad_h_seq, LSTM_MODE)


def grad_check(loss_and_grads: Callable[[dict[str, np.ndarray]],
                                        tuple[float, dict[str, np.ndarray]]],
               params: dict[str, np.ndarray], epsilon: float = 1e-5,
               masks: dict[str, np.ndarray] | None = None) -> float:
    """Worst relative error of analytic gradients vs central differences.

    loss_and_grads evaluates the scalar loss and its analytic gradients for
    the given parameter dict. Entries where a mask is zero (frozen
    coordinates, e.g. off-block recurrent weights) are skipped. Relative
    error is |a - n| / max(1e-8, |a| + |n|).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    loss, analytic = loss_and_grads(params)
    if not np.isfinite(loss):
        raise FloatingPointError("grad_check: non-finite loss")
    worst = 0.0
    for name in sorted(params):
        arr = params[name]
        mask = None if masks is None else masks.get(name)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if mask is not None and mask[idx] == 0:
                continue
            orig = arr[idx]
            arr[idx] = orig + epsilon
            lp, _ = loss_and_grads(params)
            arr[idx] = orig - epsilon
            lm, _ = loss_and_grads(params)
            arr[idx] = orig
            fd = (lp - lm) / (2.0 * epsilon)
            a = analytic[name][idx]
            rel = abs(a - fd) / max(1e-8, abs(a) + abs(fd))
            worst = max(worst, rel)
    return worst
