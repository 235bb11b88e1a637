"""Pure-numpy LSTM recurrence kernels (fallback for ``_lstm_ext``).

Both kernels take the input projections ``xproj[t] = Wx @ x_t + b`` (gate
order i, f, o, g) precomputed for all steps, and run only the sequential
part of the recurrence.  The initial state is zero.
"""
import numpy as np


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(xproj, Wh):
    """Return ``(gates, c, h)``; gates hold post-activation values, shape (T, 4H)."""
    T, four_h = xproj.shape
    H = four_h // 4
    gates = np.empty((T, four_h))
    c = np.empty((T, H))
    h = np.empty((T, H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        z = xproj[t] + Wh @ h_prev
        gates[t, : 3 * H] = _sigmoid(z[: 3 * H])
        gates[t, 3 * H :] = np.tanh(z[3 * H :])
        i, f, o, g = gates[t, :H], gates[t, H : 2 * H], gates[t, 2 * H : 3 * H], gates[t, 3 * H :]
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        c[t] = c_prev
        h[t] = h_prev
    return gates, c, h


def lstm_backward(gates, c, Wh, dh_ext):
    """Backpropagate external hidden-state gradients through time.

    Returns ``dz`` (T, 4H), the loss gradient w.r.t. the pre-activation gate
    inputs at every step.
    """
    T, four_h = gates.shape
    H = four_h // 4
    dz = np.empty((T, four_h))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    zeros = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i, f, o, g = gates[t, :H], gates[t, H : 2 * H], gates[t, 2 * H : 3 * H], gates[t, 3 * H :]
        c_prev = c[t - 1] if t > 0 else zeros
        tc = np.tanh(c[t])
        dh = dh_ext[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[t, :H] = dc * g * i * (1.0 - i)
        dz[t, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[t, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[t, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = Wh.T @ dz[t]
    return dz
