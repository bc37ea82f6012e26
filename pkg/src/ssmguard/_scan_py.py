"""Pure-numpy recurrence scan, the fallback twin of the compiled kernel.

The scan is the only part of a sequence run that cannot be vectorized over
tokens: each layer's state depends on the previous token, and each layer's
input scalar depends on the readouts of the layers below it at the same
token.  Layout contract (float64, C-contiguous):

    alpha (T, L, d)  diagonal transition entries per token/layer
    beta  (T, L, d)  input column per token/layer
    base  (T, L)     input scalar from the raw embedding, w_in[l] . z_t
    mix   (L, L)     cross-layer input coupling, w_in[l] . w_out[l']
    c     (L, d)     readout rows
    h0    (L, d)     initial state per layer

Returns (hidden (T, L, d), readout (T, L)) where hidden[t, l] is the state
after consuming token t and readout[t, l] = c[l] . hidden[t, l].
"""

from __future__ import annotations

import numpy as np


def scan(alpha, beta, base, mix, c, h0):
    steps, n_layers, d_state = alpha.shape
    hidden = np.empty((steps, n_layers, d_state))
    readout = np.empty((steps, n_layers))
    state = np.array(h0, dtype=float, copy=True)

    for t in range(steps):
        for layer in range(n_layers):
            s = base[t, layer]
            for lower in range(layer):
                s += readout[t, lower] * mix[layer, lower]
            h = alpha[t, layer] * state[layer] + beta[t, layer] * s
            state[layer] = h
            hidden[t, layer] = h
            readout[t, layer] = float(np.dot(c[layer], h))
    return hidden, readout
