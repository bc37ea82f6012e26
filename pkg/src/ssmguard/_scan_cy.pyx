# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled recurrence scan; layout contract documented in _scan_py."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scan(const double[:, :, ::1] alpha, const double[:, :, ::1] beta,
         const double[:, ::1] base, const double[:, ::1] mix,
         const double[:, ::1] c, const double[:, ::1] h0):
    cdef Py_ssize_t steps = alpha.shape[0]
    cdef Py_ssize_t n_layers = alpha.shape[1]
    cdef Py_ssize_t d_state = alpha.shape[2]

    hidden_arr = np.empty((steps, n_layers, d_state))
    readout_arr = np.empty((steps, n_layers))
    state_arr = np.array(h0, dtype=float, copy=True)

    cdef double[:, :, ::1] hidden = hidden_arr
    cdef double[:, ::1] readout = readout_arr
    cdef double[:, ::1] state = state_arr

    cdef Py_ssize_t t, layer, lower, i
    cdef double s, h, y

    for t in range(steps):
        for layer in range(n_layers):
            s = base[t, layer]
            for lower in range(layer):
                s += readout[t, lower] * mix[layer, lower]
            y = 0.0
            for i in range(d_state):
                h = alpha[t, layer, i] * state[layer, i] + beta[t, layer, i] * s
                state[layer, i] = h
                hidden[t, layer, i] = h
                y += c[layer, i] * h
            readout[t, layer] = y
    return hidden_arr, readout_arr
