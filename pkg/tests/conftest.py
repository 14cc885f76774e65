"""Shared helpers for the test suite: compact random instances."""

import numpy as np

from airfc import AirFcParams, ChannelSet


def cn(rng, rows, cols):
    """I.i.d. CN(0, 1) matrix with unit per-entry second moment."""
    return (rng.standard_normal((rows, cols))
            + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)


def random_channels(rng, n_tx, n_rx, group_sizes, direct=False):
    """Unit-variance random channel set (no pathloss scaling)."""
    dims = [n_tx] + list(group_sizes) + [n_rx]
    hops = [cn(rng, dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
    h_direct = cn(rng, n_rx, n_tx) if direct else None
    channels = ChannelSet(h_hops=hops, h_direct=h_direct,
                          carrier_frequency=28e9)
    channels.validate()
    return channels


def random_params(rng, channels, n_streams):
    """Random precoder, combiner, and gain vectors matching the channels."""
    gains = [cn(rng, k, 1)[:, 0] for k in channels.group_sizes]
    return AirFcParams(f1=cn(rng, channels.n_tx, n_streams),
                       f2=cn(rng, n_streams, channels.n_rx),
                       gains=gains)


def khatri_rao_columns(v, u):
    """Materialized column-wise Kronecker matrix B with B a = vec(U diag(a) V).

    vec() stacks columns (column-major); column k of B is
    kron(row k of V, column k of U) arranged to that convention.
    """
    n, k = u.shape
    m = v.shape[1]
    b = np.zeros((n * m, k), dtype=complex)
    for i in range(k):
        b[:, i] = np.kron(v[i, :], u[:, i])
    return b
