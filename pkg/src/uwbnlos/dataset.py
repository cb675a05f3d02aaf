"""Link dataset file format.

One comma-separated record per link after a mandatory header::

    id,state,d_m,b_s,toa_s,sample_rate_hz,t_start_s,n_samples,samples

Scalars use Python's shortest round-trip ``repr`` so they read back bit for
bit.  ``samples`` is the base64 encoding of the little-endian float64 sample
array.  Paths ending in ``.gz`` are transparently gzip-compressed.
"""

from __future__ import annotations

import base64
import binascii
import gzip
import io
import os

import numpy as np

from uwbnlos.errors import DomainError, ParseError
from uwbnlos.synth import ChannelState, LinkObservation, Waveform

HEADER = ("id", "state", "d_m", "b_s", "toa_s", "sample_rate_hz", "t_start_s", "n_samples", "samples")


class _OwningGzip(io.BufferedIOBase):
    """Writable gzip stream that also closes the underlying file."""

    def __init__(self, raw):
        self._raw = raw
        self._gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)

    def writable(self):
        return True

    def write(self, b):
        return self._gz.write(b)

    def close(self):
        if not self.closed:
            self._gz.close()
            self._raw.close()
            super().close()


def _open(path, mode):
    path = os.fspath(path)
    if path.endswith(".gz"):
        # mtime=0 and an empty stored name keep the container deterministic.
        if "w" in mode:
            return io.TextIOWrapper(_OwningGzip(open(path, "wb")), encoding="ascii", newline="\n")
        return io.TextIOWrapper(gzip.GzipFile(path, "rb"), encoding="ascii", newline="\n")
    return open(path, mode, encoding="ascii", newline="\n")


def _encode(samples):
    return base64.b64encode(np.asarray(samples, dtype="<f8").tobytes()).decode("ascii")


def format_record(index, obs: LinkObservation) -> str:
    w = obs.waveform
    return ",".join((
        str(index),
        obs.state.value,
        repr(float(obs.true_distance)),
        repr(float(obs.true_bias)),
        repr(float(obs.toa_est)),
        repr(float(w.sample_rate)),
        repr(float(w.t_start)),
        str(w.samples.size),
        _encode(w.samples),
    ))


def write_dataset(obs, path):
    """Write link observations to ``path``; ids are the list positions."""
    with _open(path, "w") as fh:
        fh.write(",".join(HEADER) + "\n")
        for i, o in enumerate(obs):
            fh.write(format_record(i, o) + "\n")


def parse_record(line, lineno) -> tuple[int, LinkObservation]:
    parts = line.rstrip("\n").split(",")
    if len(parts) != len(HEADER):
        raise ParseError(f"expected {len(HEADER)} fields, got {len(parts)}", lineno)
    try:
        index = int(parts[0])
        state = ChannelState(parts[1])
        d, b, toa, fs, t0 = (float(x) for x in parts[2:7])
        n = int(parts[7])
        raw = base64.b64decode(parts[8], validate=True)
    except (ValueError, binascii.Error) as exc:
        raise ParseError(str(exc), lineno) from None
    if len(raw) != 8 * n:
        raise ParseError(f"sample payload holds {len(raw) // 8} values, header says {n}", lineno)
    samples = np.frombuffer(raw, dtype="<f8").astype(float)
    try:
        obs = LinkObservation(Waveform(samples, fs, t0), toa, d, b, state)
    except DomainError as exc:
        raise ParseError(str(exc), lineno) from None
    return index, obs


def read_dataset(path) -> list[LinkObservation]:
    """Read a dataset written by :func:`write_dataset`.

    Raises:
        ParseError: on a missing/unknown header or any malformed record; the
            error carries the 1-based line number.
    """
    out = []
    with _open(path, "r") as fh:
        header = fh.readline()
        if header.rstrip("\n").split(",") != list(HEADER):
            raise ParseError("missing or unrecognised header", 1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            out.append(parse_record(line, lineno)[1])
    return out


def split_pool(obs, train=True):
    """Deterministic disjoint split: even positions train, odd ones evaluate."""
    return list(obs[0 if train else 1::2])
