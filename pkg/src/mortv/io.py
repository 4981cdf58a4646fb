"""Matrix exchange: Matrix Market for E/A, plain column files for b/c samples."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from mortv.errors import MissingData
from mortv.systems import MovingBoundarySystem
from mortv.tv_reduction import interpolation_weights


def write_matrix_market(path, M):
    scipy.io.mmwrite(str(path), sp.coo_matrix(M) if sp.issparse(M) else np.asarray(M), precision=17)


def read_matrix_market(path):
    path = Path(path)
    if not path.exists():
        raise MissingData(f"no such matrix file: {path}")
    M = scipy.io.mmread(str(path))
    return sp.csc_matrix(M) if sp.issparse(M) else np.asarray(M)


def write_columns(path, X):
    """Each matrix column on one line, entries whitespace separated."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w") as fh:
        for col in X.T:
            fh.write(" ".join(f"{v:.17g}" for v in col) + "\n")


def read_columns(path):
    path = Path(path)
    if not path.exists():
        raise MissingData(f"no such column file: {path}")
    rows = [list(map(float, line.split())) for line in path.read_text().splitlines() if line.strip()]
    if not rows:
        raise MissingData(f"{path} holds no columns")
    return np.array(rows).T


def export_system(sys, directory, positions):
    """Write ``E.mtx``, ``A.mtx`` and ``b(p_j)``/``c(p_j)^T`` samples to ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_market(d / "E.mtx", sys.E)
    write_matrix_market(d / "A.mtx", sys.A)
    positions = [float(p) for p in positions]
    write_columns(d / "b_samples.txt", np.hstack([sys.b_at(p) for p in positions]))
    write_columns(d / "c_samples.txt", np.hstack([sys.c_at(p).T for p in positions]))
    meta = {"positions": positions, "coupling": sys.coupling, "position_range": list(map(float, sys.position_range))}
    (d / "system.json").write_text(json.dumps(meta, indent=2) + "\n")


def _sampled_map(positions, cols):
    positions = np.asarray(positions)

    def f(p):
        w = interpolation_weights(positions, p)
        j = w.interval
        return (w.omega_lo * cols[:, j] + w.omega_hi * cols[:, j + 1])[:, None]

    return f


def load_system(directory):
    """Rebuild a :class:`MovingBoundarySystem` from exported files.

    ``b(p)`` and ``c(p)`` are piecewise-linear interpolants of the stored
    samples (exact at the stored positions).
    """
    d = Path(directory)
    meta_path = d / "system.json"
    if not meta_path.exists():
        raise MissingData(f"{meta_path} missing")
    meta = json.loads(meta_path.read_text())
    E = read_matrix_market(d / "E.mtx")
    A = read_matrix_market(d / "A.mtx")
    bcols = read_columns(d / "b_samples.txt")
    ccols = read_columns(d / "c_samples.txt")
    pos = meta["positions"]
    b = _sampled_map(pos, bcols)
    cmap = _sampled_map(pos, ccols)
    c = lambda p: cmap(p).T  # noqa: E731
    return MovingBoundarySystem(E, A, b, c, coupling=meta["coupling"], position_range=tuple(meta["position_range"]))


def export_reduced(rom, directory, p=None):
    """Dense text export of a (frozen) reduced model."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "Er.txt", rom.Er, fmt="%.17g")
    np.savetxt(d / "Ar.txt", rom.Ar, fmt="%.17g")
    np.savetxt(d / "Br.txt", rom.B_at(p), fmt="%.17g")
    np.savetxt(d / "Cr.txt", rom.C_at(p), fmt="%.17g")
