"""Trace-ensemble generation and the on-disk store (binary records + JSON
manifest).

Ensembles are reproducible from (master seed, index) alone; the manifest
records every physical and numerical parameter plus a content hash, so a
rerun with the same manifest is bit-identical.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .forward import (
    HomogeneousTraceMap,
    MaxwellSolver,
    SolverError,
    noise_values,
)
from .geometry import (
    ConfigurationError,
    Grid3,
    MediumSpec,
    SourceStrength,
    SphereMesh,
    VectorFieldC3,
    evaluate_on_grid,
)

__all__ = [
    "generate_ensemble",
    "write_ensemble",
    "read_ensemble",
    "manifest_hash",
]

_TRACE_MAGIC = b"EMTRC001"


def generate_ensemble(
    k: float,
    medium: MediumSpec,
    sigma: SourceStrength,
    grid: Grid3,
    mesh: SphereMesh,
    M: int,
    master_seed: int,
    workers: int = 1,
    tol: float = 1e-10,
    max_iter: int = 60,
) -> np.ndarray:
    """Boundary traces E x nu of M independent white-noise realizations.

    Homogeneous media go through the direct Green-superposition trace map (a
    single matrix product); inhomogeneous media solve the volume integral
    equation per realization, parallelized across threads. Any solver failure
    aborts the run (failure budget is zero).
    """
    if M < 1:
        raise ConfigurationError("ensemble size must be at least 1")
    sig = evaluate_on_grid(sigma, grid).values.real
    if medium.is_homogeneous:
        mask = sig > 0
        if not np.any(mask):
            return np.zeros((M, mesh.n_nodes, 3), dtype=np.complex128)
        tmap = HomogeneousTraceMap(k, grid, mask, mesh)
        J = np.empty((M, tmap.n_cells, 3))
        for r in range(M):
            J[r] = noise_values(sig, grid.spacing, master_seed, r)[:, mask].T
        return tmap.traces(J)

    solver = MaxwellSolver(k, medium, grid)

    def one(r: int) -> np.ndarray:
        J = noise_values(sig, grid.spacing, master_seed, r)
        src = VectorFieldC3(grid, 1j * k * J.astype(np.complex128))
        try:
            sol = solver.solve(src, tol=tol, max_iter=max_iter, mesh=mesh)
        except SolverError as exc:
            raise SolverError(
                f"realization {r} failed: {exc}", exc.residual_history
            ) from exc
        return sol.trace.values

    traces = np.empty((M, mesh.n_nodes, 3), dtype=np.complex128)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for r, tr in enumerate(pool.map(one, range(M))):
                traces[r] = tr
    else:
        for r in range(M):
            traces[r] = one(r)
    return traces


def manifest_hash(manifest: dict) -> str:
    """Stable content hash of a manifest (its own hash field excluded)."""
    clean = {k: v for k, v in manifest.items() if k != "hash"}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_ensemble(out_dir, traces: np.ndarray, manifest: dict) -> dict:
    """Write trace records and the JSON manifest; returns the final manifest.

    The binary layout is the magic, (M, N) as little-endian int64, then the
    records as interleaved re/im float64 in realization-major order. The
    manifest gains the data digest and the overall manifest hash.
    """
    os.makedirs(out_dir, exist_ok=True)
    arr = np.ascontiguousarray(traces, dtype=np.complex128)
    M, N, _ = arr.shape
    inter = np.empty(arr.shape + (2,), dtype="<f8")
    inter[..., 0] = arr.real
    inter[..., 1] = arr.imag
    payload = inter.tobytes()
    bin_path = os.path.join(out_dir, "traces.bin")
    with open(bin_path, "wb") as fh:
        fh.write(_TRACE_MAGIC)
        fh.write(np.asarray([M, N], dtype="<i8").tobytes())
        fh.write(payload)
    manifest = dict(manifest)
    manifest["records"] = "traces.bin"
    manifest["realizations"] = M
    manifest["mesh_nodes"] = N
    manifest["data_sha256"] = hashlib.sha256(payload).hexdigest()
    manifest["hash"] = manifest_hash(manifest)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_ensemble(out_dir) -> tuple[np.ndarray, dict]:
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest_hash(manifest) != manifest["hash"]:
        raise ValueError("manifest hash mismatch; the run directory is corrupt")
    with open(os.path.join(out_dir, manifest["records"]), "rb") as fh:
        magic = fh.read(8)
        if magic != _TRACE_MAGIC:
            raise ValueError(f"bad trace magic {magic!r}")
        M, N = np.frombuffer(fh.read(16), dtype="<i8")
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest["data_sha256"]:
        raise ValueError("trace data does not match its manifest digest")
    raw = np.frombuffer(payload, dtype="<f8").reshape(int(M), int(N), 3, 2)
    return raw[..., 0] + 1j * raw[..., 1], manifest
