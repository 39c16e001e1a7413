"""CSV and JSON persistence with embedded configuration and content hashes."""
from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .model import bloch_vector

TRAJECTORY_COLUMNS = (
    "t", "eps",
    "rho00_re", "rho00_im", "rho01_re", "rho01_im",
    "rho10_re", "rho10_im", "rho11_re", "rho11_im",
    "x", "y", "z", "S", "dSi", "QdotB",
)
PANEL_COLUMNS = ("t", "eps", "dSi", "S", "R")
BLOCH_COLUMNS = ("t", "x", "y", "z")


def digest(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()[:16]


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def trajectory_table(traj) -> np.ndarray:
    rho = traj.rho.reshape(-1, 4)
    parts = [traj.times[:, None], np.asarray(traj.eps)[:, None]]
    for k in range(4):
        parts += [rho[:, k].real[:, None], rho[:, k].imag[:, None]]
    parts += [bloch_vector(traj.rho), traj.entropy[:, None], traj.entropy_production[:, None],
              traj.heat_flux[:, None]]
    return np.hstack(parts)


def write_table(path, columns, table: np.ndarray, config: dict | None = None, meta: dict | None = None) -> str:
    """CSV whose ``#`` header lines carry the config and the hashes.

    Returns the content hash.
    """
    body = io.StringIO()
    np.savetxt(body, table, delimiter=",", fmt="%.17g")
    rows = body.getvalue()
    content = digest(rows)
    lines = []
    if config is not None:
        lines.append(f"# config: {canonical_json(config)}")
        lines.append(f"# config_hash: {digest(canonical_json(config))}")
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append(f"# content_hash: {content}")
    lines.append(",".join(columns))
    Path(path).write_text("\n".join(lines) + "\n" + rows)
    return content


def read_table(path) -> tuple[dict, list[str], np.ndarray]:
    """Inverse of :func:`write_table`: ``(header, columns, data)``."""
    header = {}
    columns = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                header[key] = json.loads(value) if key == "config" else value
                continue
            columns = line.strip().split(",")
            break
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, columns, data


def write_trajectory(path, traj, config: dict | None = None) -> str:
    return write_table(path, TRAJECTORY_COLUMNS, trajectory_table(traj), config, {"engine": traj.engine})


def write_json(path, doc: dict, config: dict | None = None, volatile: dict | None = None) -> str:
    """JSON document with config and content hash; ``volatile`` is stored but not hashed."""
    out = dict(doc)
    if config is not None:
        out["config"] = config
        out["config_hash"] = digest(canonical_json(config))
    out["content_hash"] = digest(canonical_json(out))
    if volatile:
        out["volatile"] = volatile
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out["content_hash"]


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
