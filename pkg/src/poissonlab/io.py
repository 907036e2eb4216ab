"""File formats shared by the CLI: vectors as headerless single-column CSV,
matrices as Matrix Market coordinate files, run manifests as JSON."""
import hashlib
import json
import os
import platform

import numpy as np
import scipy.io
import scipy.sparse as sp

FLOAT_FMT = "%.17g"


def write_vector(path, values):
    np.savetxt(path, np.asarray(values, dtype=float).reshape(-1), fmt=FLOAT_FMT)


def read_vector(path):
    return np.atleast_1d(np.loadtxt(path, dtype=float, ndmin=1))


def write_table(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_matrix(path, matrix):
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), precision=17)


def read_matrix(path):
    return sp.csr_matrix(scipy.io.mmread(str(path)))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def file_digest(path):
    """SHA-256 of a file, or of every file under a directory in sorted order."""
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                if name.endswith(".manifest.json"):
                    continue
                full = os.path.join(root, name)
                h.update(os.path.relpath(full, path).encode())
                with open(full, "rb") as fh:
                    h.update(fh.read())
    else:
        with open(path, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def manifest(command, config, inputs, wall_ms):
    from . import __version__
    return {
        "command": command,
        "config": config,
        "input_hashes": {name: file_digest(p) for name, p in sorted(inputs.items())
                         if p is not None and os.path.exists(p)},
        "tool_version": __version__,
        "python": platform.python_version(),
        "wall_clock_ms": wall_ms,
    }


def manifest_path(out):
    out = str(out).rstrip("/")
    if os.path.isdir(out):
        return os.path.join(out, "run.manifest.json")
    return out + ".manifest.json"
