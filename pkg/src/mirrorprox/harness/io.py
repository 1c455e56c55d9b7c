"""File formats: PGM images, CSV matrices, observed-cell lists, traces, configs and dumps."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import InputError

TRACE_HEADER = ["t", "seconds", "upper", "lower", "gap", "rho_or_alpha", "restarts"]


# ---------------------------------------------------------------------------
# images


def write_pgm(path, image):
    """Write a matrix with values in [0, 1] as binary 8-bit PGM (values are clipped and rounded)."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise InputError("PGM export needs a matrix")
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf):
    """Yield header tokens and the offset just past the last one, skipping comments."""
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace():
            j += 1
        if j == i:
            raise InputError("truncated PGM header")
        tokens.append(buf[i:j])
        i = j
    return tokens, i + 1


def read_pgm(path):
    """Read a binary (P5) PGM image and rescale it to [0, 1]."""
    buf = Path(path).read_bytes()
    tokens, off = _pgm_tokens(buf)
    if tokens[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval <= 0 or maxval > 65535:
        raise InputError(f"{path}: bad maxval {maxval}")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = w * h
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
    if data.size != count:
        raise InputError(f"{path}: expected {count} pixels")
    return data.reshape(h, w).astype(float) / maxval


# ---------------------------------------------------------------------------
# matrices and masks


def write_matrix_csv(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def read_matrix_csv(path):
    M = np.loadtxt(path, delimiter=",", ndmin=2)
    if not np.isfinite(M).all():
        raise InputError(f"{path}: non-finite entries")
    return M


def load_image(path):
    """PGM or CSV matrix, by extension."""
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return read_pgm(path)
    if suffix in (".csv", ".txt"):
        return read_matrix_csv(path)
    raise InputError(f"unsupported image format {suffix!r}")


def write_omega_csv(path, mask):
    """Observed cells as ``i,j`` rows (zero-based, row-major order)."""
    rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["i", "j"])
        wr.writerows(zip(rows.tolist(), cols.tolist()))


def read_omega_csv(path, shape):
    mask = np.zeros(shape, dtype=bool)
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["i", "j"]:
            raise InputError(f"{path}: expected header i,j")
        for row in rd:
            i, j = int(row[0]), int(row[1])
            if not (0 <= i < shape[0] and 0 <= j < shape[1]):
                raise InputError(f"{path}: cell ({i},{j}) outside {shape}")
            mask[i, j] = True
    return mask


# ---------------------------------------------------------------------------
# traces


def format_trace(rows, include_time=True):
    lines = [",".join(TRACE_HEADER)]
    for r in rows:
        vals = [r.t, r.seconds if include_time else 0.0, r.upper, r.lower, r.gap, r.rho_or_alpha, r.restarts]
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace_csv(path, rows):
    Path(path).write_text(format_trace(rows))


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != TRACE_HEADER:
            raise InputError(f"{path}: unexpected trace header {rd.fieldnames}")
        return [dict((k, float(v)) for k, v in row.items()) for row in rd]


# ---------------------------------------------------------------------------
# configs


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment; keys use underscores or dashes."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InputError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = val
    return out


def read_config(path):
    return parse_config_text(Path(path).read_text())


def dump_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


# ---------------------------------------------------------------------------
# instance and protocol dumps


def write_instance_dir(path, meta, matrices, mask=None):
    """Directory with ``meta.txt`` (key=value), one CSV per matrix and optional ``omega.csv``."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    (d / "meta.txt").write_text(dump_config(meta))
    for name, M in matrices.items():
        write_matrix_csv(d / f"{name}.csv", M)
    if mask is not None:
        write_omega_csv(d / "omega.csv", mask)


def read_instance_dir(path):
    d = Path(path)
    if not (d / "meta.txt").exists():
        raise InputError(f"{path}: missing meta.txt")
    meta = read_config(d / "meta.txt")
    mats = {p.stem: read_matrix_csv(p) for p in d.glob("*.csv") if p.stem != "omega"}
    mask = None
    if (d / "omega.csv").exists():
        n1, n2 = int(meta["rows"]), int(meta["cols"])
        mask = read_omega_csv(d / "omega.csv", (n1, n2))
    return meta, mats, mask


def save_protocol(path, summary, **extra):
    """Store certificate-weighted protocol aggregates (``.npz``)."""
    np.savez(path, inner=summary.inner, field_u=summary.field_u, field_v=summary.field_v,
             point_u=summary.point.u, point_v=summary.point.v, **extra)


def load_protocol(path):
    with np.load(path, allow_pickle=False) as z:
        return {k: z[k] for k in z.files}
