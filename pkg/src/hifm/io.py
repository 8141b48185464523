"""CSV datasets, chain serialization and INI run configuration.

Dataset layout
    ``data.csv``: header row, an integer ``group`` column (labels >= 1) and
    one column per schema entry.  ``schema.csv``: header ``name,type,role``.

Chain layout (directory, default)
    ``meta.json`` holds column schema, scaling constants, hyperparameters,
    MH diagnostics and the sha256 of every block file.  Blocks, one CSV each,
    all with a leading ``draw`` index::

        pi0.csv, theta0.csv    draw, h1..hk
        phi.csv                draw, row, h1..hk
        w.csv                  draw, population, h1..hk
        sigma2.csv             draw, population, <column names>
        lambda.csv             draw, population, row, h1..hk, intercept

Chain layout (binary container, ``chain.bin``)
    16-byte magic, little-endian uint64 header length, UTF-8 JSON header
    (same metadata plus array shapes and the payload sha256), then the
    arrays as little-endian float64 in header order.

Floats are written with 17 significant digits so every file round-trips
exactly.
"""

import configparser
import hashlib
import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ValidationError
from .model import (
    ChainState,
    ColumnSpec,
    Dataset,
    GroupState,
    Hyperparameters,
    MhDiagnostics,
    PosteriorChain,
    SharedState,
)

FLOAT_FMT = "%.17g"
MAGIC = b"HIFM-CHAIN\x00\x00\x00\x00\x00\x01"
CHAIN_BLOCKS = ("pi0", "theta0", "phi", "w", "sigma2", "lambda")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_table(header, rows):
    """CSV text; floats at 17 significant digits, everything else via ``str``."""
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(_cell(v) for v in row))
    return "\n".join(out) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    atomic_write(path, format_table(header, rows))


def read_csv(path):
    """Header and row lists of strings."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    rows = [[c.strip() for c in ln.split(",")] for ln in lines[1:]]
    for i, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ValidationError(f"{path}: line {i} has {len(r)} fields, expected {len(header)}")
    return header, rows


# ---------------------------------------------------------------- datasets

def write_schema(path, columns):
    write_csv(path, ["name", "type", "role"], [[c.name, c.type, c.role] for c in columns])


def read_schema(path):
    header, rows = read_csv(path)
    if header != ["name", "type", "role"]:
        raise ValidationError(f"{path}: schema header must be name,type,role")
    errors, cols = [], []
    for name, typ, role in rows:
        try:
            cols.append(ColumnSpec(name, typ, role))
        except ValidationError as exc:
            errors.append(str(exc))
    if errors:
        raise ValidationError("; ".join(errors))
    return cols


def write_data(path, values, group, names):
    values = np.asarray(values, dtype=float)
    rows = [[int(g)] + [float(v) for v in row] for g, row in zip(group, values)]
    write_csv(path, ["group"] + list(names), rows)


def read_data(path, names=None):
    """``(values, group, header_names)``; with ``names`` the columns are reordered to match."""
    header, rows = read_csv(path)
    if "group" not in header:
        raise ValidationError(f"{path}: missing 'group' column")
    gi = header.index("group")
    cols = [h for i, h in enumerate(header) if i != gi]
    try:
        arr = np.array([[float(c) if c != "" else np.nan for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric value ({exc})") from None
    arr = arr.reshape(len(rows), len(header))
    group = arr[:, gi]
    values = np.delete(arr, gi, axis=1)
    if names is not None:
        missing = [n for n in names if n not in cols]
        extra = [c for c in cols if c not in names]
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing columns: {', '.join(missing)}")
            if extra:
                parts.append(f"unexpected columns: {', '.join(extra)}")
            raise ValidationError(f"{path}: schema/data mismatch ({'; '.join(parts)})")
        values = values[:, [cols.index(n) for n in names]]
        cols = list(names)
    if np.any(~np.isfinite(group)) or np.any(group != np.round(group)):
        raise ValidationError(f"{path}: group labels must be integers")
    return values, group.astype(int), cols


def load_dataset(data_path, schema_path, standardize=True):
    columns = read_schema(schema_path)
    values, group, _ = read_data(data_path, [c.name for c in columns])
    return Dataset(values, columns, group, standardize=standardize)


def save_dataset(directory, dataset, name="data.csv"):
    directory = Path(directory)
    write_data(directory / name, dataset.raw_values(), dataset.group, dataset.names)
    write_schema(directory / "schema.csv", dataset.columns)


def write_truth(path, truth):
    """Long-format ground truth: parameter, population, row, col, value."""
    rows = []
    for l, lam in enumerate(truth.lambda_true):
        pop = l + 1
        for j in range(lam.shape[0]):
            for h in range(lam.shape[1]):
                rows.append(["lambda", pop, j, h, float(lam[j, h])])
        for h, v in enumerate(truth.w_true[l]):
            rows.append(["w", pop, "", h, float(v)])
        for j, v in enumerate(truth.sigma_true[l]):
            rows.append(["sigma2", pop, j, "", float(v)])
        for j, v in enumerate(np.ravel(truth.theta_true[l])):
            rows.append(["theta", pop, j + 1, "", float(v)])
    for h, v in enumerate(truth.pi0_true):
        rows.append(["pi0", "", "", h, float(v)])
    write_csv(path, ["parameter", "population", "row", "col", "value"], rows)


def read_truth(path):
    """Dict keyed by parameter name; population-level blocks are lists indexed from 0."""
    _, rows = read_csv(path)
    out = {}
    for par, pop, row, col, val in rows:
        key = (par, int(pop) - 1 if pop else None)
        out.setdefault(key, []).append((int(row) if row else -1, int(col) if col else -1, float(val)))
    res = {}
    for (par, l), entries in out.items():
        rows_ = max(e[0] for e in entries) + 1
        cols_ = max(e[1] for e in entries) + 1
        if par == "lambda":
            arr = np.zeros((rows_, cols_))
            for r, c, v in entries:
                arr[r, c] = v
        elif par == "theta":
            arr = np.array([v for _, _, v in sorted(entries)])
        elif par == "sigma2":
            arr = np.array([v for _, _, v in sorted(entries)])
        else:
            arr = np.array([v for _, _, v in sorted(entries, key=lambda e: e[1])])
        if l is None:
            res[par] = arr
        else:
            res.setdefault(par, {})[l] = arr
    for par, v in res.items():
        if isinstance(v, dict):
            res[par] = [v[i] for i in sorted(v)]
    return res


# ------------------------------------------------------------------ chains

def _chain_meta(chain):
    return {
        "format": "hifm-chain",
        "version": 1,
        "n_draws": len(chain.draws),
        "columns": [[c.name, c.type, c.role] for c in chain.columns],
        "center": [float(x) for x in chain.center],
        "scale": [float(x) for x in chain.scale],
        "populations": [int(x) for x in chain.populations],
        "hyper": chain.hyper.to_dict(),
        "fingerprint": chain.fingerprint,
        "diagnostics": chain.diagnostics.to_dict(),
    }


def _chain_arrays(chain):
    """Each block as a float array with leading draw index (and population/row indices)."""
    if not chain.draws:
        raise ValidationError("chain has no draws to serialize")
    d0 = chain.draws[0]
    p, k = d0.shared.phi.shape
    n_pop = len(d0.groups)
    nd = len(chain.draws)
    draw = np.arange(nd, dtype=float)
    arrays = {}
    for name in ("pi0", "theta0"):
        arrays[name] = np.column_stack([draw, chain.stack(name)])
    phi = chain.stack("phi")
    arrays["phi"] = np.column_stack([np.repeat(draw, p), np.tile(np.arange(p), nd), phi.reshape(nd * p, k)])
    w = np.stack([chain.stack("w", l) for l in range(n_pop)], axis=1)
    s2 = np.stack([chain.stack("sigma2", l) for l in range(n_pop)], axis=1)
    pops = np.tile(np.arange(1, n_pop + 1), nd)
    arrays["w"] = np.column_stack([np.repeat(draw, n_pop), pops, w.reshape(nd * n_pop, k)])
    arrays["sigma2"] = np.column_stack([np.repeat(draw, n_pop), pops, s2.reshape(nd * n_pop, p)])
    lam = np.stack([chain.stack("lam", l) for l in range(n_pop)], axis=1)  # nd, L, p, k+1
    arrays["lambda"] = np.column_stack([
        np.repeat(draw, n_pop * p),
        np.tile(np.repeat(np.arange(1, n_pop + 1), p), nd),
        np.tile(np.arange(p), nd * n_pop),
        lam.reshape(nd * n_pop * p, k + 1),
    ])
    return arrays


def _block_header(name, k, names):
    hs = [f"h{h + 1}" for h in range(k)]
    return {
        "pi0": ["draw"] + hs,
        "theta0": ["draw"] + hs,
        "phi": ["draw", "row"] + hs,
        "w": ["draw", "population"] + hs,
        "sigma2": ["draw", "population"] + list(names),
        "lambda": ["draw", "population", "row"] + hs + ["intercept"],
    }[name]


_N_INDEX = {"pi0": 1, "theta0": 1, "phi": 2, "w": 2, "sigma2": 2, "lambda": 3}


def _block_text(arr, n_index, header):
    fmt = ["%d"] * n_index + [FLOAT_FMT] * (arr.shape[1] - n_index)
    buf = _io.StringIO()
    np.savetxt(buf, arr, fmt=fmt, delimiter=",", header=",".join(header), comments="")
    return buf.getvalue()


def save_chain(chain, path, fmt="csv"):
    """Serialize ``chain`` to ``path`` (a directory for ``csv``, a file for ``binary``).

    Returns a ``{file name: sha256}`` mapping of what was written.
    """
    path = Path(path)
    meta = _chain_meta(chain)
    arrays = _chain_arrays(chain)
    k = chain.draws[0].shared.pi0.size
    if fmt == "csv":
        path.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in CHAIN_BLOCKS:
            text = _block_text(arrays[name], _N_INDEX[name], _block_header(name, k, chain.names))
            atomic_write(path / f"{name}.csv", text)
            files[f"{name}.csv"] = hashlib.sha256(text.encode()).hexdigest()
        meta["files"] = files
        atomic_write(path / "meta.json", json.dumps(meta, indent=2, sort_keys=True))
        return dict(files, **{"meta.json": sha256_file(path / "meta.json")})
    if fmt == "binary":
        payload = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in CHAIN_BLOCKS)
        meta["arrays"] = [[n, list(arrays[n].shape)] for n in CHAIN_BLOCKS]
        meta["payload_sha256"] = hashlib.sha256(payload).hexdigest()
        head = json.dumps(meta, sort_keys=True).encode()
        atomic_write(path, MAGIC + struct.pack("<Q", len(head)) + head + payload)
        return {path.name: sha256_file(path)}
    raise ValidationError(f"unknown chain format {fmt!r}")


def _read_block(path, expected_sha):
    raw = path.read_bytes() if path.exists() else None
    if raw is None:
        raise IntegrityError(f"chain block missing: {path.name}")
    if hashlib.sha256(raw).hexdigest() != expected_sha:
        raise IntegrityError(f"checksum mismatch for {path.name}: file is truncated or modified")
    return np.atleast_2d(np.loadtxt(_io.StringIO(raw.decode()), delimiter=",", skiprows=1))


def load_chain(path):
    """Inverse of :func:`save_chain`; verifies checksums and raises :class:`IntegrityError`."""
    path = Path(path)
    if path.is_dir():
        try:
            meta = json.loads((path / "meta.json").read_text())
        except FileNotFoundError:
            raise IntegrityError(f"{path}: meta.json missing") from None
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"{path}: meta.json unreadable ({exc})") from None
        arrays = {n: _read_block(path / f"{n}.csv", meta["files"][f"{n}.csv"]) for n in CHAIN_BLOCKS}
    elif path.is_file():
        raw = path.read_bytes()
        if len(raw) < 24 or raw[:16] != MAGIC:
            raise IntegrityError(f"{path}: not a chain container (bad magic)")
        (hlen,) = struct.unpack("<Q", raw[16:24])
        try:
            meta = json.loads(raw[24:24 + hlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise IntegrityError(f"{path}: header is truncated or corrupt") from None
        payload = raw[24 + hlen:]
        if hashlib.sha256(payload).hexdigest() != meta.get("payload_sha256"):
            raise IntegrityError(f"checksum mismatch for {path.name}: file is truncated or modified")
        arrays, off = {}, 0
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=off).reshape(shape).astype(float)
            off += 8 * count
    else:
        raise ValidationError(f"chain not found: {path}")
    return _chain_from_arrays(meta, arrays)


def _chain_from_arrays(meta, arrays):
    nd = meta["n_draws"]
    columns = [ColumnSpec(*c) for c in meta["columns"]]
    p = len(columns)
    n_pop = len(meta["populations"])
    k = arrays["pi0"].shape[1] - 1
    try:
        pi0 = arrays["pi0"][:, 1:].reshape(nd, k)
        theta0 = arrays["theta0"][:, 1:].reshape(nd, k)
        phi = arrays["phi"][:, 2:].reshape(nd, p, k)
        w = arrays["w"][:, 2:].reshape(nd, n_pop, k)
        s2 = arrays["sigma2"][:, 2:].reshape(nd, n_pop, p)
        lam = arrays["lambda"][:, 3:].reshape(nd, n_pop, p, k + 1)
    except ValueError as exc:
        raise IntegrityError(f"chain blocks have inconsistent shapes ({exc})") from None
    draws = []
    for d in range(nd):
        groups = [GroupState(lam[d, l].copy(), w[d, l].copy(), s2[d, l].copy()) for l in range(n_pop)]
        draws.append(ChainState(SharedState(pi0[d].copy(), theta0[d].copy(), phi[d].copy()), groups))
    hyper = Hyperparameters(**meta["hyper"])
    diag = meta.get("diagnostics", {})
    return PosteriorChain(
        draws=draws, hyper=hyper, columns=columns,
        center=np.array(meta["center"], dtype=float), scale=np.array(meta["scale"], dtype=float),
        populations=np.array(meta["populations"], dtype=int), fingerprint=meta.get("fingerprint", ""),
        diagnostics=MhDiagnostics(diag.get("proposals", 0), diag.get("accepts", 0)),
    )


# ------------------------------------------------------------------ config

_MODEL_KEYS = {
    "alpha0": float, "alpha_l": "floats", "tau": float, "sigma_shape": float, "sigma_rate": float,
    "k_star": int, "mh_tuning_c": float, "weight_threshold": float,
}
_SCHEDULE_KEYS = {"n_iter": int, "n_burnin": int, "thin": int}


def parse_int_set(text):
    """``"0-24, 30"`` -> [0, 1, ..., 24, 30]; empty or ``none`` -> []."""
    text = (text or "").strip()
    if text.lower() in ("", "none"):
        return []
    out = set()
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.update(range(int(lo), int(hi) + 1))
            elif part:
                out.add(int(part))
        except ValueError:
            raise ValidationError(f"cannot parse integer set {text!r}") from None
    return sorted(out)


def read_config(path=None, text=None):
    """Parse INI text into a ``ConfigParser`` (missing path -> empty config)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            if not Path(path).exists():
                raise ValidationError(f"config not found: {path}")
            cp.read(path)
    except configparser.Error as exc:
        raise ValidationError(f"invalid config: {exc}") from None
    return cp


def _convert(section, key, raw, kind):
    try:
        if kind == "floats":
            vals = [float(v) for v in raw.replace(",", " ").split()]
            return vals[0] if len(vals) == 1 else vals
        return kind(raw)
    except ValueError:
        raise ValidationError(f"[{section}] {key}: cannot parse {raw!r}") from None


def hyper_from_config(cp, base=None):
    """Hyperparameters from the ``[model]`` and ``[schedule]`` sections."""
    kw = {} if base is None else base.to_dict()
    for section, keys in (("model", _MODEL_KEYS), ("schedule", _SCHEDULE_KEYS)):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key not in keys:
                raise ValidationError(f"[{section}] unknown key {key!r}")
            if raw.strip() == "" or raw.strip().lower() == "auto":
                kw[key] = None
            else:
                kw[key] = _convert(section, key, raw, keys[key])
    return Hyperparameters(**{k: v for k, v in kw.items() if v is not None or k == "k_star"})


def get(cp, section, key, kind=str, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    if kind is bool:
        try:
            return cp.getboolean(section, key)
        except ValueError:
            raise ValidationError(f"[{section}] {key}: expected a boolean") from None
    return _convert(section, key, raw, kind)


def config_echo(cp):
    return {s: dict(cp.items(s)) for s in cp.sections()}
