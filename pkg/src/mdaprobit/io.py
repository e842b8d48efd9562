"""File formats: key-value configs, choice-data CSVs, long-format draws and manifests.

Config grammar, one setting per line::

    # comment
    key = value            # scalars
    key = 1, 0.5, 0.5, 1   # lists (matrices row-major)

Choice data is a CSV with a ``choice`` column (0..p) followed either by
reduced covariates ``x_<k>_<j>`` (row k = 1..p, column j = 1..q of ``X_i``)
or, in ``prices`` mode, by ``price_0..price_p``; the latter builds
``X_i = [I_p, g_i]`` with ``g_ik = log(price_k) - log(price_0)``.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .model import MnpData

FLOAT_FORMAT = "%.17g"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


class DataError(ValueError):
    """Malformed input data file (exit code 3)."""


def fmt(x) -> str:
    return FLOAT_FORMAT % x


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``{key: (raw value, line number)}``; duplicate keys and bad lines are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m or not m.group(2):
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key = m.group(1).lower()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {out[key][1]})")
        out[key] = (m.group(2), lineno)
    return out


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


class ConfigReader:
    """Typed access to parsed settings with line-anchored error messages."""

    def __init__(self, entries: dict, source: str = "<config>", allowed=None):
        self.entries = dict(entries)
        self.source = source
        if allowed is not None:
            for key, (_, lineno) in self.entries.items():
                if key not in allowed:
                    raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")

    def _where(self, key):
        if key not in self.entries:
            return self.source
        line = self.entries[key][1]
        return f"{self.source}:{line}" if line else "command line"

    def error(self, key, message) -> ConfigError:
        return ConfigError(f"{self._where(key)}: {key}: {message}")

    def has(self, key) -> bool:
        return key in self.entries

    def raw(self, key, default=None):
        return self.entries[key][0] if key in self.entries else default

    def int(self, key, default=None):
        if key not in self.entries:
            return default
        try:
            return int(self.entries[key][0])
        except ValueError:
            raise self.error(key, f"expected an integer, got {self.entries[key][0]!r}") from None

    def flag(self, key, default=False):
        if key not in self.entries:
            return default
        value = self.entries[key][0].strip().lower()
        if value not in ("0", "1", "true", "false", "yes", "no"):
            raise self.error(key, f"expected true or false, got {self.entries[key][0]!r}")
        return value in ("1", "true", "yes")

    def float(self, key, default=None):
        if key not in self.entries:
            return default
        try:
            return float(self.entries[key][0])
        except ValueError:
            raise self.error(key, f"expected a number, got {self.entries[key][0]!r}") from None

    def floats(self, key, default=None):
        if key not in self.entries:
            return default
        try:
            return np.array([float(v) for v in self.entries[key][0].split(",")])
        except ValueError:
            raise self.error(key, f"expected comma-separated numbers, got {self.entries[key][0]!r}") from None

    def ints(self, key, default=()):
        if key not in self.entries:
            return default
        try:
            return tuple(int(v) for v in self.entries[key][0].split(",") if v.strip())
        except ValueError:
            raise self.error(key, f"expected comma-separated integers, got {self.entries[key][0]!r}") from None

    def matrix(self, key, size, default=None, allow_diagonal=False):
        vals = self.floats(key)
        if vals is None:
            return default
        if vals.size == size * size:
            return vals.reshape(size, size)
        if allow_diagonal and vals.size == size:
            return np.diag(vals)
        expected = f"{size * size} (dense)" + (f" or {size} (diagonal)" if allow_diagonal else "")
        raise self.error(key, f"expected {expected} values, got {vals.size}")


def design_from_prices(prices) -> np.ndarray:
    """``X_i = [I_p, g_i]`` from an (n, p+1) price array whose column 0 is the base category."""
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 2 or prices.shape[1] < 2:
        raise DataError(f"prices must have shape (n, p+1) with p >= 1, got {prices.shape}")
    if np.any(prices <= 0):
        raise DataError("prices must be positive")
    n, p = prices.shape[0], prices.shape[1] - 1
    g = np.log(prices[:, 1:]) - np.log(prices[:, :1])
    X = np.zeros((n, p, p + 1))
    X[:, :, :p] = np.eye(p)
    X[:, :, p] = g
    return X


_XCOL = re.compile(r"^x_(\d+)_(\d+)$")
_PCOL = re.compile(r"^price_(\d+)$")


def read_choice_data(path, mode: str = "wide") -> MnpData:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read data {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one observation")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "choice":
        raise DataError(f"{path}:1: first column must be 'choice'")
    body = rows[1:]
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
    try:
        values = np.array([[float(v) for v in row] for row in body])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric field ({exc})") from None
    choice = values[:, 0]
    if np.any(choice != np.round(choice)):
        raise DataError(f"{path}: choices must be integers")
    if mode == "wide":
        idx = []
        for col in header[1:]:
            m = _XCOL.match(col)
            if not m:
                raise DataError(f"{path}:1: unexpected column {col!r} in wide mode")
            idx.append((int(m.group(1)), int(m.group(2))))
        if not idx:
            raise DataError(f"{path}:1: no covariate columns")
        p, q = max(k for k, _ in idx), max(j for _, j in idx)
        expected = [(k, j) for k in range(1, p + 1) for j in range(1, q + 1)]
        if sorted(idx) != expected:
            raise DataError(f"{path}:1: covariate columns must be x_k_j for k=1..{p}, j=1..{q}")
        X = np.empty((len(body), p, q))
        for c, (k, j) in enumerate(idx, start=1):
            X[:, k - 1, j - 1] = values[:, c]
    elif mode == "prices":
        cols = []
        for col in header[1:]:
            m = _PCOL.match(col)
            if not m:
                raise DataError(f"{path}:1: unexpected column {col!r} in prices mode")
            cols.append(int(m.group(1)))
        if cols != list(range(len(cols))) or len(cols) < 2:
            raise DataError(f"{path}:1: price columns must be price_0..price_p in order")
        X = design_from_prices(values[:, 1:])
    else:
        raise ConfigError(f"unknown data mode {mode!r}; use 'wide' or 'prices'")
    try:
        return MnpData(choice.astype(np.int64), X)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def choice_data_text(data: MnpData) -> str:
    header = ["choice"] + [f"x_{k}_{j}" for k in range(1, data.p + 1) for j in range(1, data.q + 1)]
    rows = ([str(int(y))] + [fmt(v) for v in x.ravel()] for y, x in zip(data.Y, data.X))
    return _csv_text(header, rows)


def write_choice_data(path, data: MnpData):
    atomic_write(path, choice_data_text(data))


def parameter_names(p: int, q: int, latent_index=()) -> list:
    names = [f"beta_{j}" for j in range(1, q + 1)]
    names += [f"Sigma_{j}_{k}" for j in range(1, p + 1) for k in range(j, p + 1)]
    names.append("alpha")
    names += [f"W_{i + 1}_{k}" for i in latent_index for k in range(1, p + 1)]
    return names


def draws_text(chains) -> str:
    """Long format: ``chain,iteration,parameter,value``."""
    rows = []
    for c, out in enumerate(chains):
        q, p = out.beta.shape[1], out.Sigma.shape[1]
        names = parameter_names(p, q, out.latent_index)
        iu = np.triu_indices(p)
        for r in range(out.n_draws):
            vals = list(out.beta[r]) + list(out.Sigma[r][iu]) + [out.alpha[r]]
            if out.latent is not None:
                vals += list(out.latent[r].ravel())
            it = str(int(out.iterations[r]))
            rows.extend((str(c), it, name, fmt(v)) for name, v in zip(names, vals))
    return _csv_text(["chain", "iteration", "parameter", "value"], rows)


def read_draws(path) -> dict:
    """``{chain: {"iterations": array, "params": {name: array}}}``."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["chain", "iteration", "parameter", "value"]:
                raise DataError(f"{path}:1: expected header chain,iteration,parameter,value")
            chains = {}
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 4:
                    raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
                try:
                    c, it, name, val = int(row[0]), int(row[1]), row[2], float(row[3])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed row {row}") from None
                params = chains.setdefault(c, {})
                params.setdefault(name, ([], []))
                params[name][0].append(it)
                params[name][1].append(val)
    except OSError as exc:
        raise DataError(f"cannot read draws {path}: {exc}") from exc
    if not chains:
        raise DataError(f"{path}: no draws")
    out = {}
    for c, params in sorted(chains.items()):
        its = None
        vals = {}
        for name, (i, v) in params.items():
            i = np.asarray(i)
            if its is None:
                its = i
            elif not np.array_equal(i, its):
                raise DataError(f"{path}: parameter {name!r} of chain {c} has different iterations")
            vals[name] = np.asarray(v)
        out[c] = {"iterations": its, "params": vals}
    return out


def sigma_from_params(params: dict) -> np.ndarray:
    """Rebuild (m, p, p) covariance draws from ``Sigma_j_k`` entries."""
    keys = [k for k in params if k.startswith("Sigma_")]
    if not keys:
        raise DataError("draws contain no Sigma_j_k parameters")
    p = max(int(k.split("_")[2]) for k in keys)
    m = len(params[keys[0]])
    Sigma = np.empty((m, p, p))
    for j in range(1, p + 1):
        for k in range(j, p + 1):
            name = f"Sigma_{j}_{k}"
            if name not in params:
                raise DataError(f"draws are missing {name}")
            Sigma[:, j - 1, k - 1] = Sigma[:, k - 1, j - 1] = params[name]
    return Sigma


def beta_from_params(params: dict) -> np.ndarray:
    q = len([k for k in params if k.startswith("beta_")])
    try:
        return np.column_stack([params[f"beta_{j}"] for j in range(1, q + 1)])
    except KeyError as exc:
        raise DataError(f"draws are missing {exc.args[0]}") from None


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
