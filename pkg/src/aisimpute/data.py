"""Datasets: synthetic generators, train/validation/test splits, COO text
files and factor files.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64), so a
seed pins a dataset exactly.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from .linalg import LowRankFactors
from .splr import SparseCoo
from .tensor import LatentDecomposition, SparseTensorCoo

__all__ = [
    "Dataset",
    "synth_matrix",
    "synth_tensor",
    "load_coo",
    "save_coo",
    "save_dataset",
    "load_dataset",
    "save_factors",
    "load_factors",
    "split_entries",
]


class FormatError(ValueError):
    """Malformed input file; the message names the offending line."""


@dataclass
class Dataset:
    """Train/validation/test splits with disjoint index sets.

    For synthetic data ``test`` holds the noise-free ground truth on every
    unobserved entry.
    """

    train: object
    valid: object
    test: object
    dims: tuple
    note: str = ""

    def __post_init__(self):
        keys = [_linear_keys(s, self.dims) for s in (self.train, self.valid, self.test)]
        for a, b in ((0, 1), (0, 2), (1, 2)):
            if np.intersect1d(keys[a], keys[b]).size:
                raise ValueError("dataset splits overlap")

    @property
    def is_tensor(self):
        return len(self.dims) > 2


def _linear_keys(s, dims):
    if isinstance(s, SparseCoo):
        return s.rows * np.int64(dims[1]) + s.cols
    return s.linear_keys()


def _n_observed(m, factor):
    return int(math.floor(factor * m * math.log(m)))


def split_entries(idx, rng, fractions):
    """Shuffle ``idx`` and cut it into consecutive parts of the given sizes."""
    idx = rng.permutation(idx)
    cuts = np.cumsum([int(round(f * idx.size)) for f in fractions[:-1]])
    return np.split(idx, cuts)


def synth_matrix(m, rank=5, noise_sd=0.05, seed=0):
    """Rank-``rank`` m x m matrix ``U V`` with standard normal factors.

    ``floor(15 m ln m)`` entries (at most ``m^2``) are observed with
    Gaussian noise, split 50/50 into train and validation; every other entry
    goes to the test split with its noise-free value.
    """
    if m < 10:
        raise ValueError("m must be at least 10")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((m, rank))
    V = rng.standard_normal((rank, m))
    truth = U @ V
    noisy = truth + noise_sd * rng.standard_normal((m, m))
    n_obs = min(_n_observed(m, 15), m * m)
    observed = np.sort(rng.choice(m * m, size=n_obs, replace=False))
    perm = rng.permutation(observed)
    half = n_obs // 2
    train_idx, valid_idx = np.sort(perm[:half]), np.sort(perm[half:])
    mask = np.ones(m * m, dtype=bool)
    mask[observed] = False
    test_idx = np.flatnonzero(mask)

    def coo(idx, source):
        r, c = np.divmod(idx, m)
        return SparseCoo(r, c, source.ravel()[idx], (m, m))

    return Dataset(coo(train_idx, noisy), coo(valid_idx, noisy), coo(test_idx, truth), (m, m),
                   note="synthetic rank-%d matrix, m=%d, noise_sd=%g, seed=%d"
                   % (rank, m, noise_sd, seed))


def _mode_product(T, A, mode):
    # (T x_mode A): contract A's columns with T's axis ``mode``
    return np.moveaxis(np.tensordot(A, T, axes=(1, mode)), 0, mode)


def synth_tensor(m, seed=0, noise_sd=0.05, rank=3, third=3):
    """m x m x 3 tensor ``C x1 A1 x2 A2 x3 A3`` (low rank in modes 1-2 only).

    ``floor(45 m ln m)`` entries are observed with Gaussian noise and split
    50/50 into train and validation; the rest is the noise-free test split.
    """
    if m < 10:
        raise ValueError("m must be at least 10")
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((rank, rank, third))
    A1 = rng.standard_normal((m, rank))
    A2 = rng.standard_normal((m, rank))
    A3 = rng.standard_normal((third, third))
    truth = _mode_product(_mode_product(_mode_product(C, A1, 0), A2, 1), A3, 2)
    noisy = truth + noise_sd * rng.standard_normal(truth.shape)
    dims = truth.shape
    total = truth.size
    n_obs = min(_n_observed(m, 45), total)
    observed = np.sort(rng.choice(total, size=n_obs, replace=False))
    perm = rng.permutation(observed)
    half = n_obs // 2
    train_idx, valid_idx = np.sort(perm[:half]), np.sort(perm[half:])
    mask = np.ones(total, dtype=bool)
    mask[observed] = False
    test_idx = np.flatnonzero(mask)

    def coo(idx, source):
        # C-order linear index -> lexicographically sorted tuples
        subs = np.stack(np.unravel_index(idx, dims), axis=1)
        return SparseTensorCoo(subs, source.ravel()[idx], dims)

    return Dataset(coo(train_idx, noisy), coo(valid_idx, noisy), coo(test_idx, truth), dims,
                   note="synthetic %dx%dx%d tensor, seed=%d" % (dims + (seed,)))


# ---------------------------------------------------------------- COO files

def _format_value(x):
    return repr(float(x))


def save_coo(path, s):
    """Write 1-based ``i j [k ...] value`` lines under a ``# dims:`` header."""
    if isinstance(s, SparseCoo):
        dims, subs = s.shape, np.stack([s.rows, s.cols], axis=1)
    else:
        dims, subs = s.dims, s.indices
    with open(path, "w") as fh:
        fh.write("# dims: %s\n" % " ".join(str(d) for d in dims))
        for idx, v in zip(subs + 1, s.vals):
            fh.write(" ".join(str(i) for i in idx) + " " + _format_value(v) + "\n")


def load_coo(path, dims=None):
    """Read a COO text file.

    ``dims`` may be omitted when the file carries a ``# dims:`` header.
    Two-index files yield a :class:`SparseCoo`, longer ones a
    :class:`SparseTensorCoo`.  MovieLens-style ``user item rating`` files
    (tab or space separated, extra columns such as timestamps ignored) load
    when ``dims`` is given.
    """
    header = None
    subs, vals, lines = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("dims:"):
                    try:
                        header = tuple(int(x) for x in body[5:].split())
                    except ValueError:
                        raise FormatError("%s:%d: bad dims header" % (path, lineno))
                continue
            parts = line.replace("\t", " ").replace("::", " ").split()
            order = len(dims or header or ()) or len(parts) - 1
            if len(parts) < order + 1:
                raise FormatError("%s:%d: expected %d indices and a value" % (path, lineno, order))
            try:
                idx = [int(p) for p in parts[:order]]
                val = float(parts[order])
            except ValueError:
                raise FormatError("%s:%d: cannot parse %r" % (path, lineno, line))
            subs.append(idx)
            vals.append(val)
            lines.append(lineno)
    dims = tuple(dims) if dims is not None else header
    if dims is None:
        raise FormatError("%s: no dims given and no '# dims:' header" % path)
    subs = np.array(subs, dtype=np.int64).reshape(-1, len(dims)) - 1
    vals = np.array(vals, dtype=float)
    lines = np.array(lines)
    if not np.all(np.isfinite(vals)):
        bad = lines[~np.isfinite(vals)][0]
        raise FormatError("%s:%d: non-finite value" % (path, bad))
    for d, size in enumerate(dims):
        out = (subs[:, d] < 0) | (subs[:, d] >= size)
        if np.any(out):
            raise FormatError("%s:%d: index out of range for dims %r"
                              % (path, lines[out][0], dims))
    key = np.ravel_multi_index(tuple(subs.T), dims) if len(vals) else np.zeros(0, np.int64)
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    dup = np.flatnonzero(np.diff(key_sorted) == 0)
    if dup.size:
        a, b = lines[order[dup[0]]], lines[order[dup[0] + 1]]
        raise FormatError("%s: duplicate entry on lines %d and %d" % (path, a, b))
    subs, vals = subs[order], vals[order]
    if len(dims) == 2:
        return SparseCoo(subs[:, 0], subs[:, 1], vals, dims)
    return SparseTensorCoo(subs, vals, dims)


def save_dataset(directory, ds):
    os.makedirs(directory, exist_ok=True)
    for name in ("train", "valid", "test"):
        save_coo(os.path.join(directory, name + ".txt"), getattr(ds, name))
    with open(os.path.join(directory, "README.txt"), "w") as fh:
        fh.write(ds.note + "\n")


def load_dataset(directory):
    parts = {name: load_coo(os.path.join(directory, name + ".txt"))
             for name in ("train", "valid", "test")}
    dims = parts["train"].shape if isinstance(parts["train"], SparseCoo) else parts["train"].dims
    note = ""
    readme = os.path.join(directory, "README.txt")
    if os.path.exists(readme):
        with open(readme) as fh:
            note = fh.read().strip()
    return Dataset(parts["train"], parts["valid"], parts["test"], tuple(dims), note)


# ------------------------------------------------------------- factor files

def _write_block(fh, A):
    for row in A:
        fh.write(" ".join("%.17g" % x for x in row) + "\n")


def _write_factors(fh, f):
    m, n = f.shape
    fh.write("%d %d %d\n" % (m, n, f.rank))
    _write_block(fh, f.U)
    fh.write(" ".join("%.17g" % x for x in f.sigma) + "\n")
    _write_block(fh, f.V)


def save_factors(path, X):
    """Write a :class:`LowRankFactors` or :class:`LatentDecomposition`.

    Layout: ``rows cols rank`` then the U rows, one sigma line and the V
    rows; tensors start with ``modes D`` and repeat the block per mode.
    """
    with open(path, "w") as fh:
        if isinstance(X, LatentDecomposition):
            fh.write("modes %d\n" % len(X.factors))
            fh.write("dims %s\n" % " ".join(str(d) for d in X.dims))
            for f in X.factors:
                _write_factors(fh, f)
        else:
            _write_factors(fh, X)


def _read_factors(lines, pos):
    m, n, k = (int(x) for x in lines[pos].split())
    pos += 1

    def block(rows, pos):
        if k == 0:
            return np.zeros((rows, 0)), pos
        A = np.array([[float(x) for x in lines[pos + i].split()] for i in range(rows)])
        return A.reshape(rows, k), pos + rows

    U, pos = block(m, pos)
    sigma = np.array([float(x) for x in lines[pos].split()])
    pos += 1
    V, pos = block(n, pos)
    return LowRankFactors(U, sigma, V), pos


def load_factors(path):
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines[0].startswith("modes"):
        D = int(lines[0].split()[1])
        dims = tuple(int(x) for x in lines[1].split()[1:])
        pos, factors = 2, []
        for _ in range(D):
            f, pos = _read_factors(lines, pos)
            factors.append(f)
        return LatentDecomposition(dims, tuple(factors))
    return _read_factors(lines, 0)[0]
