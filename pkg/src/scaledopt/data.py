"""Datasets for binary classification: LIBSVM I/O, synthetic generation, scaling.

A dataset is a sparse CSR feature matrix with labels in {-1, +1} plus the
per-feature scaling that was applied to it. Randomness everywhere goes through
:class:`SeededRng`, a thin wrapper over numpy's PCG64 that supports labeled
substreams, so independent draw sequences (batches, anchor coin flips,
Hutchinson probes, feature scales) never interleave.
"""

from __future__ import annotations

import hashlib
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Dataset",
    "SeededRng",
    "ParseError",
    "derive_seed",
    "parse_libsvm",
    "serialize_libsvm",
    "apply_feature_scaling",
    "generate_synthetic",
]


class ParseError(ValueError):
    """Malformed dataset text; message carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def derive_seed(base_seed: int, *parts) -> int:
    """Deterministic 63-bit child seed from a base seed and labels.

    Hash-based so collisions between distinct label tuples are negligible and
    the mapping is stable across platforms and numpy versions.
    """
    key = "|".join([str(int(base_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


class SeededRng:
    """PCG64 generator with deterministic labeled substreams."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def substream(self, label: str) -> "SeededRng":
        """Independent stream identified by (seed, label)."""
        return SeededRng(derive_seed(self.seed, label))

    # draw helpers used across the package; all delegate to one generator so
    # the draw order within a stream is the documented one

    def uniform(self, low: float, high: float, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def rademacher(self, n: int) -> np.ndarray:
        """Vector of +-1 entries, each +1 with probability 1/2."""
        return self.generator.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0

    def bernoulli(self, p: float) -> bool:
        return bool(self.generator.random() < p)

    def batch_indices(self, m: int, size: int, with_replacement: bool = True) -> np.ndarray:
        if with_replacement:
            return self.generator.integers(0, m, size=size)
        return self.generator.choice(m, size=size, replace=False)


@dataclass
class Dataset:
    """Sparse feature matrix, labels in {-1,+1}, and scaling provenance.

    ``scale`` holds the per-feature multipliers already materialized into
    ``features``; ``amplitude`` is the half-width A of the uniform law the
    multipliers were drawn from (0.0 means unscaled).
    """

    features: sp.csr_matrix
    labels: np.ndarray
    scale: np.ndarray = field(default=None)  # type: ignore[assignment]
    amplitude: float = 0.0

    def __post_init__(self):
        if not sp.issparse(self.features):
            self.features = sp.csr_matrix(np.asarray(self.features, dtype=np.float64))
        self.features = self.features.tocsr().astype(np.float64)
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.features.shape[0]} rows"
            )
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        self.labels = self.labels.astype(np.int64)
        if self.scale is None:
            self.scale = np.ones(self.features.shape[1])
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if self.scale.shape != (self.features.shape[1],):
            raise ValueError("scale vector length must equal the feature count")

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]


_LABEL_MAP = {"+1": 1, "1": 1, "-1": -1, "0": -1}


def parse_libsvm(source, n_features: int | None = None) -> Dataset:
    """Read LIBSVM-format text into a :class:`Dataset`.

    ``source`` is a path or an open text/binary stream. Indices are 1-based in
    the file and must be strictly increasing within a row. Labels accepted:
    +1/1, -1, and 0 (mapped to -1). Blank lines are skipped; comment lines are
    rejected; CRLF endings are tolerated. ``n_features`` raises the column
    count when the data's max index undershoots it.
    """
    if hasattr(source, "read"):
        stream = source
        close = False
    else:
        stream = open(source, "rb")
        close = True
    labels: list[int] = []
    data: list[float] = []
    indices: list[int] = []
    indptr: list[int] = [0]
    max_index = 0
    try:
        for lineno, raw in enumerate(stream, start=1):
            if isinstance(raw, bytes):
                try:
                    line = raw.decode("utf-8")
                except UnicodeDecodeError as exc:
                    raise ParseError(f"not valid UTF-8 ({exc})", lineno) from None
            else:
                line = raw
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                raise ParseError("comment lines are not allowed", lineno)
            tokens = line.split()
            label_tok = tokens[0]
            if label_tok not in _LABEL_MAP:
                raise ParseError(f"unrecognized label {label_tok!r}", lineno)
            labels.append(_LABEL_MAP[label_tok])
            prev_idx = 0
            for tok in tokens[1:]:
                idx_s, _, val_s = tok.partition(":")
                if not _:
                    raise ParseError(f"malformed feature token {tok!r}", lineno)
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise ParseError(f"bad feature index in {tok!r}", lineno) from None
                try:
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"bad feature value in {tok!r}", lineno) from None
                if idx < 1:
                    raise ParseError(f"feature index must be >= 1, got {idx}", lineno)
                if idx <= prev_idx:
                    raise ParseError(
                        f"feature indices must be strictly increasing, got {idx} after {prev_idx}",
                        lineno,
                    )
                if not np.isfinite(val):
                    raise ParseError(f"non-finite feature value {val_s!r}", lineno)
                prev_idx = idx
                indices.append(idx - 1)
                data.append(val)
            indptr.append(len(data))
            max_index = max(max_index, prev_idx)
    finally:
        if close:
            stream.close()
    if not labels:
        raise ParseError("no data rows found")
    n = max(max_index, n_features or 0)
    X = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int32), np.asarray(indptr, dtype=np.int32)),
        shape=(len(labels), n),
    )
    return Dataset(X, np.asarray(labels))


def serialize_libsvm(dataset: Dataset, target=None) -> str | None:
    """Write a dataset back to LIBSVM text (1-based indices, %.17g values).

    %.17g round-trips float64 exactly. Returns the text when ``target`` is
    None, otherwise writes to the path or stream.
    """
    X = dataset.features.tocsr()
    buf = io.StringIO()
    for i in range(X.shape[0]):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        parts = ["+1" if dataset.labels[i] > 0 else "-1"]
        for j, v in zip(X.indices[lo:hi], X.data[lo:hi]):
            parts.append("%d:%.17g" % (j + 1, v))
        buf.write(" ".join(parts))
        buf.write("\n")
    text = buf.getvalue()
    if target is None:
        return text
    if hasattr(target, "write"):
        target.write(text)
        return None
    with open(target, "w", encoding="utf-8") as fh:
        fh.write(text)
    return None


def apply_feature_scaling(dataset: Dataset, amplitude: float, rng: SeededRng) -> Dataset:
    """Scale feature j by a_j drawn uniformly from [-A, A].

    The underlying unit draws do not depend on A, so datasets produced at two
    amplitudes from the same rng seed are exactly proportional. Expects an
    unscaled dataset; sparsity structure is preserved (stored zeros included).
    """
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    if dataset.amplitude != 0.0:
        raise ValueError("dataset is already scaled; start from the unscaled one")
    unit = rng.uniform(-1.0, 1.0, dataset.n)
    scale = amplitude * unit
    if amplitude == 0.0:
        warnings.warn("amplitude 0 zeroes every feature", stacklevel=2)
    X = dataset.features
    scaled = sp.csr_matrix(
        (X.data * scale[X.indices], X.indices.copy(), X.indptr.copy()), shape=X.shape
    )
    return Dataset(scaled, dataset.labels.copy(), scale=scale, amplitude=float(amplitude))


def generate_synthetic(m: int, n: int, rng: SeededRng, density: float = 0.1, weight_std: float = 1.5):
    """Sparse {0,1} features with labels from a planted logistic model.

    Returns ``(dataset, planted_weights)``. Feature entries are Bernoulli(
    ``density``); planted weights are N(0, weight_std^2); each label is +1
    with probability sigmoid(<planted, features_i>). Draw order is fixed
    (mask, weights, label coins) so a seed pins the dataset bytes.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    mask = rng.random((m, n)) < density
    X = sp.csr_matrix(mask.astype(np.float64))
    w_true = weight_std * rng.standard_normal(n)
    margins = X @ w_true
    prob_pos = 1.0 / (1.0 + np.exp(-margins))
    labels = np.where(rng.random(m) < prob_pos, 1, -1)
    return Dataset(X, labels), w_true
