"""Temporal correlation models backing the soft constraints.

Three interchangeable models estimate how correlated two documents are in
time, each returning values in [0, 1]:

  * recency: exponential decay in the timestamp gap;
  * category: per-category Gaussian KDE density curves over the corpus
    timespan, peak-normalized; the correlation of a pair is the density
    product under the shared category that maximizes it;
  * topic: per-word temporal densities from a chained-slice topic model
    (collapsed Gibbs LDA per time slice, each slice's topic-word counts
    seeded from the previous slice), aggregated over a document's words.

All are fitted on the training split, frozen before subspace learning, and
queried through ``pair_sim(doc_i, doc_j)`` during training. The topic model
conditions on document i's words and document j's timestamp, so it is
asymmetric by construction.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Document, TimeAxis

TEMPORAL_MAGIC = b"TXNT"
KIND_TAGS = {"recency": b"REC\x00", "category": b"KDE\x00", "topic": b"TOP\x00"}
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

DEFAULT_TOPIC_FLOOR = 1e-6


class TemporalModelError(Exception):
    pass


class UnknownCategoryError(TemporalModelError):
    """Queried a category with no fitted density curve."""


# ---------------------------------------------------------------------------
# Recency


@dataclass(frozen=True)
class RecencyModel:
    """sim(t_i, t_j) = exp(-|t_i - t_j| / h_rec), in time units."""

    h_rec: float

    def __post_init__(self):
        if self.h_rec <= 0:
            raise TemporalModelError("h_rec must be positive")

    kind = "recency"

    def sim(self, t_i: float, t_j: float) -> float:
        return math.exp(-abs(t_i - t_j) / self.h_rec)

    def pair_sim(self, doc_i: Document, doc_j: Document) -> float:
        return self.sim(doc_i.timestamp, doc_j.timestamp)


def recency_sim(t_i, t_j, model: RecencyModel) -> float:
    return model.sim(t_i, t_j)


# ---------------------------------------------------------------------------
# Category KDE


def gaussian_kde_density(obs: np.ndarray, t, bandwidth: float):
    """Direct Gaussian-sum density estimate; also the grid-free oracle."""
    t = np.asarray(t, dtype=np.float64)
    z = (t[..., None] - obs) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=-1) / (len(obs) * bandwidth * math.sqrt(2 * math.pi))


@dataclass
class CategoryKDE:
    """Peak-normalized per-category density curves on a uniform grid."""

    bandwidth: float
    grid: np.ndarray
    curves: dict[str, np.ndarray]
    observations: dict[str, np.ndarray]
    missing_pair_count: int = 0

    kind = "category"

    def density(self, category: str, t) -> float | np.ndarray:
        """Peak-normalized density at t, linearly interpolated on the grid."""
        curve = self.curves.get(category)
        if curve is None:
            raise UnknownCategoryError(f"no fitted curve for category {category!r}")
        return np.interp(t, self.grid, curve)

    def sim(self, t_i, labels_i, t_j, labels_j) -> float:
        """Max over shared fitted labels of the two density values' product."""
        best = None
        for lab in labels_i & labels_j:
            curve = self.curves.get(lab)
            if curve is None:
                continue
            value = float(np.interp(t_i, self.grid, curve) * np.interp(t_j, self.grid, curve))
            if best is None or value > best:
                best = value
        if best is None:
            self.missing_pair_count += 1
            return 0.0
        return best

    def pair_sim(self, doc_i: Document, doc_j: Document) -> float:
        return self.sim(doc_i.timestamp, doc_i.labels, doc_j.timestamp, doc_j.labels)


def fit_category_kde(train: Corpus, bandwidth: float, grid_size: int = 2048) -> CategoryKDE:
    """Fit one Gaussian-KDE curve per category with at least one observation.

    Curves are sampled on a uniform grid over the corpus timespan and
    peak-normalized so the maximum is exactly 1.
    """
    if bandwidth <= 0:
        raise TemporalModelError("bandwidth must be positive")
    if grid_size < 2:
        raise TemporalModelError("grid_size must be >= 2")
    t_max = max(d.timestamp for d in train.documents)
    grid = np.linspace(0.0, t_max, grid_size)
    per_category: dict[str, list[float]] = {}
    for doc in train.documents:
        for lab in doc.labels:
            per_category.setdefault(lab, []).append(doc.timestamp)
    curves, observations = {}, {}
    for lab in sorted(per_category):
        obs = np.array(per_category[lab], dtype=np.float64)
        raw = gaussian_kde_density(obs, grid, bandwidth)
        curves[lab] = raw / raw.max()
        observations[lab] = obs
    return CategoryKDE(
        bandwidth=bandwidth, grid=grid, curves=curves, observations=observations
    )


def category_sim(t_i, labels_i, t_j, labels_j, model: CategoryKDE) -> float:
    return model.sim(t_i, frozenset(labels_i), t_j, frozenset(labels_j))


# ---------------------------------------------------------------------------
# Topic densities (chained-slice Gibbs LDA)


@dataclass
class TopicDensity:
    """Per-word temporal density profiles from the chained-slice topic model.

    ``phi`` has one row per vocabulary word, one column per effective
    (nonempty, after forward-merging) time slice; rows sum to 1.
    ``beta`` keeps the per-slice topic-word distributions for diagnostics.
    ``slice_map`` sends every original slice index to its effective slice.
    """

    num_topics: int
    vocabulary: list[str]
    phi: np.ndarray
    beta: np.ndarray
    slice_map: np.ndarray
    time_axis: TimeAxis
    floor: float = DEFAULT_TOPIC_FLOOR
    aggregate: str = "geometric"
    empty_word_count: int = 0
    _token_index: dict = field(default=None, repr=False)
    _profile_cache: dict = field(default_factory=dict, repr=False)

    kind = "topic"

    def __post_init__(self):
        if self._token_index is None:
            self._token_index = {tok: i for i, tok in enumerate(self.vocabulary)}

    @property
    def num_effective_slices(self) -> int:
        return self.phi.shape[1]

    def word_curve(self, word: str) -> np.ndarray:
        idx = self._token_index.get(word)
        if idx is None:
            raise TemporalModelError(f"word {word!r} not in training vocabulary")
        return self.phi[idx]

    def profile(self, tokens) -> np.ndarray | None:
        """Aggregate word-density profile over effective slices, peaking at 1.

        Computed in log space; None when no token is in the vocabulary.
        """
        ids = sorted({self._token_index[t] for t in tokens if t in self._token_index})
        if not ids:
            return None
        logq = np.log(np.maximum(self.phi[ids, :], self.floor))
        if self.aggregate == "geometric":
            m = logq.mean(axis=0)
        elif self.aggregate == "product":
            m = logq.sum(axis=0)
        else:
            raise TemporalModelError(f"unknown aggregate {self.aggregate!r}")
        return np.exp(m - m.max())

    def sim(self, tokens_i, t_j: float) -> float:
        prof = self.profile(tokens_i)
        if prof is None:
            self.empty_word_count += 1
            return 0.0
        eff = int(self.slice_map[self.time_axis.slice_of(t_j)])
        return float(prof[eff])

    def pair_sim(self, doc_i: Document, doc_j: Document) -> float:
        prof = self._profile_cache.get(doc_i.id)
        if prof is None and doc_i.id not in self._profile_cache:
            prof = self.profile(doc_i.text_counts)
            self._profile_cache[doc_i.id] = prof
        if prof is None:
            self.empty_word_count += 1
            return 0.0
        eff = int(self.slice_map[self.time_axis.slice_of(doc_j.timestamp)])
        return float(prof[eff])


def topic_sim(tokens_i, t_j, model: TopicDensity) -> float:
    return model.sim(tokens_i, t_j)


def _gibbs_slice(doc_word_ids, num_topics, vocab_size, alpha, prior_kw, iters, rng):
    """Collapsed Gibbs sampling for one time slice.

    ``prior_kw`` is the (topics, vocab) pseudo-count matrix: the symmetric
    prior plus the scaled counts carried over from the previous slice.
    Returns the final topic-word assignment counts.
    """
    n_docs = len(doc_word_ids)
    n_dk = np.zeros((n_docs, num_topics))
    n_kw = np.zeros((num_topics, vocab_size))
    n_k = np.zeros(num_topics)
    prior_k = prior_kw.sum(axis=1)

    assignments = []
    for d, words in enumerate(doc_word_ids):
        z = rng.integers(num_topics, size=len(words))
        assignments.append(z)
        for w, k in zip(words, z):
            n_dk[d, k] += 1
            n_kw[k, w] += 1
            n_k[k] += 1

    for _ in range(iters):
        for d, words in enumerate(doc_word_ids):
            z = assignments[d]
            for pos, w in enumerate(words):
                k = z[pos]
                n_dk[d, k] -= 1
                n_kw[k, w] -= 1
                n_k[k] -= 1
                p = (n_kw[:, w] + prior_kw[:, w]) / (n_k + prior_k) * (n_dk[d] + alpha)
                cum = np.cumsum(p)
                k = int(np.searchsorted(cum, rng.random() * cum[-1]))
                z[pos] = k
                n_dk[d, k] += 1
                n_kw[k, w] += 1
                n_k[k] += 1
    return n_kw


def fit_topic_densities(
    train: Corpus,
    num_topics: int,
    seed: int,
    gibbs_iters: int = 60,
    alpha: float | None = None,
    beta_prior: float = 0.01,
    kappa: float = 0.5,
    floor: float = DEFAULT_TOPIC_FLOOR,
    aggregate: str = "geometric",
) -> TopicDensity:
    """Fit per-word temporal densities with the chained-slice estimator.

    Each nonempty time slice is modelled by collapsed-Gibbs LDA whose
    topic-word counts are initialized with kappa times the previous slice's
    counts, so topics evolve along the slice chain. Empty slices are merged
    forward into the next nonempty slice. Per word and topic the slice
    distribution is normalized over time, averaged over topics, and
    normalized again, giving one temporal density vector per word.
    """
    if num_topics < 1:
        raise TemporalModelError("need at least one topic")
    if aggregate not in ("geometric", "product"):
        raise TemporalModelError(f"unknown aggregate {aggregate!r}")
    if alpha is None:
        alpha = 50.0 / num_topics
    axis = train.time_axis
    vocab = list(train.vocabulary)
    token_index = {tok: i for i, tok in enumerate(vocab)}
    vocab_size = len(vocab)
    if vocab_size == 0:
        raise TemporalModelError("training corpus has an empty vocabulary")

    slice_docs: dict[int, list[np.ndarray]] = {}
    for doc in train.documents:
        ids = []
        for tok in sorted(doc.text_counts):
            ids.extend([token_index[tok]] * doc.text_counts[tok])
        slice_docs.setdefault(axis.slice_of(doc.timestamp), []).append(
            np.array(ids, dtype=np.intp)
        )

    nonempty = sorted(slice_docs)
    slice_map = np.zeros(axis.num_slices, dtype=np.int64)
    eff_of = {s: e for e, s in enumerate(nonempty)}
    nxt = len(nonempty) - 1
    for s in range(axis.num_slices - 1, -1, -1):
        if s in eff_of:
            nxt = eff_of[s]
        slice_map[s] = nxt

    rng = np.random.default_rng(seed)
    beta = np.zeros((len(nonempty), num_topics, vocab_size))
    prev_counts = None
    for e, s in enumerate(nonempty):
        prior_kw = np.full((num_topics, vocab_size), beta_prior)
        if prev_counts is not None:
            prior_kw += kappa * prev_counts
        counts = _gibbs_slice(
            slice_docs[s], num_topics, vocab_size, alpha, prior_kw, gibbs_iters, rng
        )
        smoothed = counts + prior_kw
        beta[e] = smoothed / smoothed.sum(axis=1, keepdims=True)
        prev_counts = counts

    # per word and topic, normalize over slices; then average topics and
    # renormalize so each word's profile sums to 1
    phi_wp = beta / beta.sum(axis=0, keepdims=True)
    phi = phi_wp.mean(axis=1).T  # (vocab, effective slices)
    phi /= phi.sum(axis=1, keepdims=True)

    return TopicDensity(
        num_topics=num_topics,
        vocabulary=vocab,
        phi=phi,
        beta=beta,
        slice_map=slice_map,
        time_axis=axis,
        floor=floor,
        aggregate=aggregate,
    )


# ---------------------------------------------------------------------------
# Serialization


def _write_blocks(fh, kind, header: dict, arrays: list[np.ndarray]):
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(TEMPORAL_MAGIC)
    fh.write(KIND_TAGS[kind])
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    for arr in arrays:
        fh.write(np.ascontiguousarray(arr, dtype=np.float64).astype("<f8").tobytes())


def write_temporal_model(path, model) -> None:
    with open(path, "wb") as fh:
        if isinstance(model, RecencyModel):
            _write_blocks(fh, "recency", {"h_rec": model.h_rec}, [])
        elif isinstance(model, CategoryKDE):
            cats = sorted(model.curves)
            header = {
                "bandwidth": model.bandwidth,
                "grid_size": len(model.grid),
                "categories": cats,
                "obs_lens": [len(model.observations[c]) for c in cats],
            }
            arrays = [model.grid]
            arrays += [model.curves[c] for c in cats]
            arrays += [model.observations[c] for c in cats]
            _write_blocks(fh, "category", header, arrays)
        elif isinstance(model, TopicDensity):
            header = {
                "num_topics": model.num_topics,
                "vocabulary": model.vocabulary,
                "floor": model.floor,
                "aggregate": model.aggregate,
                "num_effective_slices": model.num_effective_slices,
                "time_axis": {
                    "unit": model.time_axis.unit,
                    "origin": model.time_axis.origin,
                    "num_slices": model.time_axis.num_slices,
                },
            }
            _write_blocks(
                fh, "topic", header,
                [model.phi, model.beta, model.slice_map.astype(np.float64)],
            )
        else:
            raise TemporalModelError(f"cannot serialize {type(model).__name__}")


def _read_array(fh, shape):
    n = int(np.prod(shape))
    buf = fh.read(n * 8)
    if len(buf) != n * 8:
        raise TemporalModelError("truncated temporal model file")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()


def read_temporal_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TEMPORAL_MAGIC:
            raise TemporalModelError(f"{path}: bad magic {magic!r}")
        kind = _TAG_KINDS.get(fh.read(4))
        if kind is None:
            raise TemporalModelError(f"{path}: unknown model kind")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if kind == "recency":
            return RecencyModel(h_rec=header["h_rec"])
        if kind == "category":
            grid = _read_array(fh, (header["grid_size"],))
            curves = {c: _read_array(fh, (header["grid_size"],)) for c in header["categories"]}
            observations = {
                c: _read_array(fh, (n,))
                for c, n in zip(header["categories"], header["obs_lens"])
            }
            return CategoryKDE(
                bandwidth=header["bandwidth"], grid=grid,
                curves=curves, observations=observations,
            )
        vocab = header["vocabulary"]
        axis = TimeAxis(**header["time_axis"])
        n_eff = header["num_effective_slices"]
        phi = _read_array(fh, (len(vocab), n_eff))
        beta = _read_array(fh, (n_eff, header["num_topics"], len(vocab)))
        slice_map = _read_array(fh, (axis.num_slices,)).astype(np.int64)
        return TopicDensity(
            num_topics=header["num_topics"], vocabulary=vocab, phi=phi, beta=beta,
            slice_map=slice_map, time_axis=axis,
            floor=header["floor"], aggregate=header["aggregate"],
        )
