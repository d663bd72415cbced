"""Task embeddings z from three interchangeable providers, plus the
latent-space goal decoder.

Providers: line-delimited files exported by an external feature-extraction
model, a remote embedding service (HTTP POST {"texts": [...]} ->
{"vectors": [[...]]}), or a deterministic synthetic generator for
desk-scale experiments.  Downstream code only ever sees an
:class:`EmbeddingStore`.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusSplit, TaskSpec, find_location, goal_coordinates
from .nn import init_mlp, mlp_backward, mlp_forward
from .optim import AdamW, WarmupSchedule
from .validation import BaseEstimator, check_array, check_fitted

DEFAULT_DIM = 768


class EmbeddingStore:
    """Read-only-after-construction map from task text to vector.

    All vectors share one dimension; duplicates and non-finite entries are
    rejected at insert time.  Vectors are stored as produced by the
    provider; set ``normalize`` to project every entry onto the unit
    sphere at insert time instead.
    """

    def __init__(self, provider_tag: str = "file", normalize: bool = False):
        self.provider_tag = provider_tag
        self.normalize = normalize
        self._vectors: dict[str, np.ndarray] = {}
        self.dim: int | None = None

    def add(self, text: str, vector: np.ndarray, context: str = "") -> None:
        where = f" ({context})" if context else ""
        vec = np.asarray(vector, dtype=np.float32)
        if vec.ndim != 1:
            raise ValueError(f"embedding for {text!r} must be a vector{where}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite embedding for {text!r}{where}")
        if text in self._vectors:
            raise ValueError(f"duplicate text {text!r}{where}")
        if self.normalize:
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise ValueError(f"cannot normalize zero embedding for {text!r}{where}")
            vec = vec / norm
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise ValueError(
                f"dimension mismatch for {text!r}: got {vec.size}, store is {self.dim}{where}")
        self._vectors[text] = vec

    def get(self, text: str) -> np.ndarray:
        if text not in self._vectors:
            raise KeyError(f"no embedding for task text {text!r}")
        return self._vectors[text]

    def __contains__(self, text: str) -> bool:
        return text in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def texts(self) -> list[str]:
        return list(self._vectors)

    def matrix(self, tasks: list[TaskSpec]) -> np.ndarray:
        """[n, dim] matrix aligned with ``tasks``; raises listing any missing."""
        missing = [t.text for t in tasks if t.text not in self._vectors]
        if missing:
            raise KeyError(f"{len(missing)} tasks without embeddings, e.g. {missing[:3]}")
        return np.stack([self._vectors[t.text] for t in tasks])


def load_embeddings(path, normalize: bool = False) -> EmbeddingStore:
    """Load a line-delimited {"text": ..., "vector": [...]} file."""
    store = EmbeddingStore(provider_tag="file", normalize=normalize)
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text, vec = rec["text"], rec["vector"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed record ({e})") from e
            store.add(text, np.asarray(vec, dtype=np.float32), context=f"{path}:{lineno}")
    return store


def save_embeddings(path, store: EmbeddingStore) -> None:
    with open(path, "w") as f:
        for text in store.texts():
            f.write(json.dumps({"text": text, "vector": store.get(text).tolist()}) + "\n")


class EmbeddingServiceError(RuntimeError):
    pass


def fetch_remote(endpoint: str, texts: list[str], timeout: float = 10.0,
                 max_retries: int = 3, backoff: float = 0.5) -> EmbeddingStore:
    """Fetch one embedding per text from an HTTP service.

    Retries transient failures with exponential backoff (capped at
    ``max_retries`` attempts); any missing or malformed vector aborts the
    whole fetch naming the offending task.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    payload = json.dumps({"texts": texts}).encode()
    req = urllib.request.Request(endpoint, data=payload,
                                 headers={"Content-Type": "application/json"})
    last_err: Exception | None = None
    for attempt in range(max_retries):
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = json.loads(resp.read())
            break
        except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as e:
            last_err = e
            if attempt + 1 < max_retries:
                time.sleep(backoff * (2 ** attempt))
    else:
        raise EmbeddingServiceError(
            f"embedding service unreachable after {max_retries} attempts: {last_err}")
    vectors = body.get("vectors")
    if not isinstance(vectors, list) or len(vectors) != len(texts):
        got = len(vectors) if isinstance(vectors, list) else "none"
        missing = texts[len(vectors)] if isinstance(vectors, list) and len(vectors) < len(texts) else texts[0]
        raise EmbeddingServiceError(
            f"service returned {got} vectors for {len(texts)} texts; first failed task: {missing!r}")
    store = EmbeddingStore(provider_tag="remote")
    for text, vec in zip(texts, vectors):
        try:
            store.add(text, np.asarray(vec, dtype=np.float32))
        except ValueError as e:
            raise EmbeddingServiceError(f"bad vector for task {text!r}: {e}") from e
    return store


# ---------------------------------------------------------------------------
# synthetic provider

def _seeded_unit(seed: int, tag: bytes, payload: bytes, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(tag + payload, digest_size=8,
                             key=struct.pack("<q", seed)).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synth_embed(task: TaskSpec, dim: int = DEFAULT_DIM, seed: int = 0,
                noise: float = 0.1) -> np.ndarray:
    """Deterministic stand-in for a language-model embedding.

    The vector is a fixed random unit direction keyed by the goal
    coordinate plus ``noise`` times a unit direction keyed by the command
    template, so tasks sharing a goal cluster together and paraphrases of
    one command stay mutually closer than tasks aimed elsewhere.
    """
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    gx, gy = task.goal
    u = _seeded_unit(seed, b"goal", struct.pack("<dd", gx, gy), dim)
    if noise == 0.0:
        return u.astype(np.float32)
    v = _seeded_unit(seed, b"tpl", struct.pack("<q", task.template_id), dim)
    return (u + noise * v).astype(np.float32)


@dataclass(frozen=True)
class SyntheticEmbedder:
    """Synthetic provider that can also embed free text.

    Free text is grounded by locating a known location phrase; the
    non-location remainder stands in for the template identity.
    """

    dim: int = DEFAULT_DIM
    seed: int = 0
    noise: float = 0.1
    k: float = 1.1

    def embed(self, task: TaskSpec) -> np.ndarray:
        return synth_embed(task, self.dim, self.seed, self.noise)

    def embed_text(self, text: str) -> np.ndarray:
        location = find_location(text)
        if location is None:
            raise ValueError(f"cannot ground {text!r}: no known location phrase")
        goal = goal_coordinates(location, self.k)
        u = _seeded_unit(self.seed, b"goal", struct.pack("<dd", goal[0], goal[1]), self.dim)
        if self.noise == 0.0:
            return u.astype(np.float32)
        remainder = text.replace(location, "{}")
        v = _seeded_unit(self.seed, b"tpl-text", remainder.encode(), self.dim)
        return (u + self.noise * v).astype(np.float32)

    def build_store(self, tasks: list[TaskSpec],
                    normalize: bool = False) -> EmbeddingStore:
        store = EmbeddingStore(provider_tag="synthetic", normalize=normalize)
        for t in tasks:
            store.add(t.text, self.embed(t))
        return store


# ---------------------------------------------------------------------------
# goal decoder

@dataclass(frozen=True)
class DecoderHParams:
    batch_size: int = 32
    lr: float = 1e-5
    weight_decay: float = 1e-4
    hidden: int = 256
    depth: int = 3
    warmup: int = 0
    steps: int = 20_000
    seed: int = 0


class GoalDecoder(BaseEstimator):
    """MLP regressor from task embeddings to 2-D goal coordinates.

    Three blocks (affine + layer norm + leaky ReLU) and a linear output,
    trained with AdamW on mean squared error.
    """

    def __init__(self, hidden: int = 256, depth: int = 3, batch_size: int = 32,
                 lr: float = 1e-5, weight_decay: float = 1e-4, warmup: int = 0,
                 steps: int = 20_000, seed: int = 0):
        self.hidden = hidden
        self.depth = depth
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.steps = steps
        self.seed = seed
        self.params_ = None

    def fit(self, X, y):
        X = check_array(X, "X", dtype=np.float32)
        y = check_array(y, "y", dtype=np.float32, n_features=2)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} rows, y has {len(y)}")
        rng = np.random.default_rng(self.seed)
        self.params_ = init_mlp(rng, X.shape[1], self.hidden, self.depth, 2)
        opt = AdamW(WarmupSchedule(self.lr, self.warmup), weight_decay=self.weight_decay)
        n = len(X)
        losses = []
        order = np.arange(n)
        pos = n  # force an initial shuffle
        for _ in range(self.steps):
            if pos + self.batch_size > n:
                rng.shuffle(order)
                pos = 0
            idx = order[pos:pos + self.batch_size]
            pos += self.batch_size
            pred, caches = mlp_forward(self.params_, X[idx], self.depth)
            err = pred - y[idx]
            losses.append(float(np.mean(err * err)))
            grads = {}
            mlp_backward(2.0 * err / err.size, caches, self.depth, grads)
            opt.step(self.params_, grads)
        self.losses_ = losses
        return self

    def predict(self, X) -> np.ndarray:
        check_fitted(self, "params_")
        X = check_array(X, "X", dtype=np.float32)
        pred, _ = mlp_forward(self.params_, X, self.depth)
        return pred


def train_decoder(store: EmbeddingStore, split: CorpusSplit,
                  hparams: DecoderHParams = DecoderHParams()) -> GoalDecoder:
    """Fit a decoder on the train split; raises listing unembedded tasks."""
    train = list(split.train)
    X = store.matrix(train)
    y = np.array([t.goal for t in train], dtype=np.float32)
    decoder = GoalDecoder(hidden=hparams.hidden, depth=hparams.depth,
                          batch_size=hparams.batch_size, lr=hparams.lr,
                          weight_decay=hparams.weight_decay, warmup=hparams.warmup,
                          steps=hparams.steps, seed=hparams.seed)
    return decoder.fit(X, y)


def eval_decoder(decoder: GoalDecoder, store: EmbeddingStore,
                 tasks: list[TaskSpec]) -> float:
    """Mean Euclidean position error of decoded goals over ``tasks``."""
    if not tasks:
        raise ValueError("tasks must be non-empty")
    pred = decoder.predict(store.matrix(tasks))
    goals = np.array([t.goal for t in tasks])
    return float(np.mean(np.linalg.norm(pred - goals, axis=1)))
