"""Retrieval-augmented coefficient store.

Environment features (large-scale gains plus minimum rates) are embedded by
a linear-bottleneck autoencoder; converged per-user [alpha, lambda] vectors
are stored against the embedding and recalled by cosine similarity.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import MemoryConfig


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class Experience:
    key: np.ndarray                     # embedding q
    value: np.ndarray                   # (K, 2): per-user [alpha, lambda]
    intent_kind: str = ""
    loops_to_converge: int = 0

    def __post_init__(self):
        if np.linalg.norm(self.key) == 0:
            raise ValueError("experience key must be non-zero")
        if not np.all(np.isfinite(self.value)):
            raise ValueError("experience value must be finite")


@dataclass
class FeatureScaler:
    """log10-beta standardization plus R_min scaling, fit on a corpus."""

    beta_mean: float
    beta_std: float
    r_min_ref: float

    def transform(self, beta: np.ndarray, r_min_mbps: np.ndarray) -> np.ndarray:
        """User-major layout: [beta_k1..betakL, R_min_k] per user, flattened."""
        logb = (np.log10(beta) - self.beta_mean) / self.beta_std
        r = np.asarray(r_min_mbps, dtype=float) / self.r_min_ref
        return np.concatenate([logb, r[:, None]], axis=1).ravel()


@dataclass
class AutoencoderParams:
    """Single linear bottleneck: encode Wx+b, decode W'h+b'."""

    w_enc: np.ndarray                   # (d_emb, d_in)
    b_enc: np.ndarray
    w_dec: np.ndarray                   # (d_in, d_emb)
    b_dec: np.ndarray
    train_error: float = float("nan")

    def __post_init__(self):
        if self.w_enc.shape[0] > self.w_enc.shape[1]:
            raise ValueError("embedding dimension must be below the input dimension")

    @property
    def d_in(self) -> int:
        return self.w_enc.shape[1]

    @property
    def d_emb(self) -> int:
        return self.w_enc.shape[0]


def embed(features: np.ndarray, params: AutoencoderParams) -> np.ndarray:
    """Deterministic encoder forward pass."""
    features = np.asarray(features, dtype=float).ravel()
    if features.size != params.d_in:
        raise ValueError(f"feature dimension {features.size} != encoder input "
                         f"{params.d_in}")
    return params.w_enc @ features + params.b_enc


def reconstruct(features: np.ndarray, params: AutoencoderParams) -> np.ndarray:
    return params.w_dec @ embed(features, params) + params.b_dec


def train_autoencoder(corpus: np.ndarray, d_emb: int, epochs: int,
                      lr: float = 0.05, seed: int = 0,
                      loss_curve: Optional[list] = None) -> AutoencoderParams:
    """Full-batch gradient descent on the mean squared reconstruction error."""
    corpus = np.asarray(corpus, dtype=float)
    n, d_in = corpus.shape
    if d_emb >= d_in:
        raise ValueError("embedding dimension must be below the input dimension")
    if n < d_emb:
        raise ValueError(f"corpus of {n} samples is too small for d_emb={d_emb}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_in)
    w_enc = rng.standard_normal((d_emb, d_in)) * scale
    w_dec = rng.standard_normal((d_in, d_emb)) * scale
    b_enc = np.zeros(d_emb)
    b_dec = corpus.mean(axis=0)
    err = float("nan")
    for _ in range(epochs):
        h = corpus @ w_enc.T + b_enc                  # (n, d_emb)
        recon = h @ w_dec.T + b_dec                   # (n, d_in)
        diff = recon - corpus
        err = float(np.mean(diff ** 2))
        if loss_curve is not None:
            loss_curve.append(err)
        grad_out = 2.0 * diff / (n * d_in)
        g_wdec = grad_out.T @ h
        g_bdec = grad_out.sum(axis=0)
        grad_h = grad_out @ w_dec
        g_wenc = grad_h.T @ corpus
        g_benc = grad_h.sum(axis=0)
        w_dec -= lr * g_wdec
        b_dec -= lr * g_bdec
        w_enc -= lr * g_wenc
        b_enc -= lr * g_benc
    if epochs > 0:
        h = corpus @ w_enc.T + b_enc
        err = float(np.mean((h @ w_dec.T + b_dec - corpus) ** 2))
    return AutoencoderParams(w_enc, b_enc, w_dec, b_dec, train_error=err)


class ExperienceStore:
    """Write-guarded key-value memory with cosine retrieval."""

    def __init__(self, cfg: MemoryConfig | None = None):
        self.cfg = cfg or MemoryConfig()
        self._entries: list[Experience] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[Experience]:
        return list(self._entries)

    def store(self, experience: Experience) -> None:
        """Append; a near-duplicate key overwrites that entry's value."""
        with self._lock:
            for i, entry in enumerate(self._entries):
                if cosine_similarity(entry.key, experience.key) > self.cfg.dedup_tol:
                    self._entries[i] = experience
                    return
            self._entries.append(experience)

    def retrieve(self, query: np.ndarray) -> Optional[Experience]:
        """Most similar entry above the threshold; ties favor the newest."""
        if np.linalg.norm(query) == 0:
            raise ValueError("query embedding must be non-zero")
        with self._lock:
            best: Optional[Experience] = None
            best_sim = -np.inf
            for entry in self._entries:
                sim = cosine_similarity(entry.key, query)
                if sim >= best_sim:            # >= : most recent wins ties
                    best, best_sim = entry, sim
        if best is None or best_sim < self.cfg.sim_threshold:
            return None
        return best

    def save(self, path: str) -> None:
        header = {"version": 1, "count": len(self._entries),
                  "sim_threshold": self.cfg.sim_threshold,
                  "dedup_tol": self.cfg.dedup_tol}
        arrays = {"header": np.frombuffer(json.dumps(header).encode(), np.uint8)}
        meta = []
        for i, e in enumerate(self._entries):
            arrays[f"key{i}"] = e.key
            arrays[f"value{i}"] = e.value
            meta.append({"intent_kind": e.intent_kind,
                         "loops_to_converge": e.loops_to_converge})
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str, cfg: MemoryConfig | None = None) -> "ExperienceStore":
        data = np.load(path)
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != 1:
            raise ValueError(f"unsupported store version {header.get('version')}")
        meta = json.loads(bytes(data["meta"]).decode())
        store = cls(cfg)
        for i in range(header["count"]):
            store._entries.append(Experience(
                key=data[f"key{i}"], value=data[f"value{i}"],
                intent_kind=meta[i]["intent_kind"],
                loops_to_converge=meta[i]["loops_to_converge"]))
        return store


def save_autoencoder(path: str, params: AutoencoderParams,
                     scaler: FeatureScaler) -> None:
    np.savez(path, w_enc=params.w_enc, b_enc=params.b_enc,
             w_dec=params.w_dec, b_dec=params.b_dec,
             train_error=np.array([params.train_error]),
             scaler=np.array([scaler.beta_mean, scaler.beta_std,
                              scaler.r_min_ref]))


def load_autoencoder(path: str) -> tuple[AutoencoderParams, FeatureScaler]:
    data = np.load(path)
    params = AutoencoderParams(data["w_enc"], data["b_enc"], data["w_dec"],
                               data["b_dec"],
                               train_error=float(data["train_error"][0]))
    s = data["scaler"]
    return params, FeatureScaler(float(s[0]), float(s[1]), float(s[2]))


def build_embedder(beta: np.ndarray, cfg: MemoryConfig,
                   num_users: int) -> tuple[AutoencoderParams, FeatureScaler]:
    """Fit the scaler and autoencoder on a jittered corpus around the scenario.

    The corpus perturbs the log-gains and sweeps minimum-rate patterns so the
    embedding separates the intent configurations the store will actually see.
    """
    rng = np.random.default_rng(cfg.corpus_seed)
    logb = np.log10(beta)
    scaler = FeatureScaler(float(logb.mean()), max(float(logb.std()), 1e-6),
                           cfg.r_min_ref_mbps)
    samples = []
    for _ in range(max(cfg.corpus_size, 4 * cfg.embed_dim)):
        jitter = rng.normal(0.0, 0.3, size=beta.shape)
        beta_j = 10.0 ** (logb + jitter)
        r_min = np.zeros(num_users)
        n_con = int(rng.integers(0, max(num_users // 2, 1) + 1))
        users = rng.choice(num_users, size=n_con, replace=False)
        r_min[users] = rng.choice([5.0, 10.0, 20.0, 50.0, 100.0], size=n_con)
        samples.append(scaler.transform(beta_j, r_min))
    corpus = np.array(samples)
    d_emb = min(cfg.embed_dim, corpus.shape[1] - 1)
    params = train_autoencoder(corpus, d_emb, cfg.train_epochs, cfg.train_lr,
                               seed=cfg.corpus_seed)
    return params, scaler
