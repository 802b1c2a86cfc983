"""Whole-body action tokenizer.

Each of the three streams (position, rotation, gripper) runs through its
own lightweight 1D conv encoder, a stack of residual vector quantizers,
and a transposed-conv decoder.  A 32-step chunk becomes exactly
3 streams x 4 latent steps x 3 levels = 36 discrete tokens, each an index
into a 1024-entry codebook.

Training uses the straight-through estimator across quantization, a
codebook loss plus beta-weighted commitment loss per level, gradient
(not EMA) codebook updates, and dead-code reinitialization from batch
latents.  The rotation stream is reconstructed under the SO(3) geodesic
loss; position and gripper streams under plain MSE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import actions, geometry
from .autodiff import (Adam, ParamStore, Tensor, clip_grad_norm, conv1d,
                       conv1d_transpose, cosine_lr, embedding, gelu,
                       geodesic_loss, load_arrays, mse, no_grad, save_arrays)
from .autodiff.nn import _init_linear
from .errors import (DivergedTraining, NonFiniteValue, ShapeMismatch,
                     TokenOutOfRange, UntrainedCodec)

log = logging.getLogger(__name__)

STREAMS = (("pos", 9), ("rot", 18), ("grip", 2))


@dataclass
class TokenizerConfig:
    chunk_len: int = 32
    latent_len: int = 4      # chunk_len / 8 after three stride-2 convs
    latent_dim: int = 64
    levels: int = 3
    codebook_size: int = 1024
    hidden: int = 64
    kernel: int = 4
    commitment_weight: float = 0.25
    dead_code_steps: int = 200

    @property
    def tokens_per_chunk(self) -> int:
        return len(STREAMS) * self.latent_len * self.levels

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "chunk_len", "latent_len", "latent_dim", "levels", "codebook_size",
            "hidden", "kernel", "commitment_weight", "dead_code_steps")}


class _StreamCodec:
    """Conv encoder/decoder pair for one stream; params live in the shared store."""

    def __init__(self, store: ParamStore, name: str, d_in: int, cfg: TokenizerConfig,
                 rng: np.random.Generator, dtype):
        k, h, z = cfg.kernel, cfg.hidden, cfg.latent_dim
        self.name = name
        self.enc_w = [store.add(f"{name}.enc0.w", _conv_init(rng, k, d_in, h, dtype)),
                      store.add(f"{name}.enc1.w", _conv_init(rng, k, h, h, dtype)),
                      store.add(f"{name}.enc2.w", _conv_init(rng, k, h, z, dtype))]
        self.enc_b = [store.add(f"{name}.enc{i}.b", np.zeros(c, dtype=dtype))
                      for i, c in enumerate((h, h, z))]
        self.dec_w = [store.add(f"{name}.dec0.w", _conv_init(rng, k, z, h, dtype)),
                      store.add(f"{name}.dec1.w", _conv_init(rng, k, h, h, dtype)),
                      store.add(f"{name}.dec2.w", _conv_init(rng, k, h, d_in, dtype))]
        self.dec_b = [store.add(f"{name}.dec{i}.b", np.zeros(c, dtype=dtype))
                      for i, c in enumerate((h, h, d_in))]

    def encode(self, x: Tensor) -> Tensor:
        h = gelu(conv1d(x, self.enc_w[0], self.enc_b[0], stride=2, pad=1))
        h = gelu(conv1d(h, self.enc_w[1], self.enc_b[1], stride=2, pad=1))
        return conv1d(h, self.enc_w[2], self.enc_b[2], stride=2, pad=1)

    def decode(self, z: Tensor) -> Tensor:
        h = gelu(conv1d_transpose(z, self.dec_w[0], self.dec_b[0], stride=2, pad=1))
        h = gelu(conv1d_transpose(h, self.dec_w[1], self.dec_b[1], stride=2, pad=1))
        return conv1d_transpose(h, self.dec_w[2], self.dec_b[2], stride=2, pad=1)


def _conv_init(rng, k, d_in, d_out, dtype):
    return (_init_linear(rng, k * d_in, d_out, dtype)).reshape(k, d_in, d_out)


class ActionTokenizer:
    """Chunk <-> 36-token codec.  encode/decode require a trained instance."""

    def __init__(self, config: TokenizerConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        self.config = config or TokenizerConfig()
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.store = ParamStore()
        self.codecs = {name: _StreamCodec(self.store, name, d, self.config, rng, dtype)
                       for name, d in STREAMS}
        for name, _ in STREAMS:
            for q in range(self.config.levels):
                init = rng.standard_normal(
                    (self.config.codebook_size, self.config.latent_dim)) * 0.3
                self.store.add(f"{name}.rvq{q}", init.astype(dtype))
        self.norm = actions.NormStats.identity()
        self.trained = False

    # -- pure helpers -------------------------------------------------------

    def _codebooks(self, stream: str) -> list[Tensor]:
        return [self.store[f"{stream}.rvq{q}"] for q in range(self.config.levels)]

    def _normalized_streams(self, batch: np.ndarray) -> dict[str, np.ndarray]:
        pos = (batch[:, :, actions.POS_SLICE] - self.norm.pos_mean) / self.norm.pos_scale
        rot = batch[:, :, actions.ROT_SLICE]
        grip = (batch[:, :, actions.GRIP_SLICE] - self.norm.grip_mean) / self.norm.grip_scale
        return {"pos": pos.astype(self.dtype), "rot": rot.astype(self.dtype),
                "grip": grip.astype(self.dtype)}

    def _quantize_np(self, stream: str, z: np.ndarray):
        """Nearest-codeword RVQ on plain arrays.

        Returns (codes (N, Q), quantized sum (N, d_z), residual norms per
        level including the input norm at index 0).
        """
        books = [b.data for b in self._codebooks(stream)]
        residual = z.copy()
        codes = np.zeros((z.shape[0], len(books)), dtype=np.int64)
        total = np.zeros_like(z)
        norms = [np.linalg.norm(residual, axis=1)]
        for q, book in enumerate(books):
            d2 = (np.sum(residual ** 2, axis=1, keepdims=True)
                  - 2.0 * residual @ book.T + np.sum(book ** 2, axis=1))
            idx = np.argmin(d2, axis=1)
            codes[:, q] = idx
            chosen = book[idx]
            total += chosen
            residual = residual - chosen
            norms.append(np.linalg.norm(residual, axis=1))
        return codes, total, np.stack(norms)

    # -- public API ---------------------------------------------------------

    def encode(self, chunks) -> np.ndarray:
        """Chunk(s) -> token ids.  (T,29) or ActionChunk -> (36,); (N,T,29) -> (N,36)."""
        if not self.trained:
            raise UntrainedCodec("tokenizer must be trained before encoding")
        batch, single = _as_batch(chunks, self.config.chunk_len)
        streams = self._normalized_streams(batch)
        cfg = self.config
        out = np.zeros((batch.shape[0], cfg.tokens_per_chunk), dtype=np.int64)
        with no_grad():
            for s_idx, (name, _) in enumerate(STREAMS):
                z = self.codecs[name].encode(Tensor(streams[name])).data
                z_flat = z.reshape(-1, cfg.latent_dim)
                codes, _, _ = self._quantize_np(name, z_flat)
                codes = codes.reshape(batch.shape[0], cfg.latent_len, cfg.levels)
                base = s_idx * cfg.latent_len * cfg.levels
                for l in range(cfg.latent_len):
                    out[:, base + l * cfg.levels: base + (l + 1) * cfg.levels] = codes[:, l, :]
        return out[0] if single else out

    def decode(self, tokens) -> np.ndarray:
        """Token ids -> chunk array(s); inverse layout of encode."""
        if not self.trained:
            raise UntrainedCodec("tokenizer must be trained before decoding")
        tokens = np.asarray(tokens)
        single = tokens.ndim == 1
        toks = tokens.reshape(1, -1) if single else tokens
        cfg = self.config
        if toks.shape[1] != cfg.tokens_per_chunk:
            raise ShapeMismatch(f"expected {cfg.tokens_per_chunk} tokens, got {toks.shape[1]}")
        if toks.min() < 0 or toks.max() >= cfg.codebook_size:
            raise TokenOutOfRange(f"token ids must lie in [0, {cfg.codebook_size})")
        N = toks.shape[0]
        rec = {}
        with no_grad():
            for s_idx, (name, _) in enumerate(STREAMS):
                books = [b.data for b in self._codebooks(name)]
                base = s_idx * cfg.latent_len * cfg.levels
                z = np.zeros((N, cfg.latent_len, cfg.latent_dim), dtype=self.dtype)
                for l in range(cfg.latent_len):
                    for q in range(cfg.levels):
                        z[:, l, :] += books[q][toks[:, base + l * cfg.levels + q]]
                rec[name] = self.codecs[name].decode(Tensor(z)).data
        pos = rec["pos"] * self.norm.pos_scale + self.norm.pos_mean
        grip = rec["grip"] * self.norm.grip_scale + self.norm.grip_mean
        grip = np.clip(grip, 0.0, 1.0)
        rot6 = rec["rot"].reshape(N, cfg.chunk_len, 3, 6).astype(np.float64)
        rot6 = geometry.matrix_to_sixd(geometry.sixd_to_matrix(rot6))
        out = np.concatenate(
            [pos.astype(np.float64), rot6.reshape(N, cfg.chunk_len, 18),
             grip.astype(np.float64)], axis=2)
        return out[0] if single else out

    # -- training path ------------------------------------------------------

    def training_losses(self, batch: np.ndarray, quantize: bool = True) -> dict:
        """Forward pass returning loss Tensors and token codes for one batch.

        quantize=False routes latents straight to the decoder (identity
        bottleneck, no VQ terms); used by the gradient checks, where the
        straight-through estimator would not match finite differences.
        """
        cfg = self.config
        streams = self._normalized_streams(batch)
        beta = cfg.commitment_weight
        losses = {}
        vq_total = None
        all_codes = {}
        residual_norms = {}
        residual_inputs = {}
        for name, _ in STREAMS:
            x = Tensor(streams[name])
            z = self.codecs[name].encode(x)
            z_flat = z.reshape(-1, cfg.latent_dim)
            if quantize:
                codes, total, norms = self._quantize_np(name, z_flat.data)
                all_codes[name] = codes
                residual_norms[name] = norms
                residual_inputs[name] = []
                partial = np.zeros_like(z_flat.data)
                for q, book in enumerate(self._codebooks(name)):
                    idx = codes[:, q]
                    chosen = embedding(book, idx)
                    res_const = z_flat.data - partial
                    residual_inputs[name].append(res_const)
                    cb = mse(chosen, res_const)
                    commit = mse(z_flat - Tensor(partial.copy()), chosen.data) * beta
                    vq_total = cb + commit if vq_total is None else vq_total + cb + commit
                    partial = partial + book.data[idx]
                # straight-through: forward value is the quantized sum,
                # gradient passes to the encoder unchanged
                dec_in = (z_flat + Tensor(total - z_flat.data)).reshape(z.shape)
            else:
                dec_in = z
            rec = self.codecs[name].decode(dec_in)
            if name == "rot":
                pred6 = rec.reshape(-1, 6)
                targ6 = streams[name].reshape(-1, 6)
                losses["rot"] = geodesic_loss(pred6, targ6)
            else:
                losses[name] = mse(rec, streams[name])
        losses["vq"] = vq_total if vq_total is not None else Tensor(np.zeros((), dtype=self.dtype))
        losses["total"] = losses["pos"] + losses["rot"] + losses["grip"] + losses["vq"]
        losses["codes"] = all_codes
        losses["residual_norms"] = residual_norms
        losses["residual_inputs"] = residual_inputs
        return losses

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = dict(self.store.arrays())
        for k, v in self.norm.to_arrays().items():
            arrays[f"norm.{k}"] = v
        meta = {"kind": "action_tokenizer", "config": self.config.to_dict(),
                "trained": self.trained}
        save_arrays(path, arrays, meta)

    @staticmethod
    def load(path) -> "ActionTokenizer":
        arrays, meta = load_arrays(path)
        cfg = TokenizerConfig(**meta["config"])
        tok = ActionTokenizer(cfg)
        tok.norm = actions.NormStats.from_arrays(
            {k: arrays.pop(f"norm.{k}") for k in
             ("pos_mean", "pos_scale", "grip_mean", "grip_scale")})
        tok.store.load_arrays(arrays)
        tok.trained = bool(meta["trained"])
        return tok


def _as_batch(chunks, T: int):
    if isinstance(chunks, actions.ActionChunk):
        return chunks.data[None], True
    arr = np.asarray(chunks, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape != (T, actions.ACTION_DIM):
            raise ShapeMismatch(f"expected ({T}, {actions.ACTION_DIM}), got {arr.shape}")
        return arr[None], True
    if arr.ndim == 3 and arr.shape[1:] == (T, actions.ACTION_DIM):
        return arr, False
    raise ShapeMismatch(f"cannot interpret shape {arr.shape} as chunks")


@dataclass
class TokenizerTrainReport:
    steps: int
    final: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def train_tokenizer(chunks: np.ndarray, config: TokenizerConfig | None = None,
                    seed: int = 0, steps: int = 3000, batch_size: int = 64,
                    peak_lr: float = 1e-3, floor_lr: float = 1e-5,
                    dtype=np.float32, log_every: int = 200) -> tuple[ActionTokenizer, TokenizerTrainReport]:
    """Fit the codec on an (N, T, 29) stack of expert chunks.

    Codebooks are seeded from first-batch residual latents, then updated by
    gradient; codewords unused for `dead_code_steps` consecutive steps are
    re-drawn from the current batch.
    """
    chunks = np.asarray(chunks, dtype=np.float64)
    if chunks.ndim != 3 or chunks.shape[0] < 1:
        raise ShapeMismatch("expected a non-empty (N, T, 29) chunk stack")
    cfg = config or TokenizerConfig()
    tok = ActionTokenizer(cfg, seed=seed, dtype=dtype)
    tok.norm = actions.NormStats.from_chunks(chunks)
    rng = np.random.default_rng(seed + 1)
    opt = Adam(tok.store)
    unused = {(name, q): np.zeros(cfg.codebook_size, dtype=np.int64)
              for name, _ in STREAMS for q in range(cfg.levels)}
    _seed_codebooks(tok, chunks, rng)
    report = TokenizerTrainReport(steps=steps)
    for step in range(steps):
        idx = rng.integers(0, chunks.shape[0], size=min(batch_size, chunks.shape[0]))
        batch = chunks[idx]
        tok.store.zero_grad()
        try:
            out = tok.training_losses(batch, quantize=True)
            loss = out["total"]
            if not np.isfinite(loss.data):
                raise NonFiniteValue("loss")
            loss.backward()
        except NonFiniteValue as e:
            raise DivergedTraining(f"tokenizer diverged at step {step}: {e}") from e
        clip_grad_norm(tok.store, 5.0)
        opt.step(cosine_lr(step, steps, peak_lr, floor_lr))
        _refresh_dead_codes(tok, opt, out["codes"], out["residual_inputs"], unused, rng)
        if step % log_every == 0 or step == steps - 1:
            report.history.append({
                "step": step,
                "total": float(loss.data),
                "pos": float(out["pos"].data),
                "rot": float(out["rot"].data),
                "grip": float(out["grip"].data),
                "vq": float(out["vq"].data)})
            log.info("tokenizer step %d total=%.5f pos=%.5f rot=%.5f grip=%.5f vq=%.5f",
                     step, *(report.history[-1][k] for k in ("total", "pos", "rot", "grip", "vq")))
    tok.trained = True
    report.final = dict(report.history[-1]) if report.history else {}
    return tok, report


def _seed_codebooks(tok: ActionTokenizer, chunks: np.ndarray, rng: np.random.Generator) -> None:
    cfg = tok.config
    sample = chunks[rng.integers(0, chunks.shape[0], size=min(256, chunks.shape[0]))]
    streams = tok._normalized_streams(sample)
    with no_grad():
        for name, _ in STREAMS:
            z = tok.codecs[name].encode(Tensor(streams[name])).data.reshape(-1, cfg.latent_dim)
            residual = z.copy()
            for book in tok._codebooks(name):
                pick = rng.integers(0, residual.shape[0], size=cfg.codebook_size)
                noise = rng.standard_normal(book.data.shape) * 0.01
                book.data = (residual[pick] + noise).astype(tok.dtype)
                d2 = (np.sum(residual ** 2, axis=1, keepdims=True)
                      - 2.0 * residual @ book.data.T + np.sum(book.data ** 2, axis=1))
                residual = residual - book.data[np.argmin(d2, axis=1)]


def _refresh_dead_codes(tok: ActionTokenizer, opt: Adam, codes: dict,
                        residual_inputs: dict, unused: dict,
                        rng: np.random.Generator) -> None:
    cfg = tok.config
    for name, _ in STREAMS:
        stream_codes = codes[name]
        for q in range(cfg.levels):
            counter = unused[(name, q)]
            counter += 1
            counter[np.unique(stream_codes[:, q])] = 0
            dead = np.flatnonzero(counter >= cfg.dead_code_steps)
            if dead.size == 0:
                continue
            book = tok.store[f"{name}.rvq{q}"]
            # reseed from latents the encoder actually produced this step
            z_rows = residual_inputs[name][q]
            pick = rng.integers(0, z_rows.shape[0], size=dead.size)
            book.data[dead] = (z_rows[pick] + rng.standard_normal(
                (dead.size, cfg.latent_dim)) * 0.01).astype(tok.dtype)
            opt.m[f"{name}.rvq{q}"][dead] = 0.0
            opt.v[f"{name}.rvq{q}"][dead] = 0.0
            counter[dead] = 0


def codebook_stats(tok: ActionTokenizer, chunks: np.ndarray) -> dict:
    """Per-(stream, level) usage histograms and perplexities."""
    tokens = tok.encode(np.asarray(chunks, dtype=np.float64))
    cfg = tok.config
    stats = {}
    for s_idx, (name, _) in enumerate(STREAMS):
        base = s_idx * cfg.latent_len * cfg.levels
        for q in range(cfg.levels):
            cols = [base + l * cfg.levels + q for l in range(cfg.latent_len)]
            ids = tokens[:, cols].reshape(-1)
            hist = np.bincount(ids, minlength=cfg.codebook_size)
            p = hist / hist.sum()
            nz = p[p > 0]
            perplexity = float(np.exp(-(nz * np.log(nz)).sum()))
            stats[(name, q)] = {"histogram": hist, "perplexity": perplexity,
                                "used": int((hist > 0).sum())}
    return stats
