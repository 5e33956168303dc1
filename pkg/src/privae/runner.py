"""Training, evaluation and sampling runs driven by a :class:`RunConfig`.

Randomness comes from named substreams of one master seed, keyed further by
epoch or step, so that any step can be replayed in isolation and fixing one
stream never perturbs another.

Checkpoint layout (little-endian)::

    b"PRIVAE01"
    u32 tensor count
    per tensor: u32 name length, UTF-8 name, u32 rank, u64 extents[rank], f64 payload

The step counter is stored as the rank-0 tensor ``meta.step``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .accountant import Ledger, sigma_for_budget, termwise_budget
from .audit import audit_suite  # noqa: F401  (re-exported)
from .autodiff import ParamSet
from .config import RunConfig
from .data import Dataset, save_dataset
from .divergences import psi
from .dp import (
    batchagg_gradient,
    effective_noise_std,
    kappa,
    microagg_gradient,
    partition_batch,
    sgd_step,
    termwise_gradient,
)
from .metrics import loglik_proxy, encoder_means, mmd_metric, reverse_kl_metric, sparsity
from .model import VAE, generate as decode_prior_samples, phi

log = logging.getLogger("privae")

CKPT_MAGIC = b"PRIVAE01"
STREAMS = {
    "init": 1,
    "batch-order": 2,
    "reparam-eps": 3,
    "prior-draws": 4,
    "dp-noise-sample": 5,
    "dp-noise-batch": 6,
    "audit": 7,
    "partition": 8,
    "eval": 9,
    "generate": 10,
}


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name], *keys])


class NumericFailure(RuntimeError):
    """Training produced non-finite parameters or losses."""


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, params: ParamSet, step: int = 0) -> None:
    tensors = list(params.items()) + [("meta.step", np.array(float(step)))]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, a in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamSet, int]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic at byte offset 0: {buf[:8]!r}")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ValueError(f"{path}: truncated checkpoint at byte offset {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    arrays, step = [], 0
    for _ in range(count):
        (nlen,) = take("<I")
        name = bytes(take(f"<{nlen}s")[0]).decode("utf-8")
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        data = np.array(take(f"<{n}d"), dtype=np.float64).reshape(shape)
        if name == "meta.step":
            step = int(data)
        else:
            arrays.append((name, data))
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes at byte offset {pos}")
    return ParamSet(arrays), step


# -- training ---------------------------------------------------------------------


def build_model(cfg: RunConfig) -> VAE:
    return VAE(cfg.input_dim(), cfg.latent_dim, cfg.hidden, cfg.likelihood)


def init_params(cfg: RunConfig, model: VAE) -> ParamSet:
    return model.init_params(stream(cfg.seed, "init"))


@dataclass
class NoisePlan:
    sigma: float  # base noise multiplier for (epsilon, delta)
    sigma_prime: float  # multiplier actually applied
    kappa: float
    budget: dict | None

    def header(self) -> dict:
        return {"sigma_eps": self.sigma, "sigma_applied": self.sigma_prime, "kappa": self.kappa, "budget": self.budget}


class Trainer:
    """One training run. :meth:`step` performs step ``t`` (0-based) of the schedule."""

    def __init__(self, cfg: RunConfig, data: Dataset | None = None):
        self.cfg = cfg
        self.data = cfg.load_data() if data is None else data
        self.model = build_model(cfg)
        self.prior = cfg.prior()
        self.div = cfg.divergence()
        self.clip = cfg.clip_config()
        self.N = self.data.n
        self.B, self.b, self.L = cfg.batch_size, cfg.partitions, cfg.l
        self.steps_per_epoch = math.ceil(self.N / self.B)
        self.T = cfg.epochs * self.steps_per_epoch
        self.q = self.B / self.N
        self.noise = self._noise_plan()
        self.ledger = Ledger(self.noise.sigma, cfg.delta, self.q, cfg.c2_const)

    @property
    def uses_psi(self) -> bool:
        if not self.div.active:
            return False
        return self.cfg.mode != "termwise" or self.clip.batch_branch

    def _noise_plan(self) -> NoisePlan:
        cfg = self.cfg
        active = cfg.mode == "termwise" and self.clip.batch_branch
        k = kappa(cfg.delta, active)
        T = max(self.T, 1)
        if cfg.sigma is not None:
            return NoisePlan(cfg.sigma, k * cfg.sigma, k, None)
        if cfg.mode == "termwise":
            sigma_prime, budget = termwise_budget(cfg.epsilon, cfg.delta, self.q, T, cfg.c2_const, active)
            return NoisePlan(budget.sigma_eps, sigma_prime, k, budget.to_dict())
        sigma = sigma_for_budget(cfg.epsilon, cfg.delta, self.q, T, cfg.c2_const)
        budget = {"epsilon": cfg.epsilon, "delta": cfg.delta, "q": self.q, "T": T, "sigma_eps": sigma,
                  "mechanisms": [[cfg.epsilon, cfg.delta]], "composed": [cfg.epsilon, cfg.delta]}
        return NoisePlan(sigma, sigma, 1.0, budget)

    def header(self) -> dict:
        cfg = self.cfg
        micro_std = effective_noise_std("micro", self.noise.sigma, self.clip, self.B, self.b, cfg.delta)
        tw_std = effective_noise_std("termwise", self.noise.sigma, self.clip, self.B, self.b, cfg.delta)
        return {
            "type": "header",
            "config": cfg.to_dict(),
            "N": self.N,
            "T": self.T,
            "q": self.q,
            "steps_per_epoch": self.steps_per_epoch,
            "batch_sampling": "per-epoch shuffle, fixed batch size B; q = B/N used for accounting",
            "noise": self.noise.header(),
            "effective_noise_std": {"micro_baseline": micro_std, "termwise": tw_std, "mode": self.noise_std()},
        }

    def noise_std(self) -> float:
        cfg = self.cfg
        if cfg.mode == "termwise":
            return effective_noise_std("termwise", self.noise.sigma, self.clip, self.B, self.b, cfg.delta)
        # micro divides by B, batch does not
        scale = 1.0 / self.B if cfg.mode == "micro" else 1.0
        return self.clip.c * self.noise.sigma * scale

    def batch_indices(self, t: int) -> np.ndarray:
        epoch, k = divmod(t, self.steps_per_epoch)
        order = stream(self.cfg.seed, "batch-order", epoch).permutation(self.N)
        return order[(k * self.B + np.arange(self.B)) % self.N]

    def step(self, params: ParamSet, t: int) -> tuple[ParamSet, dict]:
        cfg, model, prior, div = self.cfg, self.model, self.prior, self.div
        seed, B = cfg.seed, self.B
        X = self.data.rows[self.batch_indices(t)]
        eps = stream(seed, "reparam-eps", t).standard_normal((B, self.L, model.latent_dim))
        draws_rng = stream(seed, "prior-draws", t)
        rng_n1, rng_n2 = stream(seed, "dp-noise-sample", t), stream(seed, "dp-noise-batch", t)
        terms, psi_vals = [], []

        def phi_fn(P, i):
            loss, lt = phi(model, P, X[i], prior, cfg.beta, eps[i])
            terms.append(lt)
            return loss

        def psi_of(P, members, draws):
            val = psi(div, model, P, X[members], prior, eps[members, 0], draws)
            psi_vals.append(val.item())
            return val

        idx = list(range(B))
        if cfg.mode == "termwise":
            plan = partition_batch(B, self.b, stream(seed, "partition", t))
            part_draws = [prior.sample(B // self.b, draws_rng) for _ in range(self.b)]

            def psi_fn(P, j, members):
                return psi_of(P, members, part_draws[j])

            g = termwise_gradient(
                params, idx, phi_fn, psi_fn if self.uses_psi else None, self.clip, plan,
                self.noise.sigma_prime, rng_n1, rng_n2,
            )
        elif cfg.mode == "micro":
            shared = None
            if self.uses_psi:
                draws = prior.sample(B, draws_rng)

                def shared(P):
                    return psi_of(P, np.arange(B), draws)

            g = microagg_gradient(params, idx, phi_fn, self.clip.c, self.noise.sigma, rng_n1, shared)
        else:
            draws = prior.sample(B, draws_rng)

            def batch_loss(P, members):
                total = None
                for i in members:
                    total = phi_fn(P, i) if total is None else total + phi_fn(P, i)
                return total * (1.0 / B) + psi_of(P, np.arange(B), draws)

            g = batchagg_gradient(params, idx, batch_loss, self.clip.c, self.noise.sigma, rng_n1)
        new = sgd_step(params, g, cfg.lr)
        record = {
            "type": "step",
            "step": t + 1,
            "epoch": t // self.steps_per_epoch,
            "rec": float(np.mean([lt.rec for lt in terms])),
            "kld": float(np.mean([lt.kld for lt in terms])),
            "psi": float(np.mean(psi_vals)) if psi_vals else 0.0,
            "grad_norm": float(np.linalg.norm(g)),
            "epsilon_spent": self.ledger.step(),
            "sigma_applied": self.noise.sigma_prime,
            "noise_std": self.noise_std(),
        }
        if not np.all(np.isfinite(new.flatten())) or not math.isfinite(record["rec"]):
            raise NumericFailure(f"non-finite parameters or loss at step {t + 1}")
        return new, record


def train(
    cfg: RunConfig,
    out_dir=None,
    params: ParamSet | None = None,
    start_step: int = 0,
    max_steps: int | None = None,
    data: Dataset | None = None,
) -> tuple[ParamSet, list[dict]]:
    """Run steps ``start_step .. T-1`` (or stop after ``max_steps``).

    If ``out_dir`` is given, writes ``checkpoint.bin``, ``metrics.jsonl``
    (deterministic) and ``timing.jsonl`` (wall-clock per step) there.
    """
    trainer = Trainer(cfg, data)
    model = trainer.model
    if params is None:
        params = init_params(cfg, model)
    model.check_params(params)
    trainer.ledger.steps = start_step
    stop = trainer.T if max_steps is None else min(trainer.T, start_step + max_steps)
    records = [trainer.header()]
    log.info("training %d steps (T=%d) in mode %s", stop - start_step, trainer.T, cfg.mode)
    timing = []
    for t in range(start_step, stop):
        t0 = time.perf_counter()
        params, rec = trainer.step(params, t)
        timing.append({"step": t + 1, "wall_ms": 1000.0 * (time.perf_counter() - t0)})
        records.append(rec)
        if (t + 1) % 100 == 0:
            log.debug("step %d rec=%.4f kld=%.4f psi=%.4f", t + 1, rec["rec"], rec["kld"], rec["psi"])
    steps = records[1:]
    summary = {
        "type": "summary",
        "steps": stop,
        "final_rec": steps[-1]["rec"] if steps else None,
        "epsilon_spent": trainer.ledger.spent(),
    }
    records.append(summary)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.bin", params, stop)
        write_jsonl(out / "metrics.jsonl", records)
        write_jsonl(out / "timing.jsonl", timing)
    return params, records


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# -- evaluation and sampling ---------------------------------------------------------


def evaluate(cfg: RunConfig, params: ParamSet, data: Dataset | None = None, seed: int | None = None) -> dict:
    data = cfg.load_data() if data is None else data
    model = build_model(cfg)
    model.check_params(params)
    prior = cfg.prior()
    seed = cfg.seed if seed is None else seed
    X = data.rows
    report = {"type": "eval", "n": data.n}
    mu = encoder_means(model, params, X)
    report["sparsity"] = sparsity(mu) if model.latent_dim >= 2 and data.n >= 2 else None
    lp = loglik_proxy(model, params, X, cfg.eval_l, stream(seed, "eval", 0))
    report["loglik_proxy"] = lp
    report["reconstruction_error"] = -lp
    n_eval = min(data.n, cfg.n_eval)
    report["mmd"] = mmd_metric(model, params, X, prior, stream(seed, "eval", 1), n_eval, cfg.scales) if n_eval >= 2 else None
    if cfg.prior_type == "gauss_mixture" or cfg.divergence_type == "reverse_kl":
        report["reverse_kl"] = reverse_kl_metric(model, params, X, prior, stream(seed, "eval", 2), n_eval)
    return report


def generate_samples(cfg: RunConfig, params: ParamSet, n: int, seed: int) -> Dataset:
    model = build_model(cfg)
    model.check_params(params)
    rows = decode_prior_samples(model, params, cfg.prior(), n, stream(seed, "generate"))
    return Dataset(rows.reshape(n, model.input_dim))


def generate_to_file(cfg: RunConfig, checkpoint, n: int, seed: int, out_path) -> Dataset:
    params, _ = load_checkpoint(checkpoint)
    ds = generate_samples(cfg, params, n, seed)
    save_dataset(ds, out_path)
    return ds
