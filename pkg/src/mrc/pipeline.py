"""Variational training and the blockwise compress-then-finetune schedule.

Training optimizes the distortion-plus-rate objective

    E_{w ~ Q} [ sum over dataset of cross-entropy ] + sum_b beta_b * KL_b

with a single reparameterized weight sample per iteration.  Under the
mean/variance parameterization the per-block beta factors are annealed
multiplicatively until every block's KL meets its nat budget; under the
mean/KL parameterization the KL equals the budget by construction and the
loss is distortion alone.

Compression walks the blocks in order: encode block b with the shared
candidate stream, fix its decoded sample in the network, fine-tune the
remaining blocks, repeat.  The result serializes to a self-contained
little-endian binary (architecture, coding parameters, seeds, packed
indices) that decodes without any training state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import (
    BlockSpec,
    EncodedBlock,
    StreamKey,
    _mix64,
    _u64,
    decode_block,
    encode_block,
    pack_indices,
    partition_blocks,
    unpack_indices,
)
from .data import Dataset
from .gaussians import (
    DiagonalGaussian,
    MeanKLBlockParams,
    gauss_kl_elementwise,
    meankl_to_meanvar,
    tau_from_mean,
)
from .lambertw import DEFAULT_REFINE_ITERATIONS
from .nn import Adam, ModelSpec, cross_entropy, init_flat_weights, mlp_apply, mlp_logits

MEAN_VAR = "mean_var"
MEAN_KL = "mean_kl"

MAGIC = b"MRCL"
FORMAT_VERSION = 1
LAYER_KIND_DENSE = 0

# Over-budget slack (nats) a block may carry into the encoder; K is fixed
# at 2^budget_bits, so slight overshoot only costs sample quality.
ENCODE_KL_SLACK = 0.1

_SERIES_CUTOFF = 1e-6  # matches gaussians.variance_ratio


class PipelineError(RuntimeError):
    pass


class TrainingDivergedError(PipelineError):
    def __init__(self, message: str, trace: "TrainTrace"):
        super().__init__(message)
        self.trace = trace


class CompressedModelFormatError(ValueError):
    pass


@dataclass
class TrainConfig:
    parameterization: str = MEAN_KL
    budget_bits: int = 20
    block_size: int = 20
    learning_rate: float = 0.001
    batch_size: int = 200
    max_iters: int = 1000
    eps_beta0: float = 1e-8
    eps_beta: float = 5e-5
    finetune_steps: int = 100
    seed: int = 0
    init_log_std: float = -10.0
    init_coding_log_std: float = -2.0
    refine_iterations: int = DEFAULT_REFINE_ITERATIONS

    def __post_init__(self):
        if self.parameterization not in (MEAN_VAR, MEAN_KL):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        for name in ("budget_bits", "block_size", "learning_rate", "batch_size", "eps_beta0", "eps_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 0 or self.finetune_steps < 0 or self.seed < 0:
            raise ValueError("max_iters, finetune_steps and seed must be nonnegative")

    @property
    def budget_nats(self) -> float:
        return self.budget_bits * float(np.log(2.0))


@dataclass
class TraceRow:
    iteration: int
    cross_entropy: float
    kl_nats: float
    beta_or_kappa: float
    max_block_kl: float


@dataclass
class TrainTrace:
    parameterization: str
    budget_nats_per_block: float
    anneal_rule: str
    rows: list[TraceRow] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


@dataclass
class CodingState:
    """Per-layer coding distribution: mean fixed at 0, trainable log-std."""

    log_stds: np.ndarray

    def flat(self, spec: ModelSpec) -> DiagonalGaussian:
        layer_ids = spec.layer_of_param()
        return DiagonalGaussian(np.zeros(spec.total_params), np.asarray(self.log_stds)[layer_ids])


@dataclass
class MeanVarState:
    spec: ModelSpec
    blocks: BlockSpec
    budget_nats: float
    means: np.ndarray
    log_stds: np.ndarray
    betas: np.ndarray

    parameterization = MEAN_VAR

    def marginals(self, coding: CodingState) -> DiagonalGaussian:
        return DiagonalGaussian(self.means, self.log_stds)


@dataclass
class MeanKLState:
    spec: ModelSpec
    blocks: BlockSpec
    budget_nats: float
    taus: np.ndarray
    quota_logits: np.ndarray
    refine_iterations: int = DEFAULT_REFINE_ITERATIONS

    parameterization = MEAN_KL

    def block_params(self, block_id: int) -> MeanKLBlockParams:
        start, length = self.blocks.blocks[block_id]
        return MeanKLBlockParams(
            taus=self.taus[start : start + length],
            quota_logits=self.quota_logits[start : start + length],
            budget_nats=self.budget_nats,
        )

    def marginals(self, coding: CodingState) -> DiagonalGaussian:
        p = coding.flat(self.spec)
        means = np.empty(self.spec.total_params)
        log_stds = np.empty(self.spec.total_params)
        for b, (start, length) in enumerate(self.blocks.blocks):
            converted = meankl_to_meanvar(self.block_params(b), p.slice(start, length), self.refine_iterations)
            means[start : start + length] = converted.means
            log_stds[start : start + length] = converted.log_stds
        return DiagonalGaussian(means, log_stds)


def anneal_beta(beta: float, kl_block: float, budget: float, cfg: TrainConfig) -> float:
    """Multiplicative annealing: grow beta while the block is over budget."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    if kl_block > budget:
        return beta * (1.0 + cfg.eps_beta)
    return beta / (1.0 + cfg.eps_beta)


def derive_seed(seed: int, tag: int) -> int:
    """Deterministic 64-bit substream seed."""
    with np.errstate(over="ignore"):
        return int(_mix64(_u64(seed) + _mix64(_u64(tag))))


def _batch_indices(rng: np.random.Generator, n: int, batch: int):
    order = rng.permutation(n)
    pos = 0
    while True:
        if pos + batch > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos : pos + batch]
        pos += batch


class _Run:
    """Mutable training state shared by initial training and fine-tuning."""

    def __init__(
        self,
        spec: ModelSpec,
        data: Dataset,
        cfg: TrainConfig,
        rng: np.random.Generator,
        coding_log_stds: np.ndarray,
        train_coding: bool,
        state: MeanVarState | MeanKLState,
    ):
        self.spec = spec
        self.data = data
        self.cfg = cfg
        self.rng = rng
        self.state = state
        self.blocks = state.blocks
        n = spec.total_params
        num_blocks = self.blocks.num_blocks
        self.block_ids = np.empty(n, dtype=np.int64)
        for b, (start, length) in enumerate(self.blocks.blocks):
            self.block_ids[start : start + length] = b
        self.layer_ids = spec.layer_of_param()
        self.budget = cfg.budget_nats

        self.coding_leaf = Tensor(np.asarray(coding_log_stds, dtype=np.float64).copy(), requires_grad=train_coding)
        if cfg.parameterization == MEAN_VAR:
            self.mean_leaf = Tensor(state.means.copy(), requires_grad=True)
            self.log_std_leaf = Tensor(state.log_stds.copy(), requires_grad=True)
            self.betas = state.betas.copy()
            leaves = [self.mean_leaf, self.log_std_leaf]
        else:
            self.tau_leaf = Tensor(state.taus.copy(), requires_grad=True)
            self.quota_leaf = Tensor(state.quota_logits.copy(), requires_grad=True)
            self.betas = np.full(num_blocks, cfg.eps_beta0)
            leaves = [self.tau_leaf, self.quota_leaf]
        if train_coding:
            leaves.append(self.coding_leaf)
        self.leaves = leaves
        self.opt = Adam(leaves, lr=cfg.learning_rate)

        self.fixed_values = np.zeros(n)
        self.free_mask = np.ones(n, dtype=bool)
        self.free_block_mask = np.ones(num_blocks, dtype=bool)
        self.batch_size = min(cfg.batch_size, data.size)
        self.batches = _batch_indices(rng, data.size, self.batch_size)

    # -- posterior construction on the tape --------------------------------

    def _posterior_tensors(self) -> tuple[Tensor, Tensor]:
        """(mu, sigma) over the full flat weight vector."""
        log_rho = ad.take(self.coding_leaf, self.layer_ids)
        rho = ad.exp(log_rho)
        if self.cfg.parameterization == MEAN_VAR:
            return self.mean_leaf, ad.exp(self.log_std_leaf)

        num_blocks = self.blocks.num_blocks
        seg_max = np.full(num_blocks, -np.inf)
        np.maximum.at(seg_max, self.block_ids, self.quota_leaf.data)
        shifted = ad.exp(self.quota_leaf - seg_max[self.block_ids])
        denom = ad.take(ad.segment_sum(shifted, self.block_ids, num_blocks), self.block_ids)
        quotas = shifted / denom
        kappa_w = quotas * self.budget
        half_width = ad.sqrt(kappa_w * 2.0)
        centered = half_width * ad.tanh(self.tau_leaf)
        mu = rho * centered
        z_sq = centered * centered
        arg_log = -ad.maximum(-(z_sq - kappa_w * 2.0 - 1.0), 1.0)
        a = ad.exp(arg_log)
        w_val = ad.lambert_w_op(-a)
        s_root = ad.maximum(-w_val, a)
        s_series = a * (a * (a * 1.5 + 1.0) + 1.0)
        s = ad.where(a.data < _SERIES_CUTOFF, s_series, s_root)
        sigma = rho * ad.sqrt(s)
        return mu, sigma

    def _loss(self, xb: np.ndarray, yb: np.ndarray, noise: np.ndarray) -> tuple[Tensor, dict]:
        mu, sigma = self._posterior_tensors()
        w = mu + sigma * noise
        if not self.free_mask.all():
            w = ad.where(self.free_mask, w, self.fixed_values)
        logits = mlp_apply(self.spec, w, xb)
        ce = cross_entropy(logits, yb)
        distortion = ce * float(self.data.size)

        mu_d, sigma_d = mu.data, sigma.data
        log_rho_d = np.asarray(self.coding_leaf.data)[self.layer_ids]
        kl_vec_d = gauss_kl_elementwise(mu_d, np.log(sigma_d), 0.0, log_rho_d)
        kl_blocks_d = np.bincount(self.block_ids, weights=kl_vec_d, minlength=self.blocks.num_blocks)

        if self.cfg.parameterization == MEAN_VAR:
            log_rho = ad.take(self.coding_leaf, self.layer_ids)
            kl_vec = (
                (log_rho - self.log_std_leaf)
                + (ad.exp((self.log_std_leaf - log_rho) * 2.0) + mu * mu * ad.exp(log_rho * -2.0)) * 0.5
                - 0.5
            )
            kl_blocks = ad.segment_sum(kl_vec, self.block_ids, self.blocks.num_blocks)
            loss = distortion + ad.tsum(kl_blocks * (self.betas * self.free_block_mask))
        else:
            loss = distortion
        aux = {"ce": float(ce.data), "kl_blocks": kl_blocks_d}
        return loss, aux

    # -- stepping -----------------------------------------------------------

    def step(self) -> dict:
        xb_idx = next(self.batches)
        noise = self.rng.standard_normal(self.spec.total_params)
        try:
            loss, aux = self._loss(self.data.inputs[xb_idx], self.data.labels[xb_idx], noise)
        except ad.NonFiniteError as exc:
            raise PipelineError(f"non-finite loss: {exc}") from exc
        self.opt.zero_grad()
        loss.backward()
        masks: list[np.ndarray | None] = []
        for leaf in self.leaves:
            masks.append(self.free_mask if leaf is not self.coding_leaf else None)
        self.opt.step(update_masks=masks)
        if self.cfg.parameterization == MEAN_VAR:
            over = aux["kl_blocks"] > self.budget
            grow = self.betas * (1.0 + self.cfg.eps_beta)
            shrink = self.betas / (1.0 + self.cfg.eps_beta)
            new_betas = np.where(over, grow, shrink)
            self.betas = np.where(self.free_block_mask, new_betas, self.betas)
        return aux

    def block_kls(self) -> np.ndarray:
        q = self.snapshot_state().marginals(CodingState(self.coding_leaf.data.copy()))
        p = CodingState(self.coding_leaf.data.copy()).flat(self.spec)
        kl_vec = gauss_kl_elementwise(q.means, q.log_stds, p.means, p.log_stds)
        return np.bincount(self.block_ids, weights=kl_vec, minlength=self.blocks.num_blocks)

    def snapshot_state(self) -> MeanVarState | MeanKLState:
        if self.cfg.parameterization == MEAN_VAR:
            return MeanVarState(
                spec=self.spec,
                blocks=self.blocks,
                budget_nats=self.budget,
                means=self.mean_leaf.data.copy(),
                log_stds=self.log_std_leaf.data.copy(),
                betas=self.betas.copy(),
            )
        return MeanKLState(
            spec=self.spec,
            blocks=self.blocks,
            budget_nats=self.budget,
            taus=self.tau_leaf.data.copy(),
            quota_logits=self.quota_leaf.data.copy(),
            refine_iterations=self.cfg.refine_iterations,
        )


def _initial_state(spec: ModelSpec, cfg: TrainConfig, rng: np.random.Generator) -> tuple[MeanVarState | MeanKLState, CodingState]:
    blocks = partition_blocks(spec.total_params, cfg.block_size)
    init_means = init_flat_weights(spec, rng)
    coding = CodingState(log_stds=np.full(len(spec.layers), cfg.init_coding_log_std))
    if cfg.parameterization == MEAN_VAR:
        state = MeanVarState(
            spec=spec,
            blocks=blocks,
            budget_nats=cfg.budget_nats,
            means=init_means,
            log_stds=np.full(spec.total_params, cfg.init_log_std),
            betas=np.full(blocks.num_blocks, cfg.eps_beta0),
        )
        return state, coding
    # Mean/KL: uniform quotas, taus from the inverse mean map.
    rho_flat = np.exp(coding.log_stds)[spec.layer_of_param()]
    kappa_w = np.empty(spec.total_params)
    for start, length in blocks.blocks:
        kappa_w[start : start + length] = cfg.budget_nats / length
    ratio = init_means / (rho_flat * np.sqrt(2.0 * kappa_w))
    taus = np.arctanh(np.clip(ratio, -1.0 + 1e-6, 1.0 - 1e-6))
    state = MeanKLState(
        spec=spec,
        blocks=blocks,
        budget_nats=cfg.budget_nats,
        taus=taus,
        quota_logits=np.zeros(spec.total_params),
        refine_iterations=cfg.refine_iterations,
    )
    return state, coding


def train(model: ModelSpec, data: Dataset, cfg: TrainConfig) -> tuple[MeanVarState | MeanKLState, CodingState, TrainTrace]:
    """Variational training; records one trace row per iteration."""
    rng = np.random.default_rng([cfg.seed, 1])
    state, coding = _initial_state(model, cfg, rng)
    trace = TrainTrace(
        parameterization=cfg.parameterization,
        budget_nats_per_block=cfg.budget_nats,
        anneal_rule=f"beta0={cfg.eps_beta0:g} step={cfg.eps_beta:g} multiplicative per block",
    )
    if cfg.max_iters == 0:
        return state, coding, trace
    run = _Run(model, data, cfg, rng, coding.log_stds, train_coding=True, state=state)
    for it in range(cfg.max_iters):
        try:
            aux = run.step()
        except PipelineError as exc:
            raise TrainingDivergedError(f"iteration {it}: {exc}", trace) from exc
        kl_blocks = aux["kl_blocks"]
        beta_or_kappa = float(np.mean(run.betas)) if cfg.parameterization == MEAN_VAR else cfg.budget_nats
        trace.rows.append(
            TraceRow(
                iteration=it,
                cross_entropy=aux["ce"],
                kl_nats=float(kl_blocks.sum()),
                beta_or_kappa=beta_or_kappa,
                max_block_kl=float(kl_blocks.max()),
            )
        )
    final_coding = CodingState(run.coding_leaf.data.copy())
    return run.snapshot_state(), final_coding, trace


@dataclass
class CompressedModel:
    layer_sizes: tuple[int, ...]
    layer_kinds: tuple[int, ...]
    coding_means: np.ndarray  # per layer
    coding_log_stds: np.ndarray  # per layer
    block_size: int
    budget_bits: int
    global_seed: int
    selection_seed: int
    encoded: tuple[EncodedBlock, ...]

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.layer_sizes)

    @property
    def payload_bits(self) -> int:
        return sum(e.budget_bits for e in self.encoded)

    def to_bytes(self) -> bytes:
        spec = self.spec
        out = bytearray()
        out += MAGIC
        out += struct.pack("<H", FORMAT_VERSION)
        out += struct.pack("<I", len(spec.layers))
        for (fan_in, fan_out), kind in zip(spec.layers, self.layer_kinds):
            out += struct.pack("<IIB", fan_in, fan_out, kind)
        for nu, log_rho in zip(self.coding_means, self.coding_log_stds):
            out += struct.pack("<dd", nu, log_rho)
        out += struct.pack("<II", self.block_size, self.budget_bits)
        out += struct.pack("<QQ", self.global_seed, self.selection_seed)
        out += struct.pack("<I", len(self.encoded))
        out += pack_indices(list(self.encoded))
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CompressedModel":
        view = memoryview(raw)
        pos = 0

        def pull(fmt: str):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(view):
                raise CompressedModelFormatError("truncated compressed model")
            vals = struct.unpack_from(fmt, view, pos)
            pos += size
            return vals

        if bytes(view[:4]) != MAGIC:
            raise CompressedModelFormatError("bad magic (not a compressed model file)")
        pos = 4
        (version,) = pull("<H")
        if version != FORMAT_VERSION:
            raise CompressedModelFormatError(f"unsupported format version {version}")
        (num_layers,) = pull("<I")
        if num_layers < 1 or num_layers > 1_000_000:
            raise CompressedModelFormatError(f"implausible layer count {num_layers}")
        dims = []
        kinds = []
        for _ in range(num_layers):
            fan_in, fan_out, kind = pull("<IIB")
            if kind != LAYER_KIND_DENSE:
                raise CompressedModelFormatError(f"unknown layer kind {kind}")
            dims.append((fan_in, fan_out))
            kinds.append(kind)
        layer_sizes = [dims[0][0]] + [d[1] for d in dims]
        for i in range(1, num_layers):
            if dims[i][0] != dims[i - 1][1]:
                raise CompressedModelFormatError("layer dimensions do not chain")
        coding_means = np.empty(num_layers)
        coding_log_stds = np.empty(num_layers)
        for i in range(num_layers):
            coding_means[i], coding_log_stds[i] = pull("<dd")
        block_size, budget_bits = pull("<II")
        global_seed, selection_seed = pull("<QQ")
        (block_count,) = pull("<I")
        spec = ModelSpec(tuple(layer_sizes))
        expected_blocks = partition_blocks(spec.total_params, block_size).num_blocks
        if block_count != expected_blocks:
            raise CompressedModelFormatError(
                f"block count {block_count} inconsistent with architecture ({expected_blocks} expected)"
            )
        payload_bytes = (block_count * budget_bits + 7) // 8
        payload = bytes(view[pos : pos + payload_bytes])
        if len(payload) != payload_bytes:
            raise CompressedModelFormatError("truncated index bitstream")
        if pos + payload_bytes != len(view):
            raise CompressedModelFormatError("trailing bytes after index bitstream")
        encoded = unpack_indices(payload, [budget_bits] * block_count)
        return cls(
            layer_sizes=tuple(layer_sizes),
            layer_kinds=tuple(kinds),
            coding_means=coding_means,
            coding_log_stds=coding_log_stds,
            block_size=block_size,
            budget_bits=budget_bits,
            global_seed=global_seed,
            selection_seed=selection_seed,
            encoded=tuple(encoded),
        )


@dataclass
class CompressResult:
    compressed: CompressedModel
    weights: np.ndarray  # the fixed decoded sample, flat
    encode_posterior: DiagonalGaussian  # per-block marginals at encode time


def compress_model(
    posterior: MeanVarState | MeanKLState,
    coding: CodingState,
    data: Dataset,
    cfg: TrainConfig,
) -> CompressResult:
    """Encode blocks in order, fixing each decoded sample and fine-tuning the rest."""
    spec = posterior.spec
    blocks = posterior.blocks
    rng = np.random.default_rng([cfg.seed, 2])
    global_seed = derive_seed(cfg.seed, 0x5EED)
    selection_seed = derive_seed(cfg.seed, 0x5E1E)

    run = _Run(spec, data, cfg, rng, coding.log_stds, train_coding=False, state=posterior)
    p_flat = CodingState(coding.log_stds).flat(spec)

    enc_means = np.empty(spec.total_params)
    enc_log_stds = np.empty(spec.total_params)
    encoded: list[EncodedBlock] = []

    budget = cfg.budget_nats
    for b, (start, length) in enumerate(blocks.blocks):
        if cfg.parameterization == MEAN_VAR:
            extra = 0
            while run.block_kls()[b] > budget + ENCODE_KL_SLACK:
                if extra >= cfg.max_iters:
                    raise PipelineError(
                        f"block {b} KL {run.block_kls()[b]:.4f} nats still exceeds budget "
                        f"{budget:.4f} + {ENCODE_KL_SLACK} after {extra} extra annealing steps"
                    )
                run.step()
                extra += 1
        q_full = run.snapshot_state().marginals(CodingState(run.coding_leaf.data.copy()))
        q_block = q_full.slice(start, length)
        p_block = p_flat.slice(start, length)
        key = StreamKey(global_seed, b)
        enc = encode_block(q_block, p_block, cfg.budget_bits, key, derive_seed(selection_seed, b))
        sample = decode_block(p_block, enc, key)
        encoded.append(enc)
        enc_means[start : start + length] = q_block.means
        enc_log_stds[start : start + length] = q_block.log_stds
        run.fixed_values[start : start + length] = sample
        run.free_mask[start : start + length] = False
        run.free_block_mask[b] = False
        if b < blocks.num_blocks - 1:
            for _ in range(cfg.finetune_steps):
                run.step()

    cm = CompressedModel(
        layer_sizes=spec.layer_sizes,
        layer_kinds=tuple(LAYER_KIND_DENSE for _ in spec.layers),
        coding_means=np.zeros(len(spec.layers)),
        coding_log_stds=np.asarray(coding.log_stds, dtype=np.float64).copy(),
        block_size=cfg.block_size,
        budget_bits=cfg.budget_bits,
        global_seed=global_seed,
        selection_seed=selection_seed,
        encoded=tuple(encoded),
    )
    return CompressResult(
        compressed=cm,
        weights=run.fixed_values.copy(),
        encode_posterior=DiagonalGaussian(enc_means, enc_log_stds),
    )


def decompress_model(cm: CompressedModel) -> np.ndarray:
    """Regenerate the flat weight vector from seeds and indices alone."""
    spec = cm.spec
    layer_ids = spec.layer_of_param()
    p_flat = DiagonalGaussian(np.asarray(cm.coding_means)[layer_ids], np.asarray(cm.coding_log_stds)[layer_ids])
    blocks = partition_blocks(spec.total_params, cm.block_size)
    out = np.empty(spec.total_params)
    for b, (start, length) in enumerate(blocks.blocks):
        sample = decode_block(p_flat.slice(start, length), cm.encoded[b], StreamKey(cm.global_seed, b))
        out[start : start + length] = sample
    return out


def evaluate(spec: ModelSpec, flat_weights: np.ndarray, data: Dataset) -> tuple[float, float]:
    """(accuracy, error) under argmax prediction."""
    logits = mlp_logits(spec, np.asarray(flat_weights, dtype=np.float64), data.inputs)
    predictions = np.argmax(logits, axis=1)
    accuracy = float(np.mean(predictions == data.labels))
    return accuracy, 1.0 - accuracy


def compression_ratio(
    original_param_count: int,
    bits_per_param: int,
    cm: CompressedModel,
    include_header: bool = True,
) -> float:
    """(original bits) / (payload bits + header bits).

    With include_header=False the denominator is the bare index payload
    (block_count * budget_bits); otherwise it is the full file size.
    """
    if original_param_count <= 0 or bits_per_param <= 0:
        raise ValueError("counts must be positive")
    denominator = len(cm.to_bytes()) * 8 if include_header else cm.payload_bits
    return (original_param_count * bits_per_param) / denominator


def export_histograms(
    posterior: MeanVarState | MeanKLState, coding: CodingState
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(layer_id, mean, log_std) arrays, one entry per weight."""
    q = posterior.marginals(coding)
    return posterior.spec.layer_of_param(), q.means, q.log_stds


# -- checkpoint (JSON) ---------------------------------------------------------


def checkpoint_to_json(posterior: MeanVarState | MeanKLState, coding: CodingState, cfg: TrainConfig) -> str:
    body: dict = {
        "format": 1,
        "parameterization": posterior.parameterization,
        "layer_sizes": list(posterior.spec.layer_sizes),
        "block_size": posterior.blocks.block_size,
        "budget_nats": posterior.budget_nats,
        "budget_bits": cfg.budget_bits,
        "seed": cfg.seed,
        "coding_log_stds": list(coding.log_stds),
    }
    if posterior.parameterization == MEAN_VAR:
        body["means"] = list(posterior.means)
        body["log_stds"] = list(posterior.log_stds)
        body["betas"] = list(posterior.betas)
    else:
        body["taus"] = list(posterior.taus)
        body["quota_logits"] = list(posterior.quota_logits)
        body["refine_iterations"] = posterior.refine_iterations
    return json.dumps(body, sort_keys=True)


def checkpoint_from_json(text: str) -> tuple[MeanVarState | MeanKLState, CodingState]:
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CompressedModelFormatError(f"invalid checkpoint JSON: {exc}") from exc
    if body.get("format") != 1:
        raise CompressedModelFormatError("unsupported checkpoint format")
    spec = ModelSpec(tuple(body["layer_sizes"]))
    blocks = partition_blocks(spec.total_params, int(body["block_size"]))
    coding = CodingState(log_stds=np.array(body["coding_log_stds"], dtype=np.float64))
    if body["parameterization"] == MEAN_VAR:
        state: MeanVarState | MeanKLState = MeanVarState(
            spec=spec,
            blocks=blocks,
            budget_nats=float(body["budget_nats"]),
            means=np.array(body["means"], dtype=np.float64),
            log_stds=np.array(body["log_stds"], dtype=np.float64),
            betas=np.array(body["betas"], dtype=np.float64),
        )
    else:
        state = MeanKLState(
            spec=spec,
            blocks=blocks,
            budget_nats=float(body["budget_nats"]),
            taus=np.array(body["taus"], dtype=np.float64),
            quota_logits=np.array(body["quota_logits"], dtype=np.float64),
            refine_iterations=int(body.get("refine_iterations", DEFAULT_REFINE_ITERATIONS)),
        )
    return state, coding
