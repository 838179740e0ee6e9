"""Minimal random coding over Gaussian blocks.

Encoder and decoder share an infinite candidate stream drawn from the
coding distribution.  The stream is counter-based: every scalar is a pure
function of (global_seed, block_id, sample_idx, dim_idx), so decoding the
k-th candidate costs O(block_size) rather than O(K), and candidate scoring
parallelizes trivially.  The transmitted payload per block is one index in
[0, 2^budget_bits), sampled from the importance-weight distribution with
the Gumbel-max trick under deterministic per-index Gumbel noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import DiagonalGaussian

# Keeps K = 2^budget_bits below ~67M candidates per block.
MAX_BUDGET_BITS = 26

_CHUNK = 1 << 16
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SELECTION_SALT = np.uint64(0x3C79AC492BA7B653)
_U64 = np.uint64


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    """Contiguous dimensionwise partition of a flat weight vector."""

    total_dims: int
    block_size: int
    blocks: tuple[tuple[int, int], ...]

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class StreamKey:
    global_seed: int
    block_id: int


@dataclass(frozen=True)
class EncodedBlock:
    index: int
    budget_bits: int

    def __post_init__(self):
        if not 0 <= self.index < (1 << self.budget_bits):
            raise CodecError(f"index {self.index} does not fit in {self.budget_bits} bits")


def partition_blocks(total_dims: int, block_size: int) -> BlockSpec:
    """ceil(total/size) contiguous blocks; only the last may be short."""
    if total_dims < 1 or block_size < 1:
        raise CodecError("total_dims and block_size must be positive")
    blocks = []
    for start in range(0, total_dims, block_size):
        blocks.append((start, min(block_size, total_dims - start)))
    return BlockSpec(total_dims=total_dims, block_size=block_size, blocks=tuple(blocks))


# -- counter-based bit stream ------------------------------------------------


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output function (uint64 in, uint64 out, wraps mod 2^64)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _u64(value: int) -> np.uint64:
    return np.uint64(value & 0xFFFFFFFFFFFFFFFF)


def _stream_state(key: StreamKey) -> np.uint64:
    with np.errstate(over="ignore"):
        s = _mix64(_u64(key.global_seed) + _GOLDEN)
        return _mix64(s + _u64(key.block_id + 1) * _GOLDEN)


def _uniform53(state: np.uint64, counters: np.ndarray) -> np.ndarray:
    """Open-interval (0,1) doubles from state + counter * golden ratio."""
    with np.errstate(over="ignore"):
        bits = _mix64(state + counters * _GOLDEN)
    return ((bits >> _U64(11)).astype(np.float64) + 0.5) * (2.0**-53)


def _standard_normals(state: np.ndarray, sample_idx: np.ndarray, dims: int) -> np.ndarray:
    """Box-Muller normals, one per (sample, dim), shape (len(sample_idx), dims).

    Counters are injective within a block: (sample*dims + dim)*2 + lane.
    """
    with np.errstate(over="ignore"):
        base = (sample_idx.astype(np.uint64)[:, None] * _u64(dims) + np.arange(dims, dtype=np.uint64)[None, :]) * _U64(2)
        u1 = _uniform53(state, base)
        u2 = _uniform53(state, base + _U64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def candidate_sample(key: StreamKey, sample_idx: int, p_block: DiagonalGaussian) -> np.ndarray:
    """The sample_idx-th candidate of the block's stream: nu + rho * n."""
    if sample_idx < 0:
        raise CodecError("sample_idx must be nonnegative")
    state = _stream_state(key)
    n = _standard_normals(state, np.array([sample_idx], dtype=np.uint64), p_block.dim)[0]
    return p_block.means + p_block.stds * n


def _gumbel_noise(selection_seed: int, indices: np.ndarray) -> np.ndarray:
    state = _mix64(_u64(selection_seed) ^ _SELECTION_SALT)
    u = _uniform53(state, indices.astype(np.uint64))
    return -np.log(-np.log(u))


def encode_block(
    q_block: DiagonalGaussian,
    p_block: DiagonalGaussian,
    budget_bits: int,
    key: StreamKey,
    selection_seed: int,
) -> EncodedBlock:
    """Importance-sample one of K = 2^budget_bits shared-stream candidates.

    Scores log q(w_k) - log p(w_k) in chunks; the returned index maximizes
    score + Gumbel(k), which samples exactly from the normalized importance
    distribution.  Ties keep the lowest index, and per-index Gumbel keying
    makes the argmax independent of chunking.
    """
    if budget_bits < 1:
        raise CodecError("budget_bits must be >= 1")
    if budget_bits > MAX_BUDGET_BITS:
        raise CodecError(f"budget_bits {budget_bits} exceeds cap {MAX_BUDGET_BITS}")
    if q_block.dim != p_block.dim:
        raise CodecError("q and p dimension mismatch")
    k_total = 1 << budget_bits
    state = _stream_state(key)
    dims = p_block.dim

    nu, rho = p_block.means, p_block.stds
    mu, sigma = q_block.means, q_block.stds
    log_ratio_const = np.sum(p_block.log_stds - q_block.log_stds)
    inv_two_var = 0.5 / (sigma * sigma)

    best_score = -np.inf
    best_index = -1
    for start in range(0, k_total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, k_total), dtype=np.uint64)
        n = _standard_normals(state, idx, dims)
        w = nu + rho * n
        log_r = log_ratio_const + 0.5 * np.sum(n * n, axis=1) - np.sum((w - mu) ** 2 * inv_two_var, axis=1)
        if not np.all(np.isfinite(log_r)):
            raise CodecError("non-finite importance log-ratio")
        perturbed = log_r + _gumbel_noise(selection_seed, idx)
        j = int(np.argmax(perturbed))
        if perturbed[j] > best_score:
            best_score = float(perturbed[j])
            best_index = start + j
    return EncodedBlock(index=best_index, budget_bits=budget_bits)


def decode_block(p_block: DiagonalGaussian, enc: EncodedBlock, key: StreamKey) -> np.ndarray:
    """Regenerate the encoder's chosen candidate (bitwise identical)."""
    if enc.index >= (1 << enc.budget_bits):
        raise CodecError(f"index {enc.index} out of range for {enc.budget_bits} bits")
    return candidate_sample(key, enc.index, p_block)


# -- bit packing ---------------------------------------------------------------


def pack_indices(blocks: list[EncodedBlock]) -> bytes:
    """Concatenate indices MSB-first, each budget_bits wide; zero-pad the end."""
    total_bits = 0
    acc = 0
    for blk in blocks:
        if not 0 <= blk.index < (1 << blk.budget_bits):
            raise CodecError(f"index {blk.index} exceeds {blk.budget_bits}-bit field")
        acc = (acc << blk.budget_bits) | blk.index
        total_bits += blk.budget_bits
    if total_bits == 0:
        return b""
    pad = (-total_bits) % 8
    acc <<= pad
    return acc.to_bytes((total_bits + pad) // 8, "big")


def unpack_indices(data: bytes, budgets: list[int]) -> list[EncodedBlock]:
    """Inverse of pack_indices for the given per-block bit widths."""
    total_bits = sum(budgets)
    expected = (total_bits + 7) // 8
    if len(data) != expected:
        raise CodecError(f"bitstream has {len(data)} bytes, expected {expected}")
    acc = int.from_bytes(data, "big")
    pad = len(data) * 8 - total_bits
    acc >>= pad
    out: list[EncodedBlock] = []
    consumed = 0
    for bits in reversed(budgets):
        out.append(EncodedBlock(index=acc & ((1 << bits) - 1), budget_bits=bits))
        acc >>= bits
        consumed += bits
    out.reverse()
    return out
