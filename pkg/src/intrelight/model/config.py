"""Network hyperparameters."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

HEAD_MODES = ("modulation", "direct_regression")
TRUNK_MODES = ("fused", "intrinsics_only")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 128
    L: int = 4
    heads: int = 4
    p: int = 8
    n_registers: int = 4
    readout_indices: tuple[int, ...] = (0, 1, 2, 3)
    rope_base: float = 100.0
    source_encoder_depth: int = 2
    intrinsics_encoder_depth: int = 2
    head_mode: str = "modulation"
    trunk_mode: str = "fused"
    mlp_ratio: int = 4
    head_width: int = 64
    pixel_skip: bool = True
    skip_width: int = 64
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "readout_indices", tuple(int(i) for i in self.readout_indices))
        if self.d <= 0 or self.heads <= 0 or self.d % self.heads:
            raise ValueError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.head_dim % 4:
            raise ValueError(f"head dim {self.head_dim} must be divisible by 4 for axial rotary pairs")
        if self.p < 2 or self.p & (self.p - 1):
            raise ValueError(f"patch size must be a power of two >= 2, got {self.p}")
        idx = self.readout_indices
        # trunks shallower than 4 blocks cannot supply 4 distinct taps, so repeats are allowed there
        strict = self.L >= 4
        ordered = all(b > a if strict else b >= a for a, b in zip(idx, idx[1:]))
        if len(idx) != 4 or not ordered or idx[0] < 0 or idx[-1] >= self.L:
            kind = "strictly increasing" if strict else "non-decreasing"
            raise ValueError(f"readout_indices must be 4 {kind} block indices < L={self.L}, got {idx}")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}")
        if self.trunk_mode not in TRUNK_MODES:
            raise ValueError(f"trunk_mode must be one of {TRUNK_MODES}")
        if self.n_registers < 0 or self.source_encoder_depth < 0 or self.intrinsics_encoder_depth < 0:
            raise ValueError("depths and register count must be non-negative")
        if self.rope_base <= 0:
            raise ValueError("rope_base must be positive")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        out = asdict(self)
        out["readout_indices"] = list(self.readout_indices)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
