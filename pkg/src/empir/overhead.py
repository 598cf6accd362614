"""Execution-time and storage overhead of an ensemble relative to one FP model.

time    = M + sum_i ops_per_sec(FP) / ops_per_sec(k_i)
storage = M + sum_i k_i / FP

Ratios are computed as exact fractions; render them with ``float`` or
``format_ratio``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

ADMISSIBLE_LIMIT = Fraction(5, 4)


@dataclass
class HardwareProfile:
    throughput: dict[int, Fraction] = field(default_factory=dict)
    fp_bits: int = 32

    def __post_init__(self):
        self.throughput = {int(b): Fraction(v) for b, v in self.throughput.items()}
        for b, v in self.throughput.items():
            if v <= 0:
                raise ValueError(f"throughput for {b} bits must be positive")
        if self.fp_bits not in self.throughput:
            raise ValueError(f"profile lacks a throughput for the full-precision width {self.fp_bits}")
        bits = sorted(self.throughput)
        for lo, hi in zip(bits, bits[1:]):
            if self.throughput[hi] > self.throughput[lo]:
                warnings.warn(
                    f"throughput rises from {lo} to {hi} bits; expected non-increasing",
                    RuntimeWarning,
                    stacklevel=2,
                )

    def ops(self, bits: int) -> Fraction:
        try:
            return self.throughput[int(bits)]
        except KeyError:
            raise KeyError(f"profile has no throughput entry for {bits}-bit operations") from None

    @classmethod
    def linear(cls, fp_bits: int = 32, base: Fraction | int = 1, bits: Sequence[int] = range(1, 33)) -> "HardwareProfile":
        """Idealized profile: k-bit ops run fp_bits/k times faster than full precision."""
        base = Fraction(base)
        table = {int(k): base * Fraction(fp_bits, int(k)) for k in bits}
        table[fp_bits] = base
        return cls(table, fp_bits)

    @classmethod
    def native_4bit(cls, fp_bits: int = 32) -> "HardwareProfile":
        """A datapath with native 4/8/16-bit modes and no dedicated 2-bit mode.

        Sub-4-bit operands run on the 4-bit datapath, so 2-bit ops are no faster
        than 4-bit ones. Under this profile three LP members at (2, 2, 4) bits
        cost 3/8 = 0.375 of one FP model in time.
        """
        four = Fraction(fp_bits, 4)
        table = {1: four, 2: four, 3: four, 4: four, 8: Fraction(fp_bits, 8), 16: Fraction(fp_bits, 16), fp_bits: Fraction(1)}
        return cls(table, fp_bits)

    def to_text(self) -> str:
        lines = [f"fp_bits={self.fp_bits}"]
        for b in sorted(self.throughput):
            v = self.throughput[b]
            text = str(v.numerator) if v.denominator == 1 else repr(float(v))
            lines.append(f"bits={b} ops_per_sec={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "HardwareProfile":
        """Parse lines of ``bits=<int> ops_per_sec=<real>`` plus one ``fp_bits=<int>``."""
        table: dict[int, Fraction] = {}
        fp_bits = 32
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = dict(tok.split("=", 1) for tok in line.split())
            if set(fields) == {"fp_bits"}:
                fp_bits = int(fields["fp_bits"])
            elif set(fields) == {"bits", "ops_per_sec"}:
                table[int(fields["bits"])] = Fraction(fields["ops_per_sec"])
            else:
                raise ValueError(f"profile line {lineno}: cannot parse {raw!r}")
        return cls(table, fp_bits)

    @classmethod
    def load(cls, path) -> "HardwareProfile":
        return cls.parse(Path(path).read_text())


def _check_counts(M: int, N: int, k_list: Sequence[int]) -> None:
    if M < 0 or N < 0:
        raise ValueError("M and N must be non-negative")
    if len(k_list) != N:
        raise ValueError(f"expected {N} low-precision bit-widths, got {len(k_list)}")


def time_overhead(M: int, N: int, k_list: Sequence[int], profile: HardwareProfile | None = None) -> Fraction:
    profile = profile or HardwareProfile.linear()
    _check_counts(M, N, k_list)
    fp = profile.ops(profile.fp_bits)
    return Fraction(M) + sum((fp / profile.ops(k) for k in k_list), Fraction(0))


def storage_overhead(M: int, N: int, k_list: Sequence[int] = (), fp_bits: int = 32) -> Fraction:
    _check_counts(M, N, k_list)
    for k in k_list:
        if k > fp_bits:
            raise ValueError(f"low-precision width {k} exceeds full precision {fp_bits}")
        if k < 1:
            raise ValueError("bit-widths must be >= 1")
    return Fraction(M) + sum((Fraction(int(k), fp_bits) for k in k_list), Fraction(0))


def member_bits(quant_cfgs, kind: str = "storage", fp_bits: int = 32) -> tuple[int, list[int]]:
    """(M, k_list) from member QuantConfigs.

    Storage counts an LP member at its weight width; time at the wider of
    its weight and activation widths. A full-precision side counts as fp_bits.
    """
    M, ks = 0, []
    for q in quant_cfgs:
        if q is None or q.is_full_precision:
            M += 1
            continue
        w = q.weight_bits or fp_bits
        a = q.activation_bits or fp_bits
        ks.append(w if kind == "storage" else max(w, a))
    return M, ks


def is_admissible(M: int, N: int, k_list: Sequence[int], profile: HardwareProfile | None = None) -> bool:
    """Both overheads within 1.25x of a single full-precision model."""
    profile = profile or HardwareProfile.linear()
    return (
        time_overhead(M, N, k_list, profile) <= ADMISSIBLE_LIMIT
        and storage_overhead(M, N, k_list, profile.fp_bits) <= ADMISSIBLE_LIMIT
    )


def format_ratio(r: Fraction, digits: int = 4) -> str:
    return f"{float(r):.{digits}f}".rstrip("0").rstrip(".") if r.denominator != 1 else str(r.numerator)
