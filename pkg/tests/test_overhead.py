from fractions import Fraction

import pytest

from empir.overhead import (
    HardwareProfile,
    format_ratio,
    is_admissible,
    member_bits,
    storage_overhead,
    time_overhead,
)
from empir.quant import QuantConfig


def test_storage_examples():
    assert storage_overhead(1, 2, (4, 4), 32) == Fraction(5, 4)
    assert storage_overhead(0, 3, (2, 2, 4), 32) == Fraction(1, 4)
    assert storage_overhead(3, 0) == 3
    assert isinstance(storage_overhead(1, 1, (2,)), Fraction)


def test_time_under_linear_profile_equals_storage():
    for M, ks in [(1, (4, 4)), (0, (2, 2, 4)), (2, (2,))]:
        assert time_overhead(M, len(ks), ks) == storage_overhead(M, len(ks), ks)


def test_native_4bit_profile():
    p = HardwareProfile.native_4bit()
    assert time_overhead(0, 3, (2, 2, 4), p) == Fraction(3, 8)
    assert time_overhead(1, 2, (4, 4), p) == Fraction(5, 4)


def test_single_fp_model_is_unit():
    assert time_overhead(1, 0, ()) == 1
    assert storage_overhead(1, 0) == 1


def test_admissibility():
    assert is_admissible(1, 2, (4, 4))
    assert is_admissible(0, 3, (2, 2, 4))
    assert not is_admissible(2, 0, ())
    assert not is_admissible(1, 2, (8, 4))


def test_validation():
    with pytest.raises(ValueError):
        storage_overhead(1, 2, (4,))
    with pytest.raises(ValueError):
        storage_overhead(0, 1, (64,))
    with pytest.raises(ValueError):
        storage_overhead(-1, 0)
    with pytest.raises(KeyError):
        time_overhead(0, 1, (5,), HardwareProfile.native_4bit())


def test_profile_text_roundtrip(tmp_path):
    text = "# measured\nfp_bits=32\nbits=32 ops_per_sec=1e9\nbits=8 ops_per_sec=3.5e9\nbits=4 ops_per_sec=6e9\n"
    p = HardwareProfile.parse(text)
    assert p.ops(8) == Fraction("3.5e9")
    assert time_overhead(1, 1, (4,), p) == 1 + Fraction(1, 6)
    f = tmp_path / "hw.txt"
    f.write_text(p.to_text())
    assert HardwareProfile.load(f).throughput == p.throughput


def test_profile_errors_and_warning():
    with pytest.raises(ValueError):
        HardwareProfile.parse("bits=4 ops_per_sec=2\n")  # no fp entry
    with pytest.raises(ValueError):
        HardwareProfile.parse("fp_bits=32\nbits=32 speed=1\n")
    with pytest.warns(RuntimeWarning):
        HardwareProfile({32: 5, 4: 1})


def test_member_bits():
    qs = [QuantConfig(), QuantConfig(2, 4), QuantConfig(4, 4)]
    assert member_bits(qs, "storage") == (1, [2, 4])
    assert member_bits(qs, "time") == (1, [4, 4])


def test_format_ratio():
    assert format_ratio(Fraction(5, 4)) == "1.25"
    assert format_ratio(Fraction(3)) == "3"
    assert format_ratio(Fraction(3, 8)) == "0.375"
