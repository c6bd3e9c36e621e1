import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atpmil.codec import (
    ATPCode,
    CodecConfig,
    decode_atp,
    denormalize,
    encode_atp,
    encode_many,
    hard_decode,
    normalize,
    soft_decode,
    soft_decode_array,
)

PAPER4 = CodecConfig(atp_max=400_000, r_bin=20_000, n_bits=4)
DEFAULT = CodecConfig()


def _binary_by_hand(k, n_bits):
    digits = []
    for _ in range(n_bits):
        digits.append(k % 2)
        k //= 2
    return digits[::-1]


class TestConfig:
    def test_default_bit_count_covers_range(self):
        assert DEFAULT.n_bits == 5  # 20 bins -> 5 bits
        assert DEFAULT.code_dim == 6
        assert DEFAULT.covers_atp_max

    def test_paper_width_does_not_cover_range(self):
        assert not PAPER4.covers_atp_max

    @pytest.mark.parametrize("kw", [{"r_bin": 0}, {"r_bin": -1}, {"atp_max": 10, "r_bin": 20}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CodecConfig(**kw)


class TestEncode:
    def test_worked_example(self):
        code = encode_atp(239420, PAPER4)
        assert code.bits == (1, 0, 1, 1)
        assert code.fraction == 0.971

    def test_zero(self):
        code = encode_atp(0, DEFAULT)
        assert code.bits == (0,) * DEFAULT.n_bits
        assert code.fraction == 0.0

    def test_fifty_thousand(self):
        # 50000 // 20000 = 2 -> 00010, remainder 10000 / 20000 = 0.5
        code = encode_atp(50_000, CodecConfig(r_bin=20_000, n_bits=5))
        assert code.bits == (0, 0, 0, 1, 0)
        assert code.fraction == 0.5

    def test_bin_boundary_uses_floor(self):
        code = encode_atp(40_000, DEFAULT)
        assert code.bits == (0, 0, 0, 1, 0)
        assert code.fraction == 0.0

    def test_negative_is_domain_error(self):
        with pytest.raises(ValueError):
            encode_atp(-1.0, DEFAULT)

    def test_overflow_names_value(self):
        with pytest.raises(OverflowError, match="320000"):
            encode_atp(320_000, PAPER4)

    def test_matches_hand_binary(self):
        rng = np.random.default_rng(3)
        for v in rng.uniform(0, DEFAULT.capacity, 200):
            k = int(v // DEFAULT.r_bin)
            assert list(encode_atp(v, DEFAULT).bits) == _binary_by_hand(k, DEFAULT.n_bits)

    def test_encode_many_shapes(self):
        bits, frac = encode_many([0, 239420, 50_000], DEFAULT)
        assert bits.shape == (3, 5) and frac.shape == (3,)
        np.testing.assert_array_equal(bits[1], [0, 1, 0, 1, 1])


class TestDecode:
    def test_worked_example_roundtrip(self):
        assert decode_atp(ATPCode((1, 0, 1, 1), 0.971), PAPER4) == 239420

    def test_zero(self):
        assert decode_atp(ATPCode((0,) * 5, 0.0), DEFAULT) == 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            decode_atp(ATPCode((1, 0), 0.0), DEFAULT)

    def test_roundtrip_uniform(self):
        rng = np.random.default_rng(0)
        for v in rng.uniform(0, DEFAULT.atp_max, 10_000):
            assert abs(decode_atp(encode_atp(v, DEFAULT), DEFAULT) - v) <= 1e-6 * DEFAULT.r_bin

    @settings(max_examples=300)
    @given(st.floats(0, 399_999.999), st.floats(0, 399_999.999))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        if lo < hi:
            assert decode_atp(encode_atp(lo, DEFAULT), DEFAULT) < decode_atp(encode_atp(hi, DEFAULT), DEFAULT)

    @settings(max_examples=300)
    @given(st.floats(0, 639_999.99))
    def test_code_validity(self, v):
        code = encode_atp(v, DEFAULT)
        assert set(code.bits) <= {0.0, 1.0}
        assert 0.0 <= code.fraction < 1.0

    def test_hard_decode_tie_goes_to_one(self):
        bits = np.array([[0.5, 0.49, 0.0, 0.0, 0.0]])
        assert hard_decode(bits, np.array([0.25]), DEFAULT)[0] == (16 + 0.25) * 20_000


class TestSoftDecode:
    def test_worked_example(self):
        code = encode_atp(239420, PAPER4)
        assert soft_decode(code, PAPER4) == pytest.approx(0.59855, abs=1e-12)

    def test_zero(self):
        assert soft_decode(ATPCode((0,) * 4, 0.0), PAPER4) == 0.0

    def test_half_bits(self):
        # ((0.5 * 15) + 0.5) * 20000 / 400000
        assert soft_decode(ATPCode((0.5,) * 4, 0.5), PAPER4) == pytest.approx(0.4, abs=1e-12)

    def test_clamped(self):
        assert soft_decode(ATPCode((1,) * 5, 0.9), DEFAULT) == 1.0

    @settings(max_examples=200)
    @given(st.floats(0, 399_999.999))
    def test_hard_code_equals_decode(self, v):
        code = encode_atp(v, DEFAULT)
        assert soft_decode(code, DEFAULT) == pytest.approx(decode_atp(code, DEFAULT) / DEFAULT.atp_max, rel=1e-12, abs=1e-15)

    def test_torch_and_numpy_agree(self):
        torch = pytest.importorskip("torch")
        rng = np.random.default_rng(1)
        bits, frac = rng.random((7, 5)), rng.random(7)
        a = soft_decode_array(bits, frac, DEFAULT)
        b = soft_decode_array(torch.from_numpy(bits), torch.from_numpy(frac), DEFAULT).numpy()
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


class TestNormalize:
    @pytest.mark.parametrize("v,u", [(400_000, 1.0), (0, 0.0), (100_000, 0.25)])
    def test_values(self, v, u):
        assert normalize(v, DEFAULT) == u
        assert denormalize(u, DEFAULT) == v

    @pytest.mark.parametrize("v", [-1, 400_001])
    def test_out_of_range(self, v):
        with pytest.raises(ValueError):
            normalize(v, DEFAULT)

    def test_denormalize_out_of_range(self):
        with pytest.raises(ValueError):
            denormalize(1.5, DEFAULT)
