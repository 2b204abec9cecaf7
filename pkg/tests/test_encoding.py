from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psmclone.encoding import (
    ColumnEncoder,
    decode,
    encode,
    encode_matrix,
    fit_encoder,
    transfer,
)
from psmclone.errors import EmptyColumn, UnknownCategory
from psmclone.seeding import derive_seed
from psmclone.trace import DataType, TraceDataset

from conftest import I, T, make_schema

FLOAT, INT, TEXT = DataType.FLOAT, DataType.INTEGER, DataType.TEXT
unit_noise = st.floats(0.0, 1.0 - 1e-6)


class TestFit:
    def test_float_mean_and_sd(self):
        enc = fit_encoder([2.0, 4.0], FLOAT, seed=0)
        assert enc.center == 3.0 and enc.scale == 1.0

    def test_constant_column_gets_unit_scale(self):
        enc = fit_encoder([7, 7, 7], INT, seed=0)
        assert enc.center == 7.0 and enc.scale == 1.0

    def test_text_vocabulary_by_frequency(self):
        values = ["val", "throw", "val"]
        counts = Counter(values)
        expected = sorted(counts, key=lambda v: (-counts[v], v))
        enc = fit_encoder(values, TEXT, seed=0)
        assert list(enc.vocabulary) == expected == ["val", "throw"]

    def test_text_ties_break_lexicographically(self):
        enc = fit_encoder(["b", "a", "c", "a", "b"], TEXT, seed=3)
        assert enc.vocabulary == ("a", "b", "c")

    def test_empty_column(self):
        with pytest.raises(EmptyColumn):
            fit_encoder([], INT, seed=0)

    def test_vocabulary_only_for_text(self):
        with pytest.raises(ValueError):
            ColumnEncoder(INT, 0.0, 1.0, ("a",))
        with pytest.raises(ValueError):
            ColumnEncoder(TEXT, 0.0, 1.0, None)
        with pytest.raises(ValueError):
            ColumnEncoder(TEXT, 0.0, 1.0, ("a", "a"))
        with pytest.raises(ValueError):
            ColumnEncoder(FLOAT, 0.0, 0.0)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
    def test_float_columns_are_standardized(self, values):
        enc = fit_encoder(values, FLOAT, seed=0)
        x = np.array([encode(enc, v) for v in values])
        if np.std(values) >= 1e-6:
            assert abs(x.mean()) < 1e-9
            assert abs(x.std() - 1.0) < 1e-9


class TestEncodeDecode:
    def test_examples(self):
        assert encode(ColumnEncoder(FLOAT, 3.0, 1.0), 4.0) == 1.0
        assert encode(ColumnEncoder(INT, 0.0, 1.0), 5, 0.25) == 5.25
        text = ColumnEncoder(TEXT, 0.0, 1.0, ("val", "throw"))
        with pytest.raises(UnknownCategory):
            encode(text, "missing", 0.5)
        assert decode(ColumnEncoder(FLOAT, 0.0, 1.0), 1.5) == 1.5
        assert decode(text, -1e9) == "val"
        assert decode(text, 1e9) == "throw"

    @given(
        st.integers(-(10**6), 10**6),
        unit_noise,
        st.floats(-1e3, 1e3),
        st.floats(1e-3, 1e3),
    )
    def test_integer_round_trip(self, v, u, center, scale):
        enc = ColumnEncoder(INT, center, scale)
        assert decode(enc, encode(enc, v, u)) == v

    @given(st.lists(st.text(max_size=3), min_size=1, max_size=20), st.data())
    def test_text_round_trip(self, values, data):
        enc = fit_encoder(values, TEXT, seed=1)
        v = data.draw(st.sampled_from(values))
        u = data.draw(unit_noise)
        assert decode(enc, encode(enc, v, u)) == v

    @given(st.floats(-1e6, 1e6), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
    def test_float_round_trip(self, v, center, scale):
        enc = ColumnEncoder(FLOAT, center, scale)
        assert decode(enc, encode(enc, v)) == pytest.approx(v, rel=1e-12, abs=1e-9)

    @given(st.integers(-1000, 1000), st.integers(-1000, 1000), unit_noise, st.sampled_from([INT, FLOAT]))
    def test_order_preserving(self, v1, v2, u, dtype):
        enc = ColumnEncoder(dtype, 1.5, 2.5)
        if v1 < v2:
            assert encode(enc, v1, u) < encode(enc, v2, u)


class TestMatrix:
    def _fixture(self):
        return TraceDataset(make_schema("fa", [("n", I)], [("fa", I)]), ((4, 24), (2, 2)))

    def test_factorial_fixture(self):
        ds = self._fixture()
        m, encs = encode_matrix(ds, seed=0)
        assert m.shape == (2, 2) and np.isfinite(m).all()
        # hand encoder: n has mean 3, sd 1; fa has mean 13, sd 11
        assert (encs[0].center, encs[0].scale) == (3.0, 1.0)
        assert (encs[1].center, encs[1].scale) == (13.0, 11.0)
        u = np.random.default_rng(derive_seed(0, "column", 0)).random(2)
        assert m[:, 0] == pytest.approx([4 + u[0] - 3, 2 + u[1] - 3], abs=1e-15)
        u = np.random.default_rng(derive_seed(0, "column", 1)).random(2)
        assert m[:, 1] == pytest.approx([(24 + u[0] - 13) / 11, (2 + u[1] - 13) / 11], abs=1e-15)
        assert [decode(encs[j], m[i, j]) for i in range(2) for j in range(2)] == [4, 24, 2, 2]

    def test_deterministic(self):
        ds = self._fixture()
        a, _ = encode_matrix(ds, seed=5)
        b, _ = encode_matrix(ds, seed=5)
        c, _ = encode_matrix(ds, seed=6)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_unseen_category_with_prefit_encoder(self):
        schema = make_schema("g", [("guard", T)], [("r", I)])
        fitted = TraceDataset(schema, (("val", 1), ("none", 2)))
        _, encs = encode_matrix(fitted, seed=0)
        other = TraceDataset(schema, (("throw", 1),))
        with pytest.raises(UnknownCategory):
            encode_matrix(other, seed=0, encoders=encs)

    def test_text_column_is_exactly_standardized(self):
        schema = make_schema("g", [("guard", T)], [("r", I)])
        ds = TraceDataset(schema, tuple((g, 1) for g in ["a", "b", "a", "c", "a", "b"]))
        m, _ = encode_matrix(ds, seed=2)
        assert abs(m[:, 0].mean()) < 1e-12 and abs(m[:, 0].std() - 1.0) < 1e-12


class TestTransfer:
    def test_numeric_goes_through_raw_value(self):
        src = ColumnEncoder(INT, 10.0, 2.0)
        dst = ColumnEncoder(INT, 0.0, 5.0)
        x = np.array([encode(src, 7, 0.3)])
        assert transfer(src, dst, x)[0] == pytest.approx(encode(dst, 7, 0.3))

    def test_text_keeps_category_and_offset(self):
        src = ColumnEncoder(TEXT, 0.0, 1.0, ("a", "b", "z"))
        dst = ColumnEncoder(TEXT, 0.0, 1.0, ("b", "a"))
        x = np.array([encode(src, "a", 0.25), encode(src, "b", 0.5), encode(src, "z", 0.75)])
        y = transfer(src, dst, x)
        assert y[0] == pytest.approx(1.25) and y[1] == pytest.approx(0.5)
        # unknown to the target: one cell past its vocabulary
        assert y[2] == pytest.approx(2.75)
