import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featuregate.errors import TableError
from featuregate.rng import SplitMix64, sample_indices
from featuregate.table import (
    Column,
    ColumnSpec,
    Schema,
    Table,
    load_table,
    serialize_table,
    split,
    subsample,
)


def make_schema():
    return Schema(
        (
            ColumnSpec("age", "continuous"),
            ColumnSpec("sex", "categorical"),
        ),
        target=None,
    )


def make_table(n=10, seed=0):
    gen = SplitMix64(seed)
    age = np.array([float(gen.below(90)) for _ in range(n)])
    sex = np.array([gen.below(2) for _ in range(n)], dtype=np.int64)
    return Table(
        make_schema(),
        (
            Column("age", "continuous", age),
            Column("sex", "categorical", sex, ("f", "m")),
        ),
    )


class TestSchema:
    def test_duplicate_names_rejected(self):
        with pytest.raises(TableError):
            Schema((ColumnSpec("a", "continuous"), ColumnSpec("a", "continuous")))

    def test_target_must_exist(self):
        with pytest.raises(TableError):
            Schema((ColumnSpec("a", "continuous"),), target="b")

    def test_json_round_trip(self):
        schema = Schema(
            (ColumnSpec("a", "continuous", False), ColumnSpec("b", "ordinal")),
            target="a",
            target_kind="continuous",
        )
        assert Schema.from_json(schema.to_json()) == schema


class TestLoad:
    def test_basic_parse_with_missing(self):
        schema = make_schema()
        csv_text = "age,sex\n31,m\n,f\n55,m\n"
        t = load_table(csv_text.encode(), schema)
        assert t.row_count == 3
        assert math.isnan(t.column("age").values[1])
        assert t.column("sex").decoded() == ["m", "f", "m"]

    def test_header_mismatch(self):
        with pytest.raises(TableError, match="missing schema column"):
            load_table(b"age\n31\n", make_schema())

    def test_extra_columns_ignored(self):
        t = load_table(b"age,junk,sex\n31,zzz,m\n", make_schema())
        assert t.row_count == 1

    def test_unparseable_continuous(self):
        with pytest.raises(TableError, match="unparseable"):
            load_table(b"age,sex\nxyz,m\n", make_schema())

    def test_nonfinite_literal_rejected(self):
        with pytest.raises(TableError, match="non-finite"):
            load_table(b"age,sex\ninf,m\n", make_schema())

    def test_missing_in_required_column(self):
        schema = Schema(
            (ColumnSpec("age", "continuous", allow_missing=False), ColumnSpec("sex", "categorical")),
        )
        with pytest.raises(TableError, match="missing value"):
            load_table(b"age,sex\n,m\n", schema)

    def test_quoted_cells(self):
        schema = Schema((ColumnSpec("name", "categorical"),))
        t = load_table(b'name\n"a,b"\n', schema)
        assert t.column("name").decoded() == ["a,b"]

    def test_acs_shaped_fixture(self, acs_like_table):
        t = acs_like_table
        assert t.row_count == 30085
        assert len(t.schema.columns) == 495  # 494 entity variables + target
        assert t.schema.target_kind == "categorical"


class TestRoundTrip:
    def test_serialize_load_identity(self):
        t = make_table(25)
        again = load_table(serialize_table(t).encode(), t.schema)
        assert t.equals(again)

    @given(st.lists(st.one_of(st.none(), st.floats(-1e12, 1e12)), min_size=1, max_size=40))
    @settings(max_examples=50, deadline=None)
    def test_serialize_load_identity_fuzz(self, cells):
        schema = Schema((ColumnSpec("v", "continuous"),))
        values = np.array([np.nan if c is None else c for c in cells])
        t = Table(schema, (Column("v", "continuous", values),))
        assert t.equals(load_table(serialize_table(t).encode(), schema))


class TestSplit:
    def test_sizes_and_disjoint(self):
        t = make_table(10)
        pair = split(t, 0.8, 7)
        assert pair.development.row_count == 8
        assert pair.holdout.row_count == 2
        dev = set(pair.development.column("age").values)
        hold = set(pair.holdout.column("age").values)
        # ages may repeat; use the golden index partition instead
        assert [int(v) for v in pair.holdout.column("age").values] == [
            int(t.column("age").values[i]) for i in (0, 3)
        ]

    def test_golden_partition_seed7(self):
        # frozen from the pinned SplitMix64 generator
        schema = Schema((ColumnSpec("v", "continuous"),))
        t = Table(schema, (Column("v", "continuous", np.arange(10.0)),))
        pair = split(t, 0.8, 7)
        assert [int(v) for v in pair.development.column("v").values] == [1, 2, 4, 5, 6, 7, 8, 9]
        assert [int(v) for v in pair.holdout.column("v").values] == [0, 3]

    def test_deterministic(self):
        t = make_table(50)
        a = split(t, 0.6, 3)
        b = split(t, 0.6, 3)
        assert a.development.equals(b.development)
        assert a.holdout.equals(b.holdout)

    def test_seeds_differ_golden(self):
        # frozen: the two partitions for seeds 1 and 2 start differently
        schema = Schema((ColumnSpec("v", "continuous"),))
        t = Table(schema, (Column("v", "continuous", np.arange(100.0)),))
        d1 = [int(v) for v in split(t, 0.75, 1).development.column("v").values]
        d2 = [int(v) for v in split(t, 0.75, 2).development.column("v").values]
        assert d1[:12] == [0, 1, 2, 3, 4, 7, 8, 10, 11, 12, 13, 15]
        assert d2[:12] == [0, 1, 2, 4, 5, 6, 7, 8, 9, 10, 11, 12]
        assert d1 != d2

    def test_partition_property(self):
        t = make_table(33)
        pair = split(t, 0.4, 11)
        merged = sorted(
            list(pair.development.column("age").values) + list(pair.holdout.column("age").values)
        )
        assert merged == sorted(t.column("age").values)

    def test_errors(self):
        t = make_table(1)
        with pytest.raises(TableError):
            split(t, 0.5, 0)
        with pytest.raises(TableError):
            split(make_table(5), 1.0, 0)


class TestSubsample:
    def test_full_size_is_permutation(self):
        t = make_table(12)
        s = subsample(t, 12, 5)
        assert sorted(s.column("age").values) == sorted(t.column("age").values)

    def test_single_row(self):
        assert subsample(make_table(12), 1, 5).row_count == 1

    def test_golden_indices_30085(self):
        # frozen from the pinned generator: first draws and checksum
        idx = sample_indices(30085, 50, 0)
        assert idx[:10] == [754, 9219, 5949, 10141, 2984, 942, 11887, 29749, 3241, 5955]
        assert sum(idx) == 685709

    def test_idempotent_up_to_order(self):
        t = make_table(40)
        once = subsample(t, 15, 9)
        twice = subsample(once, 15, 9)
        assert sorted(twice.column("age").values) == sorted(once.column("age").values)

    def test_out_of_range(self):
        with pytest.raises(TableError):
            subsample(make_table(5), 6, 0)
        with pytest.raises(TableError):
            subsample(make_table(5), 0, 0)


def test_table_immutable():
    t = make_table(4)
    with pytest.raises(ValueError):
        t.column("age").values[0] = 99.0


def test_infinity_rejected_at_construction():
    schema = Schema((ColumnSpec("v", "continuous"),))
    with pytest.raises(TableError):
        Table(schema, (Column("v", "continuous", np.array([1.0, np.inf])),))
