import json
import math

import numpy as np
import pytest

from featuregate.errors import CatalogError, FitError, TransformError
from featuregate.primitives import (
    APPROACHES,
    Block,
    ExecContext,
    apply_with_recovery,
    deserialize_step,
    instantiate,
    sample_skewness,
    serialize_step,
    standard_catalog,
)
from featuregate.features import TransformerSpec
from featuregate.table import Column


def cont(name, values):
    return Column(name, "continuous", np.array(values, dtype=float))


def cat(name, labels, categories):
    codes = np.array([-1 if v is None else categories.index(v) for v in labels], dtype=np.int64)
    return Column(name, "categorical", codes, tuple(categories))


def spec(primitive, **params):
    return TransformerSpec(primitive, params)


def fit_transform(step, block, new=None, target=None):
    fitted = step.fit(block, target)
    return fitted, fitted.transform(new if new is not None else block)


class TestInstantiate:
    def test_impute_mean(self):
        step = instantiate(spec("impute", strategy="mean"))
        assert step.kind == "impute" and not step.fitted

    def test_bare_expression_desugars(self):
        step = instantiate("log1p(x)")
        assert step.kind == "expr"

    def test_subset_sugar_desugars(self):
        step = instantiate([["a"], spec("impute", strategy="mean")])
        assert step.kind == "subset"

    def test_unknown_primitive(self):
        with pytest.raises(CatalogError, match="unknown primitive"):
            instantiate(spec("embed"))

    def test_one_hot_contract_violation(self):
        with pytest.raises(CatalogError):
            instantiate(spec("one_hot", max_cardinality=0))

    def test_unexpected_params(self):
        with pytest.raises(CatalogError):
            instantiate(spec("identity", extra=1))

    def test_nonfinite_param_rejected(self):
        with pytest.raises(CatalogError):
            instantiate(spec("value_map", mapping={"a": float("inf")}, default=0))

    def test_feature_ref_not_allowed_inside_groupwise(self):
        with pytest.raises(CatalogError, match="feature_ref"):
            instantiate(spec("groupwise", by="g", inner=spec("feature_ref", path="p")))


class TestImpute:
    def test_mean(self):
        block = Block((cont("a", [1.0, np.nan, 3.0]),))
        fitted, out = fit_transform(instantiate(spec("impute", strategy="mean")), block)
        assert fitted.state["fill"][0]["value"] == 2.0
        assert out.get("a").values.tolist() == [1.0, 2.0, 3.0]

    def test_learned_on_dev_only(self):
        dev = Block((cont("a", [1.0, np.nan, 3.0]),))
        new = Block((cont("a", [np.nan, 5.0]),))
        _, out = fit_transform(instantiate(spec("impute", strategy="mean")), dev, new)
        assert out.get("a").values.tolist() == [2.0, 5.0]

    def test_median(self):
        block = Block((cont("a", [1.0, 9.0, 2.0, np.nan]),))
        fitted = instantiate(spec("impute", strategy="median")).fit(block)
        assert fitted.state["fill"][0]["value"] == 2.0

    def test_most_frequent_tie_breaks_low(self):
        block = Block((cat("c", ["b", "a", "a", "b", None], ["a", "b"]),))
        fitted = instantiate(spec("impute", strategy="most_frequent")).fit(block)
        assert fitted.state["fill"][0]["value"] == "a"

    def test_constant_label(self):
        block = Block((cat("c", ["a", None], ["a", "b"]),))
        _, out = fit_transform(instantiate(spec("impute", strategy="constant", value="b")), block)
        assert out.get("c").decoded() == ["a", "b"]

    def test_mean_on_categorical_rejected(self):
        block = Block((cat("c", ["a"], ["a"]),))
        with pytest.raises(FitError):
            instantiate(spec("impute", strategy="mean")).fit(block)

    def test_no_observed_values(self):
        block = Block((cont("a", [np.nan, np.nan]),))
        with pytest.raises(FitError, match="no observed values"):
            instantiate(spec("impute", strategy="mean")).fit(block)


class TestScale:
    def test_standard(self):
        dev = Block((cont("a", [8.0, 12.0]),))  # mean 10, std 2
        _, out = fit_transform(instantiate(spec("scale", mode="standard")), dev, Block((cont("a", [12.0]),)))
        assert out.get("a").values.tolist() == [1.0]

    def test_zero_std_outputs_zero(self):
        dev = Block((cont("a", [5.0, 5.0]),))
        _, out = fit_transform(instantiate(spec("scale", mode="standard")), dev)
        assert out.get("a").values.tolist() == [0.0, 0.0]

    def test_minmax(self):
        dev = Block((cont("a", [0.0, 10.0]),))
        _, out = fit_transform(instantiate(spec("scale", mode="minmax")), dev, Block((cont("a", [2.5]),)))
        assert out.get("a").values.tolist() == [0.25]

    def test_missing_stays_missing(self):
        dev = Block((cont("a", [0.0, 10.0]),))
        _, out = fit_transform(instantiate(spec("scale", mode="standard")), dev, Block((cont("a", [np.nan]),)))
        assert math.isnan(out.get("a").values[0])

    def test_categorical_rejected(self):
        with pytest.raises(FitError):
            instantiate(spec("scale", mode="standard")).fit(Block((cat("c", ["a"], ["a"]),)))


class TestOneHot:
    def test_seen_categories_and_unseen_zeros(self):
        dev = Block((cat("c", ["a", "b", "a"], ["a", "b", "c"]),))
        new = Block((cat("c", ["b", "a", "c"], ["a", "b", "c"]),))
        _, out = fit_transform(instantiate(spec("one_hot", max_cardinality=5)), dev, new)
        assert out.names == ["c=a", "c=b"]
        assert out.get("c=a").values.tolist() == [0.0, 1.0, 0.0]
        assert out.get("c=b").values.tolist() == [1.0, 0.0, 0.0]  # unseen c -> all zeros

    def test_missing_is_all_zeros(self):
        dev = Block((cat("c", ["a", "b"], ["a", "b"]),))
        new = Block((cat("c", [None], ["a", "b"]),))
        _, out = fit_transform(instantiate(spec("one_hot", max_cardinality=5)), dev, new)
        assert [out.get("c=a").values[0], out.get("c=b").values[0]] == [0.0, 0.0]

    def test_cardinality_limit(self):
        dev = Block((cat("c", ["a", "b", "c"], ["a", "b", "c"]),))
        with pytest.raises(FitError, match="max_cardinality"):
            instantiate(spec("one_hot", max_cardinality=2)).fit(dev)


class TestValueMap:
    def test_label_mapping_with_default(self):
        block = Block((cat("c", ["a", "b", "z", None], ["a", "b", "z"]),))
        step = instantiate(spec("value_map", mapping={"a": 1, "b": 2}, default=0)).fit(block)
        out = step.transform(block)
        vals = out.get("c").values
        assert vals[0] == 1.0 and vals[1] == 2.0 and vals[2] == 0.0 and math.isnan(vals[3])

    def test_default_missing(self):
        block = Block((cat("c", ["z"], ["z"]),))
        step = instantiate(spec("value_map", mapping={"a": 1}, default="missing")).fit(block)
        assert math.isnan(step.transform(block).get("c").values[0])

    def test_default_error(self):
        block = Block((cat("c", ["z"], ["z"]),))
        step = instantiate(spec("value_map", mapping={"a": 1}, default="error")).fit(block)
        with pytest.raises(TransformError, match="unmapped"):
            step.transform(block)

    def test_continuous_keys(self):
        block = Block((cont("a", [1.0, 3.0]),))
        step = instantiate(spec("value_map", mapping={"1": 10, "3": 30}, default=0)).fit(block)
        assert step.transform(block).get("a").values.tolist() == [10.0, 30.0]


class TestNullIndicatorAndClip:
    def test_null_indicator(self):
        block = Block((cont("a", [1.0, np.nan]),))
        _, out = fit_transform(instantiate(spec("null_indicator")), block)
        assert out.names == ["a_missing"]
        assert out.get("a_missing").values.tolist() == [0.0, 1.0]

    def test_clip_quantile_type7(self):
        values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]
        block = Block((cont("a", values),))
        fitted = instantiate(spec("clip_quantile", lo_q=0.1, hi_q=0.9)).fit(block)
        bounds = fitted.state["bounds"][0]
        # type-7 linear interpolation: h = (n-1)q
        assert bounds["lo"] == pytest.approx(1.9)
        assert bounds["hi"] == pytest.approx(9.1)
        out = fitted.transform(Block((cont("a", [0.0, 5.0, 100.0]),)))
        assert out.get("a").values.tolist() == [1.9, 5.0, 9.1]


class TestConditional:
    def test_skew_check_branches(self):
        rng = np.random.default_rng(0)
        skewed = np.exp(rng.normal(0, 1, 400))
        symmetric = rng.normal(0, 1, 400)
        cond = spec(
            "conditional",
            check={"kind": "skew_gt", "threshold": 0.75},
            then=spec("expr", expression="log1p(x)"),
        )
        fitted_skew = instantiate(cond).fit(Block((cont("x", skewed),)))
        assert fitted_skew.state["condition"] is True
        fitted_sym = instantiate(cond).fit(Block((cont("x", symmetric),)))
        assert fitted_sym.state["condition"] is False

    def test_skewness_matches_oracle(self):
        import scipy.stats

        rng = np.random.default_rng(1)
        x = np.exp(rng.normal(0, 0.8, 300))
        assert sample_skewness(x) == pytest.approx(scipy.stats.skew(x, bias=False), abs=1e-10)

    def test_false_condition_no_else_is_identity(self):
        cond = spec(
            "conditional",
            check={"kind": "missing_frac_gt", "threshold": 0.5},
            then=spec("expr", expression="x * 0"),
        )
        block = Block((cont("x", [1.0, 2.0]),))
        _, out = fit_transform(instantiate(cond), block)
        assert out.get("x").values.tolist() == [1.0, 2.0]

    def test_else_branch(self):
        cond = spec(
            "conditional",
            check={"kind": "variance_lt", "threshold": 0.5},
            then=spec("expr", expression="x * 0"),
            **{"else": spec("expr", expression="x + 100")},
        )
        block = Block((cont("x", [0.0, 10.0]),))
        fitted = instantiate(cond).fit(block)
        assert fitted.state["condition"] is False
        out = fitted.transform(block)
        assert np.asarray(out).tolist() == [100.0, 110.0]

    def test_cardinality_check(self):
        cond = spec(
            "conditional",
            check={"kind": "cardinality_gt", "threshold": 2},
            then=spec("identity"),
        )
        fitted = instantiate(cond).fit(Block((cont("x", [1.0, 2.0, 3.0]),)))
        assert fitted.state["condition"] is True


class TestGroupwise:
    def test_per_group_means_and_fallback(self):
        by = cat("g", ["a", "a", "b", "b"], ["a", "b", "z"])
        x = cont("x", [1.0, np.nan, 10.0, np.nan])
        step = instantiate(spec("groupwise", by="g", inner=spec("impute", strategy="mean")))
        fitted = step.fit(Block((by, x)))
        out = fitted.transform(Block((by, x)))
        assert out.get("x").values.tolist() == [1.0, 1.0, 10.0, 10.0]
        # unseen group falls back to the global mean (5.5)
        new = Block((cat("g", ["z"], ["a", "b", "z"]), cont("x", [np.nan])))
        assert fitted.transform(new).get("x").values.tolist() == [5.5]

    def test_matches_per_group_oracle(self):
        # brute-force oracle: inner fitted solely on each group's dev rows
        rng = np.random.default_rng(3)
        labels = ["a", "b", "c"]
        by_vals = [labels[i % 3] for i in range(60)]
        xs = rng.normal(10, 3, 60)
        xs[rng.random(60) < 0.3] = np.nan
        by = cat("g", by_vals, labels)
        x = cont("x", xs)
        step = instantiate(spec("groupwise", by="g", inner=spec("impute", strategy="mean")))
        fitted = step.fit(Block((by, x)))
        out = fitted.transform(Block((by, x))).get("x").values
        for gi, label in enumerate(labels):
            rows = [i for i, v in enumerate(by_vals) if v == label]
            inner = instantiate(spec("impute", strategy="mean")).fit(
                Block((cont("x", xs[rows]),))
            )
            expected = inner.transform(Block((cont("x", xs[rows]),))).get("x").values
            assert np.allclose(out[rows], expected, equal_nan=True)

    def test_by_not_among_inputs(self):
        step = instantiate(spec("groupwise", by="g", inner=spec("identity")))
        with pytest.raises(FitError, match="by-column"):
            step.fit(Block((cont("x", [1.0]),)))


class TestSubsetAndChain:
    def test_subset_passthrough(self):
        a = cont("a", [1.0, np.nan])
        b = cont("b", [5.0, 6.0])
        step = instantiate(spec("subset", inputs=["a"], inner=spec("impute", strategy="mean")))
        _, out = fit_transform(step, Block((a, b)))
        assert out.names == ["a", "b"]
        assert out.get("a").values.tolist() == [1.0, 1.0]
        assert out.get("b").values.tolist() == [5.0, 6.0]

    def test_chain_sequences(self):
        chain = spec(
            "chain",
            steps=[spec("impute", strategy="constant", value=0.0), spec("expr", expression="x + 1")],
        )
        block = Block((cont("x", [np.nan, 2.0]),))
        _, out = fit_transform(instantiate(chain), block)
        assert np.asarray(out).tolist() == [1.0, 3.0]


class TestRecovery:
    def test_column_to_block_for_expr(self):
        step = instantiate(spec("expr", expression="x * 2")).fit(Block((cont("x", [1.0]),)))
        ctx = ExecContext()
        out = apply_with_recovery(step, cont("x", [3.0]), ctx, "p")
        assert np.asarray(out).tolist() == [6.0]
        assert ctx.approaches["p"] == 2  # column -> single-column block

    def test_block_passes_identity(self):
        step = instantiate(spec("impute", strategy="mean")).fit(Block((cont("x", [1.0, np.nan]),)))
        ctx = ExecContext()
        apply_with_recovery(step, Block((cont("x", [np.nan]),)), ctx, "p")
        assert ctx.approaches["p"] == 0

    def test_scalar_vector_recovers(self):
        # as in a chain: the step is fitted through the same converted form
        from featuregate.primitives import fit_with_recovery

        ctx = ExecContext()
        fitted, _ = fit_with_recovery(
            instantiate(spec("impute", strategy="mean")), np.array([1.0, 3.0]), None, ctx, "p"
        )
        assert ctx.approaches["p"] == 3
        out = apply_with_recovery(fitted, np.array([5.0, np.nan]), ctx, "p")
        assert out.columns[0].values.tolist() == [5.0, 2.0]

    def test_all_approaches_fail_with_trace(self):
        step = instantiate(spec("expr", expression="a + b")).fit(
            Block((cont("a", [1.0]), cont("b", [2.0])))
        )
        with pytest.raises(TransformError, match="4 conversion approaches failed"):
            apply_with_recovery(step, cont("a", [1.0]), ExecContext(), "p")

    def test_stored_approach_reused(self):
        step = instantiate(spec("expr", expression="x * 2")).fit(Block((cont("x", [1.0]),)))
        ctx = ExecContext()
        apply_with_recovery(step, cont("x", [3.0]), ctx, "p")
        # a later call with a different form fails rather than re-searching
        with pytest.raises(TransformError):
            apply_with_recovery(step, Block((cont("x", [1.0]),)), ctx, "p")


class TestStepContracts:
    def test_transform_requires_fitted(self):
        with pytest.raises(TransformError, match="unfitted"):
            instantiate(spec("identity")).transform(Block((cont("x", [1.0]),)))

    def test_fit_returns_new_value(self):
        step = instantiate(spec("identity"))
        fitted = step.fit(Block((cont("x", [1.0]),)))
        assert not step.fitted and fitted.fitted and step is not fitted

    def test_fit_deterministic_and_idempotent(self):
        block = Block((cont("x", [1.0, np.nan, 4.0]),))
        a = instantiate(spec("impute", strategy="mean")).fit(block)
        b = instantiate(spec("impute", strategy="mean")).fit(block)
        assert a == b

    def test_leakage_row_isolation(self):
        # transform of one row is identical whether or not other rows come along
        dev = Block((cont("x", [2.0, np.nan, 8.0]),))
        fitted = instantiate(spec("impute", strategy="mean")).fit(dev)
        solo = fitted.transform(Block((cont("x", [np.nan]),))).get("x").values[0]
        batch = fitted.transform(Block((cont("x", [np.nan, 100.0, -4.0]),))).get("x").values[0]
        assert solo == batch == 5.0


class TestSerialization:
    def test_fitted_state_round_trip(self):
        block = Block((cont("x", [1.0, np.nan, 3.0]),))
        fitted = instantiate(spec("impute", strategy="mean")).fit(block)
        doc = serialize_step(fitted)
        again = deserialize_step(doc)
        assert again == fitted
        new = Block((cont("x", [np.nan]),))
        assert again.transform(new).get("x").values.tolist() == fitted.transform(new).get("x").values.tolist()

    def test_round_trip_composite(self):
        by = cat("g", ["a", "b"], ["a", "b"])
        x = cont("x", [1.0, 5.0])
        step = instantiate(spec("groupwise", by="g", inner=spec("scale", mode="standard")))
        fitted = step.fit(Block((by, x)))
        doc = json.loads(json.dumps(serialize_step(fitted), allow_nan=False))
        again = deserialize_step(doc)
        new = Block((cat("g", ["a", "z"], ["a", "b", "z"]), cont("x", [2.0, 3.0])))
        assert np.allclose(
            again.transform(new).get("x").values, fitted.transform(new).get("x").values
        )

    def test_serialized_bytes_stable(self):
        block = Block((cont("x", [1.0, 2.0]),))
        fitted = instantiate(spec("scale", mode="standard")).fit(block)
        a = json.dumps(serialize_step(fitted), allow_nan=False)
        b = json.dumps(serialize_step(fitted), allow_nan=False)
        assert a == b
