import json

import pytest

from featuregate.errors import ProjectError
from featuregate.features import parse_feature, serialize_feature
from featuregate.project import CONFIG_NAME, ProjectConfig, load_project, scaffold
from featuregate.table import Schema


@pytest.fixture()
def fixture_files(tmp_path, house_csv, house_schema):
    train = tmp_path / "train.csv"
    train.write_text(house_csv)
    schema = tmp_path / "schema.json"
    schema.write_text(house_schema.to_json())
    return train, schema


def make_project(tmp_path, fixture_files, name="houses"):
    train, schema = fixture_files
    return scaffold(name, "SalePrice", train, schema, tmp_path / name)


IDENTITY_DOC = {
    "name": "year_sold_raw",
    "author": "ann",
    "input": ["YearSold"],
    "transformer": [{"primitive": "identity", "params": {}}],
}


class TestScaffold:
    def test_creates_layout(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        assert (root / CONFIG_NAME).exists()
        assert (root / "data/train.csv").exists()
        assert (root / "data/schema.json").exists()
        assert (root / "features/contrib").is_dir()
        assert (root / "README.md").read_text().startswith("# houses")
        schema = Schema.from_json((root / "data/schema.json").read_text())
        assert schema.target == "SalePrice"

    def test_fresh_project_has_zero_features(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        project = load_project(root)
        assert project.state.features == []
        assert project.state.accepted_keys() == []
        # an empty pipeline still engineers a rows x 0 matrix
        from featuregate.engine import transform

        fitted = project.fitted_pipeline()
        matrix = transform(fitted, project.split_pair().holdout)
        assert matrix.values.shape[1] == 0

    def test_scaffold_twice_fails(self, tmp_path, fixture_files):
        make_project(tmp_path, fixture_files)
        with pytest.raises(ProjectError, match="not empty"):
            make_project(tmp_path, fixture_files)

    def test_target_must_be_in_schema(self, tmp_path, fixture_files):
        train, schema = fixture_files
        with pytest.raises(ProjectError, match="target"):
            scaffold("p", "Nope", train, schema, tmp_path / "p2")

    def test_unreadable_inputs(self, tmp_path):
        with pytest.raises(ProjectError, match="unreadable"):
            scaffold("p", "t", tmp_path / "ghost.csv", tmp_path / "ghost.json", tmp_path / "p3")


class TestLoadProject:
    def test_missing_config(self, tmp_path):
        with pytest.raises(ProjectError, match=CONFIG_NAME):
            load_project(tmp_path)

    def test_features_listed_in_path_order(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        project = load_project(root)
        fd_b = parse_feature(json.dumps(dict(IDENTITY_DOC, name="bbb", author="zoe")))
        fd_a = parse_feature(json.dumps(dict(IDENTITY_DOC, name="aaa", author="zoe")))
        project.write_feature(fd_b)
        project.write_feature(fd_a)
        again = load_project(root)
        assert [fd.name for _, fd in again.state.features] == ["aaa", "bbb"]

    def test_corrupt_feature_named(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        bad = root / "features/contrib/user_zoe/feature_bad.json"
        bad.parent.mkdir(parents=True)
        bad.write_text("{broken")
        with pytest.raises(ProjectError, match="feature_bad.json"):
            load_project(root)

    def test_misnamed_feature_rejected(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        stray = root / "features/contrib/notes.json"
        stray.write_text("{}")
        with pytest.raises(ProjectError, match="naming convention"):
            load_project(root)

    def test_config_round_trip(self):
        config = ProjectConfig(
            name="x", train_csv="data/train.csv", schema_json="data/schema.json", target="y"
        )
        assert ProjectConfig.from_json(config.to_json()) == config

    def test_acceptance_order_from_log(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        project = load_project(root)
        for name in ("ccc", "aaa"):
            fd = parse_feature(json.dumps(dict(IDENTITY_DOC, name=name, author="zoe")))
            project.write_feature(fd)
            project.append_log({"outcome": "accepted", "feature": fd.key, "pruned": []})
        project.append_log(
            {"outcome": "accepted", "feature": "zoe/ddd", "pruned": [{"feature": "zoe/ccc"}]}
        )
        again = load_project(root)
        assert again.state.accepted_keys() == ["zoe/aaa", "zoe/ddd"]

    def test_lock_is_exclusive(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        project = load_project(root)
        with project.lock():
            with pytest.raises(ProjectError, match="locked"):
                with project.lock():
                    pass
        with project.lock():
            pass  # released cleanly


class TestPipelineCache:
    def test_cache_hit_and_invalidation(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        project = load_project(root)
        fd = parse_feature(json.dumps(IDENTITY_DOC))
        project.write_feature(fd)
        project.reload()
        first = project.fitted_pipeline()
        key_path = root / "cache/pipeline.key"
        key_before = key_path.read_text()
        second = project.fitted_pipeline()
        from featuregate.engine import export_bundle

        assert export_bundle(first) == export_bundle(second)
        # adding a feature invalidates the key
        fd2 = parse_feature(json.dumps(dict(IDENTITY_DOC, name="other")))
        project.write_feature(fd2)
        project.reload()
        project.fitted_pipeline()
        assert key_path.read_text() != key_before

    def test_state_round_trip_after_submit_style_mutation(self, tmp_path, fixture_files):
        root = make_project(tmp_path, fixture_files)
        project = load_project(root)
        fd = parse_feature(json.dumps(IDENTITY_DOC))
        rel = project.write_feature(fd)
        project.append_log({"outcome": "accepted", "feature": fd.key, "pruned": []})
        again = load_project(root)
        assert [p for p, _ in again.state.features] == [rel]
        assert again.state.accepted_keys() == [fd.key]
        assert (root / rel).read_text() == serialize_feature(fd)
