"""Tests for run configuration parsing, endpoint profiles and manifests."""

import json

import pytest
import yaml

from ctxgenie import __version__
from ctxgenie.config import (
    BundleConfig,
    DataConfig,
    EndpointSpec,
    PromptsConfig,
    ReaderConfig,
    RetrievalConfig,
    RunConfig,
    SeedsConfig,
    build_gateway,
    build_profile,
    load_config,
    parse_config,
    sha256_file,
    write_manifest,
)
from ctxgenie.errors import ConfigError
from ctxgenie.gateway import DEFAULT_TIMEOUTS, ROLES

FULL_CONFIG = {
    "data": {"dataset": "bench.jsonl", "tag": "canonical", "output_dir": "out"},
    "endpoints": {
        "generation": {
            "url": "http://gen.example/v1",
            "model": "gen-model",
            "token_env": "GEN_TOKEN",
            "api": "chat",
            "timeout": 90.0,
            "retries": 5,
            "max_parallel": 8,
            "backoff_base": 0.5,
        },
        "reader": {"url": "http://reader.example/v1", "model": "reader-model"},
    },
    "prompts": {"family": "llama2-chat", "shot_pair": "A1", "context_separator": "\n\n"},
    "bundle": {
        "temperature": 0.7,
        "frequency_penalty": 1.5,
        "max_new_tokens": 256,
        "n_focused": 4,
        "n_free": 1,
    },
    "reader": {"k_contexts": 3, "max_new_tokens": 64},
    "retrieval": {
        "chunk_size": 500,
        "chunk_overlap": 100,
        "k_retrieve": 20,
        "k_keep": 10,
        "embed_batch_size": 16,
    },
    "seeds": {"base": 7, "shuffle": [1, 2, 3]},
}


class TestParseConfig:
    def test_full_config_round_trips_every_section(self):
        config = parse_config(FULL_CONFIG)
        assert config.data == DataConfig(dataset="bench.jsonl", tag="canonical", output_dir="out")
        assert config.endpoints["generation"] == EndpointSpec(
            url="http://gen.example/v1",
            model="gen-model",
            token_env="GEN_TOKEN",
            api="chat",
            timeout=90.0,
            retries=5,
            max_parallel=8,
            backoff_base=0.5,
        )
        assert config.endpoints["reader"].url == "http://reader.example/v1"
        assert config.prompts == PromptsConfig(
            family="llama2-chat", shot_pair="A1", context_separator="\n\n"
        )
        assert config.bundle.n_focused == 4
        assert config.reader == ReaderConfig(k_contexts=3, max_new_tokens=64)
        assert config.retrieval.embed_batch_size == 16
        assert config.seeds == SeedsConfig(base=7, shuffle=(1, 2, 3))

    def test_empty_config_gives_documented_defaults(self):
        config = parse_config({})
        assert config.data == DataConfig(dataset="", tag="canonical", output_dir="")
        assert config.endpoints == {}
        assert config.prompts == PromptsConfig(
            family="zephyr", shot_pair=None, context_separator="\n"
        )
        assert config.bundle == BundleConfig(
            temperature=0.9, frequency_penalty=1.95, max_new_tokens=512, n_focused=3, n_free=2
        )
        assert config.reader == ReaderConfig(k_contexts=5, max_new_tokens=128)
        assert config.retrieval == RetrievalConfig(
            chunk_size=1000, chunk_overlap=200, k_retrieve=10, k_keep=5, embed_batch_size=64
        )
        assert config.seeds.base == 0
        assert config.seeds.shuffle == (4, 11, 13, 40, 41, 42, 43, 45, 47, 50)

    def test_partial_sections_fill_from_defaults(self):
        config = parse_config({"reader": {"k_contexts": 2}, "seeds": {"base": 99}})
        assert config.reader == ReaderConfig(k_contexts=2, max_new_tokens=128)
        assert config.seeds.base == 99
        assert config.seeds.shuffle == (4, 11, 13, 40, 41, 42, 43, 45, 47, 50)

    def test_bundle_params_maps_to_generation_params(self):
        params = parse_config(FULL_CONFIG).bundle.params()
        assert params.temperature == 0.7
        assert params.frequency_penalty == 1.5
        assert params.max_new_tokens == 256

    def test_non_mapping_root_rejected(self):
        with pytest.raises(ConfigError, match="mapping"):
            parse_config(["not", "a", "mapping"])

    def test_unknown_top_level_key_named_in_error(self):
        with pytest.raises(ConfigError, match="retreival"):
            parse_config({"retreival": {}})

    def test_unknown_section_key_named_in_error(self):
        with pytest.raises(ConfigError, match=r"reader.*k_context"):
            parse_config({"reader": {"k_context": 3}})

    def test_unknown_endpoint_key_names_role(self):
        with pytest.raises(ConfigError, match=r"endpoints\.generation.*tokne_env"):
            parse_config({"endpoints": {"generation": {"tokne_env": "X"}}})

    def test_unknown_endpoint_role_rejected(self):
        with pytest.raises(ConfigError, match="summarizer"):
            parse_config({"endpoints": {"summarizer": {"url": "http://x"}}})

    def test_endpoint_entry_must_be_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            parse_config({"endpoints": {"generation": "http://x"}})

    def test_unknown_prompt_family_rejected(self):
        with pytest.raises(ConfigError, match="gpt-4"):
            parse_config({"prompts": {"family": "gpt-4"}})

    def test_negative_reader_k_rejected(self):
        with pytest.raises(ConfigError, match="k_contexts"):
            parse_config({"reader": {"k_contexts": -1}})

    def test_overlap_must_be_below_chunk_size(self):
        with pytest.raises(ConfigError, match="chunk_overlap"):
            parse_config({"retrieval": {"chunk_size": 100, "chunk_overlap": 100}})

    def test_k_keep_cannot_exceed_k_retrieve(self):
        with pytest.raises(ConfigError, match="k_keep"):
            parse_config({"retrieval": {"k_retrieve": 5, "k_keep": 6}})

    def test_shuffle_seeds_coerced_to_int_tuple(self):
        config = parse_config({"seeds": {"shuffle": ["4", "11"]}})
        assert config.seeds.shuffle == (4, 11)

    def test_to_dict_is_json_serializable_and_sorted(self):
        config = parse_config(FULL_CONFIG)
        snapshot = config.to_dict()
        assert json.dumps(snapshot)  # round-trippable
        assert list(snapshot["endpoints"]) == ["generation", "reader"]
        assert snapshot["seeds"] == {"base": 7, "shuffle": [1, 2, 3]}
        assert snapshot["bundle"]["temperature"] == 0.7


class TestLoadConfig:
    def test_yaml_file_round_trip(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(FULL_CONFIG), encoding="utf-8")
        assert load_config(path) == parse_config(FULL_CONFIG)

    def test_empty_file_is_default_config(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_config(path) == parse_config({})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("data: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path)


class TestBuildProfile:
    def test_explicit_spec_wins(self, monkeypatch):
        monkeypatch.setenv("MY_TOKEN", "secret-value")
        spec = EndpointSpec(
            url="http://direct/v1",
            model="m",
            token_env="MY_TOKEN",
            timeout=42.0,
            retries=1,
            max_parallel=2,
            backoff_base=0.1,
        )
        profile = build_profile("generation", spec)
        assert profile.role == "generation"
        assert profile.url == "http://direct/v1"
        assert profile.token == "secret-value"
        assert profile.timeout == 42.0
        assert profile.retries == 1
        assert profile.max_parallel == 2
        assert profile.backoff_base == 0.1

    def test_url_falls_back_to_environment(self, monkeypatch):
        monkeypatch.setenv("CTXGENIE_READER_URL", "http://from-env/v1")
        profile = build_profile("reader", EndpointSpec(model="m"))
        assert profile.url == "http://from-env/v1"

    def test_missing_url_everywhere_is_an_error(self):
        with pytest.raises(ConfigError, match="CTXGENIE_JUDGE_URL"):
            build_profile("judge", EndpointSpec())

    def test_named_token_env_must_exist(self, monkeypatch):
        monkeypatch.delenv("ABSENT_TOKEN", raising=False)
        spec = EndpointSpec(url="http://x/v1", token_env="ABSENT_TOKEN")
        with pytest.raises(ConfigError, match="ABSENT_TOKEN"):
            build_profile("generation", spec)

    def test_unnamed_token_falls_back_to_role_env(self, monkeypatch):
        monkeypatch.setenv("CTXGENIE_EMBEDDING_TOKEN", "embed-secret")
        profile = build_profile("embedding", EndpointSpec(url="http://x/v1"))
        assert profile.token == "embed-secret"

    def test_absent_token_is_simply_none(self):
        profile = build_profile("rerank", EndpointSpec(url="http://x/v1"))
        assert profile.token is None

    @pytest.mark.parametrize("role", ROLES)
    def test_default_timeout_per_role(self, role):
        profile = build_profile(role, EndpointSpec(url="http://x/v1"))
        assert profile.timeout == DEFAULT_TIMEOUTS[role]
        expected = 120.0 if role in ("generation", "reader") else 30.0
        assert profile.timeout == expected


class TestBuildGateway:
    def test_declared_roles_become_profiles(self):
        config = parse_config(
            {
                "endpoints": {
                    "generation": {"url": "http://gen/v1", "model": "g"},
                    "judge": {"url": "http://judge/v1", "model": "j"},
                }
            }
        )
        gateway = build_gateway(config)
        assert gateway.profile("generation").url == "http://gen/v1"
        assert gateway.profile("judge").model == "j"

    def test_undeclared_role_resolves_lazily_from_env(self, monkeypatch):
        monkeypatch.setenv("CTXGENIE_EMBEDDING_URL", "http://late/v1")
        gateway = build_gateway(parse_config({}))
        assert gateway.profile("embedding").url == "http://late/v1"

    def test_role_filter_restricts_materialised_profiles(self):
        config = parse_config(
            {
                "endpoints": {
                    "generation": {"url": "http://gen/v1"},
                    "reader": {"url": "http://reader/v1"},
                }
            }
        )
        gateway = build_gateway(config, roles=("reader",))
        assert gateway.profile("reader").url == "http://reader/v1"
        with pytest.raises(ConfigError):
            gateway.profile("generation")


class TestManifest:
    @staticmethod
    def files(tmp_path):
        src = tmp_path / "in.jsonl"
        src.write_text('{"x": 1}\n', encoding="utf-8")
        out = tmp_path / "out.json"
        out.write_text("{}\n", encoding="utf-8")
        return src, out

    def test_sha256_file_matches_hashlib(self, tmp_path):
        import hashlib

        path = tmp_path / "blob.bin"
        payload = b"hello manifest" * 1000
        path.write_bytes(payload)
        assert sha256_file(path) == hashlib.sha256(payload).hexdigest()

    def test_manifest_contents(self, tmp_path):
        src, out = self.files(tmp_path)
        manifest_path = tmp_path / "manifest.json"
        manifest = write_manifest(
            manifest_path,
            command="answer",
            parameters={"k": 5, "family": "zephyr"},
            inputs={"dataset": src},
            outputs={"report": out},
        )
        assert manifest["command"] == "answer"
        assert manifest["package_version"] == __version__
        assert manifest["parameters"] == {"k": 5, "family": "zephyr"}
        assert manifest["inputs"] == {"dataset": sha256_file(src)}
        assert manifest["outputs"] == {"report": sha256_file(out)}
        on_disk = json.loads(manifest_path.read_text(encoding="utf-8"))
        assert on_disk == manifest

    def test_manifest_bytes_are_reproducible(self, tmp_path):
        src, out = self.files(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for target in (a, b):
            write_manifest(
                target,
                command="index",
                parameters={"chunk_size": 300},
                inputs={"corpus": src},
                outputs={"index": out},
            )
        assert a.read_bytes() == b.read_bytes()

    def test_manifest_has_no_timestamps(self, tmp_path):
        src, out = self.files(tmp_path)
        manifest_path = tmp_path / "manifest.json"
        write_manifest(manifest_path, "evaluate", {}, {"in": src}, {"out": out})
        text = manifest_path.read_text(encoding="utf-8").lower()
        for forbidden in ("timestamp", "time", "date", "host"):
            assert forbidden not in text

    def test_input_change_flips_only_that_hash(self, tmp_path):
        src, out = self.files(tmp_path)
        manifest_path = tmp_path / "manifest.json"
        before = write_manifest(manifest_path, "answer", {}, {"dataset": src}, {"report": out})
        src.write_text('{"x": 2}\n', encoding="utf-8")
        after = write_manifest(manifest_path, "answer", {}, {"dataset": src}, {"report": out})
        assert before["inputs"]["dataset"] != after["inputs"]["dataset"]
        assert before["outputs"] == after["outputs"]

    def test_creates_parent_directories(self, tmp_path):
        src, out = self.files(tmp_path)
        nested = tmp_path / "runs" / "r1" / "manifest.json"
        write_manifest(nested, "answer", {}, {"in": src}, {"out": out})
        assert nested.exists()
