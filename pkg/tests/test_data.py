import json
import math

import numpy as np
import pytest

from shiftadapt import data
from shiftadapt.errors import ConfigError, DatasetError


def write_lines(path, lines):
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


class TestLoadJsonl:
    def test_basic_parse_preserves_order_and_null_label(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, ['{"text":"a","label":1}', '{"text":"b","label":null}'])
        ds = data.load_jsonl(p)
        assert len(ds) == 2
        assert ds.examples[0] == data.Example("a", 1)
        assert ds.examples[1] == data.Example("b", None)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("", encoding="utf-8")
        assert len(data.load_jsonl(p)) == 0

    def test_invalid_label_names_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        write_lines(p, ['{"text":"a","label":2}'])
        with pytest.raises(DatasetError, match=r":1:"):
            data.load_jsonl(p)

    def test_bool_label_rejected(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        write_lines(p, ['{"text":"a","label":true}'])
        with pytest.raises(DatasetError):
            data.load_jsonl(p)

    def test_malformed_json_names_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        write_lines(p, ['{"text":"a","label":1}', "{nope"])
        with pytest.raises(DatasetError, match=r":2:"):
            data.load_jsonl(p)

    def test_text_empty_after_preprocess_rejected(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        write_lines(p, ['{"text":"!!!","label":0}'])
        with pytest.raises(DatasetError, match="empty after preprocessing"):
            data.load_jsonl(p)

    def test_reload_is_stable(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [json.dumps({"text": f"tok{i}", "label": i % 2}) for i in range(20)])
        first = data.load_jsonl(p)
        second = data.load_jsonl(p)
        assert first.examples == second.examples

    def test_roundtrip_through_write_jsonl(self, tmp_path):
        ds = data.Dataset(
            [data.Example("hello world", 1), data.Example("more text", None)],
            "target", "t",
        )
        p = tmp_path / "out.jsonl"
        data.write_jsonl(ds, p)
        assert data.load_jsonl(p, domain_tag="target").examples == ds.examples

    def test_crlf_line_endings(self, tmp_path):
        p = tmp_path / "crlf.jsonl"
        p.write_bytes(b'{"text":"a","label":1}\r\n{"text":"b","label":0}\r\n')
        ds = data.load_jsonl(p)
        assert [ex.label for ex in ds.examples] == [1, 0]


class TestSplit:
    def make(self, n):
        return data.Dataset([data.Example(f"t{i}", i % 2) for i in range(n)], "source", "s")

    def test_sizes_7_1_2(self):
        tr, va, te = data.split(self.make(10), (0.7, 0.1, 0.2), seed=0)
        assert (len(tr), len(va), len(te)) == (7, 1, 2)

    def test_deterministic(self):
        a = data.split(self.make(23), (0.7, 0.1, 0.2), seed=5)
        b = data.split(self.make(23), (0.7, 0.1, 0.2), seed=5)
        for x, y in zip(a, b):
            assert x.examples == y.examples

    def test_remainder_goes_to_train(self):
        # floor(3*0.1) = floor(3*0.2) = 0, so train absorbs the remainder
        tr, va, te = data.split(self.make(3), (0.7, 0.1, 0.2), seed=0)
        assert (len(tr), len(va), len(te)) == (3, 0, 0)

    def test_partition_property(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n = int(rng.integers(1, 60))
            ds = self.make(n)
            tr, va, te = data.split(ds, (0.5, 0.25, 0.25), seed=int(rng.integers(1 << 31)))
            combined = sorted(
                (ex.text for ex in tr.examples + va.examples + te.examples)
            )
            assert combined == sorted(ex.text for ex in ds.examples)
            assert len(tr) + len(va) + len(te) == n

    def test_bad_ratio_sum(self):
        with pytest.raises(ConfigError):
            data.split(self.make(5), (0.7, 0.1, 0.1), seed=0)

    def test_empty_dataset(self):
        with pytest.raises(DatasetError):
            data.split(data.Dataset([], "source", "s"), (0.7, 0.1, 0.2), seed=0)


class TestPreprocess:
    def test_social_media_tokens(self):
        assert data.preprocess("Check https://x.co #Covid @who") == [
            "check", "<url>", "<hashtag>", "covid", "<mention>",
        ]

    def test_empty(self):
        assert data.preprocess("") == []

    def test_lowercase_and_strip(self):
        assert data.preprocess("HELLO!!!") == ["hello"]

    def test_hashtag_bare_word_stripped(self):
        assert data.preprocess("#covid-19") == ["<hashtag>", "covid19"]

    def test_bare_hash_emits_marker_only(self):
        assert data.preprocess("#") == ["<hashtag>"]

    def test_www_prefix(self):
        assert data.preprocess("see www.example.org now") == ["see", "<url>", "now"]

    def test_idempotent_on_own_output(self):
        rng = np.random.default_rng(1)
        pieces = ["Hello!", "#Tag", "@user", "https://a.b/c", "plain", "MiXeD-case", "#",
                  "www.x.y", "123", "a_b", "..."]
        for _ in range(50):
            text = " ".join(rng.choice(pieces, size=rng.integers(0, 8)))
            once = data.preprocess(text)
            again = data.preprocess(" ".join(once))
            assert again == once


def naive_featurize(tokens, dim):
    """Independent dictionary-count oracle for unigram+bigram hashing."""
    counts = {}
    for t in tokens:
        counts[data.fnv1a_64(t.encode()) % dim] = counts.get(data.fnv1a_64(t.encode()) % dim, 0) + 1
    for a, b in zip(tokens, tokens[1:]):
        h = data.fnv1a_64((a + "\x1f" + b).encode()) % dim
        counts[h] = counts.get(h, 0) + 1
    scale = 1.0 / math.sqrt(len(tokens)) if tokens else 0.0
    return {i: c * scale for i, c in sorted(counts.items())}


class TestFeaturize:
    def test_empty(self):
        sv = data.featurize([], dim=64)
        assert sv.nnz == 0 and sv.dim == 64

    def test_repeated_token_counts(self):
        # unigram "a" twice plus the ("a","a") bigram once, scaled by 1/sqrt(2)
        sv = data.featurize(["a", "a"], dim=1024)
        expected = naive_featurize(["a", "a"], 1024)
        assert sv.nnz == 2
        got = dict(zip(sv.indices.tolist(), sv.values.tolist()))
        assert got == pytest.approx(expected)
        assert sorted(got.values()) == pytest.approx(sorted([2 / math.sqrt(2), 1 / math.sqrt(2)]))

    def test_deterministic(self):
        toks = ["x", "y", "z", "x"]
        a = data.featurize(toks, dim=256)
        b = data.featurize(toks, dim=256)
        assert np.array_equal(a.indices, b.indices) and np.array_equal(a.values, b.values)

    def test_matches_dictionary_oracle(self):
        rng = np.random.default_rng(3)
        vocab = [f"w{i}" for i in range(30)]
        for _ in range(25):
            toks = list(rng.choice(vocab, size=rng.integers(1, 20)))
            sv = data.featurize(toks, dim=512)
            oracle = naive_featurize(toks, 512)
            assert sv.indices.tolist() == list(oracle)
            assert sv.values.tolist() == pytest.approx(list(oracle.values()), abs=0)

    def test_indices_sorted_unique_in_range(self):
        sv = data.featurize(["a", "b", "c", "a", "b"], dim=64)
        assert np.all(np.diff(sv.indices) > 0)
        assert sv.indices.min() >= 0 and sv.indices.max() < 64
        assert np.all(sv.values != 0) and np.all(np.isfinite(sv.values))

    def test_l2_norm_identity(self):
        toks = ["a", "b", "a", "c"]
        sv = data.featurize(toks, dim=2048)
        oracle = naive_featurize(toks, 2048)
        assert np.linalg.norm(sv.values) == pytest.approx(
            math.sqrt(sum(v * v for v in oracle.values()))
        )

    def test_dim_must_be_power_of_two(self):
        with pytest.raises(ConfigError):
            data.featurize(["a"], dim=100)
        with pytest.raises(ConfigError):
            data.featurize(["a"], dim=1)

    def test_minimum_dim_collides_gracefully(self):
        sv = data.featurize(["a", "b", "c"], dim=2)
        assert sv.dim == 2 and sv.indices.tolist() == sorted(set(sv.indices.tolist()))
        # 3 unigrams + 2 bigrams land in 2 buckets; mass is preserved
        assert sv.values.sum() == pytest.approx(5 / math.sqrt(3))


def synth_cfg(**overrides):
    base = dict(
        n_source=100,
        n_target=1000,
        source_prior=0.5,
        target_prior=0.9,
        class_means_source=([-1.0, -1.0], [1.0, 1.0]),
        class_means_target=([-2.0, -2.0], [0.0, 0.0]),
        noise_scale=1.0,
        seed=7,
    )
    base.update(overrides)
    return data.SynthConfig(**base)


class TestGenSynthetic:
    def test_target_prior_within_3_sigma(self):
        # binomial 3-sigma bound for p=0.9, n=1000 is ~0.0285
        _, target = data.gen_synthetic(synth_cfg())
        assert 0.87 <= target.class_prior() <= 0.93

    def test_source_prior_within_3_sigma(self):
        # p=0.5, n=100: 3-sigma is 15 examples around 50
        source, _ = data.gen_synthetic(synth_cfg())
        ones = sum(ex.label for ex in source.examples)
        assert 35 <= ones <= 65

    def test_deterministic_byte_identical(self):
        a_src, a_tgt = data.gen_synthetic(synth_cfg())
        b_src, b_tgt = data.gen_synthetic(synth_cfg())
        assert a_src.examples == b_src.examples
        assert a_tgt.examples == b_tgt.examples

    def test_prior_converges_with_n(self):
        for n in (200, 2000):
            _, target = data.gen_synthetic(synth_cfg(n_target=n))
            bound = 3 * math.sqrt(0.9 * 0.1 / n)
            assert abs(target.class_prior() - 0.9) <= bound

    def test_tokens_flow_through_standard_path(self):
        source, _ = data.gen_synthetic(synth_cfg())
        toks = data.preprocess(source.examples[0].text)
        assert toks and all(tok.isalnum() for tok in toks)
        sv = data.featurize(toks, dim=256)
        assert sv.nnz > 0

    def test_degenerate_means_flagged(self):
        cfg = synth_cfg(class_means_source=([0.5, 0.5], [0.5, 0.5]))
        source, target = data.gen_synthetic(cfg)
        assert source.warning is not None
        assert target.warning is None

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            synth_cfg(target_prior=1.0)
        with pytest.raises(ConfigError):
            synth_cfg(n_source=0)
        with pytest.raises(ConfigError):
            synth_cfg(noise_scale=0.0)
        with pytest.raises(ConfigError):
            synth_cfg(class_means_target=([0.0], [1.0, 2.0]))
        with pytest.raises(ConfigError):
            synth_cfg(vocab_mode="words")

    def test_from_dict_rejects_unknown_keys(self):
        good = {
            "n_source": 10, "n_target": 10, "source_prior": 0.5, "target_prior": 0.5,
            "class_means_source": [[0.0], [1.0]], "class_means_target": [[0.0], [1.0]],
        }
        data.SynthConfig.from_dict(good)
        with pytest.raises(ConfigError, match="unknown"):
            data.SynthConfig.from_dict({**good, "extra": 1})
        with pytest.raises(ConfigError, match="missing"):
            data.SynthConfig.from_dict({"n_source": 10})


class TestDataset:
    def test_class_prior_requires_full_labels(self):
        ds = data.Dataset([data.Example("a", 1), data.Example("b", None)], "source", "s")
        with pytest.raises(DatasetError):
            ds.class_prior()

    def test_class_prior(self):
        ds = data.Dataset([data.Example("a", 1), data.Example("b", 0)], "source", "s")
        assert ds.class_prior() == 0.5
