import math

import pytest

import ctxnmt


def test_bleu_hand_example():
    bleu = ctxnmt.corpus_bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "f"]])
    assert bleu == pytest.approx(100 * (0.8 * 0.75 * (2 / 3) * 0.5) ** 0.25, abs=1e-9)
    assert ctxnmt.corpus_bleu([["x"]], [["x"]], max_n=1) == pytest.approx(100)


def test_bootstrap_is_deterministic():
    refs = [["a", "b", "c", "d"]] * 20
    good = [["a", "b", "c", "d"]] * 20
    bad = [["a", "b", "x", "d"]] * 20
    r1 = ctxnmt.paired_bootstrap(good, bad, refs, resamples=200, seed=3)
    r2 = ctxnmt.paired_bootstrap(good, bad, refs, resamples=200, seed=3)
    assert r1 == r2
    assert r1["p_value"] == 0.0


def test_tfidf_ranking():
    words = ctxnmt.tfidf_domain_words(
        {"A": [["alpha", "alpha", "beta", "the", "omni"], ["gamma"]], "B": [["beta", "delta", "omni"]],
         "C": [["gamma", "omni"]]}, top_k=10, min_len=4)
    assert [w for w, _ in words["A"]] == ["alpha", "beta", "gamma"]
    assert words["A"][0][1] == pytest.approx(2 / 6 * math.log(3))


def test_ibm1_monotone():
    bitext = [(["a", "b"], ["y", "x"]), (["a", "c"], ["x", "z"]), (["b", "c"], ["z", "y"])]
    model, lls = ctxnmt.ibm1_align(bitext, iterations=10)
    assert len(lls) == 11
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))
    assert model.prob("x", "a") > model.prob("y", "a")
    assert model.force_align(["a", "b"], ["y", "x"]) == [1, 0]


def test_parameter_counts():
    assert all(c["pass"] for c in ctxnmt.parameter_checks())
    sent = ctxnmt.count_parameters("sent", 32000)
    assert ctxnmt.count_parameters("tag", 32000) == sent
    assert ctxnmt.count_parameters("domemb_avg", 32000) > sent
    with pytest.raises(ValueError):
        ctxnmt.count_parameters("nope", 100)


def test_manifest_overrides():
    m = ctxnmt.manifest({"base": "smoke", "beam": 2})
    assert m["name"] == "smoke" and m["beam"] == 2
    with pytest.raises(ctxnmt.ConfigError):
        ctxnmt.manifest({"no_such_key": 1})


def test_generate_corpus(tmp_path):
    summary = ctxnmt.generate_corpus(str(tmp_path), {"train_docs": 4, "test_docs": 2, "dev_docs": 1,
                                                     "zero_tune_docs": 2, "zero_tune_dev_docs": 1})
    assert summary["domains"] == ["A", "B", "C", "Z"]
    assert summary["train"] == 12
    assert (tmp_path / "train.txt").exists() and (tmp_path / "oracle.tsv").exists()


def test_smoke_experiment(tmp_path):
    exp = ctxnmt.Experiment("smoke", str(tmp_path))
    assert exp.domains()["zero"] == ["Z"]
    sent = ctxnmt.System("sent", seed=1)
    dom = ctxnmt.System("domemb_avg", context=3, seed=1)
    assert sent.name == "sent-s1" and dom.name == "domemb_avg-ctx3-s1"
    meta = exp.train(dom)
    assert meta["system"] == dom.name
    hyps = exp.translate([dom], beam=2)
    assert len(hyps) == len(exp.references())
    scores = exp.evaluate([dom])
    assert set(scores["bleu"]) == {"A", "B", "C", "Z", "joint"}
    assert 0.0 <= scores["accuracy"]["Z"] <= 1.0
    # A second instance serves the cached model.
    again = ctxnmt.Experiment("smoke", str(tmp_path))
    assert again.train(dom)["run_fingerprint"] == meta["run_fingerprint"]
