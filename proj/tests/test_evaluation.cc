#include <cmath>
#include <random>

#include "ctxnmt/evaluation.h"
#include "doctest.h"

using namespace ctxnmt;

namespace {

Tokens toks(const std::string& s) { return tokenize(s); }

std::vector<Tokens> random_lines(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tokens> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tokens t;
    const std::size_t len = 3 + rng() % 10;
    for (std::size_t j = 0; j < len; ++j) t.push_back("w" + std::to_string(rng() % vocab));
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("bleu hand examples") {
  // Clipped unigram precision 1/3, no bigram match.
  CHECK(corpus_bleu({toks("the the the")}, {toks("the cat")}) == 0.0);
  CHECK(corpus_bleu({toks("the the the")}, {toks("the cat")}, 1) == doctest::Approx(100.0 / 3));
  // Precisions 4/5, 3/4, 2/3, 1/2 and no brevity penalty.
  CHECK(corpus_bleu({toks("a b c d e")}, {toks("a b c d f")}) == doctest::Approx(100 * std::pow(0.2, 0.25)));
  // Perfect precision, brevity penalty exp(1 - 6/4).
  CHECK(corpus_bleu({toks("a b c d")}, {toks("a b c d e f")}) == doctest::Approx(100 * std::exp(-0.5)));
  CHECK(corpus_bleu({toks("")}, {toks("a b")}) == 0.0);
}

TEST_CASE("bleu identity, errors and permutation invariance") {
  const auto refs = random_lines(40, 30, 3);
  CHECK(corpus_bleu(refs, refs) == doctest::Approx(100.0));
  CHECK_THROWS_AS(corpus_bleu({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(corpus_bleu(refs, {refs[0]}), std::invalid_argument);

  auto hyps = random_lines(40, 30, 4);
  for (std::size_t i = 0; i < hyps.size(); i += 2) hyps[i] = refs[i];
  const double b = corpus_bleu(hyps, refs);
  std::vector<std::size_t> perm(refs.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  std::vector<Tokens> ph, pr;
  for (auto i : perm) {
    ph.push_back(hyps[i]);
    pr.push_back(refs[i]);
  }
  CHECK(corpus_bleu(ph, pr) == doctest::Approx(b).epsilon(1e-12));
  CHECK(sentence_bleu(refs[0], refs[0]) == doctest::Approx(100.0));
  CHECK(sentence_bleu(toks("x y"), toks("a b c")) > 0.0);
}

TEST_CASE("paired bootstrap") {
  const auto refs = random_lines(60, 20, 5);
  auto worse = random_lines(60, 20, 6);
  auto mixed = worse;
  for (std::size_t i = 0; i < mixed.size(); i += 3) mixed[i] = refs[i];

  SUBCASE("deterministic under a seed") {
    const auto r1 = paired_bootstrap(mixed, worse, refs, 200, 7);
    const auto r2 = paired_bootstrap(mixed, worse, refs, 200, 7);
    CHECK(r1.p_value == r2.p_value);
    CHECK(r1.bleu_a == doctest::Approx(corpus_bleu(mixed, refs)));
  }
  SUBCASE("identical systems are never significant") {
    const auto r = paired_bootstrap(mixed, mixed, refs, 200, 1);
    CHECK(r.p_value == 1.0);
    CHECK_FALSE(r.significant_05());
  }
  SUBCASE("a system better on every line wins every resample") {
    const auto r = paired_bootstrap(refs, mixed, refs, 300, 2);
    CHECK(r.p_value == 0.0);
    CHECK(r.significant_01());
    const auto rev = paired_bootstrap(mixed, refs, refs, 300, 2);
    CHECK(rev.p_value == 1.0);
  }
  CHECK_THROWS_AS(paired_bootstrap(mixed, worse, {refs[0]}, 10, 1), std::invalid_argument);
}

TEST_CASE("tfidf domain words") {
  std::map<std::string, std::vector<Tokens>> text;
  text["A"] = {toks("alpha alpha beta the omni"), toks("gamma")};
  text["B"] = {toks("beta delta omni")};
  text["C"] = {toks("gamma omni")};
  const auto words = tfidf_domain_words(text, 10, 4);
  const auto& a = words.at("A");
  REQUIRE(a.size() == 3);
  CHECK(a[0].word == "alpha");
  CHECK(a[0].score == doctest::Approx(2.0 / 6 * std::log(3.0)));
  // beta and gamma tie; byte order decides.
  CHECK(a[1].word == "beta");
  CHECK(a[2].word == "gamma");
  CHECK(a[1].score == doctest::Approx(1.0 / 6 * std::log(1.5)));
  for (const auto& [d, list] : words)
    for (const auto& w : list) {
      CHECK(w.word != "omni");  // in every domain: idf 0
      CHECK(w.word != "the");   // too short
    }
  CHECK(tfidf_domain_words(text, 1, 4).at("A").size() == 1);
  CHECK_THROWS_AS(tfidf_domain_words({{"A", {}}}), std::invalid_argument);
}

TEST_CASE("ibm model 1") {
  // A bijective toy lexicon in shuffled word order.
  const std::map<std::string, std::string> lex = {{"a", "x"}, {"b", "y"}, {"c", "z"}, {"d", "u"}, {"e", "v"}};
  const std::vector<std::string> src_words = {"a", "b", "c", "d", "e"};
  std::mt19937_64 rng(11);
  std::vector<std::pair<Tokens, Tokens>> bitext;
  for (int i = 0; i < 60; ++i) {
    Tokens s, t;
    const std::size_t len = 2 + rng() % 3;
    for (std::size_t j = 0; j < len; ++j) s.push_back(src_words[rng() % src_words.size()]);
    for (const auto& w : s) t.push_back(lex.at(w));
    std::shuffle(t.begin(), t.end(), rng);
    bitext.push_back({s, t});
  }
  std::vector<double> lls;
  const auto m = ibm1_align(bitext, 20, &lls);
  REQUIRE(lls.size() == 21);
  for (std::size_t i = 1; i < lls.size(); ++i) CHECK(lls[i] >= lls[i - 1] - 1e-9);
  CHECK(lls.back() == doctest::Approx(ibm1_log_likelihood(m, bitext)));

  for (const auto& [f, row] : m.table()) {
    double s = 0;
    for (const auto& [e, p] : row) s += p;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  for (const auto& [f, e] : lex) {
    for (const auto& [f2, e2] : lex)
      if (e2 != e) CHECK(m.prob(e, f) > m.prob(e2, f));
  }

  const auto fa = force_align(m, toks("c a q"), toks("x z"));
  CHECK(fa.target_index == std::vector<int>{1, 0, 0});
  CHECK(fa.oov == std::vector<std::uint8_t>{0, 0, 1});
  CHECK(m.prob("x", "q") == doctest::Approx(m.uniform()));
  CHECK(force_align(m, toks("a"), {}).target_index == std::vector<int>{-1});

  const auto untrained = ibm1_align(bitext, 0);
  CHECK(untrained.prob("x", "a") == doctest::Approx(1.0 / 5));
}

TEST_CASE("domain word f1") {
  std::vector<std::pair<Tokens, Tokens>> bitext;
  for (int i = 0; i < 20; ++i) {
    bitext.push_back({toks("aa bb"), toks("AA BB")});
    bitext.push_back({toks("bb cc"), toks("BB CC")});
    bitext.push_back({toks("cc aa"), toks("CC AA")});
  }
  const auto m = ibm1_align(bitext, 10);
  const std::vector<Tokens> src = {toks("aa bb"), toks("cc aa"), toks("bb bb")};
  const std::vector<Tokens> ref = {toks("AA BB"), toks("CC AA"), toks("BB BB")};
  const auto same = domain_word_f1({"aa", "cc"}, src, ref, ref, m);
  CHECK(same.f1 == doctest::Approx(1.0));
  CHECK(same.gold == 3);
  CHECK_FALSE(same.degenerate);

  const std::vector<Tokens> wrong = {toks("QQ BB"), toks("QQ QQ"), toks("BB BB")};
  const auto w = domain_word_f1({"aa", "cc"}, src, ref, wrong, m);
  CHECK(w.f1 == 0.0);
  CHECK(w.matches == 0);

  const auto none = domain_word_f1({"zz"}, src, ref, ref, m);
  CHECK(none.degenerate);
  CHECK(none.f1 == 0.0);
}

TEST_CASE("cosine and representative contexts") {
  CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine({1, 1}, {2, 2}) == doctest::Approx(1.0));
  CHECK(cosine({0, 0}, {1, 2}) == 0.0);
  CHECK_THROWS_AS(cosine({1}, {1, 2}), std::invalid_argument);

  const Tensor emb = Tensor::parameter({4, 2}, {1, 0, 0, 1, 1, 1, 1, 0.1});
  std::map<std::string, std::vector<std::vector<TokenId>>> ctx;
  // Means (1,0), (0,1), (1,1); their average points along (1,1).
  ctx["X"] = {{}, {0}, {1}, {2}};
  ctx["Y"] = {{0}, {0, 3}, {3}};
  const auto reps = representative_contexts(ctx, emb);
  CHECK(reps.at("X").index == 3);
  CHECK(reps.at("X").cosine == doctest::Approx(1.0));
  CHECK(reps.at("X").context == std::vector<TokenId>{2});
  CHECK(reps.at("Y").index == 1);
  ctx["W"] = {{}};
  CHECK_THROWS_AS(representative_contexts(ctx, emb), std::invalid_argument);
}

TEST_CASE("ablation grid") {
  std::map<std::string, std::vector<TrainingExample>> test;
  for (const std::string d : {"A", "B", "C"}) {
    TrainingExample ex;
    ex.domain = d;
    ex.context = {9};
    test[d] = {ex, ex};
  }
  std::map<std::string, RepresentativeContext> reps;
  reps["A"].context = {1};
  reps["B"].context = {2};
  reps["C"].context = {3};
  // Scores the context id the examples carry; rows add 10 per domain.
  const auto grid = ablation_matrix({"A", "B", "C"}, test, reps,
                                    [](const std::string& d, const std::vector<TrainingExample>& exs) {
                                      return 10.0 * (d[0] - 'A') + exs[0].context[0];
                                    });
  REQUIRE(grid.values.size() == 3);
  REQUIRE(grid.columns.size() == 4);
  CHECK(grid.columns.back() == "True");
  CHECK(grid.diagonal(1) == 12.0);
  CHECK(grid.true_context(2) == 29.0);
  CHECK(grid.off_diagonal_mean(0) == doctest::Approx(2.5));
  CHECK(grid.to_tsv().find("True") != std::string::npos);
}

TEST_CASE("eval report") {
  EvalReport r;
  r.add("bleu", "A", "sent", 20.5);
  r.add("bleu", "B", "sent", 21.0);
  r.add("f1", "A", "tag", 0.5);
  CHECK(r.get("bleu", "B", "sent") == 21.0);
  CHECK(r.has("f1", "A", "tag"));
  CHECK_FALSE(r.has("f1", "B", "tag"));
  CHECK_THROWS_AS(r.get("f1", "B", "tag"), std::out_of_range);
  CHECK(r.summary()["bleu.A.sent"] == 20.5);
  const auto tsv = r.to_tsv();
  CHECK(tsv.find("# bleu") != std::string::npos);
  CHECK(tsv.find("# f1") != std::string::npos);
}
