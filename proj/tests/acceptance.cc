// Acceptance suite: one PASS/FAIL line per criterion. Property checks run in
// seconds; the empirical criteria train the desk study once and reuse the
// cached models on later runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxnmt/classifier.h"
#include "ctxnmt/context.h"
#include "ctxnmt/decoding.h"
#include "ctxnmt/evaluation.h"
#include "ctxnmt/experiment.h"
#include "ctxnmt/grad_check.h"
#include "ctxnmt/layers.h"
#include "ctxnmt/log.h"
#include "ctxnmt/model.h"
#include "ctxnmt/synth.h"
#include "model_util.h"
#include "test_util.h"

using namespace ctxnmt;
using namespace ctxnmt::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  nlohmann::json data = nlohmann::json::object();
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double max_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.at(i)) - double(b.at(i))));
  return m;
}

Tensor logits(const Model& m, const Batch& b) {
  NoGradScope ng;
  return m.decode(m.encode(b.source, b.context), b.target_in);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / static_cast<double>(v.size());
}

// ---- 1: gradients ----

Outcome gradients() {
  const auto t0 = Clock::now();
  GradCheckOptions opts;  // eps 1e-5, relative tolerance 1e-4
  double worst = 0;
  std::size_t checked = 0;
  std::vector<std::string> failed;
  nlohmann::json per = nlohmann::json::object();
  auto run = [&](const std::string& what, const std::function<Tensor()>& f, const NamedTensors& params,
                 const GradCheckOptions& o) {
    const auto r = grad_check(f, params, o);
    worst = std::max(worst, r.max_relative_error);
    checked += r.checked;
    per[what] = r.max_relative_error;
    if (!r.passed() || r.checked == 0) failed.push_back(what);
  };

  std::mt19937_64 rng(101);
  // Pooling over time, both modes, with padding and ragged windows.
  Tensor x = random_tensor({14, 5}, rng, 1.0, true);
  std::vector<std::uint8_t> valid(14, 1);
  valid[6] = valid[13] = valid[12] = 0;
  for (PoolMode mode : {PoolMode::kAvg, PoolMode::kMax})
    for (auto [w, s] : {std::pair<std::size_t, std::size_t>{3, 3}, {4, 2}, {1, 1}}) {
      PooledSequence probe = pool_over_time(x, 2, 7, valid, w, s, mode);
      Tensor wt = random_tensor(probe.values.shape(), rng);
      run(std::string("pool_") + (mode == PoolMode::kAvg ? "avg" : "max") + "_" + std::to_string(w) + "x" + std::to_string(s),
          [&] { return weighted_sum(pool_over_time(x, 2, 7, valid, w, s, mode).values, wt); }, {{"x", x}}, opts);
    }

  // Gated sum, as an op and as the learned gate layer.
  Tensor g = random_tensor({6, 4}, rng, 1.0, true), a = random_tensor({6, 4}, rng, 1.0, true),
         b = random_tensor({6, 4}, rng, 1.0, true), w64 = random_tensor({6, 4}, rng);
  run("gated_sum", [&] { return weighted_sum(gated_sum(sigmoid(g), a, b), w64); }, {{"g", g}, {"a", a}, {"b", b}},
      opts);
  Linear gate{random_tensor({8, 4}, rng, 0.5, true), random_tensor({4}, rng, 0.5, true)};
  run("gate_merge", [&] { return weighted_sum(gate_merge(gate, a, b), w64); },
      {{"gate.w", gate.w}, {"gate.b", gate.b}, {"a", a}, {"b", b}}, opts);

  // Multi-head attention with masking, plain and causal.
  for (bool causal : {false, true}) {
    Tensor q = random_tensor({8, 6}, rng, 1.0, true), k = random_tensor({8, 6}, rng, 1.0, true),
           v = random_tensor({8, 6}, rng, 1.0, true), w = random_tensor({8, 6}, rng);
    std::vector<std::uint8_t> kv{1, 1, 1, 0, 1, 1, 0, 0};
    run(causal ? "attention_causal" : "attention",
        [&] { return weighted_sum(attention(q, k, v, {2, 4, 4, 2, causal}, kv), w); },
        {{"q", q}, {"k", k}, {"v", v}}, opts);
  }

  // Losses.
  Tensor lg = random_tensor({7, 9}, rng, 2.0, true);
  std::vector<TokenId> targets{1, 4, 8, 0, 3, 3, 6};
  run("label_smoothed_loss", [&] { return label_smoothed_loss(lg, targets, 0.1, 0); }, {{"logits", lg}}, opts);
  run("cross_entropy", [&] { return label_smoothed_loss(lg, targets, 0.0, 0); }, {{"logits", lg}}, opts);

  // Whole models: the sentence baseline end to end, and every context path
  // (domain embedding, context encoder and its decoder attention plus gate).
  GradCheckOptions sampled = opts;
  sampled.max_entries_per_tensor = 6;
  for (ModelKind k : all_kinds()) {
    ModelConfig c = tiny_config(k, 14);
    c.d_model = 4;
    c.d_ff = 6;
    c.pool_window = c.pool_stride = 2;
    Model m(c, 23);
    perturb(m, 4, 0.3);
    std::mt19937_64 brng(10);
    Batch batch = random_batch(14, brng, {3, 2}, {2, 3}, {5, 3});
    NamedTensors params;
    for (auto& [name, t] : m.parameters().items())
      if (k == ModelKind::kSent || name.rfind(kContextPrefix, 0) == 0 || name == "embed" ||
          name.rfind("encoder.0.", 0) == 0)
        params.emplace_back(name, t);
    run(std::string("model_") + std::string(kind_name(k)), [&] { return m.loss(batch); }, params, sampled);
  }

  // Document classifier.
  SynthConfig sc;
  sc.train_docs = 3;
  sc.dev_docs = sc.test_docs = sc.zero_tune_docs = sc.zero_tune_dev_docs = 1;
  sc.max_sentences = 9;
  // A corpus this small leaves test words unseen; the warning is noise here.
  const LogSink previous = set_log_sink([](LogLevel, const std::string&) {});
  const SynthCorpus corpus = generate(sc);
  set_log_sink(previous);
  const Vocabulary vocab = Vocabulary::build(corpus.train, sc.domains);
  DomainClassifier clf(vocab.size(), sc.domains, 5, 9);
  std::vector<DocFeature> feats;
  for (const auto& d : corpus.train) feats.push_back(featurize(d, vocab));
  std::vector<const DocFeature*> ptrs;
  std::vector<TokenId> labels;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    ptrs.push_back(&feats[i]);
    const auto& dom = corpus.train[i].domain;
    labels.push_back(static_cast<TokenId>(std::find(sc.domains.begin(), sc.domains.end(), dom) - sc.domains.begin()));
  }
  NamedTensors cparams(clf.parameters().items().begin(), clf.parameters().items().end());
  GradCheckOptions csample = opts;
  csample.max_entries_per_tensor = 40;
  run("classifier", [&] { return clf.loss(ptrs, labels); }, cparams, csample);

  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failed.empty() && worst < 1e-4 && secs < 60 && sizeof(Real) == 8;
  o.detail = "max rel err " + fmt(worst, 8) + " over " + std::to_string(checked) + " entries (" +
             std::to_string(per.size()) + " checks), eps 1e-5, 64-bit " + (sizeof(Real) == 8 ? "yes" : "no") +
             ", " + fmt(secs, 1) + " s";
  if (!failed.empty()) o.detail += "; failed:";
  for (const auto& f : failed) o.detail += " " + f;
  o.data = {{"max_relative_error", worst}, {"checked", checked}, {"seconds", secs}, {"per_check", per}};
  return o;
}

// ---- 2: parameter counts ----

Outcome parameters() {
  Outcome o;
  o.pass = true;
  for (const auto& c : parameter_checks(32000)) {
    o.pass = o.pass && c.pass;
    o.data[c.what] = {{"value", c.value}, {"target", c.target}, {"tolerance", c.tolerance}, {"pass", c.pass}};
    if (!c.pass) o.detail += c.what + " off; ";
  }
  const ModelConfig paper = ModelConfig::paper(ModelKind::kSent, 32000);
  std::size_t sent = 0, dom = 0, pool = 0;
  for (const auto& r : parameter_table(paper)) {
    if (r.kind == "sent") sent = r.parameters;
    if (r.kind == "domemb_avg") dom = r.parameters;
    if (r.kind == "ctxpool_avg") pool = r.parameters;
  }
  o.detail += "sent " + std::to_string(sent) + ", domemb_avg +" + std::to_string(dom - sent) + ", ctxpool +" +
              std::to_string(pool - sent) + ", equal-size kinds exact";
  return o;
}

// ---- 3: equivalences ----

Outcome equivalences() {
  const auto t0 = Clock::now();
  double pool_vs_base = 0, dom_vs_sent = 0, stepwise = 0;
  bool beam_greedy = true, self_ensemble = true;

  for (ModelKind k : {ModelKind::kCtxPoolMax, ModelKind::kCtxPoolAvg}) {
    ModelConfig pc = tiny_config(k);
    pc.pool_window = pc.pool_stride = 1;
    Model pool(pc, 19), base(tiny_config(ModelKind::kCtxBase), 19);
    perturb(pool, 7);
    perturb(base, 7);
    std::mt19937_64 rng(2);
    Batch b = random_batch(20, rng, {4, 3}, {3, 5}, {11, 0});
    pool_vs_base = std::max(pool_vs_base, max_diff(logits(pool, b), logits(base, b)));
  }

  for (ModelKind k : {ModelKind::kDomEmbMax, ModelKind::kDomEmbAvg}) {
    Model sent(tiny_config(ModelKind::kSent), 13), dom(tiny_config(k), 13);
    std::mt19937_64 rng(3);
    // Empty contexts pool to the zero domain embedding.
    Batch b = random_batch(20, rng, {4, 5}, {3, 4}, {0, 0});
    dom_vs_sent = std::max(dom_vs_sent, max_diff(logits(sent, b), logits(dom, b)));
    NoGradScope ng;
    Tensor zero(Shape{2, 8});
    dom_vs_sent = std::max(dom_vs_sent, max_diff(sent.encode(b.source, {}).states, dom.encode_source(b.source, zero)));
  }

  std::mt19937_64 erng(24);
  std::vector<TrainingExample> ex;
  for (int i = 0; i < 6; ++i) {
    auto rows = random_rows({std::size_t(1 + erng() % 6), std::size_t(1 + erng() % 6), std::size_t(2 + erng() % 9)},
                            24, erng, 6);
    TrainingExample e;
    e.source = rows[0];
    e.source.push_back(Vocabulary::kEos);
    e.target = rows[1];
    e.target.push_back(Vocabulary::kEos);
    e.context = rows[2];
    e.domain_tag = 5;
    ex.push_back(e);
  }
  for (ModelKind kind : all_kinds()) {
    Model m(tiny_config(kind, 24), 7);
    perturb(m, 107, 0.6);
    TranslateOptions o1;
    o1.decode = default_decode_options(24, 1, 1);
    o1.decode.max_len = 8;
    auto prepared = prepare_examples(m.config(), ex);
    ModelStepModel s1(m, prepared), s2(m, prepared);
    std::vector<std::size_t> words;
    for (const auto& e : ex) words.push_back(e.source.size() - 1);
    auto greedy = greedy_search(s1, words, o1.decode);
    auto beam = beam_search(s2, words, o1.decode);
    for (std::size_t i = 0; i < greedy.size(); ++i)
      beam_greedy = beam_greedy && greedy[i].tokens == beam[i].tokens && greedy[i].score == beam[i].score;

    TranslateOptions o4 = o1;
    o4.decode.beam_size = 4;
    const auto single = translate(m, ex, o4);
    const auto self = translate({{&m, 1.0}, {&m, 1.0}}, ex, o4);
    for (std::size_t i = 0; i < ex.size(); ++i)
      self_ensemble = self_ensemble && single[i].tokens == self[i].tokens &&
                      std::abs(single[i].score - self[i].score) < 1e-9;

    ModelConfig c = tiny_config(kind);
    c.domain_embedding_target_side = kind == ModelKind::kDomEmbAvg;
    Model sm(c, 17);
    perturb(sm, 6);
    std::mt19937_64 rng(12);
    Batch batch = random_batch(20, rng, {4, 6}, {5, 3}, {8, 0});
    NoGradScope ng;
    Encoded enc = sm.encode(batch.source, batch.context);
    Tensor full = sm.decode(enc, batch.target_in);
    DecoderCache cache = sm.start_decoding(enc, 1);
    const std::size_t T = batch.target_in.len;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<TokenId> last{batch.target_in.ids[t], batch.target_in.ids[T + t]};
      Tensor step = sm.decode_step(enc, cache, last);
      for (std::size_t r = 0; r < 2; ++r) {
        if (!batch.target_in.valid[r * T + t]) continue;
        for (std::size_t v = 0; v < 20; ++v)
          stepwise = std::max(stepwise, std::abs(double(step.at(r, v)) - double(full.at(r * T + t, v))));
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = pool_vs_base < 1e-9 && dom_vs_sent < 1e-9 && beam_greedy && self_ensemble && stepwise < 1e-9 && secs < 60;
  o.detail = "(a) ctxpool w=s=1 vs ctxbase " + fmt(pool_vs_base, 12) + ", (b) domemb zero vs sent " +
             fmt(dom_vs_sent, 12) + ", (c) beam1=greedy " + (beam_greedy ? "yes" : "no") + ", (d) self-ensemble " +
             (self_ensemble ? "yes" : "no") + ", (e) stepwise " + fmt(stepwise, 12) + ", " + fmt(secs, 1) + " s";
  o.data = {{"ctxpool_vs_ctxbase", pool_vs_base}, {"domemb_zero_vs_sent", dom_vs_sent}, {"beam1_greedy", beam_greedy},
            {"self_ensemble", self_ensemble}, {"stepwise", stepwise}, {"seconds", secs}};
  return o;
}

// ---- 10: metrics ----

Tokens toks(const std::string& s) {
  std::istringstream in(s);
  Tokens t;
  for (std::string w; in >> w;) t.push_back(w);
  return t;
}

Outcome metrics() {
  Outcome o;
  // BLEU: one 4-gram mismatch at the end gives precisions 4/5, 3/4, 2/3, 1/2.
  const double bleu = corpus_bleu({toks("a b c d e")}, {toks("a b c d f")});
  const double bleu_expected = 100 * std::pow(0.8 * 0.75 * (2.0 / 3) * 0.5, 0.25);
  // Brevity: 2 of 4 words, all n-grams match.
  const double brev = corpus_bleu({toks("a b c d")}, {toks("a b c d e f g h")});
  const double brev_expected = 100 * std::exp(1 - 8.0 / 4);
  const bool bleu_ok = std::abs(bleu - bleu_expected) < 1e-6 && std::abs(brev - brev_expected) < 1e-6;

  std::vector<Tokens> refs, ha, hb;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 40; ++i) {
    Tokens r;
    for (int j = 0; j < 8; ++j) r.push_back("w" + std::to_string(rng() % 12));
    refs.push_back(r);
    Tokens a = r, b = r;
    a[rng() % 8] = "x";
    for (int j = 0; j < 3; ++j) b[rng() % 8] = "y";
    ha.push_back(a);
    hb.push_back(b);
  }
  const auto b1 = paired_bootstrap(ha, hb, refs, 500, 77), b2 = paired_bootstrap(ha, hb, refs, 500, 77);
  const bool boot_ok = b1.p_value == b2.p_value && b1.bleu_a == b2.bleu_a && b1.resamples == 500;

  std::map<std::string, std::vector<Tokens>> text;
  text["A"] = {toks("alpha alpha beta the omni"), toks("gamma")};
  text["B"] = {toks("beta delta omni")};
  text["C"] = {toks("gamma omni")};
  const auto words = tfidf_domain_words(text, 10, 4).at("A");
  const bool tfidf_ok = words.size() == 3 && words[0].word == "alpha" && words[1].word == "beta" &&
                        words[2].word == "gamma" && std::abs(words[0].score - 2.0 / 6 * std::log(3.0)) < 1e-12 &&
                        std::abs(words[1].score - 1.0 / 6 * std::log(1.5)) < 1e-12;

  const std::map<std::string, std::string> lex = {{"a", "x"}, {"b", "y"}, {"c", "z"}, {"d", "u"}, {"e", "v"}};
  std::vector<std::pair<Tokens, Tokens>> bitext;
  std::mt19937_64 lrng(11);
  for (int i = 0; i < 60; ++i) {
    Tokens s, t;
    const std::size_t len = 2 + lrng() % 3;
    for (std::size_t j = 0; j < len; ++j) s.push_back(std::string(1, char('a' + lrng() % 5)));
    for (const auto& w : s) t.push_back(lex.at(w));
    std::shuffle(t.begin(), t.end(), lrng);
    bitext.push_back({s, t});
  }
  std::vector<double> lls;
  const auto model = ibm1_align(bitext, 20, &lls);
  bool monotone = lls.size() == 21;
  for (std::size_t i = 1; i < lls.size(); ++i) monotone = monotone && lls[i] >= lls[i - 1] - 1e-9;
  std::set<std::string> targets;
  for (const auto& [s, t] : bitext) targets.insert(t.begin(), t.end());
  double worst_row = 0;
  for (const auto& [src, row] : model.table()) {
    double sum = 0;
    for (const auto& tw : targets) sum += model.prob(tw, src);
    worst_row = std::max(worst_row, std::abs(sum - 1));
  }
  const bool ibm_ok = monotone && worst_row < 1e-9;

  o.pass = bleu_ok && boot_ok && tfidf_ok && ibm_ok;
  o.detail = "BLEU " + fmt(bleu, 9) + " vs " + fmt(bleu_expected, 9) + ", brevity " + fmt(brev, 9) +
             ", bootstrap deterministic " + (boot_ok ? "yes" : "no") + ", tf-idf ranking " + (tfidf_ok ? "exact" : "wrong") +
             ", IBM-1 monotone " + (monotone ? "yes" : "no") + " with row error " + fmt(worst_row, 12);
  o.data = {{"bleu", bleu}, {"bleu_expected", bleu_expected}, {"brevity", brev}, {"bootstrap_p", b1.p_value},
            {"ibm1_log_likelihoods", lls}, {"ibm1_row_error", worst_row}};
  return o;
}

// ---- empirical criteria on the desk study ----

class Study {
 public:
  Study(Manifest m, const std::string& out) : exp_(std::move(m), out) {}

  Experiment& exp() { return exp_; }
  const std::string& zero() {
    if (zero_.empty()) {
      const auto z = exp_.data().zero_domains();
      if (z.size() != 1) throw std::runtime_error("expected exactly one held-out domain");
      zero_ = z.front();
    }
    return zero_;
  }
  const std::vector<std::uint64_t>& seeds() const { return exp_.manifest().seeds; }
  std::size_t ctx() const { return exp_.manifest().context; }

  SystemSpec sent(std::uint64_t s, bool ft = false) { return SystemSpec::make(ModelKind::kSent, 0, s, ft); }
  SystemSpec dom(std::uint64_t s, std::size_t c, bool ft = false) {
    return SystemSpec::make(ModelKind::kDomEmbAvg, c, s, ft);
  }

  // Translations and scores are cached by the joined member names.
  const std::vector<Tokens>& hyps(const std::vector<SystemSpec>& members) {
    const std::string key = join(members);
    auto it = hyps_.find(key);
    if (it != hyps_.end()) return it->second;
    const auto t0 = Clock::now();
    auto h = exp_.translate(members, exp_.data().test);
    eval_seconds_[key] = seconds_since(t0);
    return hyps_.emplace(key, std::move(h)).first->second;
  }
  const SystemScores& scores(const std::vector<SystemSpec>& members) {
    const std::string key = join(members);
    auto it = scores_.find(key);
    if (it != scores_.end()) return it->second;
    const auto& h = hyps(members);
    const auto t0 = Clock::now();
    auto s = exp_.score(h);
    eval_seconds_[key] += seconds_since(t0);
    return scores_.emplace(key, std::move(s)).first->second;
  }
  const SystemScores& scores(const SystemSpec& s) { return scores(std::vector<SystemSpec>{s}); }

  // Training wall-clock recorded when the model was first trained.
  double train_seconds(const SystemSpec& s) {
    const auto& ck = exp_.checkpoint(s);
    return ck.meta.value("train_seconds", 0.0);
  }
  double eval_seconds(const std::vector<SystemSpec>& members) {
    scores(members);
    return eval_seconds_[join(members)];
  }

 private:
  static std::string join(const std::vector<SystemSpec>& members) {
    std::string k;
    for (const auto& m : members) k += (k.empty() ? "" : "+") + m.name();
    return k;
  }

  Experiment exp_;
  std::string zero_;
  std::map<std::string, std::vector<Tokens>> hyps_;
  std::map<std::string, SystemScores> scores_;
  std::map<std::string, double> eval_seconds_;
};

Outcome zero_resource(Study& st) {
  const std::string z = st.zero();
  std::vector<double> acc_sent, acc_dom, bleu_sent, bleu_dom, pvals;
  double seconds = 0;
  const auto& d = st.exp().data();
  const auto z_lines = lines_by_domain(d.test).at(z);
  for (auto s : st.seeds()) {
    const auto a = st.sent(s), b = st.dom(s, st.ctx());
    seconds += st.train_seconds(a) + st.train_seconds(b);
    acc_sent.push_back(st.scores(a).accuracy.at(z));
    acc_dom.push_back(st.scores(b).accuracy.at(z));
    bleu_sent.push_back(st.scores(a).bleu.at(z));
    bleu_dom.push_back(st.scores(b).bleu.at(z));
    seconds += st.eval_seconds({a}) + st.eval_seconds({b});
    const auto t0 = Clock::now();
    pvals.push_back(st.exp().bootstrap(st.hyps({b}), st.hyps({a}), z).p_value);
    seconds += seconds_since(t0);
  }
  const double gain = mean(acc_dom) - mean(acc_sent);
  const bool significant = std::all_of(pvals.begin(), pvals.end(), [](double p) { return p < 0.05; });
  const bool bleu_up = mean(bleu_dom) > mean(bleu_sent);
  Outcome o;
  o.pass = gain >= 0.10 && significant && bleu_up && seconds < 30 * 60;
  std::string ps;
  for (double p : pvals) ps += (ps.empty() ? "" : "/") + fmt(p, 3);
  o.detail = z + " accuracy sent " + fmt(mean(acc_sent)) + " vs domemb_avg ctx" + std::to_string(st.ctx()) + " " +
             fmt(mean(acc_dom)) + " (+" + fmt(100 * gain, 1) + " points, need 10), BLEU " + fmt(mean(bleu_sent), 2) +
             " vs " + fmt(mean(bleu_dom), 2) + ", bootstrap p per seed " + ps + ", " + fmt(seconds / 60, 1) + " min";
  o.data = {{"accuracy_sent", acc_sent}, {"accuracy_domemb", acc_dom}, {"bleu_sent", bleu_sent},
            {"bleu_domemb", bleu_dom}, {"p_values", pvals}, {"seconds", seconds}};
  return o;
}

Outcome context_trend(Study& st) {
  const std::string z = st.zero();
  std::map<std::size_t, std::vector<double>> acc;
  double seconds = 0;
  const std::vector<std::size_t> sizes = {1, 5, st.ctx()};
  for (auto s : st.seeds()) {
    seconds += st.train_seconds(st.sent(s));
    for (std::size_t c : sizes) {
      const auto sys = st.dom(s, c);
      seconds += st.train_seconds(sys) + st.eval_seconds({sys});
      acc[c].push_back(st.scores(sys).accuracy.at(z));
    }
  }
  const double a1 = mean(acc[1]), a5 = mean(acc[5]), a10 = mean(acc[st.ctx()]);
  Outcome o;
  o.pass = a10 >= a5 && a5 >= a1 && a10 - a1 >= 0.05 && seconds < 45 * 60;
  o.detail = z + " accuracy ctx1 " + fmt(a1) + ", ctx5 " + fmt(a5) + ", ctx" + std::to_string(st.ctx()) + " " +
             fmt(a10) + " (gap " + fmt(100 * (a10 - a1), 1) + " points, need 5), " + fmt(seconds / 60, 1) + " min";
  o.data = {{"ctx1", acc[1]}, {"ctx5", acc[5]}, {"ctx10", acc[st.ctx()]}, {"seconds", seconds}};
  return o;
}

Outcome ablation(Study& st) {
  AblationGrid avg;
  for (auto s : st.seeds()) {
    const AblationGrid g = st.exp().ablation(st.dom(s, st.ctx()));
    if (avg.values.empty()) {
      avg = g;
      for (auto& row : avg.values)
        for (auto& v : row) v = 0;
    }
    for (std::size_t r = 0; r < g.values.size(); ++r)
      for (std::size_t c = 0; c < g.values[r].size(); ++c)
        avg.values[r][c] += g.values[r][c] / static_cast<double>(st.seeds().size());
  }
  bool rows_ok = true;
  double diag = 0, truth = 0;
  std::string worst;
  for (std::size_t r = 0; r < avg.rows.size(); ++r) {
    const bool ok = avg.diagonal(r) > avg.off_diagonal_mean(r);
    rows_ok = rows_ok && ok;
    if (!ok) worst += " " + avg.rows[r];
    diag += avg.diagonal(r);
    truth += avg.values[r].back();
  }
  diag /= static_cast<double>(avg.rows.size());
  truth /= static_cast<double>(avg.rows.size());
  std::ofstream(st.exp().path("acceptance-ablation.tsv")) << avg.to_tsv();
  Outcome o;
  o.pass = rows_ok && truth >= diag;
  std::string rows;
  for (std::size_t r = 0; r < avg.rows.size(); ++r)
    rows += (rows.empty() ? "" : ", ") + avg.rows[r] + " " + fmt(avg.diagonal(r), 3) + ">" +
            fmt(avg.off_diagonal_mean(r), 3);
  o.detail = "diagonal vs off-diagonal mean: " + rows + "; true context " + fmt(truth, 3) + " vs diagonal " +
             fmt(diag, 3) + (worst.empty() ? "" : "; failing rows:" + worst);
  o.data = {{"rows", avg.rows}, {"columns", avg.columns}, {"values", avg.values}};
  return o;
}

Outcome classifier(Study& st) {
  const auto report = st.exp().classifier_report();
  const auto& d = st.exp().data();
  const auto train = d.train_domains();
  const std::set<std::string> seen(train.begin(), train.end());
  const std::string z = st.zero();
  Corpus zdocs;
  for (const auto& doc : d.test)
    if (doc.domain == z) zdocs.push_back(doc);
  std::size_t unseen = 0;
  std::map<std::string, std::size_t> counts;
  for (const auto& p : predict_domains(zdocs, st.exp().classifier(), st.exp().vocab())) {
    unseen += !seen.count(p);
    ++counts[p];
  }
  Outcome o;
  o.pass = report.heldout_accuracy >= 0.95 && unseen == 0 && !zdocs.empty();
  std::string tags;
  for (const auto& [k, n] : counts) tags += (tags.empty() ? "" : " ") + k + ":" + std::to_string(n);
  o.detail = "held-out accuracy " + fmt(report.heldout_accuracy) + " on " + std::to_string(report.heldout_documents) +
             " docs (need 0.95), " + z + " docs tagged " + tags;
  o.data = {{"heldout_accuracy", report.heldout_accuracy}, {"zero_tags", counts}};
  return o;
}

Outcome domain_f1(Study& st) {
  const std::string z = st.zero();
  const auto train = st.exp().data().train_domains();
  std::map<std::string, std::vector<double>> fs, fd;
  for (auto s : st.seeds())
    for (const auto& [dom, r] : st.scores(st.sent(s)).f1) {
      fs[dom].push_back(r.f1);
      fd[dom].push_back(st.scores(st.dom(s, st.ctx())).f1.at(dom).f1);
    }
  std::size_t wins = 0;
  std::string parts;
  for (const auto& dom : train) {
    wins += mean(fd[dom]) >= mean(fs[dom]);
    parts += dom + " " + fmt(mean(fs[dom]), 3) + "/" + fmt(mean(fd[dom]), 3) + ", ";
  }
  const bool z_ok = mean(fd[z]) >= mean(fs[z]);
  Outcome o;
  o.pass = z_ok && 2 * wins > train.size();
  o.detail = "F1 sent/domemb_avg: " + parts + z + " " + fmt(mean(fs[z]), 3) + "/" + fmt(mean(fd[z]), 3) + " (" +
             std::to_string(wins) + " of " + std::to_string(train.size()) + " training domains)";
  o.data = {{"sent", fs}, {"domemb", fd}};
  return o;
}

Outcome fine_tune(Study& st) {
  const std::string z = st.zero();
  bool each = true;
  std::string per;
  std::vector<double> ens_sent_acc, ens_dom_acc, ens_sent_bleu, ens_dom_bleu;
  for (auto s : st.seeds()) {
    for (bool dom : {false, true}) {
      const auto base = dom ? st.dom(s, st.ctx()) : st.sent(s);
      const auto ft = dom ? st.dom(s, st.ctx(), true) : st.sent(s, true);
      const double a = st.scores(base).accuracy.at(z), b = st.scores(ft).accuracy.at(z);
      each = each && b > a;
      per += ft.name() + " " + fmt(a, 3) + "->" + fmt(b, 3) + ", ";
      const auto& e = st.scores({base, ft});
      (dom ? ens_dom_acc : ens_sent_acc).push_back(e.accuracy.at("joint"));
      (dom ? ens_dom_bleu : ens_sent_bleu).push_back(e.bleu.at("joint"));
    }
  }
  const bool ens_ok = mean(ens_dom_acc) >= mean(ens_sent_acc) && mean(ens_dom_bleu) >= mean(ens_sent_bleu);
  Outcome o;
  o.pass = each && ens_ok;
  o.detail = "(a) " + z + " accuracy " + per + "(b) joint ensemble accuracy sent " + fmt(mean(ens_sent_acc)) +
             " vs domemb " + fmt(mean(ens_dom_acc)) + ", joint BLEU " + fmt(mean(ens_sent_bleu), 2) + " vs " +
             fmt(mean(ens_dom_bleu), 2);
  o.data = {{"ensemble_accuracy_sent", ens_sent_acc}, {"ensemble_accuracy_domemb", ens_dom_acc},
            {"ensemble_bleu_sent", ens_sent_bleu}, {"ensemble_bleu_domemb", ens_dom_bleu}};
  return o;
}

Outcome timing(Study& st) {
  const auto s = st.seeds().front();
  const auto a = st.sent(s), b = st.dom(s, st.ctx()),
             c = SystemSpec::make(ModelKind::kCtxPoolAvg, st.ctx(), s);
  const auto t = st.exp().timing({a, b, c}, 7);
  const double ta = t.at(a.name()), tb = t.at(b.name()), tc = t.at(c.name());
  std::ofstream out(st.exp().path("acceptance-timing.tsv"));
  out << "system\tseconds_per_sentence\n";
  for (const auto& [k, v] : t) out << k << '\t' << v << '\n';
  Outcome o;
  o.pass = ta <= tb && tb < tc;
  o.detail = "seconds/sentence sent " + fmt(ta * 1000, 3) + "e-3, domemb_avg " + fmt(tb * 1000, 3) + "e-3, ctxpool_avg " +
             fmt(tc * 1000, 3) + "e-3 (per-chunk fastest of 7 interleaved rounds, beam " +
             std::to_string(st.exp().manifest().beam) + ")";
  o.data = {{"sent", ta}, {"domemb_avg", tb}, {"ctxpool_avg", tc}};
  return o;
}

const char* kTitles[] = {"",
                         "gradient integrity",
                         "parameter counts",
                         "equivalence oracles",
                         "zero-resource direction",
                         "context-length trend",
                         "ablation structure",
                         "domain classifier",
                         "domain-word F1 direction",
                         "fine-tune and ensemble",
                         "metric unit tests",
                         "timing order"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string out, config = "desk";
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_option("--out", out, "study directory (default $CTXNMT_OUT/acceptance)");
  app.add_option("--config", config, "manifest for the empirical criteria");
  CLI11_PARSE(app, argc, argv);
  if (out.empty()) out = (fs::path(default_output_root()) / "acceptance").string();
  if (only.empty())
    for (int i = 1; i <= 11; ++i) only.push_back(i);
  std::sort(only.begin(), only.end());

  std::unique_ptr<Study> study;
  auto get_study = [&]() -> Study& {
    if (!study) study = std::make_unique<Study>(Manifest::load(config), out);
    return *study;
  };

  nlohmann::json summary = nlohmann::json::object();
  int failures = 0;
  for (int id : only) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      switch (id) {
        case 1: o = gradients(); break;
        case 2: o = parameters(); break;
        case 3: o = equivalences(); break;
        case 4: o = zero_resource(get_study()); break;
        case 5: o = context_trend(get_study()); break;
        case 6: o = ablation(get_study()); break;
        case 7: o = classifier(get_study()); break;
        case 8: o = domain_f1(get_study()); break;
        case 9: o = fine_tune(get_study()); break;
        case 10: o = metrics(); break;
        case 11: o = timing(get_study()); break;
      }
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << kTitles[id] << "): " << o.detail
              << std::endl;
    o.data["pass"] = o.pass;
    o.data["detail"] = o.detail;
    o.data["wall_seconds"] = seconds_since(t0);
    summary[std::to_string(id)] = o.data;
  }
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "acceptance.json") << summary.dump(2) << '\n';
  std::cout << (only.size() - failures) << " of " << only.size() << " criteria pass" << std::endl;
  return failures ? 1 : 0;
}
