#include "ctxnmt/evaluation.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ctxnmt {

// ---- BLEU ----

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  if (o.matches.size() != matches.size()) throw std::invalid_argument("BleuStats: n-gram orders differ");
  for (std::size_t n = 0; n < matches.size(); ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

std::map<std::vector<std::string>, int> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<std::vector<std::string>, int> counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++counts[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
  return counts;
}

}  // namespace

BleuStats bleu_stats(const Tokens& hypothesis, const Tokens& reference, std::size_t max_n) {
  BleuStats s(max_n);
  s.hyp_len = static_cast<double>(hypothesis.size());
  s.ref_len = static_cast<double>(reference.size());
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto h = ngram_counts(hypothesis, n);
    const auto r = ngram_counts(reference, n);
    for (const auto& [gram, c] : h) {
      s.totals[n - 1] += c;
      auto it = r.find(gram);
      if (it != r.end()) s.matches[n - 1] += std::min(c, it->second);
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s) {
  if (s.hyp_len == 0) return 0;
  double log_sum = 0;
  for (std::size_t n = 0; n < s.matches.size(); ++n) {
    if (s.matches[n] == 0 || s.totals[n] == 0) return 0;
    log_sum += std::log(s.matches[n] / s.totals[n]);
  }
  const double bp = s.hyp_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.hyp_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(s.matches.size()));
}

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, std::size_t max_n) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: no hypotheses");
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                                std::to_string(references.size()) + " references");
  BleuStats total(max_n);
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i], max_n);
  return bleu_from_stats(total);
}

double sentence_bleu(const Tokens& hypothesis, const Tokens& reference, std::size_t max_n) {
  BleuStats s = bleu_stats(hypothesis, reference, max_n);
  if (s.hyp_len == 0) return 0;
  double log_sum = 0;
  for (std::size_t n = 0; n < max_n; ++n) log_sum += std::log((s.matches[n] + 1) / (s.totals[n] + 1));
  const double bp = s.hyp_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.hyp_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

BootstrapResult paired_bootstrap(const std::vector<Tokens>& hyp_a, const std::vector<Tokens>& hyp_b,
                                 const std::vector<Tokens>& references, std::size_t resamples, std::uint64_t seed) {
  const std::size_t N = references.size();
  if (hyp_a.size() != N || hyp_b.size() != N) throw std::invalid_argument("paired_bootstrap: line counts differ");
  if (N == 0) throw std::invalid_argument("paired_bootstrap: empty test set");
  std::vector<BleuStats> a, b;
  BleuStats ta, tb;
  for (std::size_t i = 0; i < N; ++i) {
    a.push_back(bleu_stats(hyp_a[i], references[i]));
    b.push_back(bleu_stats(hyp_b[i], references[i]));
    ta += a.back();
    tb += b.back();
  }
  BootstrapResult r;
  r.bleu_a = bleu_from_stats(ta);
  r.bleu_b = bleu_from_stats(tb);
  r.resamples = resamples;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  std::size_t b_wins = 0;
  for (std::size_t k = 0; k < resamples; ++k) {
    BleuStats sa, sb;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t j = pick(rng);
      sa += a[j];
      sb += b[j];
    }
    if (bleu_from_stats(sb) >= bleu_from_stats(sa)) ++b_wins;
  }
  r.p_value = resamples ? static_cast<double>(b_wins) / static_cast<double>(resamples) : 1.0;
  return r;
}

// ---- domain words ----

DomainWordSet tfidf_domain_words(const std::map<std::string, std::vector<Tokens>>& text_by_domain, std::size_t top_k,
                                 std::size_t min_len) {
  if (text_by_domain.size() < 2) throw std::invalid_argument("tfidf_domain_words: need at least two domains");
  std::map<std::string, std::map<std::string, double>> counts;
  std::map<std::string, double> totals;
  std::map<std::string, std::size_t> doc_freq;
  for (const auto& [domain, sentences] : text_by_domain) {
    auto& c = counts[domain];
    for (const auto& s : sentences)
      for (const auto& w : s) {
        c[w] += 1;
        totals[domain] += 1;
      }
    for (const auto& [w, n] : c) ++doc_freq[w];
  }
  const double D = static_cast<double>(text_by_domain.size());
  DomainWordSet out;
  for (const auto& [domain, c] : counts) {
    std::vector<ScoredWord> scored;
    for (const auto& [w, n] : c) {
      if (w.size() < min_len) continue;
      const double idf = std::log(D / static_cast<double>(doc_freq[w]));
      const double score = (n / totals[domain]) * idf;
      if (score > 0) scored.push_back({w, score});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const ScoredWord& a, const ScoredWord& b) { return a.score > b.score; });
    if (scored.size() > top_k) scored.resize(top_k);
    out[domain] = std::move(scored);
  }
  return out;
}

// ---- IBM Model 1 ----

double AlignmentModel::prob(const std::string& target, const std::string& source) const {
  auto row = table_.find(source);
  if (row == table_.end()) return uniform_;
  auto it = row->second.find(target);
  return it == row->second.end() ? 0.0 : it->second;
}

double ibm1_log_likelihood(const AlignmentModel& model, const std::vector<std::pair<Tokens, Tokens>>& bitext) {
  double ll = 0;
  for (const auto& [src, tgt] : bitext) {
    const double l1 = static_cast<double>(src.size() + 1);
    for (const auto& e : tgt) {
      double s = model.prob(e, kNullWord);
      for (const auto& f : src) s += model.prob(e, f);
      ll += std::log(s / l1);
    }
  }
  return ll;
}

AlignmentModel ibm1_align(const std::vector<std::pair<Tokens, Tokens>>& bitext, std::size_t iterations,
                          std::vector<double>* log_likelihoods) {
  AlignmentModel m;
  std::set<std::string> targets;
  for (const auto& [src, tgt] : bitext) targets.insert(tgt.begin(), tgt.end());
  m.uniform_ = targets.empty() ? 0.0 : 1.0 / static_cast<double>(targets.size());
  if (log_likelihoods) log_likelihoods->clear();
  for (std::size_t it = 0; it < iterations; ++it) {
    if (log_likelihoods) log_likelihoods->push_back(ibm1_log_likelihood(m, bitext));
    std::unordered_map<std::string, std::unordered_map<std::string, double>> count;
    std::unordered_map<std::string, double> total;
    std::vector<const std::string*> src_words;
    std::vector<double> t;
    for (const auto& [src, tgt] : bitext) {
      src_words.clear();
      src_words.push_back(nullptr);  // the null word
      for (const auto& f : src) src_words.push_back(&f);
      for (const auto& e : tgt) {
        t.resize(src_words.size());
        double denom = 0;
        for (std::size_t i = 0; i < src_words.size(); ++i)
          denom += t[i] = m.prob(e, src_words[i] ? *src_words[i] : kNullWord);
        if (denom <= 0) continue;
        for (std::size_t i = 0; i < src_words.size(); ++i) {
          const std::string& f = src_words[i] ? *src_words[i] : std::string(kNullWord);
          const double c = t[i] / denom;
          count[f][e] += c;
          total[f] += c;
        }
      }
    }
    for (auto& [f, row] : count)
      for (auto& [e, c] : row) c /= total[f];
    m.table_ = std::move(count);
  }
  if (log_likelihoods) log_likelihoods->push_back(ibm1_log_likelihood(m, bitext));
  return m;
}

ForcedAlignment force_align(const AlignmentModel& model, const Tokens& source, const Tokens& target) {
  ForcedAlignment a;
  for (const auto& f : source) {
    a.oov.push_back(!model.knows(f));
    int best = target.empty() ? -1 : 0;
    double best_p = -1;
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double p = model.prob(target[j], f);
      if (p > best_p) {
        best_p = p;
        best = static_cast<int>(j);
      }
    }
    a.target_index.push_back(best);
  }
  return a;
}

F1Result domain_word_f1(const std::vector<std::string>& domain_words, const std::vector<Tokens>& sources,
                        const std::vector<Tokens>& references, const std::vector<Tokens>& hypotheses,
                        const AlignmentModel& model) {
  if (sources.size() != references.size() || sources.size() != hypotheses.size())
    throw std::invalid_argument("domain_word_f1: line counts differ");
  const std::set<std::string> words(domain_words.begin(), domain_words.end());
  F1Result r;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const Tokens& src = sources[s];
    bool any = false;
    for (const auto& w : src) any = any || words.count(w);
    if (!any) continue;
    const ForcedAlignment gold = force_align(model, src, references[s]);
    const ForcedAlignment pred = force_align(model, src, hypotheses[s]);
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!words.count(src[i])) continue;
      const int g = gold.target_index[i], p = pred.target_index[i];
      if (g >= 0) ++r.gold;
      if (p >= 0) ++r.predicted;
      if (g >= 0 && p >= 0 && references[s][static_cast<std::size_t>(g)] == hypotheses[s][static_cast<std::size_t>(p)])
        ++r.matches;
    }
  }
  if (r.gold == 0 || r.predicted == 0) {
    r.degenerate = true;
    return r;
  }
  r.precision = static_cast<double>(r.matches) / static_cast<double>(r.predicted);
  r.recall = static_cast<double>(r.matches) / static_cast<double>(r.gold);
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// ---- representative context ----

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::map<std::string, RepresentativeContext> representative_contexts(
    const std::map<std::string, std::vector<std::vector<TokenId>>>& contexts_by_domain, const Tensor& embeddings) {
  const std::size_t V = embeddings.rows(), d = embeddings.cols();
  auto mean_of = [&](const std::vector<TokenId>& ctx) {
    std::vector<double> m(d, 0.0);
    for (TokenId t : ctx) {
      if (t < 0 || static_cast<std::size_t>(t) >= V) throw std::out_of_range("representative_contexts: bad token id");
      for (std::size_t c = 0; c < d; ++c) m[c] += static_cast<double>(embeddings.at(static_cast<std::size_t>(t), c));
    }
    for (auto& x : m) x /= static_cast<double>(ctx.size());
    return m;
  };
  std::map<std::string, RepresentativeContext> out;
  for (const auto& [domain, contexts] : contexts_by_domain) {
    std::vector<std::size_t> idx;
    std::vector<std::vector<double>> means;
    std::vector<double> domain_mean(d, 0.0);
    for (std::size_t i = 0; i < contexts.size(); ++i) {
      if (contexts[i].empty()) continue;
      idx.push_back(i);
      means.push_back(mean_of(contexts[i]));
      for (std::size_t c = 0; c < d; ++c) domain_mean[c] += means.back()[c];
    }
    if (idx.empty()) throw std::invalid_argument("representative_contexts: domain " + domain + " has no context");
    for (auto& x : domain_mean) x /= static_cast<double>(idx.size());
    RepresentativeContext best;
    best.cosine = -2;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double c = cosine(means[k], domain_mean);
      if (c > best.cosine) {
        best.cosine = c;
        best.index = idx[k];
      }
    }
    best.context = contexts[best.index];
    out[domain] = std::move(best);
  }
  return out;
}

double AblationGrid::off_diagonal_mean(std::size_t r) const {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c + 1 < columns.size(); ++c)
    if (c != r) {
      s += values[r][c];
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

std::string AblationGrid::to_tsv() const {
  std::ostringstream os;
  os << std::setprecision(6) << "test\\context";
  for (const auto& c : columns) os << '\t' << c;
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << rows[r];
    for (double v : values[r]) os << '\t' << v;
    os << '\n';
  }
  return os.str();
}

AblationGrid ablation_matrix(
    const std::vector<std::string>& domains, const std::map<std::string, std::vector<TrainingExample>>& test_by_domain,
    const std::map<std::string, RepresentativeContext>& representatives,
    const std::function<double(const std::string& domain, const std::vector<TrainingExample>&)>& metric) {
  AblationGrid g;
  g.rows = domains;
  g.columns = domains;
  g.columns.push_back("True");
  for (const auto& row : domains) {
    const auto& test = test_by_domain.at(row);
    std::vector<double> values;
    for (const auto& col : domains) {
      std::vector<TrainingExample> swapped = test;
      const auto& ctx = representatives.at(col).context;
      for (auto& ex : swapped) ex.context = ctx;
      values.push_back(metric(row, swapped));
    }
    values.push_back(metric(row, test));
    g.values.push_back(std::move(values));
  }
  return g;
}

// ---- reporting ----

namespace {
void remember(std::vector<std::string>& order, const std::string& v) {
  if (std::find(order.begin(), order.end(), v) == order.end()) order.push_back(v);
}
std::string key_of(const std::string& m, const std::string& d, const std::string& s) { return m + "." + d + "." + s; }
}  // namespace

void EvalReport::add(const std::string& metric, const std::string& domain, const std::string& system, double value) {
  remember(metrics_, metric);
  remember(domains_, domain);
  remember(systems_, system);
  values_[key_of(metric, domain, system)] = value;
}

bool EvalReport::has(const std::string& metric, const std::string& domain, const std::string& system) const {
  return values_.count(key_of(metric, domain, system)) > 0;
}

double EvalReport::get(const std::string& metric, const std::string& domain, const std::string& system) const {
  auto it = values_.find(key_of(metric, domain, system));
  if (it == values_.end()) throw std::out_of_range("report has no " + key_of(metric, domain, system));
  return it->second;
}

nlohmann::json EvalReport::summary() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << std::setprecision(6);
  for (const auto& m : metrics_) {
    os << "# " << m << "\nsystem";
    for (const auto& d : domains_) os << '\t' << d;
    os << '\n';
    for (const auto& s : systems_) {
      bool any = false;
      for (const auto& d : domains_) any = any || has(m, d, s);
      if (!any) continue;
      os << s;
      for (const auto& d : domains_) {
        os << '\t';
        if (has(m, d, s)) os << get(m, d, s);
      }
      os << '\n';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace ctxnmt
