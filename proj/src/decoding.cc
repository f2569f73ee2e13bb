#include "ctxnmt/decoding.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "ctxnmt/context.h"

namespace ctxnmt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::uint8_t> allowed_mask(std::size_t V, const DecodeOptions& o) {
  std::vector<std::uint8_t> ok(V, 1);
  for (TokenId t : o.blocked)
    if (t >= 0 && static_cast<std::size_t>(t) < V) ok[static_cast<std::size_t>(t)] = 0;
  return ok;
}

std::size_t max_len_for(std::size_t words, const DecodeOptions& o) {
  return o.max_len ? o.max_len : 2 * words + 10;
}

double step_log_prob(double p) { return p > 0 ? std::log(p) : kNegInf; }

}  // namespace

DecodeOptions default_decode_options(std::size_t vocab_size, std::size_t num_domains, std::size_t beam_size) {
  DecodeOptions o;
  o.beam_size = beam_size;
  o.blocked = {Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kSep};
  for (std::size_t d = 0; d < num_domains; ++d) {
    const auto id = static_cast<TokenId>(Vocabulary::kFirstTag + d);
    if (static_cast<std::size_t>(id) < vocab_size) o.blocked.push_back(id);
  }
  return o;
}

DecodeOptions default_decode_options(const Vocabulary& vocab, std::size_t beam_size) {
  return default_decode_options(vocab.size(), vocab.domains().size(), beam_size);
}

double normalized_score(double log_prob, std::size_t length, double alpha) {
  if (length == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

std::vector<Hypothesis> beam_search(StepModel& model, const std::vector<std::size_t>& source_words,
                                    const DecodeOptions& options) {
  const std::size_t S = model.sources();
  if (source_words.size() != S) throw std::invalid_argument("beam_search: one length per source expected");
  if (options.beam_size < 1) throw std::invalid_argument("beam_search: beam size must be >= 1");
  const std::size_t K = options.beam_size, V = model.vocab_size(), R = S * K;
  const auto allowed = allowed_mask(V, options);

  struct Live {
    std::vector<TokenId> tokens;
    double log_prob;
  };
  struct SourceState {
    std::vector<Live> active;  // slot j -> row j of the group
    std::vector<Hypothesis> finished, truncated;
    bool done = false;
  };
  std::vector<SourceState> state(S);
  for (auto& s : state) s.active.push_back({{}, 0.0});

  model.start(K);
  std::vector<std::vector<TokenId>> prefixes(R, std::vector<TokenId>{options.bos});
  struct Candidate {
    double log_prob;
    std::size_t slot;
    TokenId token;
  };
  std::vector<Candidate> cands;
  std::vector<std::size_t> parents(R);

  for (std::size_t step = 0;; ++step) {
    if (std::all_of(state.begin(), state.end(), [](const SourceState& s) { return s.done; })) break;
    const std::vector<double> probs = model.next_probs(prefixes);
    for (std::size_t s = 0; s < S; ++s) {
      SourceState& st = state[s];
      const std::size_t base = s * K;
      for (std::size_t j = 0; j < K; ++j) parents[base + j] = base + j;
      if (st.done) continue;
      const std::size_t length = step + 1;
      if (source_words[s] == 0) {
        // Degenerate source: end right away.
        const double lp = step_log_prob(probs[base * V + static_cast<std::size_t>(options.eos)]);
        st.finished.push_back({{options.eos}, lp, normalized_score(lp, 1, options.alpha), true});
        st.done = true;
        continue;
      }
      cands.clear();
      for (std::size_t j = 0; j < st.active.size(); ++j) {
        const double* row = probs.data() + (base + j) * V;
        for (std::size_t t = 0; t < V; ++t) {
          if (!allowed[t]) continue;
          const double lp = st.active[j].log_prob + step_log_prob(row[t]);
          if (lp == kNegInf) continue;
          cands.push_back({lp, j, static_cast<TokenId>(t)});
        }
      }
      std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
        if (a.slot != b.slot) return a.slot < b.slot;
        return a.token < b.token;
      });
      const bool at_limit = length >= max_len_for(source_words[s], options);
      std::vector<Live> next;
      std::vector<std::size_t> from;
      // Only the top K ranks survive: EOS candidates finish, the others
      // continue (or stop unfinished at the length limit).
      for (std::size_t i = 0; i < std::min(K, cands.size()); ++i) {
        const Candidate& c = cands[i];
        std::vector<TokenId> tokens = st.active[c.slot].tokens;
        tokens.push_back(c.token);
        const double score = normalized_score(c.log_prob, length, options.alpha);
        if (c.token == options.eos) {
          st.finished.push_back({std::move(tokens), c.log_prob, score, true});
        } else if (at_limit) {
          st.truncated.push_back({std::move(tokens), c.log_prob, score, false});
        } else {
          next.push_back({std::move(tokens), c.log_prob});
          from.push_back(c.slot);
        }
      }
      // Log-probabilities only fall, so an active hypothesis can at best
      // reach its current log p spread over the maximum length.
      bool hopeless = !st.finished.empty();
      if (hopeless) {
        double best = kNegInf;
        for (const auto& h : st.finished) best = std::max(best, h.score);
        const double longest = static_cast<double>(max_len_for(source_words[s], options));
        for (const auto& h : next)
          if (std::min(0.0, h.log_prob) / std::pow(longest, options.alpha) > best) hopeless = false;
      }
      if (next.empty() || hopeless) {
        st.done = true;
        st.active.clear();
        continue;
      }
      const std::vector<std::vector<TokenId>> old(prefixes.begin() + base, prefixes.begin() + base + K);
      for (std::size_t j = 0; j < K; ++j) {
        const std::size_t k = j < next.size() ? j : 0;  // spare rows shadow slot 0
        parents[base + j] = base + from[k];
        prefixes[base + j] = old[from[k]];
        prefixes[base + j].push_back(next[k].tokens.back());
      }
      st.active = std::move(next);
    }
    model.reorder(parents);
  }

  std::vector<Hypothesis> out;
  for (auto& st : state) {
    const auto& pool = st.finished.empty() ? st.truncated : st.finished;
    if (pool.empty()) throw std::logic_error("beam_search: no hypothesis survived");
    const Hypothesis* best = &pool[0];
    for (const auto& h : pool)
      if (h.score > best->score) best = &h;
    out.push_back(*best);
  }
  return out;
}

std::vector<Hypothesis> greedy_search(StepModel& model, const std::vector<std::size_t>& source_words,
                                      const DecodeOptions& options) {
  const std::size_t S = model.sources(), V = model.vocab_size();
  if (source_words.size() != S) throw std::invalid_argument("greedy_search: one length per source expected");
  const auto allowed = allowed_mask(V, options);
  model.start(1);
  std::vector<std::vector<TokenId>> prefixes(S, std::vector<TokenId>{options.bos});
  std::vector<Hypothesis> out(S);
  std::vector<std::uint8_t> done(S, 0);
  std::vector<std::size_t> identity(S);
  std::iota(identity.begin(), identity.end(), 0);
  for (std::size_t step = 0; std::find(done.begin(), done.end(), 0) != done.end(); ++step) {
    const auto probs = model.next_probs(prefixes);
    for (std::size_t s = 0; s < S; ++s) {
      if (done[s]) continue;
      Hypothesis& h = out[s];
      const double* row = probs.data() + s * V;
      double best = kNegInf;
      TokenId arg = options.eos;
      if (source_words[s] == 0) {
        best = h.log_prob + step_log_prob(row[options.eos]);
      } else {
        for (std::size_t t = 0; t < V; ++t) {
          if (!allowed[t]) continue;
          const double lp = h.log_prob + step_log_prob(row[t]);
          if (lp > best) {
            best = lp;
            arg = static_cast<TokenId>(t);
          }
        }
      }
      h.tokens.push_back(arg);
      h.log_prob = best;
      h.score = normalized_score(best, h.tokens.size(), options.alpha);
      prefixes[s].push_back(arg);
      if (arg == options.eos) {
        h.finished = true;
        done[s] = 1;
      } else if (h.tokens.size() >= max_len_for(source_words[s], options)) {
        done[s] = 1;
      }
    }
    model.reorder(identity);
  }
  return out;
}

Hypothesis exhaustive_search(StepModel& model, std::size_t source_words, const DecodeOptions& options) {
  if (model.sources() != 1) throw std::invalid_argument("exhaustive_search: one source only");
  const std::size_t V = model.vocab_size(), L = max_len_for(source_words, options);
  const auto allowed = allowed_mask(V, options);
  const std::vector<std::size_t> identity{0};
  // Distribution after `tokens`, replayed from scratch.
  auto dist = [&](const std::vector<TokenId>& tokens) {
    model.start(1);
    std::vector<std::vector<TokenId>> prefix{{options.bos}};
    std::vector<double> p = model.next_probs(prefix);
    for (TokenId t : tokens) {
      model.reorder(identity);
      prefix[0].push_back(t);
      p = model.next_probs(prefix);
    }
    return p;
  };
  Hypothesis best;
  best.score = kNegInf;
  bool found = false;
  std::function<void(std::vector<TokenId>&, double)> walk = [&](std::vector<TokenId>& tokens, double lp) {
    const auto p = dist(tokens);
    for (std::size_t t = 0; t < V; ++t) {
      if (!allowed[t]) continue;
      if (source_words == 0 && static_cast<TokenId>(t) != options.eos) continue;
      const double next = lp + step_log_prob(p[t]);
      if (next == kNegInf) continue;
      tokens.push_back(static_cast<TokenId>(t));
      if (static_cast<TokenId>(t) == options.eos) {
        const double score = normalized_score(next, tokens.size(), options.alpha);
        if (!found || score > best.score) {
          best = {tokens, next, score, true};
          found = true;
        }
      } else if (tokens.size() < L) {
        walk(tokens, next);
      }
      tokens.pop_back();
    }
  };
  std::vector<TokenId> tokens;
  walk(tokens, 0.0);
  if (!found) throw std::runtime_error("exhaustive_search: no finished sequence within max_len");
  return best;
}

ModelStepModel::ModelStepModel(const Model& model, const std::vector<TrainingExample>& prepared)
    : model_(&model) {
  std::vector<std::vector<TokenId>> src, ctx;
  for (const auto& ex : prepared) {
    src.push_back(ex.source);
    ctx.push_back(ex.context);
  }
  NoGradScope no_grad;
  encoded_ = model.encode(PaddedIds::from(src), PaddedIds::from(ctx));
}

void ModelStepModel::start(std::size_t rows_per_source) {
  cache_ = model_->start_decoding(encoded_, rows_per_source);
}

std::vector<double> ModelStepModel::next_probs(const std::vector<std::vector<TokenId>>& prefixes) {
  std::vector<TokenId> last;
  last.reserve(prefixes.size());
  for (const auto& p : prefixes) last.push_back(p.back());
  Tensor logits = model_->decode_step(encoded_, cache_, last);
  const std::size_t V = vocab_size();
  std::vector<double> out(prefixes.size() * V);
  for (std::size_t r = 0; r < prefixes.size(); ++r) {
    const Real* row = logits.data() + r * V;
    double* o = out.data() + r * V;
    double m = row[0];
    for (std::size_t t = 1; t < V; ++t) m = std::max(m, static_cast<double>(row[t]));
    double sum = 0;
    for (std::size_t t = 0; t < V; ++t) sum += o[t] = std::exp(static_cast<double>(row[t]) - m);
    for (std::size_t t = 0; t < V; ++t) o[t] /= sum;
  }
  return out;
}

MixtureStepModel::MixtureStepModel(std::vector<StepModel*> members, std::vector<double> weights) {
  if (members.empty() || members.size() != weights.size())
    throw std::invalid_argument("mixture: one weight per member expected");
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw std::invalid_argument("mixture: weights must be nonnegative");
    total += w;
  }
  if (total <= 0) throw std::invalid_argument("mixture: need a member with positive weight");
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i]->vocab_size() != members[0]->vocab_size())
      throw std::invalid_argument("mixture: vocabulary sizes differ (" + std::to_string(members[0]->vocab_size()) +
                                  " vs " + std::to_string(members[i]->vocab_size()) + ")");
    if (members[i]->sources() != members[0]->sources())
      throw std::invalid_argument("mixture: members disagree on the number of sources");
    if (weights[i] == 0) continue;
    members_.push_back(members[i]);
    weights_.push_back(weights[i] / total);
  }
}

void MixtureStepModel::start(std::size_t rows_per_source) {
  for (auto* m : members_) m->start(rows_per_source);
}

std::vector<double> MixtureStepModel::next_probs(const std::vector<std::vector<TokenId>>& prefixes) {
  std::vector<double> out;
  for (std::size_t i = 0; i < members_.size(); ++i) {
    const auto p = members_[i]->next_probs(prefixes);
    if (out.empty()) out.assign(p.size(), 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) out[k] += weights_[i] * p[k];
  }
  return out;
}

void MixtureStepModel::reorder(std::span<const std::size_t> parents) {
  for (auto* m : members_) m->reorder(parents);
}

std::vector<Hypothesis> translate(const std::vector<EnsembleMember>& members,
                                  const std::vector<TrainingExample>& examples, const TranslateOptions& options) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].source.size() < examples[b].source.size();
  });
  const std::size_t per = std::max<std::size_t>(1, options.batch_sentences);
  const std::size_t chunks = (order.size() + per - 1) / per;
  std::vector<Hypothesis> out(examples.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < chunks;) {
      std::vector<TrainingExample> batch;
      std::vector<std::size_t> words;
      for (std::size_t i = c * per; i < std::min(order.size(), (c + 1) * per); ++i) {
        const auto& ex = examples[order[i]];
        batch.push_back(ex);
        std::size_t n = ex.source.size();
        if (n && ex.source.back() == Vocabulary::kEos) --n;
        words.push_back(n);
      }
      std::vector<ModelStepModel> singles;
      singles.reserve(members.size());
      std::vector<StepModel*> ptrs;
      std::vector<double> weights;
      for (const auto& m : members) {
        if (!m.model) throw std::invalid_argument("translate: null model");
        singles.emplace_back(*m.model, prepare_examples(m.model->config(), batch));
        ptrs.push_back(&singles.back());
        weights.push_back(m.weight);
      }
      MixtureStepModel step(ptrs, weights);
      auto hyps = beam_search(step, words, options.decode);
      for (std::size_t i = 0; i < hyps.size(); ++i) out[order[c * per + i]] = std::move(hyps[i]);
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, chunks));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

std::vector<Hypothesis> translate(const Model& model, const std::vector<TrainingExample>& examples,
                                  const TranslateOptions& options) {
  return translate(std::vector<EnsembleMember>{{&model, 1.0}}, examples, options);
}

}  // namespace ctxnmt
