#include "ctxnmt/experiment.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ctxnmt/context.h"
#include "ctxnmt/log.h"
#include "ctxnmt/model.h"

namespace ctxnmt {

namespace fs = std::filesystem;

std::string default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? env : "runs";
}

// ---- manifest ----

void Manifest::validate() const {
  synth.validate();
  ModelConfig probe = model;
  probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 1);
  probe.validate();
  pretrain.validate();
  doc_train.validate();
  fine_tune.validate();
  if (seeds.empty()) throw ConfigError("manifest: at least one seed is required");
  if (beam == 0) throw ConfigError("manifest: beam must be positive");
  if (workers == 0) throw ConfigError("manifest: workers must be positive");
  if (domain_words == 0) throw ConfigError("manifest: domain_words must be positive");
}

Manifest Manifest::preset(const std::string& name) {
  Manifest m;
  m.name = name;
  m.model.layers = 2;
  m.model.heads = 4;
  m.model.d_model = 64;
  m.model.d_ff = 128;

  m.pretrain.learning_rate = 1e-3;
  m.pretrain.checkpoint_interval = 100;
  m.pretrain.patience = 3;
  m.pretrain.max_updates = 1500;
  m.pretrain.token_budget = 1024;

  m.doc_train = m.pretrain;
  m.doc_train.max_updates = 2000;

  // A tenth of the training rate, as for in-domain continued training.
  m.fine_tune = m.pretrain;
  m.fine_tune.learning_rate = 1e-4;
  m.fine_tune.checkpoint_interval = 20;
  m.fine_tune.max_updates = 400;

  if (name == "desk") return m;
  if (name == "smoke") {
    m.synth.exclusive_words = 12;
    m.synth.shared_words = 10;
    m.synth.polysemous_words = 4;
    m.synth.subtopic_polysemous = 1;
    m.synth.train_docs = 12;
    m.synth.dev_docs = 2;
    m.synth.test_docs = 3;
    m.synth.zero_tune_docs = 3;
    m.synth.zero_tune_dev_docs = 2;
    m.synth.min_sentences = 3;
    m.synth.max_sentences = 5;
    m.synth.min_length = 3;
    m.synth.max_length = 6;
    m.model.layers = 1;
    m.model.heads = 2;
    m.model.d_model = 16;
    m.model.d_ff = 32;
    for (TrainConfig* t : {&m.pretrain, &m.doc_train, &m.fine_tune}) {
      t->checkpoint_interval = 5;
      t->max_updates = 15;
      t->token_budget = 256;
    }
    m.classifier.hidden = 16;
    m.classifier.epochs = 10;
    m.seeds = {1};
    m.beam = 3;
    m.context = 3;
    m.bootstrap_resamples = 100;
    return m;
  }
  throw ConfigError("unknown manifest preset '" + name + "' (known: desk, smoke)");
}

Manifest Manifest::load(const std::string& path_or_preset) {
  if (!fs::is_regular_file(path_or_preset)) {
    if (path_or_preset.find('/') != std::string::npos || path_or_preset.find(".json") != std::string::npos)
      throw ConfigError("manifest file not found: " + path_or_preset);
    return preset(path_or_preset);
  }
  std::ifstream in(path_or_preset);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse manifest " + path_or_preset + ": " + e.what());
  }
  return from_overrides(j);
}

Manifest Manifest::from_overrides(nlohmann::json j) {
  if (!j.is_object()) throw ConfigError("manifest overrides must be a JSON object");
  // Overrides patch the preset they name (key "base", default desk).
  const std::string base = j.value("base", std::string("desk"));
  j.erase("base");
  nlohmann::json merged = preset(base);
  merged.merge_patch(j);
  Manifest m = merged.get<Manifest>();
  m.validate();
  return m;
}

namespace {

nlohmann::json classifier_json(const ClassifierConfig& c) {
  return {{"hidden", c.hidden},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed}};
}

ClassifierConfig classifier_from(const nlohmann::json& j) {
  ClassifierConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::set<std::string> known = {"hidden", "epochs", "batch_size", "learning_rate", "seed"};
    if (!known.count(it.key())) throw ConfigError("classifier config: unknown key '" + it.key() + "'");
  }
  c.hidden = j.value("hidden", c.hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

void to_json(nlohmann::json& j, const Manifest& m) {
  j = nlohmann::json{{"name", m.name},
                     {"synth", m.synth},
                     {"data_dir", m.data_dir},
                     {"model", m.model},
                     {"pretrain", m.pretrain},
                     {"doc_train", m.doc_train},
                     {"fine_tune", m.fine_tune},
                     {"classifier", classifier_json(m.classifier)},
                     {"context", m.context},
                     {"beam", m.beam},
                     {"workers", m.workers},
                     {"seeds", m.seeds},
                     {"bootstrap_resamples", m.bootstrap_resamples},
                     {"bootstrap_seed", m.bootstrap_seed},
                     {"domain_words", m.domain_words},
                     {"ibm1_iterations", m.ibm1_iterations}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  static const std::set<std::string> known = {
      "name",     "synth",   "data_dir", "model", "pretrain",            "doc_train",      "fine_tune",
      "classifier", "context", "beam",   "workers", "seeds", "bootstrap_resamples", "bootstrap_seed",
      "domain_words", "ibm1_iterations"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("manifest: unknown key '" + it.key() + "'");
  m = Manifest{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("name", m.name);
  get("synth", m.synth);
  get("data_dir", m.data_dir);
  get("model", m.model);
  get("pretrain", m.pretrain);
  get("doc_train", m.doc_train);
  get("fine_tune", m.fine_tune);
  if (j.contains("classifier")) m.classifier = classifier_from(j.at("classifier"));
  get("context", m.context);
  get("beam", m.beam);
  get("workers", m.workers);
  get("seeds", m.seeds);
  get("bootstrap_resamples", m.bootstrap_resamples);
  get("bootstrap_seed", m.bootstrap_seed);
  get("domain_words", m.domain_words);
  get("ibm1_iterations", m.ibm1_iterations);
}

// ---- data ----

std::vector<std::string> DataSet::zero_domains() const {
  const auto seen = train_domains();
  std::vector<std::string> out;
  for (const auto& d : test_domains())
    if (std::find(seen.begin(), seen.end(), d) == seen.end()) out.push_back(d);
  return out;
}

bool DataSet::exists(const std::string& dir) { return fs::exists(fs::path(dir) / "train.txt"); }

DataSet DataSet::load(const std::string& dir) {
  const fs::path root(dir);
  auto required = [&](const char* name) {
    const fs::path p = root / name;
    if (!fs::exists(p)) throw std::runtime_error("missing corpus file " + p.string());
    return load_corpus(p.string());
  };
  auto optional = [&](const char* name) { return fs::exists(root / name) ? load_corpus((root / name).string()) : Corpus{}; };
  DataSet d;
  d.train = required("train.txt");
  d.dev = required("dev.txt");
  d.test = required("test.txt");
  d.tune = optional("tune.txt");
  d.tune_dev = optional("tune_dev.txt");
  if (fs::exists(root / "oracle.tsv")) {
    d.oracle = load_oracle((root / "oracle.tsv").string());
    d.has_oracle = true;
  }
  return d;
}

std::string SystemSpec::name() const {
  std::string n(kind_name(kind));
  if (uses_context(kind)) n += "-ctx" + std::to_string(context);
  n += "-s" + std::to_string(seed);
  if (fine_tuned) n += "-ft";
  return n;
}

SystemSpec SystemSpec::make(ModelKind kind, std::size_t context, std::uint64_t seed, bool fine_tuned) {
  return SystemSpec{kind, uses_context(kind) ? context : 0, seed, fine_tuned};
}

// ---- helpers ----

Tokens hypothesis_words(const Hypothesis& h, const Vocabulary& vocab) {
  std::vector<TokenId> ids = h.tokens;
  if (!ids.empty() && ids.back() == Vocabulary::kEos) ids.pop_back();
  return vocab.decode(ids);
}

std::vector<Tokens> corpus_sources(const Corpus& corpus) {
  std::vector<Tokens> out;
  for (const auto& d : corpus)
    for (const auto& s : d.sentences) out.push_back(s.source);
  return out;
}

std::vector<Tokens> corpus_targets(const Corpus& corpus) {
  std::vector<Tokens> out;
  for (const auto& d : corpus)
    for (const auto& s : d.sentences) out.push_back(s.target);
  return out;
}

std::map<std::string, std::vector<std::size_t>> lines_by_domain(const Corpus& corpus) {
  std::map<std::string, std::vector<std::size_t>> out;
  std::size_t line = 0;
  for (const auto& d : corpus)
    for (std::size_t i = 0; i < d.sentences.size(); ++i) out[d.domain].push_back(line++);
  return out;
}

namespace {

template <class T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

nlohmann::json train_json(TrainConfig t) {
  t.checkpoint_dir.clear();
  return t;
}

}  // namespace

std::vector<ParamRow> parameter_table(const ModelConfig& base) {
  std::vector<ParamRow> rows;
  std::size_t sent = 0;
  for (ModelKind k : all_kinds()) {
    ModelConfig c = base;
    c.kind = k;
    c.context_size = uses_context(k) ? std::max<std::size_t>(c.context_size, 1) : 0;
    const std::size_t n = count_parameters(c);
    if (k == ModelKind::kSent) sent = n;
    rows.push_back({std::string(kind_name(k)), n, static_cast<long long>(n) - static_cast<long long>(sent)});
  }
  return rows;
}

std::vector<ParamCheck> parameter_checks(std::size_t vocab_size) {
  auto count = [&](ModelKind k) { return static_cast<double>(count_parameters(ModelConfig::paper(k, vocab_size))); };
  const double sent = count(ModelKind::kSent);
  auto near = [](std::string what, double value, double target, double tol) {
    return ParamCheck{std::move(what), value, target, tol, std::abs(value - target) <= tol * target};
  };
  std::vector<ParamCheck> out;
  out.push_back(near("sent", sent, 61e6, 0.10));
  out.push_back(near("domemb_avg - sent", count(ModelKind::kDomEmbAvg) - sent, 2.1e6, 0.15));
  out.push_back(near("ctxpool_avg - sent", count(ModelKind::kCtxPoolAvg) - sent, 13e6, 0.20));
  out.push_back(near("ctxpool_max - sent", count(ModelKind::kCtxPoolMax) - sent, 13e6, 0.20));
  for (ModelKind k : {ModelKind::kDomEmbMax, ModelKind::kTag, ModelKind::kConcBase}) {
    const double v = count(k);
    out.push_back({std::string(kind_name(k)) + " == sent", v, sent, 0, v == sent});
  }
  return out;
}

// ---- experiment ----

Experiment::Experiment(Manifest manifest, std::string out_dir)
    : manifest_(std::move(manifest)), out_dir_(std::move(out_dir)) {
  manifest_.validate();
  fs::create_directories(out_dir_);
}

Experiment::~Experiment() = default;

std::string Experiment::path(const std::string& relative) const { return (fs::path(out_dir_) / relative).string(); }

const DataSet& Experiment::data() {
  if (data_) return *data_;
  const std::string dir = manifest_.data_dir.empty() ? path("data") : manifest_.data_dir;
  if (!DataSet::exists(dir)) {
    if (!manifest_.data_dir.empty()) throw std::runtime_error("missing corpus file " + (fs::path(dir) / "train.txt").string());
    log_info("generating synthetic corpus in " + dir);
    write_synth(dir, generate(manifest_.synth));
  }
  data_ = DataSet::load(dir);
  if (data_->train.empty()) throw std::runtime_error("empty training corpus in " + dir);
  return *data_;
}

std::string Experiment::data_fingerprint() {
  if (data_hash_.empty()) {
    std::ostringstream os;
    for (const Corpus* c : {&data().train, &data().dev, &data().tune, &data().tune_dev}) {
      write_corpus(os, *c);
      os << "\n#split\n";
    }
    data_hash_ = content_hash(os.str());
  }
  return data_hash_;
}

const Vocabulary& Experiment::vocab() {
  if (!vocab_) {
    vocab_ = Vocabulary::build(data().train, data().train_domains());
    fs::create_directories(out_dir_);
    vocab_->save(path("vocab.txt"));
  }
  return *vocab_;
}

ModelConfig Experiment::model_config(ModelKind kind, std::size_t context) {
  ModelConfig c = manifest_.model;
  c.kind = kind;
  c.vocab_size = vocab().size();
  c.context_size = uses_context(kind) ? context : 0;
  c.validate();
  return c;
}

std::string Experiment::system_fingerprint(const SystemSpec& s) {
  nlohmann::json j{{"data", data_fingerprint()},
                   {"model", model_config(s.kind, s.context)},
                   {"seed", s.seed},
                   {"system", s.name()}};
  if (s.fine_tuned) {
    SystemSpec base = s;
    base.fine_tuned = false;
    j["base"] = system_fingerprint(base);
    j["train"] = train_json(manifest_.fine_tune);
  } else if (s.kind == ModelKind::kSent) {
    j["train"] = train_json(manifest_.pretrain);
  } else {
    j["base"] = system_fingerprint(SystemSpec::make(ModelKind::kSent, 0, s.seed));
    j["train"] = train_json(manifest_.doc_train);
  }
  if (s.kind == ModelKind::kTag && s.fine_tuned) j["classifier"] = classifier_json(manifest_.classifier);
  return content_hash(j.dump());
}

std::vector<TrainingExample> Experiment::examples(const Corpus& corpus, std::size_t context, bool predicted_tags) {
  auto ex = make_examples(corpus, vocab(), context, manifest_.model.context_sentence_limit);
  if (predicted_tags) {
    const auto tags = predict_tags(corpus, classifier(), vocab());
    for (std::size_t i = 0; i < ex.size(); ++i) ex[i].domain_tag = tags[i];
  }
  return ex;
}

Checkpoint Experiment::train_system(const SystemSpec& s) {
  const DataSet& d = data();
  const ModelConfig cfg = model_config(s.kind, s.context);
  fs::create_directories(path("models"));
  std::ofstream log(path("models/" + s.name() + ".log"));
  const bool tag = s.kind == ModelKind::kTag;

  if (s.fine_tuned) {
    if (d.tune.empty() || d.tune_dev.empty())
      throw std::runtime_error("fine-tuning needs tune.txt and tune_dev.txt in the data directory");
    SystemSpec base = s;
    base.fine_tuned = false;
    const Checkpoint& b = checkpoint(base);
    TrainConfig tc = manifest_.fine_tune;
    tc.seed = s.seed;
    return fine_tune(b, prepare_examples(cfg, examples(d.tune, s.context, tag)),
                     prepare_examples(cfg, examples(d.tune_dev, s.context, tag)), tc, &log)
        .averaged;
  }

  const auto tr = prepare_examples(cfg, examples(d.train, s.context, false));
  const auto dv = prepare_examples(cfg, examples(d.dev, s.context, false));
  if (s.kind == ModelKind::kSent) {
    TrainConfig tc = manifest_.pretrain;
    tc.seed = s.seed;
    return pretrain_baseline(cfg, s.seed, tr, dv, tc, &log).averaged;
  }
  const Checkpoint& base = checkpoint(SystemSpec::make(ModelKind::kSent, 0, s.seed));
  Model m(cfg, s.seed * 1000003ull + static_cast<std::uint64_t>(s.kind));
  init_from_checkpoint(m, base);
  TrainConfig tc = manifest_.doc_train;
  tc.seed = s.seed;
  const TrainHistory h = train(m, tr, dv, tc, &log);
  return average_checkpoints(h.kept, tc.keep_best);
}

const Checkpoint& Experiment::checkpoint(const SystemSpec& s) {
  const std::string key = s.name();
  if (auto it = checkpoints_.find(key); it != checkpoints_.end()) return it->second;
  const std::string file = path("models/" + key + ".ckpt");
  const std::string fp = system_fingerprint(s);
  if (fs::exists(file)) {
    Checkpoint ck = load_checkpoint(file);
    if (ck.meta.value("run_fingerprint", std::string()) == fp) return checkpoints_.emplace(key, std::move(ck)).first->second;
    log_warning(file + " was trained under a different manifest or corpus; retraining");
  }
  log_info("training " + key);
  const auto t0 = std::chrono::steady_clock::now();
  Checkpoint ck = train_system(s);
  ck.meta["run_fingerprint"] = fp;
  ck.meta["system"] = key;
  ck.meta["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fs::create_directories(path("models"));
  save_checkpoint(file, ck);
  return checkpoints_.emplace(key, std::move(ck)).first->second;
}

const Model& Experiment::model(const SystemSpec& s) {
  const std::string key = s.name();
  auto it = models_.find(key);
  if (it == models_.end())
    it = models_.emplace(key, std::make_unique<Model>(Model::from_checkpoint(checkpoint(s)))).first;
  return *it->second;
}

const DomainClassifier& Experiment::classifier() {
  if (classifier_) return *classifier_;
  const DataSet& d = data();
  const auto domains = d.train_domains();
  nlohmann::json fp_json{{"data", data_fingerprint()}, {"config", classifier_json(manifest_.classifier)}};
  const std::string fp = content_hash(fp_json.dump());
  const std::string file = path("models/classifier.ckpt");
  if (fs::exists(file)) {
    Checkpoint ck = load_checkpoint(file);
    if (ck.meta.value("run_fingerprint", std::string()) == fp) {
      classifier_ = std::make_unique<DomainClassifier>(DomainClassifier::from_checkpoint(ck));
      classifier_report_ = ClassifierReport{ck.meta.value("train_accuracy", 0.0), ck.meta.value("heldout_accuracy", 0.0),
                                            ck.meta.value("heldout_documents", std::size_t{0})};
      return *classifier_;
    }
  }
  auto label_of = [&](const std::string& dom) {
    return static_cast<std::size_t>(std::find(domains.begin(), domains.end(), dom) - domains.begin());
  };
  std::vector<DocFeature> feats, held;
  std::vector<std::size_t> labels, held_labels;
  for (const auto& doc : d.train) {
    feats.push_back(featurize(doc, vocab()));
    labels.push_back(label_of(doc.domain));
  }
  for (const auto& doc : d.test)
    if (label_of(doc.domain) < domains.size()) {
      held.push_back(featurize(doc, vocab()));
      held_labels.push_back(label_of(doc.domain));
    }
  ClassifierReport report;
  log_info("training domain classifier");
  classifier_ = std::make_unique<DomainClassifier>(train_classifier(feats, labels, domains, vocab().size(),
                                                                    manifest_.classifier, held, held_labels, &report));
  classifier_report_ = report;
  Checkpoint ck = classifier_->to_checkpoint();
  ck.meta["run_fingerprint"] = fp;
  ck.meta["train_accuracy"] = report.train_accuracy;
  ck.meta["heldout_accuracy"] = report.heldout_accuracy;
  ck.meta["heldout_documents"] = report.heldout_documents;
  fs::create_directories(path("models"));
  save_checkpoint(file, ck);
  return *classifier_;
}

ClassifierReport Experiment::classifier_report() {
  classifier();
  return *classifier_report_;
}

std::vector<Tokens> Experiment::translate_examples(const std::vector<SystemSpec>& members,
                                                   const std::vector<TrainingExample>& examples, std::size_t beam) {
  if (members.empty()) throw std::invalid_argument("translate: no systems given");
  std::vector<EnsembleMember> ms;
  for (const auto& s : members) ms.push_back({&model(s), 1.0});
  TranslateOptions opts;
  opts.decode = default_decode_options(vocab(), beam ? beam : manifest_.beam);
  opts.workers = manifest_.workers;
  const auto hyps = ctxnmt::translate(ms, examples, opts);
  std::vector<Tokens> out;
  out.reserve(hyps.size());
  for (const auto& h : hyps) out.push_back(hypothesis_words(h, vocab()));
  return out;
}

std::vector<Tokens> Experiment::translate(const std::vector<SystemSpec>& members, const Corpus& corpus,
                                          std::size_t beam) {
  std::size_t context = 0;
  bool tags = false;
  for (const auto& s : members) {
    if (uses_context(s.kind)) {
      if (context && context != s.context)
        throw std::invalid_argument("ensemble members must share one context size");
      context = s.context;
    }
    tags = tags || s.kind == ModelKind::kTag;
  }
  return translate_examples(members, examples(corpus, context, tags), beam);
}

const DomainWordSet& Experiment::domain_words() {
  if (!domain_words_) {
    const DataSet& d = data();
    std::map<std::string, std::vector<Tokens>> text;
    for (const auto& doc : d.train)
      for (const auto& s : doc.sentences) text[doc.domain].push_back(s.source);
    // Held-out domains have no training text; their test source stands in.
    const auto zero = d.zero_domains();
    for (const auto& doc : d.test)
      if (std::find(zero.begin(), zero.end(), doc.domain) != zero.end())
        for (const auto& s : doc.sentences) text[doc.domain].push_back(s.source);
    domain_words_ = tfidf_domain_words(text, manifest_.domain_words, 4);
  }
  return *domain_words_;
}

const AlignmentModel& Experiment::aligner() {
  if (!aligner_) {
    std::vector<std::pair<Tokens, Tokens>> bitext;
    for (const auto& doc : data().train)
      for (const auto& s : doc.sentences) bitext.emplace_back(s.source, s.target);
    aligner_ = std::make_unique<AlignmentModel>(ibm1_align(bitext, manifest_.ibm1_iterations));
  }
  return *aligner_;
}

SystemScores Experiment::score(const std::vector<Tokens>& hyps) {
  const DataSet& d = data();
  const auto refs = corpus_targets(d.test);
  const auto srcs = corpus_sources(d.test);
  if (hyps.size() != refs.size())
    throw std::invalid_argument("score: " + std::to_string(hyps.size()) + " hypotheses for " +
                                std::to_string(refs.size()) + " test sentences");
  SystemScores out;
  out.bleu["joint"] = corpus_bleu(hyps, refs);
  if (d.has_oracle) out.accuracy["joint"] = oracle_disambiguation_score(d.test, hyps, d.oracle).accuracy();
  const auto& words = domain_words();
  for (const auto& [domain, lines] : lines_by_domain(d.test)) {
    const auto h = pick(hyps, lines), r = pick(refs, lines), s = pick(srcs, lines);
    out.bleu[domain] = corpus_bleu(h, r);
    if (d.has_oracle)
      out.accuracy[domain] =
          oracle_disambiguation_score(select_domains(d.test, {domain}), h, d.oracle).accuracy();
    std::vector<std::string> list;
    if (auto it = words.find(domain); it != words.end())
      for (const auto& w : it->second) list.push_back(w.word);
    out.f1[domain] = domain_word_f1(list, s, r, h, aligner());
  }
  return out;
}

SystemScores Experiment::evaluate(const std::vector<SystemSpec>& members, EvalReport* report,
                                  const std::string& label) {
  const SystemScores sc = score(translate(members, data().test));
  if (report) {
    std::string name = label;
    if (name.empty())
      for (const auto& m : members) name += (name.empty() ? "" : "+") + m.name();
    for (const auto& [dom, v] : sc.bleu) report->add("bleu", dom, name, v);
    for (const auto& [dom, v] : sc.accuracy) report->add("accuracy", dom, name, v);
    for (const auto& [dom, v] : sc.f1) report->add("f1", dom, name, v.f1);
  }
  return sc;
}

BootstrapResult Experiment::bootstrap(const std::vector<Tokens>& system, const std::vector<Tokens>& baseline,
                                     const std::string& domain) {
  const auto refs = corpus_targets(data().test);
  if (domain == "joint")
    return paired_bootstrap(system, baseline, refs, manifest_.bootstrap_resamples, manifest_.bootstrap_seed);
  const auto lines = lines_by_domain(data().test);
  auto it = lines.find(domain);
  if (it == lines.end()) throw std::invalid_argument("no test domain '" + domain + "'");
  return paired_bootstrap(pick(system, it->second), pick(baseline, it->second), pick(refs, it->second),
                          manifest_.bootstrap_resamples, manifest_.bootstrap_seed);
}

AblationGrid Experiment::ablation(const SystemSpec& system) {
  const DataSet& d = data();
  const Model& m = model(system);
  const auto raw = examples(d.test, system.context, system.kind == ModelKind::kTag);
  const auto lines = lines_by_domain(d.test);
  std::map<std::string, std::vector<std::vector<TokenId>>> contexts;
  std::map<std::string, std::vector<TrainingExample>> by_domain;
  for (const auto& [dom, idx] : lines) {
    by_domain[dom] = pick(raw, idx);
    for (const auto& ex : by_domain[dom]) contexts[dom].push_back(ex.context);
  }
  const auto reps = representative_contexts(contexts, m.source_embedding());
  const auto refs = corpus_targets(d.test);
  auto metric = [&](const std::string& dom, const std::vector<TrainingExample>& exs) {
    const auto hyps = translate_examples({system}, exs);
    if (d.has_oracle) return oracle_disambiguation_score(select_domains(d.test, {dom}), hyps, d.oracle).accuracy();
    return corpus_bleu(hyps, pick(refs, lines.at(dom)));
  };
  return ablation_matrix(d.test_domains(), by_domain, reps, metric);
}

std::map<std::string, double> Experiment::timing(const std::vector<SystemSpec>& systems, std::size_t repeats,
                                                 std::size_t max_sentences) {
  // The test set is cut into the same length-sorted chunks translate() uses.
  // Every round times each chunk of each system once, rotating the system
  // order and decoding with a fresh copy of the model so that no system is
  // stuck with one unlucky memory placement. A system's cost is the sum over
  // chunks of its fastest time, which filters out interruptions far better
  // than timing whole passes.
  TranslateOptions opts;
  opts.decode = default_decode_options(vocab(), manifest_.beam);
  opts.workers = manifest_.workers;
  const std::size_t chunk = opts.batch_sentences;
  std::map<std::string, std::vector<std::vector<TrainingExample>>> chunks;
  std::map<std::string, std::size_t> sentences;
  for (const auto& s : systems) {
    model(s);  // train or load outside the timed region
    auto ex = examples(data().test, s.context, s.kind == ModelKind::kTag);
    if (max_sentences && ex.size() > max_sentences) ex.resize(max_sentences);
    std::stable_sort(ex.begin(), ex.end(), [](const TrainingExample& a, const TrainingExample& b) {
      return a.source.size() < b.source.size();
    });
    auto& list = chunks[s.name()];
    for (std::size_t i = 0; i < ex.size(); i += chunk)
      list.emplace_back(ex.begin() + static_cast<std::ptrdiff_t>(i),
                        ex.begin() + static_cast<std::ptrdiff_t>(std::min(ex.size(), i + chunk)));
    sentences[s.name()] = ex.size();
  }
  std::map<std::string, std::vector<double>> fastest;
  for (const auto& s : systems) fastest[s.name()].assign(chunks[s.name()].size(), INFINITY);
  const std::size_t n = systems.size();
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const SystemSpec& s = systems[(r + k) % n];
      const Model copy = model(s).clone();
      const auto& list = chunks[s.name()];
      auto& best = fastest[s.name()];
      for (std::size_t c = 0; c < list.size(); ++c) {
        const auto t0 = std::chrono::steady_clock::now();
        ctxnmt::translate(copy, list[c], opts);
        best[c] = std::min(best[c], std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
    }
  std::map<std::string, double> per_sentence;
  for (const auto& s : systems) {
    double total = 0;
    for (double t : fastest[s.name()]) total += t;
    per_sentence[s.name()] = total / static_cast<double>(std::max<std::size_t>(sentences[s.name()], 1));
  }
  return per_sentence;
}

void Experiment::write_manifest(const nlohmann::json& run) const {
  fs::create_directories(out_dir_);
  std::ofstream(path("manifest.json")) << nlohmann::json(manifest_).dump(2) << '\n';
  std::ofstream(path("runs.jsonl"), std::ios::app) << run.dump() << '\n';
}

}  // namespace ctxnmt
