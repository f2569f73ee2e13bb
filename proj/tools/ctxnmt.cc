// Command-line driver: corpus generation, training, translation, evaluation
// and the analysis runs (ablation, ensembles, parameter counts, timing).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ctxnmt/experiment.h"
#include "ctxnmt/log.h"
#include "ctxnmt/model.h"

using namespace ctxnmt;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config = "desk";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> models;
  std::optional<std::size_t> ctx;
  std::optional<std::size_t> beam;
  std::string out;
  std::optional<std::size_t> workers;
  bool timing = false;

  // command specific
  std::string input;
  bool fine_tuned = false;
  std::size_t vocab_size = 32000;
  std::size_t repeats = 3;
  std::size_t max_sentences = 0;
};

Manifest load_manifest(const Options& o) {
  Manifest m = Manifest::load(o.config);
  if (o.beam) m.beam = *o.beam;
  if (o.workers) m.workers = *o.workers;
  if (o.ctx) m.context = *o.ctx;
  if (o.seed) m.seeds = {*o.seed};
  m.validate();
  return m;
}

std::string out_dir(const Options& o, const Manifest& m) {
  return o.out.empty() ? (fs::path(default_output_root()) / m.name).string() : o.out;
}

std::vector<ModelKind> kinds(const Options& o, std::vector<std::string> fallback) {
  std::vector<ModelKind> out;
  for (const auto& n : o.models.empty() ? fallback : o.models) out.push_back(parse_kind(n));
  return out;
}

void write_lines(const std::string& file, const std::vector<Tokens>& lines) {
  fs::create_directories(fs::path(file).parent_path());
  std::ofstream out(file);
  for (const auto& l : lines) out << join_tokens(l) << '\n';
  if (!out) throw std::runtime_error("cannot write " + file);
}

void write_text(const std::string& file, const std::string& text) {
  std::ofstream out(file);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

int cmd_gen_corpus(Experiment& ex, const Options& o) {
  SynthConfig sc = ex.manifest().synth;
  if (o.seed) sc.seed = *o.seed;
  const std::string dir = ex.manifest().data_dir.empty() ? ex.path("data") : ex.manifest().data_dir;
  const SynthCorpus corpus = generate(sc);
  write_synth(dir, corpus);
  std::cout << "wrote " << dir << ": " << sentence_count(corpus.train) << " train, " << sentence_count(corpus.dev)
            << " dev, " << sentence_count(corpus.test) << " test, " << sentence_count(corpus.tune)
            << " tune sentences; " << corpus.oracle.size() << " polysemous occurrences\n";
  return 0;
}

int cmd_prepare(Experiment& ex, const Options&) {
  const DataSet& d = ex.data();
  const Vocabulary& v = ex.vocab();
  nlohmann::json stats;
  stats["vocab_size"] = v.size();
  stats["train_domains"] = d.train_domains();
  stats["zero_domains"] = d.zero_domains();
  auto split = [&](const char* name, const Corpus& c) {
    nlohmann::json s;
    for (const auto& dom : corpus_domains(c)) s[dom] = sentence_count(select_domains(c, {dom}));
    stats["sentences"][name] = s;
  };
  split("train", d.train);
  split("dev", d.dev);
  split("test", d.test);
  split("tune", d.tune);
  // Unknown words in the test set after vocabulary mapping.
  std::size_t unk = 0, tokens = 0;
  for (const auto& e : ex.examples(d.test, 0, false))
    for (TokenId t : e.source) {
      ++tokens;
      unk += t == Vocabulary::kUnk;
    }
  stats["test_unknown_rate"] = tokens ? static_cast<double>(unk) / static_cast<double>(tokens) : 0.0;
  write_text(ex.path("prepare.json"), stats.dump(2) + "\n");
  std::cout << stats.dump(2) << '\n';
  return 0;
}

int cmd_train(Experiment& ex, const Options& o) {
  for (ModelKind k : kinds(o, {"domemb_avg"}))
    for (auto seed : ex.manifest().seeds) {
      const SystemSpec s = SystemSpec::make(k, ex.manifest().context, seed, o.fine_tuned);
      const Checkpoint& ck = ex.checkpoint(s);
      std::cout << s.name() << "\tdev_ppl " << fmt(ck.dev_perplexity) << "\tparameters "
                << count_parameters(ex.model_config(k, s.context)) << "\t" << ex.path("models/" + s.name() + ".ckpt")
                << '\n';
    }
  return 0;
}

int cmd_translate(Experiment& ex, const Options& o) {
  const Corpus input = o.input.empty() ? ex.data().test : load_corpus(o.input);
  const std::string stem = o.input.empty() ? "test" : fs::path(o.input).stem().string();
  for (ModelKind k : kinds(o, {"domemb_avg"}))
    for (auto seed : ex.manifest().seeds) {
      const SystemSpec s = SystemSpec::make(k, ex.manifest().context, seed, o.fine_tuned);
      const auto t0 = std::chrono::steady_clock::now();
      const auto hyps = ex.translate({s}, input);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const std::string file = ex.path("hyps/" + s.name() + "/" + stem + ".txt");
      write_lines(file, hyps);
      std::cout << s.name() << "\t" << hyps.size() << " sentences\t" << file;
      if (o.timing) std::cout << "\t" << fmt(secs / static_cast<double>(std::max<std::size_t>(hyps.size(), 1)), 6) << " s/sentence";
      std::cout << '\n';
    }
  return 0;
}

int cmd_evaluate(Experiment& ex, const Options& o) {
  const auto ks = kinds(o, {"sent", "domemb_avg"});
  EvalReport report;
  for (auto seed : ex.manifest().seeds) {
    std::vector<Tokens> baseline;
    std::string baseline_name;
    for (ModelKind k : ks) {
      const SystemSpec s = SystemSpec::make(k, ex.manifest().context, seed, o.fine_tuned);
      const auto hyps = ex.translate({s}, ex.data().test);
      write_lines(ex.path("hyps/" + s.name() + "/test.txt"), hyps);
      const SystemScores sc = ex.score(hyps);
      for (const auto& [dom, v] : sc.bleu) report.add("bleu", dom, s.name(), v);
      for (const auto& [dom, v] : sc.accuracy) report.add("accuracy", dom, s.name(), v);
      for (const auto& [dom, v] : sc.f1) report.add("f1", dom, s.name(), v.f1);
      if (baseline.empty()) {
        baseline = hyps;
        baseline_name = s.name();
        continue;
      }
      for (const auto& [dom, v] : sc.bleu)
        report.add("p_vs_" + baseline_name, dom, s.name(), ex.bootstrap(hyps, baseline, dom).p_value);
    }
  }
  write_text(ex.path("report.tsv"), report.to_tsv());
  write_text(ex.path("summary.json"), report.summary().dump(2) + "\n");
  std::cout << report.to_tsv();
  return 0;
}

int cmd_ablate(Experiment& ex, const Options& o) {
  for (ModelKind k : kinds(o, {"domemb_avg"}))
    for (auto seed : ex.manifest().seeds) {
      const SystemSpec s = SystemSpec::make(k, ex.manifest().context, seed);
      const AblationGrid g = ex.ablation(s);
      const std::string file = ex.path("ablation-" + s.name() + ".tsv");
      write_text(file, g.to_tsv());
      std::cout << "# " << s.name() << "\n" << g.to_tsv();
    }
  return 0;
}

int cmd_classify(Experiment& ex, const Options&) {
  const DataSet& d = ex.data();
  const auto& clf = ex.classifier();
  const auto report = ex.classifier_report();
  const auto predicted = predict_domains(d.test, clf, ex.vocab());
  std::ostringstream os;
  os << "doc_id\tgold\tpredicted\n";
  std::size_t zero_ok = 0, zero = 0;
  const auto seen = d.train_domains();
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    os << d.test[i].id << '\t' << d.test[i].domain << '\t' << predicted[i] << '\n';
    if (std::find(seen.begin(), seen.end(), d.test[i].domain) == seen.end()) {
      ++zero;
      zero_ok += std::find(seen.begin(), seen.end(), predicted[i]) != seen.end();
    }
  }
  write_text(ex.path("classify.tsv"), os.str());
  std::cout << "train accuracy " << fmt(report.train_accuracy) << "\nheld-out accuracy "
            << fmt(report.heldout_accuracy) << " over " << report.heldout_documents << " documents\n"
            << "held-out-domain documents tagged with a training domain: " << zero_ok << "/" << zero << '\n'
            << "predictions: " << ex.path("classify.tsv") << '\n';
  return 0;
}

int cmd_ensemble(Experiment& ex, const Options& o) {
  EvalReport report;
  for (ModelKind k : kinds(o, {"sent", "domemb_avg"}))
    for (auto seed : ex.manifest().seeds) {
      const SystemSpec base = SystemSpec::make(k, ex.manifest().context, seed);
      SystemSpec tuned = base;
      tuned.fine_tuned = true;
      ex.evaluate({base}, &report, base.name());
      ex.evaluate({tuned}, &report, tuned.name());
      ex.evaluate({base, tuned}, &report, base.name() + "+ft");
    }
  write_text(ex.path("ensemble.tsv"), report.to_tsv());
  write_text(ex.path("ensemble.json"), report.summary().dump(2) + "\n");
  std::cout << report.to_tsv();
  return 0;
}

int cmd_params(const Options& o) {
  std::ostringstream os;
  if (o.config.rfind("paper", 0) == 0) {
    const ModelConfig base = ModelConfig::paper(ModelKind::kSent, o.vocab_size);
    os << "# large configuration, joint vocabulary " << o.vocab_size << "\nkind\tparameters\tdelta\n";
    for (const auto& r : parameter_table(base)) os << r.kind << '\t' << r.parameters << '\t' << r.delta << '\n';
    os << "\ncheck\tvalue\ttarget\ttolerance\tresult\n";
    bool all = true;
    for (const auto& c : parameter_checks(o.vocab_size)) {
      os << c.what << '\t' << static_cast<long long>(c.value) << '\t' << static_cast<long long>(c.target) << '\t'
         << c.tolerance << '\t' << (c.pass ? "ok" : "FAIL") << '\n';
      all = all && c.pass;
    }
    std::cout << os.str();
    if (!o.out.empty()) {
      fs::create_directories(o.out);
      write_text((fs::path(o.out) / "params.tsv").string(), os.str());
    }
    return all ? 0 : 3;
  }
  const Manifest m = load_manifest(o);
  Experiment ex(m, out_dir(o, m));
  ModelConfig base = ex.model_config(ModelKind::kSent, 0);
  base.context_size = m.context;
  os << "# " << m.name << " configuration, vocabulary " << base.vocab_size << "\nkind\tparameters\tdelta\n";
  for (const auto& r : parameter_table(base)) os << r.kind << '\t' << r.parameters << '\t' << r.delta << '\n';
  write_text(ex.path("params.tsv"), os.str());
  std::cout << os.str();
  return 0;
}

int cmd_timing(Experiment& ex, const Options& o) {
  std::vector<SystemSpec> systems;
  for (ModelKind k : kinds(o, {"sent", "domemb_avg", "ctxpool_avg"}))
    systems.push_back(SystemSpec::make(k, ex.manifest().context, ex.manifest().seeds.front()));
  const auto t = ex.timing(systems, o.repeats, o.max_sentences);
  std::ostringstream os;
  os << "system\tseconds_per_sentence\n";
  for (const auto& s : systems) os << s.name() << '\t' << fmt(t.at(s.name()), 6) << '\n';
  write_text(ex.path("timing.tsv"), os.str());
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Document-level context models for zero-resource domain adaptation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "manifest JSON file or preset name (desk, smoke; paper for params)");
    c->add_option("--seed", o.seed, "run a single seed (corpus seed for gen-corpus)");
    c->add_option("--model", o.models, "model kind, repeatable")
        ->check(CLI::IsMember({"sent", "tag", "domemb_max", "domemb_avg", "ctxpool_max", "ctxpool_avg", "ctxbase",
                               "concbase"}));
    c->add_option("--ctx", o.ctx, "context size in sentences");
    c->add_option("--beam", o.beam, "beam size");
    c->add_option("--out", o.out, std::string("output directory (default $") + kOutputRootEnv + "/<manifest name>)");
    c->add_option("--workers", o.workers, "decoding threads");
    c->add_flag("--timing", o.timing, "report wall-clock time");
  };

  std::map<std::string, CLI::App*> subs;
  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* c = app.add_subcommand(name, help);
    common(c);
    subs[name] = c;
    return c;
  };
  add("gen-corpus", "generate the synthetic multi-domain corpus");
  add("prepare", "build the vocabulary and report corpus statistics");
  add("train", "train (or load) models")->add_flag("--fine-tune", o.fine_tuned, "continue training on the tuning split");
  auto* tr = add("translate", "translate the test set or a corpus file");
  tr->add_option("--input", o.input, "corpus file to translate instead of the test set");
  tr->add_flag("--fine-tune", o.fine_tuned, "use the fine-tuned models");
  add("evaluate", "BLEU, oracle accuracy, domain-word F1 and bootstrap p-values")
      ->add_flag("--fine-tune", o.fine_tuned, "evaluate the fine-tuned models");
  add("ablate", "representative-context ablation grid");
  add("classify", "train the document domain classifier and tag the test set");
  add("ensemble", "fine-tune on the tuning split and ensemble with the original model");
  add("params", "parameter counts")->add_option("--vocab", o.vocab_size, "joint vocabulary size for --config paper");
  auto* tm = add("timing", "seconds per translated sentence");
  tm->add_option("--repeats", o.repeats, "interleaved rounds; the minimum is reported");
  tm->add_option("--max-sentences", o.max_sentences, "time only the first n test sentences");

  CLI11_PARSE(app, argc, argv);

  const auto t0 = std::chrono::steady_clock::now();
  int rc = 0;
  try {
    std::string name;
    for (const auto& [n, c] : subs)
      if (c->parsed()) name = n;
    if (name == "params") {
      rc = cmd_params(o);
    } else {
      const Manifest m = load_manifest(o);
      Experiment ex(m, out_dir(o, m));
      nlohmann::json run{{"command", name}, {"seeds", m.seeds}, {"models", o.models}};
      std::vector<std::string> args(argv, argv + argc);
      run["argv"] = args;
      ex.write_manifest(run);
      if (name == "gen-corpus") rc = cmd_gen_corpus(ex, o);
      else if (name == "prepare") rc = cmd_prepare(ex, o);
      else if (name == "train") rc = cmd_train(ex, o);
      else if (name == "translate") rc = cmd_translate(ex, o);
      else if (name == "evaluate") rc = cmd_evaluate(ex, o);
      else if (name == "ablate") rc = cmd_ablate(ex, o);
      else if (name == "classify") rc = cmd_classify(ex, o);
      else if (name == "ensemble") rc = cmd_ensemble(ex, o);
      else if (name == "timing") rc = cmd_timing(ex, o);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  if (o.timing)
    std::cerr << "elapsed " << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 2)
              << " s\n";
  return rc;
}
