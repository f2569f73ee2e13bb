// Python bindings. Structured results cross the boundary as plain dicts and
// lists; configuration goes in as JSON-compatible dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "ctxnmt/config.h"
#include "ctxnmt/evaluation.h"
#include "ctxnmt/experiment.h"
#include "ctxnmt/model.h"
#include "ctxnmt/synth.h"

namespace py = pybind11;
using namespace ctxnmt;

namespace {

py::object to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer: return py::int_(j.get<long long>());
    case nlohmann::json::value_t::number_unsigned: return py::int_(j.get<unsigned long long>());
    case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list l;
      for (const auto& v : j) l.append(to_py(v));
      return std::move(l);
    }
    case nlohmann::json::value_t::object: {
      py::dict d;
      for (const auto& [k, v] : j.items()) d[py::str(k)] = to_py(v);
      return std::move(d);
    }
    default: throw std::invalid_argument("unsupported JSON value");
  }
}

// Goes through the json module so any JSON-compatible object is accepted.
nlohmann::json from_py(const py::handle& o) {
  const std::string text = py::module_::import("json").attr("dumps")(o).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::dict f1_dict(const F1Result& r) {
  py::dict d;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["f1"] = r.f1;
  d["matches"] = r.matches;
  d["predicted"] = r.predicted;
  d["gold"] = r.gold;
  d["degenerate"] = r.degenerate;
  return d;
}

py::dict scores_dict(const SystemScores& s) {
  py::dict f1;
  for (const auto& [k, v] : s.f1) f1[py::str(k)] = f1_dict(v);
  py::dict d;
  d["bleu"] = s.bleu;
  d["accuracy"] = s.accuracy;
  d["f1"] = f1;
  return d;
}

const Corpus& split(const DataSet& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "dev") return d.dev;
  if (name == "test") return d.test;
  if (name == "tune") return d.tune;
  if (name == "tune_dev") return d.tune_dev;
  throw std::invalid_argument("unknown split '" + name + "' (train, dev, test, tune, tune_dev)");
}

}  // namespace

PYBIND11_MODULE(_ctxnmt, m) {
  m.doc() = "Document-context NMT core: models, training, decoding and evaluation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("kinds", [] {
    std::vector<std::string> out;
    for (ModelKind k : all_kinds()) out.emplace_back(kind_name(k));
    return out;
  });

  m.def(
      "count_parameters",
      [](const std::string& kind, std::size_t vocab_size, const std::string& preset) {
        const ModelKind k = parse_kind(kind);
        if (preset == "paper") return count_parameters(ModelConfig::paper(k, vocab_size));
        if (preset == "desk") return count_parameters(ModelConfig::desk(k, vocab_size));
        throw ConfigError("unknown model preset '" + preset + "' (paper, desk)");
      },
      py::arg("kind"), py::arg("vocab_size"), py::arg("preset") = "paper");

  m.def(
      "parameter_checks",
      [](std::size_t vocab_size) {
        py::list out;
        for (const auto& c : parameter_checks(vocab_size)) {
          py::dict d;
          d["what"] = c.what;
          d["value"] = c.value;
          d["target"] = c.target;
          d["tolerance"] = c.tolerance;
          d["pass"] = c.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("vocab_size") = 32000);

  // ---- metrics ----
  m.def("corpus_bleu", &corpus_bleu, py::arg("hypotheses"), py::arg("references"), py::arg("max_n") = 4);
  m.def("sentence_bleu", &sentence_bleu, py::arg("hypothesis"), py::arg("reference"), py::arg("max_n") = 4);
  m.def(
      "paired_bootstrap",
      [](const std::vector<Tokens>& a, const std::vector<Tokens>& b, const std::vector<Tokens>& refs,
         std::size_t resamples, std::uint64_t seed) {
        const auto r = paired_bootstrap(a, b, refs, resamples, seed);
        py::dict d;
        d["bleu_a"] = r.bleu_a;
        d["bleu_b"] = r.bleu_b;
        d["p_value"] = r.p_value;
        d["resamples"] = r.resamples;
        return d;
      },
      py::arg("hyp_a"), py::arg("hyp_b"), py::arg("references"), py::arg("resamples") = 1000, py::arg("seed") = 1);
  m.def(
      "tfidf_domain_words",
      [](const std::map<std::string, std::vector<Tokens>>& text, std::size_t top_k, std::size_t min_len) {
        std::map<std::string, std::vector<std::pair<std::string, double>>> out;
        for (const auto& [dom, words] : tfidf_domain_words(text, top_k, min_len))
          for (const auto& w : words) out[dom].emplace_back(w.word, w.score);
        return out;
      },
      py::arg("text_by_domain"), py::arg("top_k") = 100, py::arg("min_len") = 4);

  py::class_<AlignmentModel>(m, "AlignmentModel")
      .def("prob", &AlignmentModel::prob, py::arg("target"), py::arg("source"))
      .def("knows", &AlignmentModel::knows)
      .def("force_align", [](const AlignmentModel& a, const Tokens& s, const Tokens& t) {
        return force_align(a, s, t).target_index;
      });
  m.def(
      "ibm1_align",
      [](const std::vector<std::pair<Tokens, Tokens>>& bitext, std::size_t iterations) {
        std::vector<double> lls;
        AlignmentModel model = ibm1_align(bitext, iterations, &lls);
        return py::make_tuple(std::move(model), lls);
      },
      py::arg("bitext"), py::arg("iterations") = 5,
      "Returns (model, log-likelihood before each iteration and after the last).");

  // ---- synthetic corpus ----
  m.def("synth_defaults", [] { return to_py(nlohmann::json(SynthConfig{})); });
  m.def(
      "generate_corpus",
      [](const std::string& dir, const py::object& config) {
        nlohmann::json j = nlohmann::json(SynthConfig{});
        if (!config.is_none()) j.merge_patch(from_py(config));
        const SynthConfig c = j.get<SynthConfig>();
        c.validate();
        const SynthCorpus corpus = generate(c);
        write_synth(dir, corpus);
        py::dict d;
        d["train"] = corpus.train.size();
        d["dev"] = corpus.dev.size();
        d["test"] = corpus.test.size();
        d["tune"] = corpus.tune.size();
        d["tune_dev"] = corpus.tune_dev.size();
        d["oracle"] = corpus.oracle.size();
        d["domains"] = corpus.all_domains();
        return d;
      },
      py::arg("out_dir"), py::arg("config") = py::none(),
      "Writes a synthetic corpus; `config` overrides the defaults key by key.");

  // ---- experiments ----
  m.def(
      "manifest",
      [](const py::object& config) {
        const Manifest mf = py::isinstance<py::str>(config) ? Manifest::load(config.cast<std::string>())
                                                            : Manifest::from_overrides(from_py(config));
        return to_py(nlohmann::json(mf));
      },
      py::arg("config") = "desk");

  py::class_<SystemSpec>(m, "System")
      .def(py::init([](const std::string& kind, std::size_t context, std::uint64_t seed, bool fine_tuned) {
             return SystemSpec::make(parse_kind(kind), context, seed, fine_tuned);
           }),
           py::arg("kind"), py::arg("context") = 10, py::arg("seed") = 1, py::arg("fine_tuned") = false)
      .def_property_readonly("kind", [](const SystemSpec& s) { return std::string(kind_name(s.kind)); })
      .def_readonly("context", &SystemSpec::context)
      .def_readonly("seed", &SystemSpec::seed)
      .def_readonly("fine_tuned", &SystemSpec::fine_tuned)
      .def_property_readonly("name", &SystemSpec::name)
      .def("__repr__", [](const SystemSpec& s) { return "System(" + s.name() + ")"; });

  py::class_<Experiment>(m, "Experiment")
      .def(py::init([](const py::object& config, const std::string& out_dir) {
             Manifest mf = py::isinstance<py::str>(config) ? Manifest::load(config.cast<std::string>())
                                                          : Manifest::from_overrides(from_py(config));
             return std::make_unique<Experiment>(std::move(mf), out_dir);
           }),
           py::arg("config"), py::arg("out_dir"))
      .def_property_readonly("out_dir", &Experiment::out_dir)
      .def_property_readonly("manifest", [](const Experiment& e) { return to_py(nlohmann::json(e.manifest())); })
      .def("domains",
           [](Experiment& e) {
             py::dict d;
             d["train"] = e.data().train_domains();
             d["test"] = e.data().test_domains();
             d["zero"] = e.data().zero_domains();
             return d;
           })
      .def("sources", [](Experiment& e, const std::string& name) { return corpus_sources(split(e.data(), name)); },
           py::arg("split") = "test")
      .def("references",
           [](Experiment& e, const std::string& name) { return corpus_targets(split(e.data(), name)); },
           py::arg("split") = "test")
      .def(
          "train",
          [](Experiment& e, const SystemSpec& s) {
            nlohmann::json meta;
            {
              py::gil_scoped_release release;
              meta = e.checkpoint(s).meta;
            }
            return to_py(meta);
          },
          py::arg("system"), "Trains (or loads the cached) model; returns its checkpoint metadata.")
      .def(
          "translate",
          [](Experiment& e, const std::vector<SystemSpec>& members, const std::string& name, std::size_t beam) {
            const Corpus& c = split(e.data(), name);
            py::gil_scoped_release release;
            return e.translate(members, c, beam);
          },
          py::arg("systems"), py::arg("split") = "test", py::arg("beam") = 0,
          "Equal-weight ensemble translation of a split; beam 0 uses the manifest's.")
      .def("score", [](Experiment& e, const std::vector<Tokens>& hyps) { return scores_dict(e.score(hyps)); },
           py::arg("hypotheses"))
      .def(
          "evaluate",
          [](Experiment& e, const std::vector<SystemSpec>& members) {
            SystemScores s;
            {
              py::gil_scoped_release release;
              s = e.evaluate(members);
            }
            return scores_dict(s);
          },
          py::arg("systems"))
      .def("bootstrap",
           [](Experiment& e, const std::vector<Tokens>& system, const std::vector<Tokens>& baseline,
              const std::string& domain) {
             const auto r = e.bootstrap(system, baseline, domain);
             py::dict d;
             d["bleu_a"] = r.bleu_a;
             d["bleu_b"] = r.bleu_b;
             d["p_value"] = r.p_value;
             return d;
           },
           py::arg("system"), py::arg("baseline"), py::arg("domain") = "joint")
      .def(
          "ablation",
          [](Experiment& e, const SystemSpec& s) {
            AblationGrid g;
            {
              py::gil_scoped_release release;
              g = e.ablation(s);
            }
            py::dict d;
            d["rows"] = g.rows;
            d["columns"] = g.columns;
            d["values"] = g.values;
            return d;
          },
          py::arg("system"))
      .def(
          "timing",
          [](Experiment& e, const std::vector<SystemSpec>& systems, std::size_t repeats, std::size_t max_sentences) {
            py::gil_scoped_release release;
            return e.timing(systems, repeats, max_sentences);
          },
          py::arg("systems"), py::arg("repeats") = 3, py::arg("max_sentences") = 0)
      .def("classifier_report", [](Experiment& e) {
        const ClassifierReport r = e.classifier_report();
        py::dict d;
        d["train_accuracy"] = r.train_accuracy;
        d["heldout_accuracy"] = r.heldout_accuracy;
        d["heldout_documents"] = r.heldout_documents;
        return d;
      });
}
