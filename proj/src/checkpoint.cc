#include "ctxnmt/checkpoint.h"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace ctxnmt {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'N', 'M', 'T', '\x01', '\n'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

Checkpoint Checkpoint::capture(const ParameterSet& params) {
  Checkpoint c;
  for (const auto& [name, t] : params.items()) {
    c.arrays.emplace_back(name, std::vector<Real>(t.values().begin(), t.values().end()));
    c.shapes.push_back(t.shape());
  }
  return c;
}

const std::vector<Real>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, v] : arrays)
    if (n == name) return &v;
  return nullptr;
}

void Checkpoint::restore(ParameterSet& params) const {
  if (arrays.size() != params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(arrays.size()) + " arrays, model has " +
                          std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const std::string& name = arrays[i].first;
    if (!params.contains(name)) throw CheckpointError("checkpoint parameter " + name + " not in model");
    Tensor& t = params.get(name);
    if (t.shape() != shapes[i])
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " + shape_string(shapes[i]) +
                            ", model " + shape_string(t.shape()));
  }
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    Tensor& t = params.get(arrays[i].first);
    std::copy(arrays[i].second.begin(), arrays[i].second.end(), t.mutable_values().begin());
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::json header{{"kind", c.kind},
                        {"config", c.config},
                        {"fingerprint", c.fingerprint},
                        {"step", c.step},
                        {"dev_perplexity", c.dev_perplexity},
                        {"meta", c.meta}};
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < c.arrays.size(); ++i)
    params.push_back({{"name", c.arrays[i].first}, {"shape", c.shapes[i]}});
  header["params"] = params;
  const std::string text = header.dump();

  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, values] : c.arrays)
      for (Real v : values) {
        const double x = static_cast<double>(v);
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u64(out, bits);
      }
    if (!out) throw CheckpointError("error writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(path + " is not a checkpoint file");
  const std::uint64_t len = read_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path + ": truncated header");
  nlohmann::json header = nlohmann::json::parse(text);
  Checkpoint c;
  c.kind = header.value("kind", "model");
  c.config = header.at("config");
  c.fingerprint = header.value("fingerprint", "");
  c.step = header.value("step", std::size_t{0});
  c.dev_perplexity = header.value("dev_perplexity", 0.0);
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& p : header.at("params")) {
    Shape shape = p.at("shape").get<Shape>();
    std::vector<Real> values(shape_size(shape));
    for (auto& v : values) {
      std::uint64_t bits = read_u64(in);
      double x;
      std::memcpy(&x, &bits, 8);
      v = static_cast<Real>(x);
    }
    if (!in) throw CheckpointError(path + ": truncated data for " + p.at("name").get<std::string>());
    c.arrays.emplace_back(p.at("name").get<std::string>(), std::move(values));
    c.shapes.push_back(std::move(shape));
  }
  return c;
}

}  // namespace ctxnmt
