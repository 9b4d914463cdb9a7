#include "convens/io/serialize.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace convens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'V', 'N', 'S'};
constexpr std::uint64_t kMaxString = 1ULL << 30;

class Writer {
 public:
  explicit Writer(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot write " + path.string());
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw FormatError("write failed for " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!fs::exists(path)) throw FormatError("missing artifact " + path.string());
    if (!in_) throw FormatError("cannot read " + path.string());
  }
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw FormatError("truncated artifact " + path_.string());
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("truncated artifact " + path_.string());
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > kMaxString) throw FormatError("corrupt string length in " + path_.string());
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::ifstream in_;
};

ArtifactHeader read_header(Reader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not an artifact file: " + r.path().string());
  ArtifactHeader h;
  h.version = r.pod<std::uint32_t>();
  h.config_hash = r.pod<std::uint64_t>();
  h.kind = r.str();
  return h;
}

struct Payload {
  json meta;
  std::vector<Tensor<float>> tensors;
};

void write_artifact(const fs::path& path, const std::string& kind, std::uint64_t hash, const Payload& p) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  Writer w(path);
  w.bytes(kMagic, 4);
  w.pod(kArtifactVersion);
  w.pod(hash);
  w.str(kind);
  w.str(p.meta.dump());
  w.pod<std::uint64_t>(p.tensors.size());
  for (const auto& t : p.tensors) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.pod<std::int64_t>(d);
    w.bytes(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  w.finish();
}

Payload read_artifact(const fs::path& path, const std::string& kind, std::uint64_t expected_hash) {
  Reader r(path);
  const auto h = read_header(r);
  if (h.version != kArtifactVersion) {
    throw FormatError(path.string() + ": format version " + std::to_string(h.version) + ", expected " +
                      std::to_string(kArtifactVersion));
  }
  if (h.kind != kind) throw FormatError(path.string() + ": artifact kind is '" + h.kind + "', expected '" + kind + "'");
  if (h.config_hash != expected_hash) {
    throw FormatError(path.string() + ": config hash mismatch (file " + std::to_string(h.config_hash) +
                      ", expected " + std::to_string(expected_hash) + "); rerun the stage or pass --force");
  }
  Payload p;
  try {
    p.meta = json::parse(r.str());
  } catch (const json::parse_error&) {
    throw FormatError(path.string() + ": corrupt metadata");
  }
  const auto count = r.pod<std::uint64_t>();
  if (count > 4096) throw FormatError(path.string() + ": corrupt tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw FormatError(path.string() + ": corrupt tensor rank");
    Shape shape;
    Index size = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto d = r.pod<std::int64_t>();
      if (d < 0 || d > (1LL << 32)) throw FormatError(path.string() + ": corrupt tensor extent");
      shape.push_back(d);
      size *= d;
    }
    if (size > (1LL << 32)) throw FormatError(path.string() + ": corrupt tensor size");
    Tensor<float> t(shape);
    r.bytes(t.data(), static_cast<std::size_t>(size) * sizeof(float));
    p.tensors.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  return p;
}

json score_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double score_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

const char* task_name(Task t) { return t == Task::Classification ? "classification" : "regression"; }
Task task_from(const std::string& s) {
  if (s == "classification") return Task::Classification;
  if (s == "regression") return Task::Regression;
  throw FormatError("unknown task '" + s + "'");
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

std::uint64_t config_hash(const json& j) { return hash_tag(j.dump()); }

json to_json(const LayerSpec& s) {
  json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case LayerKind::Conv2D:
      j["filters"] = s.units;
      j["kernel"] = {s.kernel_h, s.kernel_w};
      j["stride"] = {s.stride_h, s.stride_w};
      break;
    case LayerKind::MaxPool2D:
      j["kernel"] = {s.kernel_h, s.kernel_w};
      break;
    case LayerKind::Dense:
      j["units"] = s.units;
      break;
    case LayerKind::Flatten:
      break;
    case LayerKind::Activation:
      j["activation"] = s.activation == ActivationKind::ReLU ? "relu" : "identity";
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const auto kind = field<std::string>(j, "kind");
  if (kind == "conv2d") {
    const auto k = field<std::vector<Index>>(j, "kernel");
    const auto s = j.contains("stride") ? field<std::vector<Index>>(j, "stride") : std::vector<Index>{1, 1};
    if (k.size() != 2 || s.size() != 2) throw FormatError("conv2d kernel/stride need two values");
    return LayerSpec::conv2d(field<Index>(j, "filters"), k[0], k[1], s[0], s[1]);
  }
  if (kind == "maxpool2d") {
    const auto k = field<std::vector<Index>>(j, "kernel");
    if (k.size() != 2) throw FormatError("maxpool2d kernel needs two values");
    return LayerSpec::maxpool2d(k[0], k[1]);
  }
  if (kind == "dense") return LayerSpec::dense(field<Index>(j, "units"));
  if (kind == "flatten") return LayerSpec::flatten();
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "identity") return LayerSpec::identity();
  if (kind == "activation") {
    const auto a = field<std::string>(j, "activation");
    if (a == "relu") return LayerSpec::relu();
    if (a == "identity") return LayerSpec::identity();
    throw FormatError("unknown activation '" + a + "'");
  }
  throw FormatError("unknown layer kind '" + kind + "'");
}

json to_json(const EdgeModelConfig& c) {
  json layers = json::array();
  for (const auto& l : c.layers) layers.push_back(to_json(l));
  return json{{"input_shape", c.input_shape}, {"layers", layers},        {"epochs", c.epochs},
              {"filters", c.filters},         {"task", task_name(c.task)}, {"outputs", c.outputs},
              {"embedding_width", c.embedding_width}, {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},   {"seed", c.seed}};
}

EdgeModelConfig edge_config_from_json(const json& j) {
  EdgeModelConfig c;
  c.input_shape = field<Shape>(j, "input_shape");
  for (const auto& l : field<json>(j, "layers")) c.layers.push_back(layer_from_json(l));
  c.epochs = field<int>(j, "epochs");
  c.filters = field<int>(j, "filters");
  c.task = task_from(field<std::string>(j, "task"));
  c.outputs = field<int>(j, "outputs");
  c.embedding_width = field<Index>(j, "embedding_width");
  c.learning_rate = field<double>(j, "learning_rate");
  c.batch_size = field<Index>(j, "batch_size");
  c.seed = field<std::uint64_t>(j, "seed");
  return c;
}

json to_json(const EnsembleConfig& c) {
  return json{{"edges", c.edges},       {"width", c.width},       {"filters", c.filters},
              {"kernel", {c.kernel_h, c.kernel_w}}, {"stride", {c.stride_h, c.stride_w}},
              {"hidden", c.hidden},     {"epochs", c.epochs},     {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate}, {"task", task_name(c.task)}, {"outputs", c.outputs},
              {"seed", c.seed}};
}

EnsembleConfig ensemble_config_from_json(const json& j) {
  EnsembleConfig c;
  c.edges = field<Index>(j, "edges");
  c.width = field<Index>(j, "width");
  c.filters = field<Index>(j, "filters");
  const auto k = field<std::vector<Index>>(j, "kernel");
  const auto s = field<std::vector<Index>>(j, "stride");
  if (k.size() != 2 || s.size() != 2) throw FormatError("ensemble kernel/stride need two values");
  c.kernel_h = k[0];
  c.kernel_w = k[1];
  c.stride_h = s[0];
  c.stride_w = s[1];
  c.hidden = field<Index>(j, "hidden");
  c.epochs = field<int>(j, "epochs");
  c.batch_size = field<Index>(j, "batch_size");
  c.learning_rate = field<double>(j, "learning_rate");
  c.task = task_from(field<std::string>(j, "task"));
  c.outputs = field<int>(j, "outputs");
  c.seed = field<std::uint64_t>(j, "seed");
  return c;
}

json to_json(const EdgeAssignment& a) {
  json edges = json::array();
  for (const auto& e : a.edges) {
    edges.push_back({{"train", e.train},
                     {"test", e.test},
                     {"train_fraction", e.train_fraction},
                     {"test_fraction", e.test_fraction},
                     {"discrepancy", e.discrepancy}});
  }
  return json{{"alpha", a.spec.alpha}, {"delta", a.spec.delta},          {"edges", a.spec.edges},
              {"seed", a.spec.seed},   {"classes", a.classes},           {"train_size", a.train_size},
              {"test_size", a.test_size}, {"assignment", edges}};
}

EdgeAssignment assignment_from_json(const json& j) {
  EdgeAssignment a;
  a.spec.alpha = field<double>(j, "alpha");
  a.spec.delta = field<double>(j, "delta");
  a.spec.edges = field<int>(j, "edges");
  a.spec.seed = field<std::uint64_t>(j, "seed");
  a.classes = field<int>(j, "classes");
  a.train_size = field<Index>(j, "train_size");
  a.test_size = field<Index>(j, "test_size");
  for (const auto& e : field<json>(j, "assignment")) {
    EdgeSplit s;
    s.train = field<std::vector<Index>>(e, "train");
    s.test = field<std::vector<Index>>(e, "test");
    s.train_fraction = field<std::vector<double>>(e, "train_fraction");
    s.test_fraction = field<std::vector<double>>(e, "test_fraction");
    s.discrepancy = field<std::vector<double>>(e, "discrepancy");
    a.edges.push_back(std::move(s));
  }
  if (static_cast<int>(a.edges.size()) != a.spec.edges) throw FormatError("assignment edge count mismatch");
  return a;
}

ArtifactHeader read_artifact_header(const fs::path& path) {
  Reader r(path);
  return read_header(r);
}

void save_edge(const fs::path& path, const EdgeArtifact& edge, std::uint64_t hash) {
  Payload p;
  p.meta = {{"config", to_json(edge.config)},         {"loss_trace", edge.loss_trace},
            {"epochs_run", edge.epochs_run},          {"train_score", score_json(edge.train_score)},
            {"test_score", score_json(edge.test_score)}, {"model_seed", edge.model.seed()}};
  p.tensors = edge.model.parameters();
  write_artifact(path, "edge", hash, p);
}

EdgeArtifact load_edge(const fs::path& path, std::uint64_t expected_hash) {
  auto p = read_artifact(path, "edge", expected_hash);
  try {
    EdgeArtifact e;
    e.config = edge_config_from_json(field<json>(p.meta, "config"));
    e.model = Model<float>::with_parameters(e.config.input_shape, e.config.layers,
                                            field<std::uint64_t>(p.meta, "model_seed"), std::move(p.tensors));
    e.loss_trace = field<std::vector<double>>(p.meta, "loss_trace");
    e.epochs_run = field<int>(p.meta, "epochs_run");
    e.train_score = score_from(p.meta.at("train_score"));
    e.test_score = score_from(p.meta.at("test_score"));
    return e;
  } catch (const FormatError& err) {
    throw FormatError(path.string() + ": " + err.what());
  } catch (const ShapeError& err) {
    throw FormatError(path.string() + ": " + err.what());
  }
}

void save_vae(const fs::path& path, const VaeModel<float>& vae, std::uint64_t hash) {
  Payload p;
  p.meta = {{"width", vae.width},
            {"latent", vae.latent},
            {"seed", vae.seed},
            {"epochs", vae.epochs},
            {"loss_trace", vae.loss_trace},
            {"encoder", {{"input_shape", vae.encoder.input_shape()}, {"seed", vae.encoder.seed()}}},
            {"decoder", {{"input_shape", vae.decoder.input_shape()}, {"seed", vae.decoder.seed()}}}};
  json enc_layers = json::array(), dec_layers = json::array();
  for (const auto& l : vae.encoder.layers()) enc_layers.push_back(to_json(l));
  for (const auto& l : vae.decoder.layers()) dec_layers.push_back(to_json(l));
  p.meta["encoder"]["layers"] = enc_layers;
  p.meta["decoder"]["layers"] = dec_layers;
  p.meta["encoder_tensors"] = vae.encoder.parameters().size();
  p.tensors = vae.encoder.parameters();
  for (const auto& t : vae.decoder.parameters()) p.tensors.push_back(t);
  write_artifact(path, "vae", hash, p);
}

VaeModel<float> load_vae(const fs::path& path, std::uint64_t expected_hash) {
  auto p = read_artifact(path, "vae", expected_hash);
  try {
    VaeModel<float> v;
    v.width = field<Index>(p.meta, "width");
    v.latent = field<Index>(p.meta, "latent");
    v.seed = field<std::uint64_t>(p.meta, "seed");
    v.epochs = field<int>(p.meta, "epochs");
    v.loss_trace = field<std::vector<double>>(p.meta, "loss_trace");
    const auto split = field<std::size_t>(p.meta, "encoder_tensors");
    if (split > p.tensors.size()) throw FormatError("corrupt tensor split");
    const auto build = [](const json& m, std::vector<Tensor<float>> params) {
      std::vector<LayerSpec> layers;
      for (const auto& l : field<json>(m, "layers")) layers.push_back(layer_from_json(l));
      return Model<float>::with_parameters(field<Shape>(m, "input_shape"), layers, field<std::uint64_t>(m, "seed"),
                                           std::move(params));
    };
    const auto mid = p.tensors.begin() + static_cast<std::ptrdiff_t>(split);
    v.encoder = build(field<json>(p.meta, "encoder"), {p.tensors.begin(), mid});
    v.decoder = build(field<json>(p.meta, "decoder"), {mid, p.tensors.end()});
    return v;
  } catch (const FormatError& err) {
    throw FormatError(path.string() + ": " + err.what());
  } catch (const ShapeError& err) {
    throw FormatError(path.string() + ": " + err.what());
  }
}

void save_ensemble(const fs::path& path, const EnsembleArtifact& ens, std::uint64_t hash) {
  Payload p;
  p.meta = {{"config", to_json(ens.config)}, {"loss_trace", ens.loss_trace}};
  p.tensors = ens.model.parameters();
  write_artifact(path, "ensemble", hash, p);
}

EnsembleArtifact load_ensemble(const fs::path& path, std::uint64_t expected_hash) {
  auto p = read_artifact(path, "ensemble", expected_hash);
  try {
    EnsembleArtifact e;
    e.config = ensemble_config_from_json(field<json>(p.meta, "config"));
    const auto fresh = make_ensemble_model<float>(e.config);
    e.model = Model<float>::with_parameters(fresh.input_shape(), fresh.layers(), fresh.seed(), std::move(p.tensors));
    e.loss_trace = field<std::vector<double>>(p.meta, "loss_trace");
    return e;
  } catch (const FormatError& err) {
    throw FormatError(path.string() + ": " + err.what());
  } catch (const ShapeError& err) {
    throw FormatError(path.string() + ": " + err.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

}  // namespace convens
