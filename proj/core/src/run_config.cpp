#include "ade/run_config.hpp"

#include "ade/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ade {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d{
      {"run.seed", "0"},
      {"run.output_dir", ""},
      {"data.manifest", ""},
      {"data.tokens", ""},
      {"synth.colors", "red,green,blue,yellow,purple,orange"},
      {"synth.shapes", "circle,square,triangle,diamond,cross"},
      {"synth.images_per_pair", "20"},
      {"synth.eval_images_per_pair", "10"},
      {"synth.unseen_fraction", "0.2"},
      {"synth.image_size", "32"},
      {"synth.seed", ""},
      {"backbone.mode", "toy"},
      {"backbone.weights", ""},
      {"backbone.seed", ""},
      {"backbone.image_size", "32"},
      {"backbone.patch_size", "8"},
      {"backbone.embed_dim", "64"},
      {"backbone.depth", "2"},
      {"backbone.num_heads", "4"},
      {"backbone.mlp_dim", "128"},
      {"backbone.mean", "0.485,0.456,0.406"},
      {"backbone.std", "0.229,0.224,0.225"},
      {"model.attention", "cross"},
      {"model.num_heads", "4"},
      {"model.hidden_dim", "64"},
      {"model.word_dim", "64"},
      {"model.dropout", "0"},
      {"model.reg_weight", "1"},
      {"model.temperature", "0.05"},
      {"model.solver", "exact"},
      {"model.sinkhorn_epsilon", "0.05"},
      {"model.sinkhorn_iterations", "200"},
      {"model.signal", "weights"},
      {"model.word_vectors", ""},
      {"model.train_prototypes", "true"},
      {"train.learning_rate", "1e-4"},
      {"train.batch_size", "32"},
      {"train.epochs", "30"},
      {"train.seed", ""},
      {"train.beta", "1.0"},
      {"train.checkpoint_every", "0"},
      {"train.candidates", "closed"},
      {"train.adam_beta1", "0.9"},
      {"train.adam_beta2", "0.999"},
      {"train.adam_epsilon", "1e-8"},
      {"eval.world", "closed"},
      {"eval.beta", "auto"},
  };
  return d;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw UsageError("config " + key + ": '" + text + "' is not a valid number");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  // from_chars for double is unavailable on some standard libraries.
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw UsageError("config " + key + ": '" + text + "' is not a valid number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw UsageError("config " + key + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::array<double, 3> parse_triple(const std::string& key, const std::string& text) {
  const auto parts = split_list(text);
  if (parts.size() != 3) throw UsageError("config " + key + ": expected three comma-separated values");
  return {parse_double(key, parts[0]), parse_double(key, parts[1]), parse_double(key, parts[2])};
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : defaults()) out.push_back(k);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UsageError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError("config file " + path.string() + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw UsageError("config file " + path.string() + ": key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : body) set(section + "." + key, value.data());
  }
}

std::uint64_t RunConfig::seed(const std::string& section) const {
  const std::string key = section + ".seed";
  const std::string& own = values_.contains(key) ? get(key) : std::string();
  return parse_number<std::uint64_t>(own.empty() ? "run.seed" : key, own.empty() ? get("run.seed") : own);
}

BackboneConfig RunConfig::backbone() const {
  BackboneConfig b;
  const auto& mode = get("backbone.mode");
  if (mode == "toy") {
    b.mode = BackboneMode::toy;
  } else if (mode == "external") {
    b.mode = BackboneMode::external;
  } else {
    throw UsageError("backbone.mode must be toy or external");
  }
  b.weights = get("backbone.weights");
  if (b.mode == BackboneMode::external && b.weights.empty()) {
    throw UsageError("backbone.weights is required in external mode");
  }
  b.seed = seed("backbone");
  b.image_size = parse_number<int>("backbone.image_size", get("backbone.image_size"));
  b.patch_size = parse_number<int>("backbone.patch_size", get("backbone.patch_size"));
  b.embed_dim = parse_number<int>("backbone.embed_dim", get("backbone.embed_dim"));
  b.depth = parse_number<int>("backbone.depth", get("backbone.depth"));
  b.num_heads = parse_number<int>("backbone.num_heads", get("backbone.num_heads"));
  b.mlp_dim = parse_number<int>("backbone.mlp_dim", get("backbone.mlp_dim"));
  b.mean = parse_triple("backbone.mean", get("backbone.mean"));
  b.std = parse_triple("backbone.std", get("backbone.std"));
  b.validate();
  return b;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.token_dim = parse_number<int>("backbone.embed_dim", get("backbone.embed_dim"));
  m.num_heads = parse_number<int>("model.num_heads", get("model.num_heads"));
  m.hidden_dim = parse_number<int>("model.hidden_dim", get("model.hidden_dim"));
  m.word_dim = parse_number<int>("model.word_dim", get("model.word_dim"));
  m.dropout = parse_double("model.dropout", get("model.dropout"));
  m.mode = parse_attention_mode(get("model.attention"));
  m.reg_weight = parse_double("model.reg_weight", get("model.reg_weight"));
  m.probe.temperature = parse_double("model.temperature", get("model.temperature"));
  const auto& solver = get("model.solver");
  if (solver == "exact") {
    m.emd.solver = TransportSolver::exact;
  } else if (solver == "sinkhorn") {
    m.emd.solver = TransportSolver::sinkhorn;
  } else {
    throw UsageError("model.solver must be exact or sinkhorn");
  }
  m.emd.sinkhorn.epsilon = parse_double("model.sinkhorn_epsilon", get("model.sinkhorn_epsilon"));
  m.emd.sinkhorn.iterations = parse_number<int>("model.sinkhorn_iterations", get("model.sinkhorn_iterations"));
  const auto& signal = get("model.signal");
  if (signal == "weights") {
    m.emd.signal = AttentionSignal::weights;
  } else if (signal == "logits") {
    m.emd.signal = AttentionSignal::logits;
  } else {
    throw UsageError("model.signal must be weights or logits");
  }
  m.word_vectors = get("model.word_vectors");
  m.train_prototypes = parse_bool("model.train_prototypes", get("model.train_prototypes"));
  m.validate();
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.learning_rate = parse_double("train.learning_rate", get("train.learning_rate"));
  t.batch_size = parse_number<int>("train.batch_size", get("train.batch_size"));
  t.epochs = parse_number<int>("train.epochs", get("train.epochs"));
  t.seed = seed("train");
  t.beta = parse_double("train.beta", get("train.beta"));
  t.checkpoint_every = parse_number<int>("train.checkpoint_every", get("train.checkpoint_every"));
  t.candidates = parse_train_candidates(get("train.candidates"));
  t.adam_beta1 = parse_double("train.adam_beta1", get("train.adam_beta1"));
  t.adam_beta2 = parse_double("train.adam_beta2", get("train.adam_beta2"));
  t.adam_epsilon = parse_double("train.adam_epsilon", get("train.adam_epsilon"));
  t.validate();
  return t;
}

SyntheticSpec RunConfig::synthetic() const {
  SyntheticSpec s;
  s.colors = split_list(get("synth.colors"));
  s.shapes = split_list(get("synth.shapes"));
  s.images_per_pair = parse_number<int>("synth.images_per_pair", get("synth.images_per_pair"));
  s.eval_images_per_pair = parse_number<int>("synth.eval_images_per_pair", get("synth.eval_images_per_pair"));
  s.unseen_fraction = parse_double("synth.unseen_fraction", get("synth.unseen_fraction"));
  s.image_size = parse_number<int>("synth.image_size", get("synth.image_size"));
  s.seed = seed("synth");
  return s;
}

World RunConfig::world() const { return parse_world(get("eval.world")); }

std::filesystem::path RunConfig::manifest() const {
  const auto& m = get("data.manifest");
  if (m.empty()) throw UsageError("no manifest given (--manifest or data.manifest)");
  return m;
}

std::filesystem::path RunConfig::token_store() const {
  const auto& t = get("data.tokens");
  if (!t.empty()) return t;
  auto m = manifest();
  return m.replace_extension(".tokens");
}

std::filesystem::path RunConfig::output_dir(const std::string& default_name) const {
  const auto& o = get("run.output_dir");
  if (!o.empty()) return o;
  if (const char* root = std::getenv("ADE_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / default_name;
  }
  return std::filesystem::path("runs") / default_name;
}

std::string RunConfig::resolved_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, def] : defaults()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    std::string value = get(key);
    if (key.ends_with(".seed") && key != "run.seed" && value.empty()) value = get("run.seed");
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

void RunConfig::write_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "resolved_config.ini");
  if (!out) throw DataError("cannot write resolved config in " + dir.string());
  out << resolved_ini();
}

}  // namespace ade
