#include "dyngraph/config.hpp"

#include <concepts>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dyngraph {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
  }

  template <std::unsigned_integral T>
  void get(const char* key, T& out) {
    get_unsigned(key, out);
  }

  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw type_error(key, "a number");
      out = v->get<double>();
    }
  }

  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw type_error(key, "true or false");
      out = v->get<bool>();
    }
  }

  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw type_error(key, "a string");
      out = v->get<std::string>();
    }
  }

  template <typename Parse, typename T>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string name;
    get(key, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(child_path(key) + ": " + e.what());
    }
  }

  Section child(const char* key) {
    static const json empty = json::object();
    const json* v = find(key);
    return Section(v != nullptr ? *v : empty, child_path(key));
  }

  /// Rejects keys that no get()/child() call asked for.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (seen_.count(key) == 0) throw ConfigError(child_path(key.c_str()) + ": unknown key");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get_unsigned(const char* key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (v->is_number_unsigned()) {
      const auto u = v->get<std::uint64_t>();
      if (u > std::numeric_limits<T>::max()) throw type_error(key, "a smaller integer");
      out = static_cast<T>(u);
      return;
    }
    throw type_error(key, "a non-negative integer");
  }

  std::string label() const { return path_.empty() ? "config" : path_; }
  std::string child_path(const char* key) const {
    return path_.empty() ? std::string(key) : path_ + "." + key;
  }
  ConfigError type_error(const char* key, const char* expected) const {
    return ConfigError(child_path(key) + ": expected " + expected + ", got " +
                       j_.at(key).dump());
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section s, TrainConfig& t) {
  s.get("lr", t.lr);
  s.get("batch_size", t.batch_size);
  s.get("max_epochs", t.max_epochs);
  s.get("iters_per_epoch", t.iters_per_epoch);
  s.get("decay_factor", t.decay_factor);
  s.get("decay_every", t.decay_every);
  s.get("early_stop_patience", t.early_stop_patience);
  s.get("folds", t.folds);
  s.get("lambda1", t.lambda1);
  s.get("lambda2", t.lambda2);
  s.get("structure_sign_flip", t.structure_sign_flip);
  s.get("hidden_dim", t.hidden_dim);
  s.get("extra_layers", t.extra_layers);
  s.get("seed", t.seed);
  s.finish();
}

void read_adjacency(Section s, AdjacencyConfig& a) {
  s.get("phi", a.phi);
  s.get_enum("variant", a.variant, parse_variant);
  s.get_enum("positional_mode", a.positional_mode, parse_positional_mode);
  s.finish();
}

void read_graph(Section s, GraphConfig& g) {
  s.get("window", g.window);
  s.get("hop", g.hop);
  s.get("neighbor_radius", g.edges.neighbor_radius);
  s.get("random_edges_per_node", g.edges.random_edges_per_node);
  s.get("min_random_distance", g.edges.min_random_distance);
  s.finish();
}

void read_mfcc(Section s, MfccConfig& m, bool& cmvn) {
  s.get("sample_rate", m.sample_rate);
  s.get("frame_ms", m.frame_ms);
  s.get("hop_ms", m.hop_ms);
  s.get("n_mels", m.n_mels);
  s.get("n_mfcc", m.n_mfcc);
  s.get("fft_size", m.fft_size);
  s.get("cmvn", cmvn);
  s.finish();
}

void read_data(Section s, DataConfig& d) {
  s.get("source", d.source);
  s.get("manifest", d.manifest);
  s.get("target_frames", d.target_frames);
  Section syn = s.child("synthetic");
  syn.get("n_per_class", d.synthetic.n_per_class);
  syn.get("classes", d.synthetic.classes);
  syn.get("frames", d.synthetic.frames);
  syn.get("feature_dim", d.synthetic.feature_dim);
  syn.get("noise", d.synthetic.noise);
  syn.finish();
  s.finish();
}

}  // namespace

void RunConfig::validate() const {
  experiment.validate();
  mfcc.validate();
  if (data.source != "manifest" && data.source != "synthetic") {
    throw ConfigError("data.source: expected \"manifest\" or \"synthetic\", got \"" +
                      data.source + "\"");
  }
  const SyntheticConfig& s = data.synthetic;
  if (data.source == "synthetic" &&
      (s.n_per_class == 0 || s.classes < 2 || s.frames == 0 || s.feature_dim == 0)) {
    throw ConfigError("data.synthetic: need n_per_class >= 1, classes >= 2, frames >= 1, "
                      "feature_dim >= 1");
  }
  if (!(s.noise >= 0.0)) throw ConfigError("data.synthetic.noise: must be >= 0");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(j, "");
  read_train(root.child("train"), cfg.experiment.train);
  read_adjacency(root.child("adjacency"), cfg.experiment.adjacency);
  read_graph(root.child("graph"), cfg.experiment.graph);
  read_mfcc(root.child("mfcc"), cfg.mfcc, cfg.cmvn);
  read_data(root.child("data"), cfg.data);
  root.get("output_dir", cfg.output_dir);
  root.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  const TrainConfig& t = cfg.experiment.train;
  const AdjacencyConfig& a = cfg.experiment.adjacency;
  const GraphConfig& g = cfg.experiment.graph;
  const MfccConfig& m = cfg.mfcc;
  const DataConfig& d = cfg.data;
  nlohmann::ordered_json j;
  j["train"] = {{"lr", t.lr},
                {"batch_size", t.batch_size},
                {"max_epochs", t.max_epochs},
                {"iters_per_epoch", t.iters_per_epoch},
                {"decay_factor", t.decay_factor},
                {"decay_every", t.decay_every},
                {"early_stop_patience", t.early_stop_patience},
                {"folds", t.folds},
                {"lambda1", t.lambda1},
                {"lambda2", t.lambda2},
                {"structure_sign_flip", t.structure_sign_flip},
                {"hidden_dim", t.hidden_dim},
                {"extra_layers", t.extra_layers},
                {"seed", t.seed}};
  j["adjacency"] = {{"phi", a.phi},
                    {"variant", to_string(a.variant)},
                    {"positional_mode", to_string(a.positional_mode)}};
  j["graph"] = {{"window", g.window},
                {"hop", g.hop},
                {"neighbor_radius", g.edges.neighbor_radius},
                {"random_edges_per_node", g.edges.random_edges_per_node},
                {"min_random_distance", g.edges.min_random_distance}};
  j["mfcc"] = {{"sample_rate", m.sample_rate}, {"frame_ms", m.frame_ms},
               {"hop_ms", m.hop_ms},           {"n_mels", m.n_mels},
               {"n_mfcc", m.n_mfcc},           {"fft_size", m.fft_size},
               {"cmvn", cfg.cmvn}};
  j["data"] = {{"source", d.source},
               {"manifest", d.manifest},
               {"target_frames", d.target_frames},
               {"synthetic",
                {{"n_per_class", d.synthetic.n_per_class},
                 {"classes", d.synthetic.classes},
                 {"frames", d.synthetic.frames},
                 {"feature_dim", d.synthetic.feature_dim},
                 {"noise", d.synthetic.noise}}}};
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

Dataset load_run_dataset(const RunConfig& cfg) {
  Dataset data;
  if (cfg.data.source == "synthetic") {
    const SyntheticConfig& s = cfg.data.synthetic;
    data.samples = synth_dataset(s.n_per_class, s.classes, s.frames, s.feature_dim, s.noise,
                                 cfg.experiment.train.seed);
    data.num_classes = s.classes;
  } else {
    if (cfg.data.manifest.empty()) {
      throw ConfigError("data.manifest: required when data.source is \"manifest\"");
    }
    data = load_dataset(cfg.data.manifest);
  }
  if (cfg.data.target_frames != 0) {
    for (FrameSequence& s : data.samples) s = pad_or_crop(s, cfg.data.target_frames);
  }
  data.validate();
  return data;
}

}  // namespace dyngraph
