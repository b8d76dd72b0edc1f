#include "cvs/config.hpp"

#include <fstream>
#include <set>

#include "cvs/errors.hpp"

namespace cvs {

using nlohmann::json;

namespace {

// Reads the members of one JSON object and rejects anything it did not consume.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), "invalid_config", where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ContractError("invalid_config", where_ + "." + key + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      require(seen_.contains(key), "invalid_config", "unknown key " + where_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::cvs: return "cvs";
    case Method::finetune: return "finetune";
    case Method::joint: return "joint";
  }
  return "cvs";
}

Method parse_method(const std::string& name) {
  if (name == "cvs") return Method::cvs;
  if (name == "finetune") return Method::finetune;
  if (name == "joint") return Method::joint;
  throw ContractError("invalid_config", "unknown method '" + name + "'");
}

std::string to_string(CentroidDivisor divisor) {
  switch (divisor) {
    case CentroidDivisor::contributing_sessions: return "contributing_sessions";
    case CentroidDivisor::all_sessions: return "all_sessions";
    case CentroidDivisor::latest_session: return "latest_session";
  }
  return "contributing_sessions";
}

CentroidDivisor parse_centroid_divisor(const std::string& name) {
  if (name == "contributing_sessions") return CentroidDivisor::contributing_sessions;
  if (name == "all_sessions") return CentroidDivisor::all_sessions;
  if (name == "latest_session") return CentroidDivisor::latest_session;
  throw ContractError("invalid_config", "unknown centroid divisor '" + name + "'");
}

RunConfig RunConfig::normalized() const {
  RunConfig out = *this;
  if (method == Method::finetune) {
    out.toggles.use_m = false;
    out.toggles.use_d = false;
    out.toggles.use_replay_data = false;
  }
  return out;
}

void RunConfig::validate() const {
  hyper.validate();
  require(hyper.epochs_per_session <= 100000, "invalid_config", "epochs_per_session is unreasonably large");
  require(hyper.learning_rate > 0.0, "invalid_config", "learning_rate must be positive");
  require(hyper.momentum >= 0.0 && hyper.momentum < 1.0, "invalid_config", "momentum must lie in [0, 1)");
  require(hyper.weight_decay >= 0.0, "invalid_config", "weight_decay must be non-negative");
  require(hyper.embed_dim >= 1 && hyper.hidden_dim >= 1, "invalid_config", "layer widths must be positive");
  require(replay_budget_fraction >= 0.0 && replay_budget_fraction <= 1.0, "invalid_config",
          "replay_budget_fraction must lie in [0, 1]");
  require(replay_batch_fraction >= 0.0 && replay_batch_fraction < 1.0, "invalid_config",
          "replay_batch_fraction must lie in [0, 1)");
  require(candidate_pool_factor >= 1, "invalid_config", "candidate_pool_factor must be at least 1");
  require(validation.fraction >= 0.0 && validation.fraction < 1.0, "invalid_config",
          "validation fraction must lie in [0, 1)");
  require(setup.sessions() >= 1, "invalid_config", "at least one session is required");
  require(setup.major_fraction > 0.0 && setup.major_fraction <= 1.0, "invalid_config",
          "major_fraction must lie in (0, 1]");
  require(setup.old_percent >= 0.0 && setup.old_percent < 100.0, "invalid_config",
          "old_percent must lie in [0, 100)");
  if (dataset.is_synthetic()) {
    const auto& s = dataset.synthetic;
    require(s.num_classes >= 1 && s.dim >= 1 && s.per_class >= 2, "invalid_config",
            "synthetic dataset needs classes, dim and at least two items per class");
    require(s.spread >= 0.0 && s.drift >= 0.0, "invalid_config", "spread and drift must be non-negative");
  }
}

json to_json(const RunConfig& c) {
  json dataset;
  if (c.dataset.is_synthetic()) {
    const auto& s = c.dataset.synthetic;
    dataset["synthetic"] = {{"num_classes", s.num_classes}, {"dim", s.dim},       {"per_class", s.per_class},
                            {"spread", s.spread},           {"drift", s.drift}};
    if (c.dataset.synthetic_seed_set) dataset["synthetic"]["seed"] = s.seed;
  } else {
    dataset["path"] = c.dataset.path;
  }
  json validation = {{"fraction", c.validation.fraction}};
  if (c.validation.per_class) validation["per_class"] = *c.validation.per_class;
  const auto& h = c.hyper;
  json out = {
      {"dataset", dataset},
      {"setup",
       {{"kind", to_string(c.setup.kind)},
        {"num_sessions", c.setup.num_sessions},
        {"major_fraction", c.setup.major_fraction},
        {"initial_classes", c.setup.initial_classes},
        {"classes_per_session", c.setup.classes_per_session},
        {"old_percent", c.setup.old_percent},
        {"general_sessions", c.setup.general_sessions}}},
      {"validation", validation},
      {"hyper",
       {{"alpha", h.alpha},
        {"beta", h.beta},
        {"margin", h.margin},
        {"temperature", h.temperature},
        {"batch_size", h.batch_size},
        {"embed_dim", h.embed_dim},
        {"hidden_dim", h.hidden_dim},
        {"learning_rate", h.learning_rate},
        {"momentum", h.momentum},
        {"weight_decay", h.weight_decay},
        {"epochs_per_session", h.epochs_per_session}}},
      {"replay_budget_fraction", c.replay_budget_fraction},
      {"toggles",
       {{"use_m", c.toggles.use_m},
        {"use_d", c.toggles.use_d},
        {"use_replay_data", c.toggles.use_replay_data},
        {"use_replayed_embedding", c.toggles.use_replayed_embedding},
        {"negatives_include_replayed", c.toggles.negatives_include_replayed},
        {"anchors_include_replayed", c.toggles.anchors_include_replayed}}},
      {"centroid_divisor", to_string(c.centroid_divisor)},
      {"replay_batch_fraction", c.replay_batch_fraction},
      {"candidate_pool_factor", c.candidate_pool_factor},
      {"select_best_epoch", c.select_best_epoch},
      {"method", to_string(c.method)},
      {"output_dir", c.output_dir},
      {"seed", c.seed}};
  if (c.replay_budget) out["replay_budget"] = *c.replay_budget;
  return out;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader top(j, "config");

  if (const json* d = top.child("dataset")) {
    ObjectReader r(*d, "dataset");
    r.get("path", c.dataset.path);
    if (const json* s = r.child("synthetic")) {
      require(c.dataset.path.empty(), "invalid_config", "dataset has both a path and synthetic parameters");
      ObjectReader sr(*s, "dataset.synthetic");
      auto& spec = c.dataset.synthetic;
      sr.get("num_classes", spec.num_classes);
      sr.get("dim", spec.dim);
      sr.get("per_class", spec.per_class);
      sr.get("spread", spec.spread);
      sr.get("drift", spec.drift);
      c.dataset.synthetic_seed_set = sr.has("seed");
      sr.get("seed", spec.seed);
      sr.finish();
    }
    r.finish();
  }

  if (const json* s = top.child("setup")) {
    ObjectReader r(*s, "setup");
    std::string kind = to_string(c.setup.kind);
    r.get("kind", kind);
    c.setup.kind = parse_setup_kind(kind);
    r.get("num_sessions", c.setup.num_sessions);
    r.get("major_fraction", c.setup.major_fraction);
    r.get("initial_classes", c.setup.initial_classes);
    r.get("classes_per_session", c.setup.classes_per_session);
    r.get("old_percent", c.setup.old_percent);
    r.get("general_sessions", c.setup.general_sessions);
    r.finish();
  }

  if (const json* v = top.child("validation")) {
    ObjectReader r(*v, "validation");
    r.get("fraction", c.validation.fraction);
    if (r.has("per_class")) {
      std::size_t per_class = 0;
      r.get("per_class", per_class);
      c.validation.per_class = per_class;
    }
    r.finish();
  }

  if (const json* h = top.child("hyper")) {
    ObjectReader r(*h, "hyper");
    r.get("alpha", c.hyper.alpha);
    r.get("beta", c.hyper.beta);
    r.get("margin", c.hyper.margin);
    r.get("temperature", c.hyper.temperature);
    r.get("batch_size", c.hyper.batch_size);
    r.get("embed_dim", c.hyper.embed_dim);
    r.get("hidden_dim", c.hyper.hidden_dim);
    r.get("learning_rate", c.hyper.learning_rate);
    r.get("momentum", c.hyper.momentum);
    r.get("weight_decay", c.hyper.weight_decay);
    r.get("epochs_per_session", c.hyper.epochs_per_session);
    r.finish();
  }

  if (top.has("replay_budget")) {
    std::size_t budget = 0;
    top.get("replay_budget", budget);
    c.replay_budget = budget;
  } else {
    top.child("replay_budget");
  }
  top.get("replay_budget_fraction", c.replay_budget_fraction);

  if (const json* t = top.child("toggles")) {
    ObjectReader r(*t, "toggles");
    r.get("use_m", c.toggles.use_m);
    r.get("use_d", c.toggles.use_d);
    r.get("use_replay_data", c.toggles.use_replay_data);
    r.get("use_replayed_embedding", c.toggles.use_replayed_embedding);
    r.get("negatives_include_replayed", c.toggles.negatives_include_replayed);
    r.get("anchors_include_replayed", c.toggles.anchors_include_replayed);
    r.finish();
  }

  std::string divisor = to_string(c.centroid_divisor);
  top.get("centroid_divisor", divisor);
  c.centroid_divisor = parse_centroid_divisor(divisor);
  top.get("replay_batch_fraction", c.replay_batch_fraction);
  top.get("candidate_pool_factor", c.candidate_pool_factor);
  top.get("select_best_epoch", c.select_best_epoch);
  std::string method = to_string(c.method);
  top.get("method", method);
  c.method = parse_method(method);
  top.get("output_dir", c.output_dir);
  top.get("seed", c.seed);
  top.finish();

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "config_unreadable", "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ContractError("invalid_config", "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

Dataset materialize_dataset(const RunConfig& config) {
  if (config.dataset.is_synthetic()) {
    SyntheticSpec spec = config.dataset.synthetic;
    if (!config.dataset.synthetic_seed_set) spec.seed = config.seed;
    return make_synthetic(spec);
  }
  const std::filesystem::path path = config.dataset.path;
  require(std::filesystem::exists(path), "dataset_unreadable", "dataset file " + path.string() + " not found");
  if (path.extension() == ".csv") return read_dataset_csv(path);
  return read_dataset(path);
}

}  // namespace cvs
