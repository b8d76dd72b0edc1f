#include "cvs/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "cvs/errors.hpp"

namespace cvs {

using nlohmann::json;

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from_json(const json& j) {
  auto shape = j.at("shape").get<std::vector<std::size_t>>();
  auto data = j.at("data").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(data));
}

namespace {

json hyper_json(const Hyperparameters& h) {
  return {{"alpha", h.alpha},
          {"beta", h.beta},
          {"margin", h.margin},
          {"temperature", h.temperature},
          {"batch_size", h.batch_size},
          {"embed_dim", h.embed_dim},
          {"hidden_dim", h.hidden_dim},
          {"learning_rate", h.learning_rate},
          {"momentum", h.momentum},
          {"weight_decay", h.weight_decay},
          {"epochs_per_session", h.epochs_per_session},
          {"seed", h.seed}};
}

Hyperparameters hyper_from_json(const json& j) {
  Hyperparameters h;
  h.alpha = j.at("alpha");
  h.beta = j.at("beta");
  h.margin = j.at("margin");
  h.temperature = j.at("temperature");
  h.batch_size = j.at("batch_size");
  h.embed_dim = j.at("embed_dim");
  h.hidden_dim = j.at("hidden_dim");
  h.learning_rate = j.at("learning_rate");
  h.momentum = j.at("momentum");
  h.weight_decay = j.at("weight_decay");
  h.epochs_per_session = j.at("epochs_per_session");
  h.seed = j.at("seed");
  return h;
}

}  // namespace

json checkpoint_json(const ExperimentState& state) {
  const auto& p = state.model.parameters();
  json model = {{"hyper", hyper_json(state.model.hyper())},
                {"w1", tensor_to_json(p.w1)},
                {"b1", tensor_to_json(p.b1)},
                {"w2", tensor_to_json(p.w2)},
                {"b2", tensor_to_json(p.b2)},
                {"classifier", tensor_to_json(p.classifier)},
                {"registry", state.model.class_registry()}};

  json replay = {{"budget", state.buffer.budget()}, {"entries", json::array()}};
  for (const auto& e : state.buffer.entries()) {
    replay["entries"].push_back({{"id", e.id},
                                 {"label", e.label},
                                 {"origin_session", e.origin_session},
                                 {"rank", e.rank},
                                 {"features", e.features}});
  }

  json centroids = {{"divisor", to_string(state.centroids.divisor())},
                    {"last_session", state.centroids.last_session()},
                    {"classes", json::array()}};
  for (ClassId label : state.centroids.classes()) {
    json contributions = json::array();
    for (const auto& c : state.centroids.contributions(label)) {
      contributions.push_back({{"session", c.session}, {"count", c.count}, {"mean", tensor_to_json(c.mean)}});
    }
    centroids["classes"].push_back({{"label", label}, {"contributions", contributions}});
  }

  const auto& g = state.gallery;
  json blocks = json::array();
  for (const auto& [session, hash] : g.block_hashes()) {
    blocks.push_back({{"session", session}, {"size", g.block_size(session)}, {"hash", hash_hex(hash)}});
  }
  std::vector<ItemId> ids;
  std::vector<ClassId> labels;
  std::vector<std::size_t> sessions;
  for (std::size_t i = 0; i < g.size(); ++i) {
    ids.push_back(g.id(i));
    labels.push_back(g.label(i));
    sessions.push_back(g.session(i));
  }
  json gallery = {{"dim", g.dim()},     {"ids", ids},
                  {"labels", labels},   {"sessions", sessions},
                  {"blocks", blocks},   {"embeddings", tensor_to_json(g.embeddings())}};

  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"completed_sessions", state.completed_sessions},
          {"model", model},
          {"replay", replay},
          {"centroids", centroids},
          {"gallery", gallery}};
}

ExperimentState state_from_checkpoint(const json& j) {
  try {
    if (j.at("format") != kCheckpointFormat || j.at("version") != kCheckpointVersion) {
      throw FormatError("not a version-1 checkpoint container");
    }
    const json& m = j.at("model");
    ModelParameters params{tensor_from_json(m.at("w1")), tensor_from_json(m.at("b1")),
                           tensor_from_json(m.at("w2")), tensor_from_json(m.at("b2")),
                           tensor_from_json(m.at("classifier"))};
    ExperimentState state{ModelState(hyper_from_json(m.at("hyper")), std::move(params),
                                     m.at("registry").get<std::vector<ClassId>>()),
                          ReplayBuffer(j.at("replay").at("budget").get<std::size_t>()),
                          CentroidStore(parse_centroid_divisor(j.at("centroids").at("divisor"))),
                          GallerySet{},
                          j.at("completed_sessions").get<std::size_t>()};

    std::vector<Exemplar> exemplars;
    for (const json& e : j.at("replay").at("entries")) {
      exemplars.push_back({e.at("id"), e.at("label"), e.at("features").get<std::vector<double>>(),
                           e.at("origin_session"), e.at("rank")});
    }
    state.buffer.assign(std::move(exemplars));

    for (const json& c : j.at("centroids").at("classes")) {
      std::vector<SessionContribution> contributions;
      for (const json& s : c.at("contributions")) {
        contributions.push_back({s.at("session"), tensor_from_json(s.at("mean")), s.at("count")});
      }
      state.centroids.restore(c.at("label"), std::move(contributions));
    }
    state.centroids.set_last_session(j.at("centroids").at("last_session"));

    const json& g = j.at("gallery");
    const auto ids = g.at("ids").get<std::vector<ItemId>>();
    const auto labels = g.at("labels").get<std::vector<ClassId>>();
    const auto sessions = g.at("sessions").get<std::vector<std::size_t>>();
    const Tensor emb = tensor_from_json(g.at("embeddings"));
    if (labels.size() != ids.size() || sessions.size() != ids.size() || emb.rows() != ids.size()) {
      if (!ids.empty()) throw FormatError("gallery arrays disagree in length");
    }
    std::size_t row = 0;
    for (const json& b : g.at("blocks")) {
      const std::size_t session = b.at("session");
      const std::size_t size = b.at("size");
      std::vector<EmbeddingRecord> records;
      for (std::size_t k = 0; k < size; ++k, ++row) {
        if (row >= ids.size()) throw FormatError("gallery block sizes exceed the record count");
        const auto e = emb.row(row);
        records.push_back({ids[row], labels[row], sessions[row], {e.begin(), e.end()}});
      }
      state.gallery.append_block(session, records);
      if (hash_hex(state.gallery.block_hashes().at(session)) != b.at("hash").get<std::string>()) {
        throw FormatError("gallery block " + std::to_string(session) + " does not match its stored hash");
      }
    }
    if (row != ids.size()) throw FormatError("gallery records outside any block");
    return state;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what());
  }
}

void write_checkpoint(const ExperimentState& state, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out << checkpoint_json(state).dump() << '\n';
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

ExperimentState read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint is not JSON: ") + e.what());
  }
  return state_from_checkpoint(j);
}

}  // namespace cvs
