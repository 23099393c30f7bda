#include "nnkg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <utility>

#include <json.hpp>

#include "nnkg/error.hpp"
#include "nnkg/util.hpp"

namespace nnkg {

namespace {

// Keeps the training stream distinct from the model-init stream, which is
// seeded with the raw seed inside make_model.
constexpr std::uint64_t kTrainStreamSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kDistEps = 1e-12;

double dsigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin > 0.0f)) throw ConfigError("margin must be positive");
  if (negatives < 1) throw ConfigError("negatives must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive and finite");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (mix_weights.size() != static_cast<std::size_t>(kStructureCount))
    throw ConfigError("mix_weights must carry one weight per query structure");
  for (double w : mix_weights)
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ConfigError("mix weights must be finite and non-negative");
}

double margin_loss(const std::vector<Embedded>& conjuncts, EntityId positive,
                   const std::vector<EntityId>& negatives,
                   Parameter& entity_table, float margin, bool backward,
                   float scale) {
  if (conjuncts.empty()) throw DimensionError("loss needs at least one conjunct");
  if (negatives.empty())
    throw DimensionError("loss needs at least one negative sample");
  const Index rows = entity_table.value.rows();
  const auto check_id = [rows](EntityId v) {
    if (static_cast<Index>(v) >= rows)
      throw DataError("entity id " + std::to_string(v) +
                      " outside the embedding table");
  };
  check_id(positive);
  for (EntityId v : negatives) check_id(v);
  if (backward)
    for (const Embedded& c : conjuncts)
      if (!c.backward)
        throw ConfigError("eval-mode embeddings cannot backpropagate the loss");

  // Distance of entity v: min over conjuncts, first index on ties.
  const auto nearest = [&](EntityId v) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t at = 0;
    for (std::size_t i = 0; i < conjuncts.size(); ++i) {
      const double d = (conjuncts[i].value.row(0) - entity_table.value.row(v))
                           .cast<double>()
                           .norm();
      if (d < best) {
        best = d;
        at = i;
      }
    }
    return std::pair<double, std::size_t>(best, at);
  };

  // ∂ℒ/∂qᵢ is accumulated over all positive/negative terms before a single
  // backward call per conjunct: backward is linear, and one pass through the
  // operator network instead of one per negative dominates the training cost.
  std::vector<Matrix> dq;
  if (backward)
    dq.assign(conjuncts.size(),
              Matrix::Zero(1, entity_table.value.cols()));

  // coeff = ∂ℒ/∂D already scaled; routes ∂D into the conjunct and the row.
  const auto apply = [&](EntityId v, std::size_t ci, double dist, double coeff) {
    if (dist <= kDistEps) return;
    const Matrix d = static_cast<Scalar>(coeff / dist) *
                     (conjuncts[ci].value.row(0) - entity_table.value.row(v));
    dq[ci] += d;
    entity_table.grad.row(v) -= d.row(0);
  };

  const double g = static_cast<double>(margin);
  const auto [dpos, pci] = nearest(positive);
  double loss = -log_sigmoid(g - dpos);
  if (backward) apply(positive, pci, dpos, dsigmoid(dpos - g) * scale);

  const double invk = 1.0 / static_cast<double>(negatives.size());
  for (EntityId v : negatives) {
    const auto [dneg, ci] = nearest(v);
    loss -= invk * log_sigmoid(dneg - g);
    if (backward) apply(v, ci, dneg, -invk * dsigmoid(g - dneg) * scale);
  }
  if (backward)
    for (std::size_t i = 0; i < conjuncts.size(); ++i)
      if (!dq[i].isZero(0)) conjuncts[i].backward(dq[i]);
  return loss;
}

std::vector<EntityId> sample_negatives(const EntitySet& answers,
                                       std::uint32_t entity_count, int k,
                                       Rng& rng) {
  if (k < 1) throw ConfigError("negative sample count must be at least 1");
  if (answers.size() >= entity_count)
    throw DataError("every entity answers the query; no negatives exist");
  const std::uint64_t free_count = entity_count - answers.size();
  std::vector<EntityId> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    // j-th entity outside `answers`: fixpoint of x = j + |answers ≤ x|.
    EntityId x = static_cast<EntityId>(rng.bounded(free_count));
    const EntityId j = x;
    for (;;) {
      const auto c = static_cast<EntityId>(
          std::upper_bound(answers.begin(), answers.end(), x) - answers.begin());
      const EntityId next = j + c;
      if (next == x) break;
      x = next;
    }
    out.push_back(x);
  }
  return out;
}

TrainState make_train_state(const ModelConfig& model_cfg,
                            std::uint32_t entity_count,
                            std::uint32_t relation_count,
                            const TrainConfig& train_cfg) {
  train_cfg.validate();
  TrainState state;
  state.model = make_model(model_cfg, entity_count, relation_count, train_cfg.seed);
  state.adam.attach(state.model->parameters());
  state.rng = Rng(train_cfg.seed ^ kTrainStreamSalt);
  state.iteration = 0;
  return state;
}

// ---- Checkpoints -----------------------------------------------------------------
//
// Layout: "NNKG" magic, u32 version, u64 header length, JSON header, then for
// every parameter in canonical order three length-prefixed f32 arrays (value,
// Adam m, Adam v). All integers and floats little-endian.

namespace {

void put_f32_array(std::string& out, const Matrix& m) {
  static_assert(sizeof(Scalar) == 4, "checkpoint floats are 32-bit");
  put_u64(out, static_cast<std::uint64_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      std::uint32_t bits;
      const Scalar v = m(i, j);
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
}

void read_f32_array(ByteReader& in, Matrix& into) {
  const std::uint64_t n = in.u64();
  if (n != static_cast<std::uint64_t>(into.size()))
    throw DataError("checkpoint tensor size mismatch: expected " +
                    std::to_string(into.size()) + " floats, file has " +
                    std::to_string(n));
  in.need(4 * static_cast<std::size_t>(n));
  for (Index i = 0; i < into.rows(); ++i)
    for (Index j = 0; j < into.cols(); ++j) {
      const std::uint32_t bits = in.u32();
      Scalar v;
      std::memcpy(&v, &bits, 4);
      into(i, j) = v;
    }
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  const Model& model = *state.model;
  const ModelConfig& mc = model.config();
  // parameters() is non-const by design (the optimizer mutates); the pointer
  // list itself does not change the model.
  const std::vector<Parameter*> params =
      const_cast<Model&>(model).parameters();
  if (state.adam.m.size() != params.size())
    throw ConfigError("optimizer is not attached to this model");

  nlohmann::json header;
  header["family"] = to_string(mc.family);
  header["embed_dim"] = mc.embed_dim;
  header["mlp_layers"] = mc.mlp_layers;
  header["mixer_blocks"] = mc.mixer_blocks;
  header["mixer_dropout"] = mc.mixer_dropout;
  header["nln_regularizer_weight"] = mc.nln_regularizer_weight;
  header["entity_init"] = to_string(mc.entity_init);
  header["entity_count"] = model.entity_count();
  header["relation_count"] = model.relation_count();
  header["iteration"] = state.iteration;
  header["adam_steps"] = state.adam.steps;
  header["rng"] = state.rng.state();
  nlohmann::json manifest = nlohmann::json::array();
  for (const Parameter* p : params)
    manifest.push_back({{"name", p->name},
                        {"rows", p->value.rows()},
                        {"cols", p->value.cols()}});
  header["params"] = manifest;
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  std::string buf;
  buf.append("NNKG");
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, header_bytes.size());
  buf.append(header_bytes);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    buf.clear();
    put_f32_array(buf, params[i]->value);
    put_f32_array(buf, state.adam.m[i]);
    put_f32_array(buf, state.adam.v[i]);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw DataError("short write to checkpoint " + path);
}

TrainState load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader in(data, "checkpoint file " + path);
  if (in.bytes(4) != "NNKG")
    throw DataError(path + " is not a checkpoint file (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) +
                    " (this build reads version " +
                    std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t header_len = in.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.bytes(static_cast<std::size_t>(header_len)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }

  TrainState state;
  try {
    ModelConfig mc;
    mc.family = family_from_string(header.at("family").get<std::string>());
    mc.embed_dim = header.at("embed_dim").get<int>();
    mc.mlp_layers = header.at("mlp_layers").get<int>();
    mc.mixer_blocks = header.at("mixer_blocks").get<int>();
    mc.mixer_dropout = header.at("mixer_dropout").get<Scalar>();
    mc.nln_regularizer_weight = header.at("nln_regularizer_weight").get<Scalar>();
    mc.entity_init = entity_init_from_string(header.at("entity_init").get<std::string>());
    const auto entity_count = header.at("entity_count").get<std::uint32_t>();
    const auto relation_count = header.at("relation_count").get<std::uint32_t>();
    state.model = make_model(mc, entity_count, relation_count, /*seed=*/0);
    state.iteration = header.at("iteration").get<std::int64_t>();
    state.rng.restore(header.at("rng").get<std::string>());

    const std::vector<Parameter*> params = state.model->parameters();
    const nlohmann::json& manifest = header.at("params");
    if (manifest.size() != params.size())
      throw DataError("checkpoint lists " + std::to_string(manifest.size()) +
                      " parameters, model has " + std::to_string(params.size()));
    state.adam.attach(params);
    state.adam.steps = header.at("adam_steps").get<std::uint64_t>();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const nlohmann::json& entry = manifest[i];
      if (entry.at("name").get<std::string>() != params[i]->name ||
          entry.at("rows").get<Index>() != params[i]->value.rows() ||
          entry.at("cols").get<Index>() != params[i]->value.cols())
        throw DataError("checkpoint parameter '" +
                        entry.at("name").get<std::string>() +
                        "' does not match the model layout");
      read_f32_array(in, params[i]->value);
      read_f32_array(in, state.adam.m[i]);
      read_f32_array(in, state.adam.v[i]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (!in.done())
    throw DataError("checkpoint has trailing bytes; refusing to load");
  return state;
}

// ---- Training loop ---------------------------------------------------------------

TrainResult train(TrainState& state, const std::vector<QuerySample>& train_queries,
                  const std::vector<QuerySample>& valid_queries,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (!state.model) throw ConfigError("train state carries no model");
  Model& model = *state.model;
  const Index d = model.config().embed_dim;

  std::vector<std::vector<const QuerySample*>> groups(kStructureCount);
  for (const QuerySample& s : train_queries) {
    if (s.answers_train.empty())
      throw DataError("training query has no answers on the train graph: " +
                      serialize_query(s.query.root));
    groups[static_cast<std::size_t>(s.query.structure)].push_back(&s);
  }
  std::vector<std::pair<std::size_t, double>> mix;
  double mix_total = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].empty() || cfg.mix_weights[i] <= 0.0) continue;
    mix.emplace_back(i, cfg.mix_weights[i]);
    mix_total += cfg.mix_weights[i];
  }

  TrainResult result;
  if (state.iteration >= cfg.iterations) return result;
  if (mix.empty())
    throw ConfigError("no trainable queries: every structure is empty or zero-weighted");

  const std::vector<Parameter*> params = model.parameters();
  if (state.adam.m.size() != params.size())
    throw ConfigError("optimizer is not attached to this model");
  const float scale = 1.0f / static_cast<float>(cfg.batch_size);
  const bool regularized = model.config().family == ModelFamily::nln &&
                           model.config().nln_regularizer_weight > 0.0f;

  while (state.iteration < cfg.iterations) {
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      double u = state.rng.uniform01() * mix_total;
      std::size_t gi = mix.back().first;
      for (const auto& [idx, weight] : mix) {
        if (u < weight) {
          gi = idx;
          break;
        }
        u -= weight;
      }
      const auto& group = groups[gi];
      const QuerySample& s = *group[state.rng.bounded(group.size())];
      const EntityId positive =
          s.answers_train[state.rng.bounded(s.answers_train.size())];
      const std::vector<EntityId> negatives = sample_negatives(
          s.answers_train, model.entity_count(), cfg.negatives, state.rng);

      const std::vector<Embedded> conjuncts =
          model.embed_query(s.query, Mode::train, &state.rng);
      batch_loss += margin_loss(conjuncts, positive, negatives,
                                model.entity_table(), cfg.margin, true, scale);
      if (regularized) {
        Matrix w(static_cast<Index>(conjuncts.size()), d);
        for (std::size_t i = 0; i < conjuncts.size(); ++i)
          w.row(static_cast<Index>(i)) = conjuncts[i].value.row(0);
        Matrix dw;
        batch_loss +=
            model.regularizer(w, &dw, Mode::train, static_cast<double>(scale));
        for (std::size_t i = 0; i < conjuncts.size(); ++i)
          conjuncts[i].backward(dw.row(static_cast<Index>(i)));
      }
    }
    batch_loss /= static_cast<double>(cfg.batch_size);

    if (!std::isfinite(batch_loss)) {
      std::string where;
      if (!hooks.diagnostic_path.empty()) {
        try {
          save_checkpoint(state, hooks.diagnostic_path);
          where = "; pre-step state dumped to " + hooks.diagnostic_path;
        } catch (const Error&) {
          where = "; diagnostic checkpoint could not be written";
        }
      }
      throw NumericError("non-finite loss at iteration " +
                         std::to_string(state.iteration + 1) + where);
    }

    state.adam.step(params, cfg.learning_rate);
    ++state.iteration;
    const std::int64_t it = state.iteration;
    result.losses.push_back({it, batch_loss});
    if (hooks.on_loss) hooks.on_loss(it, batch_loss);

    if (cfg.eval_every > 0 && it % cfg.eval_every == 0 && !valid_queries.empty()) {
      MetricsTable metrics = evaluate(model, valid_queries, Split::valid);
      if (hooks.on_eval) hooks.on_eval(it, metrics);
      result.evals.push_back({it, std::move(metrics)});
    }
    if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 &&
        it < cfg.iterations && hooks.on_checkpoint)
      hooks.on_checkpoint(state);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state);
  return result;
}

}  // namespace nnkg
