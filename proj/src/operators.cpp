#include "nnkg/operators.hpp"

#include <algorithm>
#include <utility>

namespace nnkg {

std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::mlp: return "mlp";
    case ModelFamily::mlp_mixer: return "mlp-mixer";
    case ModelFamily::mlp_attention: return "mlp-attention";
    case ModelFamily::mlp_2vector: return "mlp-2vector";
    case ModelFamily::cnn: return "cnn";
    case ModelFamily::nln: return "nln";
  }
  throw std::logic_error("unreachable");
}

ModelFamily family_from_string(const std::string& name) {
  if (name == "mlp") return ModelFamily::mlp;
  if (name == "mlp-mixer") return ModelFamily::mlp_mixer;
  if (name == "mlp-attention") return ModelFamily::mlp_attention;
  if (name == "mlp-2vector") return ModelFamily::mlp_2vector;
  if (name == "cnn") return ModelFamily::cnn;
  if (name == "nln") return ModelFamily::nln;
  throw ConfigError("unknown model family '" + name + "'");
}

std::string to_string(EntityInit init) {
  return init == EntityInit::zero ? "zero" : "random";
}

EntityInit entity_init_from_string(const std::string& name) {
  if (name == "random") return EntityInit::random;
  if (name == "zero") return EntityInit::zero;
  throw ConfigError("unknown entity init '" + name + "'");
}

void ModelConfig::validate() const {
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw ConfigError("embed_dim must be even and at least 2, got " +
                      std::to_string(embed_dim));
  if (mlp_layers < 1) throw ConfigError("mlp_layers must be at least 1");
  if (mixer_blocks < 1) throw ConfigError("mixer_blocks must be at least 1");
  if (!(mixer_dropout >= 0.0f && mixer_dropout < 1.0f))
    throw ConfigError("mixer_dropout must lie in [0, 1)");
  if (nln_regularizer_weight < 0.0f)
    throw ConfigError("nln_regularizer_weight must be non-negative");
  if (family == ModelFamily::cnn && embed_dim < 16)
    throw ConfigError(
        "cnn family needs embed_dim >= 16: two kernel-6 convolutions and a "
        "window-6 pool consume 15 positions");
}

// ---- Model base ------------------------------------------------------------

Model::Model(const ModelConfig& cfg, std::uint32_t entities, std::uint32_t relations,
             Index relation_cols, Rng& rng)
    : cfg_(cfg), entity_count_(entities), relation_count_(relations) {
  cfg_.validate();
  const Index d = cfg_.embed_dim;
  entities_ = Parameter(entities, d, "entities");
  if (cfg_.entity_init == EntityInit::random)
    uniform_fill(entities_, -0.01f, 0.01f, rng);
  relations_ = Parameter(relations, relation_cols, "relations");
  uniform_fill(relations_, -0.01f, 0.01f, rng);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out{&entities_, &relations_};
  collect_params(out);
  return out;
}

std::vector<Embedded> Model::embed_query(const QueryInstance& query, Mode mode, Rng* rng) {
  if (mode == Mode::train && rng == nullptr)
    throw ConfigError("train-mode embedding requires an rng for dropout");
  const DnfQuery dnf = to_dnf(query);
  std::vector<Embedded> out;
  out.reserve(dnf.conjuncts.size());
  for (const NodePtr& c : dnf.conjuncts) out.push_back(embed_node(c, mode, rng));
  return out;
}

Embedded Model::embed_node(const NodePtr& node, Mode mode, Rng* rng) {
  switch (node->kind) {
    case QueryNode::Kind::Anchor:
      note("anchor(" + std::to_string(node->entity) + ")");
      return op_anchor(node->entity, mode);
    case QueryNode::Kind::Project: {
      Embedded child = embed_node(node->children[0], mode, rng);
      note("project(" + std::to_string(node->rel) + ")");
      return op_project(std::move(child), node->rel, mode, rng);
    }
    case QueryNode::Kind::Intersect: {
      std::vector<Embedded> kids;
      kids.reserve(node->children.size());
      for (const NodePtr& c : node->children) kids.push_back(embed_node(c, mode, rng));
      note("intersect(" + std::to_string(kids.size()) + ")");
      return op_intersect(std::move(kids), mode, rng);
    }
    case QueryNode::Kind::Negate: {
      Embedded child = embed_node(node->children[0], mode, rng);
      note("negate");
      return op_negate(std::move(child), mode, rng);
    }
    case QueryNode::Kind::Union:
      throw ParseError("union nodes must be lifted to DNF before embedding");
  }
  throw std::logic_error("unreachable");
}

Embedded Model::op_anchor(EntityId entity, Mode mode) {
  if (entity >= entity_count_)
    throw DataError("entity id " + std::to_string(entity) + " outside table of " +
                    std::to_string(entity_count_));
  Embedded out;
  out.value = entities_.value.row(entity);
  if (mode == Mode::train)
    out.backward = [this, entity](const Matrix& dy) {
      entities_.grad.row(entity) += dy.row(0);
    };
  return out;
}

double Model::regularizer(const Matrix& w, Matrix* dw, Mode, double) {
  if (dw) dw->setZero(w.rows(), w.cols());
  return 0.0;
}

namespace {

void check_relation(RelationId rel, std::uint32_t count) {
  if (rel >= count)
    throw DataError("relation id " + std::to_string(rel) + " outside table of " +
                    std::to_string(count));
}

// Horizontal concatenation; used both for single rows and whole batches.
Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix x(a.rows(), a.cols() + b.cols());
  x << a, b;
  return x;
}

// ---- MLP family -------------------------------------------------------------

// Shared by the plain, attention, and 2-vector variants: k ReLU blocks at the
// input width, then an affine to d (no final nonlinearity so embeddings span
// negative coordinates).
struct MlpBundle {
  MlpStack project;
  MlpStack intersect;
  MlpStack negate;

  MlpBundle() = default;
  MlpBundle(Index d, int k, const std::string& prefix, Rng& rng)
      : project(2 * d, d, k, prefix + "project", rng),
        intersect(2 * d, d, k, prefix + "intersect", rng),
        negate(d, d, k, prefix + "negate", rng) {}

  void collect(std::vector<Parameter*>& out) {
    project.collect(out);
    intersect.collect(out);
    negate.collect(out);
  }
};

class MlpModel : public Model {
 public:
  MlpModel(const ModelConfig& cfg, std::uint32_t ne, std::uint32_t nr, Rng& rng)
      : Model(cfg, ne, nr, cfg.embed_dim, rng), ops_(cfg.embed_dim, cfg.mlp_layers, "", rng) {}

 protected:
  Embedded op_project(Embedded input, RelationId rel, Mode mode, Rng*) override {
    check_relation(rel, relation_count_);
    const Index d = cfg_.embed_dim;
    const Matrix x = hcat(input.value, relations_.value.row(rel));
    if (mode == Mode::eval) return {ops_.project.forward(x), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = ops_.project.forward(x, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward), rel, d](const Matrix& dy) {
              const Matrix dx = ops_.project.backward(*cache, dy);
              relations_.grad.row(rel) += dx.row(0).segment(d, d);
              if (child) child(dx.leftCols(d));
            }};
  }

  Embedded op_intersect(std::vector<Embedded> inputs, Mode mode, Rng*) override {
    if (inputs.size() < 2) throw DimensionError("intersection needs at least 2 inputs");
    Embedded acc = std::move(inputs[0]);
    for (std::size_t i = 1; i < inputs.size(); ++i)
      acc = fold2(std::move(acc), std::move(inputs[i]), mode);
    return acc;
  }

  Embedded op_negate(Embedded input, Mode mode, Rng*) override {
    if (mode == Mode::eval) return {ops_.negate.forward(input.value), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = ops_.negate.forward(input.value, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward)](const Matrix& dy) {
              const Matrix dx = ops_.negate.backward(*cache, dy);
              if (child) child(dx);
            }};
  }

  void collect_params(std::vector<Parameter*>& out) override { ops_.collect(out); }

 private:
  Embedded fold2(Embedded a, Embedded b, Mode mode) {
    count_fold();
    const Index d = cfg_.embed_dim;
    const Matrix x = hcat(a.value, b.value);
    if (mode == Mode::eval) return {ops_.intersect.forward(x), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = ops_.intersect.forward(x, cache.get());
    return {std::move(y),
            [this, cache, ba = std::move(a.backward), bb = std::move(b.backward),
             d](const Matrix& dy) {
              const Matrix dx = ops_.intersect.backward(*cache, dy);
              if (ba) ba(dx.leftCols(d));
              if (bb) bb(dx.rightCols(d));
            }};
  }

  MlpBundle ops_;
};

// ---- Attention intersection ---------------------------------------------------

// MLP projection/negation; the intersection scores each input with a shared
// perceptron, softmaxes the scores, and mixes the linearly transformed inputs
// — permutation-invariant by construction.
class AttentionModel : public Model {
 public:
  AttentionModel(const ModelConfig& cfg, std::uint32_t ne, std::uint32_t nr, Rng& rng)
      : Model(cfg, ne, nr, cfg.embed_dim, rng),
        project_(2 * cfg.embed_dim, cfg.embed_dim, cfg.mlp_layers, "project", rng),
        negate_(cfg.embed_dim, cfg.embed_dim, cfg.mlp_layers, "negate", rng),
        scorer_(cfg.embed_dim, 1, 1, "intersect.scorer", rng),
        mix_(cfg.embed_dim, cfg.embed_dim, "intersect.mix") {
    glorot_fill(mix_, cfg.embed_dim, cfg.embed_dim, rng);
  }

 protected:
  Embedded op_project(Embedded input, RelationId rel, Mode mode, Rng*) override {
    check_relation(rel, relation_count_);
    const Index d = cfg_.embed_dim;
    const Matrix x = hcat(input.value, relations_.value.row(rel));
    if (mode == Mode::eval) return {project_.forward(x), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = project_.forward(x, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward), rel, d](const Matrix& dy) {
              const Matrix dx = project_.backward(*cache, dy);
              relations_.grad.row(rel) += dx.row(0).segment(d, d);
              if (child) child(dx.leftCols(d));
            }};
  }

  Embedded op_intersect(std::vector<Embedded> inputs, Mode mode, Rng*) override {
    const std::size_t n = inputs.size();
    if (n < 2) throw DimensionError("intersection needs at least 2 inputs");
    Matrix scores(1, static_cast<Index>(n));
    auto caches = std::make_shared<std::vector<MlpStack::Cache>>();
    if (mode == Mode::train) caches->resize(n);
    auto values = std::make_shared<std::vector<Matrix>>();
    values->reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores(0, static_cast<Index>(i)) =
          scorer_.forward(inputs[i].value, mode == Mode::train ? &(*caches)[i] : nullptr)(0, 0);
      values->push_back(inputs[i].value);
    }
    const Matrix att = softmax_rows(scores);
    Matrix y = Matrix::Zero(1, cfg_.embed_dim);
    for (std::size_t i = 0; i < n; ++i)
      y += att(0, static_cast<Index>(i)) * ((*values)[i] * mix_.value);
    if (mode == Mode::eval) return {std::move(y), nullptr};

    auto backs = std::make_shared<std::vector<std::function<void(const Matrix&)>>>();
    for (Embedded& e : inputs) backs->push_back(std::move(e.backward));
    return {std::move(y), [this, caches, values, backs, att](const Matrix& dy) {
              const std::size_t n = values->size();
              Matrix datt(1, static_cast<Index>(n));
              for (std::size_t i = 0; i < n; ++i) {
                const Matrix proj = (*values)[i] * mix_.value;
                datt(0, static_cast<Index>(i)) = proj.row(0).dot(dy.row(0));
                const Scalar a = att(0, static_cast<Index>(i));
                mix_.grad.noalias() += a * (*values)[i].transpose() * dy;
              }
              const Matrix dscores = softmax_rows_backward(att, datt);
              for (std::size_t i = 0; i < n; ++i) {
                Matrix ds = att(0, static_cast<Index>(i)) * dy * mix_.value.transpose();
                ds += scorer_.backward((*caches)[i],
                                       Matrix::Constant(1, 1, dscores(0, static_cast<Index>(i))));
                if ((*backs)[i]) (*backs)[i](ds);
              }
            }};
  }

  Embedded op_negate(Embedded input, Mode mode, Rng*) override {
    if (mode == Mode::eval) return {negate_.forward(input.value), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = negate_.forward(input.value, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward)](const Matrix& dy) {
              const Matrix dx = negate_.backward(*cache, dy);
              if (child) child(dx);
            }};
  }

  void collect_params(std::vector<Parameter*>& out) override {
    project_.collect(out);
    negate_.collect(out);
    scorer_.collect(out);
    out.push_back(&mix_);
  }

 private:
  MlpStack project_;
  MlpStack negate_;
  MlpStack scorer_;  // d → 1
  Parameter mix_;    // d × d, bias-free
};

// ---- 2-vector variant ----------------------------------------------------------

// Two full MLP operator bundles over one shared pair of tables; a query is
// embedded by each bundle and the results averaged conjunct-wise.
class TwoVectorModel : public Model {
 public:
  TwoVectorModel(const ModelConfig& cfg, std::uint32_t ne, std::uint32_t nr, Rng& rng)
      : Model(cfg, ne, nr, cfg.embed_dim, rng),
        a_(cfg.embed_dim, cfg.mlp_layers, "a.", rng),
        b_(cfg.embed_dim, cfg.mlp_layers, "b.", rng) {}

  std::vector<Embedded> embed_query(const QueryInstance& query, Mode mode, Rng* rng) override {
    active_ = &a_;
    std::vector<Embedded> qa = Model::embed_query(query, mode, rng);
    active_ = &b_;
    std::vector<Embedded> qb = Model::embed_query(query, mode, rng);
    std::vector<Embedded> out(qa.size());
    for (std::size_t i = 0; i < qa.size(); ++i) {
      out[i].value = (qa[i].value + qb[i].value) / 2.0f;
      if (mode == Mode::train)
        out[i].backward = [ba = std::move(qa[i].backward),
                           bb = std::move(qb[i].backward)](const Matrix& dy) {
          const Matrix half = dy / 2.0f;
          if (ba) ba(half);
          if (bb) bb(half);
        };
    }
    return out;
  }

 protected:
  Embedded op_project(Embedded input, RelationId rel, Mode mode, Rng*) override {
    check_relation(rel, relation_count_);
    const Index d = cfg_.embed_dim;
    MlpStack* net = &active_->project;
    const Matrix x = hcat(input.value, relations_.value.row(rel));
    if (mode == Mode::eval) return {net->forward(x), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = net->forward(x, cache.get());
    return {std::move(y),
            [this, net, cache, child = std::move(input.backward), rel, d](const Matrix& dy) {
              const Matrix dx = net->backward(*cache, dy);
              relations_.grad.row(rel) += dx.row(0).segment(d, d);
              if (child) child(dx.leftCols(d));
            }};
  }

  Embedded op_intersect(std::vector<Embedded> inputs, Mode mode, Rng*) override {
    if (inputs.size() < 2) throw DimensionError("intersection needs at least 2 inputs");
    Embedded acc = std::move(inputs[0]);
    for (std::size_t i = 1; i < inputs.size(); ++i) {
      count_fold();
      MlpStack* net = &active_->intersect;
      const Index d = cfg_.embed_dim;
      const Matrix x = hcat(acc.value, inputs[i].value);
      if (mode == Mode::eval) {
        acc = {net->forward(x), nullptr};
        continue;
      }
      auto cache = std::make_shared<MlpStack::Cache>();
      Matrix y = net->forward(x, cache.get());
      acc = {std::move(y),
             [net, cache, ba = std::move(acc.backward),
              bb = std::move(inputs[i].backward), d](const Matrix& dy) {
               const Matrix dx = net->backward(*cache, dy);
               if (ba) ba(dx.leftCols(d));
               if (bb) bb(dx.rightCols(d));
             }};
    }
    return acc;
  }

  Embedded op_negate(Embedded input, Mode mode, Rng*) override {
    MlpStack* net = &active_->negate;
    if (mode == Mode::eval) return {net->forward(input.value), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = net->forward(input.value, cache.get());
    return {std::move(y), [net, cache, child = std::move(input.backward)](const Matrix& dy) {
              const Matrix dx = net->backward(*cache, dy);
              if (child) child(dx);
            }};
  }

  void collect_params(std::vector<Parameter*>& out) override {
    a_.collect(out);
    b_.collect(out);
  }

 private:
  MlpBundle a_;
  MlpBundle b_;
  MlpBundle* active_ = &a_;
};

// ---- MLP-Mixer -----------------------------------------------------------------

// The two inputs are the two patches; channels are the d coordinates. One
// shared per-patch affine, N modules of x + drop(W2·relu(W1·ln(x))), mean
// pool over patches, affine out.
struct MixerNet {
  struct Module {
    LayerNorm ln;
    Affine w1, w2;
  };

  Affine per_patch;
  std::vector<Module> modules;
  Dropout drop;
  Affine out;

  MixerNet(Index d, int n_modules, Scalar drop_prob, const std::string& name, Rng& rng)
      : per_patch(d, d, name + ".per_patch", rng), drop(1.0f - drop_prob) {
    modules.reserve(n_modules);
    for (int i = 0; i < n_modules; ++i) {
      const std::string m = name + ".mod" + std::to_string(i);
      modules.push_back(Module{LayerNorm(d, m + ".ln"), Affine(d, d, m + ".w1", rng),
                               Affine(d, d, m + ".w2", rng)});
    }
    out = Affine(d, d, name + ".out", rng);
  }

  struct PatchCache {
    Affine::Cache pp;
    struct ModCache {
      LayerNorm::Cache ln;
      Affine::Cache c1;
      Matrix pre;
      Affine::Cache c2;
      Dropout::Cache dc;
    };
    std::vector<ModCache> mods;
  };
  struct Cache {
    PatchCache patch[2];
    Affine::Cache fin;
  };

  Matrix forward_patch(const Matrix& x, bool train, Rng* rng, PatchCache* cache) {
    if (cache) cache->mods.resize(modules.size());
    Matrix h = per_patch.forward(x, cache ? &cache->pp : nullptr);
    for (std::size_t i = 0; i < modules.size(); ++i) {
      Module& m = modules[i];
      PatchCache::ModCache* mc = cache ? &cache->mods[i] : nullptr;
      Matrix t = m.ln.forward(h, mc ? &mc->ln : nullptr);
      Matrix pre = m.w1.forward(t, mc ? &mc->c1 : nullptr);
      Matrix act = relu(pre);
      if (mc) mc->pre = std::move(pre);
      Matrix o = m.w2.forward(act, mc ? &mc->c2 : nullptr);
      if (train)
        h += drop.forward(o, true, *rng, mc ? &mc->dc : nullptr);
      else
        h += o;
    }
    return h;
  }

  Matrix backward_patch(const PatchCache& cache, Matrix dh) {
    for (std::size_t i = modules.size(); i-- > 0;) {
      Module& m = modules[i];
      const PatchCache::ModCache& mc = cache.mods[i];
      Matrix dbranch = drop.backward(mc.dc, dh);
      dbranch = m.w2.backward(mc.c2, dbranch);
      dbranch = relu_backward(mc.pre, dbranch);
      dbranch = m.w1.backward(mc.c1, dbranch);
      dh += m.ln.backward(mc.ln, dbranch);
    }
    return per_patch.backward(cache.pp, dh);
  }

  Matrix forward(const Matrix& u, const Matrix& v, bool train, Rng* rng, Cache* cache) {
    Matrix hu = forward_patch(u, train, rng, cache ? &cache->patch[0] : nullptr);
    Matrix hv = forward_patch(v, train, rng, cache ? &cache->patch[1] : nullptr);
    const Matrix pooled = (hu + hv) / 2.0f;
    return out.forward(pooled, cache ? &cache->fin : nullptr);
  }

  std::pair<Matrix, Matrix> backward(const Cache& cache, const Matrix& dy) {
    const Matrix dpool = out.backward(cache.fin, dy) / 2.0f;
    return {backward_patch(cache.patch[0], dpool), backward_patch(cache.patch[1], dpool)};
  }

  void collect(std::vector<Parameter*>& o) {
    per_patch.collect(o);
    for (Module& m : modules) {
      m.ln.collect(o);
      m.w1.collect(o);
      m.w2.collect(o);
    }
    out.collect(o);
  }
};

class MixerModel : public Model {
 public:
  MixerModel(const ModelConfig& cfg, std::uint32_t ne, std::uint32_t nr, Rng& rng)
      : Model(cfg, ne, nr, cfg.embed_dim, rng),
        project_(cfg.embed_dim, cfg.mixer_blocks, cfg.mixer_dropout, "project", rng),
        intersect_(cfg.embed_dim, cfg.mixer_blocks, cfg.mixer_dropout, "intersect", rng) {}

 protected:
  Embedded op_project(Embedded input, RelationId rel, Mode mode, Rng* rng) override {
    check_relation(rel, relation_count_);
    const Matrix r = relations_.value.row(rel);
    if (mode == Mode::eval)
      return {project_.forward(input.value, r, false, nullptr, nullptr), nullptr};
    auto cache = std::make_shared<MixerNet::Cache>();
    Matrix y = project_.forward(input.value, r, true, rng, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward), rel](const Matrix& dy) {
              auto [du, dv] = project_.backward(*cache, dy);
              relations_.grad.row(rel) += dv.row(0);
              if (child) child(du);
            }};
  }

  Embedded op_intersect(std::vector<Embedded> inputs, Mode mode, Rng* rng) override {
    if (inputs.size() < 2) throw DimensionError("intersection needs at least 2 inputs");
    Embedded acc = std::move(inputs[0]);
    for (std::size_t i = 1; i < inputs.size(); ++i) {
      count_fold();
      if (mode == Mode::eval) {
        acc = {intersect_.forward(acc.value, inputs[i].value, false, nullptr, nullptr),
               nullptr};
        continue;
      }
      auto cache = std::make_shared<MixerNet::Cache>();
      Matrix y = intersect_.forward(acc.value, inputs[i].value, true, rng, cache.get());
      acc = {std::move(y),
             [this, cache, ba = std::move(acc.backward),
              bb = std::move(inputs[i].backward)](const Matrix& dy) {
               auto [du, dv] = intersect_.backward(*cache, dy);
               if (ba) ba(du);
               if (bb) bb(dv);
             }};
    }
    return acc;
  }

  Embedded op_negate(Embedded, Mode, Rng*) override {
    throw UnsupportedOperatorError(
        "the mixer architecture has no 1-input form; negation queries are "
        "unsupported for the mlp-mixer family");
  }

  void collect_params(std::vector<Parameter*>& out) override {
    project_.collect(out);
    intersect_.collect(out);
  }

 private:
  MixerNet project_;
  MixerNet intersect_;
};

// ---- CNN ------------------------------------------------------------------------

// Appendix-style operator: each d-vector runs through conv(1→10, k=6) →
// relu → conv(10→10, k=6) → relu → maxpool(6); a 2-input operator applies the
// same tower to both inputs and concatenates before the three affine layers.
struct CnnTower {
  Conv1d conv1, conv2;
  MaxPool1d pool{6};

  CnnTower(const std::string& name, Rng& rng)
      : conv1(1, 10, 6, name + ".conv1", rng), conv2(10, 10, 6, name + ".conv2", rng) {}

  struct Cache {
    Conv1d::Cache c1, c2;
    Matrix pre1, pre2;
    MaxPool1d::Cache pc;
    Index pooled_rows = 0, pooled_cols = 0;
  };

  static Index flat_dim(Index d) { return 10 * ((d - 10) / 6); }

  Matrix forward(const Matrix& x, Cache* cache) {
    Matrix h = conv1.forward(x, cache ? &cache->c1 : nullptr);
    Matrix a = relu(h);
    if (cache) cache->pre1 = std::move(h);
    Matrix h2 = conv2.forward(a, cache ? &cache->c2 : nullptr);
    Matrix a2 = relu(h2);
    if (cache) cache->pre2 = std::move(h2);
    Matrix p = pool.forward(a2, cache ? &cache->pc : nullptr);
    if (cache) {
      cache->pooled_rows = p.rows();
      cache->pooled_cols = p.cols();
    }
    return Eigen::Map<const Matrix>(p.data(), 1, p.size());
  }

  Matrix backward(const Cache& cache, const Matrix& dflat) {
    const Matrix dp =
        Eigen::Map<const Matrix>(dflat.data(), cache.pooled_rows, cache.pooled_cols);
    Matrix d2 = pool.backward(cache.pc, dp);
    d2 = relu_backward(cache.pre2, d2);
    d2 = conv2.backward(cache.c2, d2);
    d2 = relu_backward(cache.pre1, d2);
    return conv1.backward(cache.c1, d2);
  }

  void collect(std::vector<Parameter*>& out) {
    conv1.collect(out);
    conv2.collect(out);
  }
};

struct CnnOp {
  CnnTower tower;
  Affine fc1, fc2, fc3;
  int arity;

  CnnOp(Index d, int arity_, const std::string& name, Rng& rng)
      : tower(name + ".tower", rng),
        fc1(arity_ * CnnTower::flat_dim(d), d, name + ".fc1", rng),
        fc2(d, d, name + ".fc2", rng),
        fc3(d, d, name + ".fc3", rng),
        arity(arity_) {}

  struct Cache {
    std::vector<CnnTower::Cache> towers;
    Affine::Cache a1, a2, a3;
    Matrix pre1, pre2;
  };

  Matrix forward(const std::vector<Matrix>& xs, Cache* cache) {
    if (cache) cache->towers.resize(xs.size());
    Matrix flat(1, 0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Matrix f = tower.forward(xs[i], cache ? &cache->towers[i] : nullptr);
      Matrix joined(1, flat.cols() + f.cols());
      if (flat.cols() > 0)
        joined << flat, f;
      else
        joined = f;
      flat = std::move(joined);
    }
    Matrix h1 = fc1.forward(flat, cache ? &cache->a1 : nullptr);
    Matrix r1 = relu(h1);
    if (cache) cache->pre1 = std::move(h1);
    Matrix h2 = fc2.forward(r1, cache ? &cache->a2 : nullptr);
    Matrix r2 = relu(h2);
    if (cache) cache->pre2 = std::move(h2);
    return fc3.forward(r2, cache ? &cache->a3 : nullptr);
  }

  std::vector<Matrix> backward(const Cache& cache, const Matrix& dy) {
    Matrix d = fc3.backward(cache.a3, dy);
    d = relu_backward(cache.pre2, d);
    d = fc2.backward(cache.a2, d);
    d = relu_backward(cache.pre1, d);
    d = fc1.backward(cache.a1, d);
    std::vector<Matrix> dxs;
    const Index per = d.cols() / static_cast<Index>(cache.towers.size());
    for (std::size_t i = 0; i < cache.towers.size(); ++i)
      dxs.push_back(tower.backward(cache.towers[i],
                                   d.block(0, static_cast<Index>(i) * per, 1, per)));
    return dxs;
  }

  void collect(std::vector<Parameter*>& out) {
    tower.collect(out);
    fc1.collect(out);
    fc2.collect(out);
    fc3.collect(out);
  }
};

class CnnModel : public Model {
 public:
  CnnModel(const ModelConfig& cfg, std::uint32_t ne, std::uint32_t nr, Rng& rng)
      : Model(cfg, ne, nr, cfg.embed_dim, rng),
        project_(cfg.embed_dim, 2, "project", rng),
        intersect_(cfg.embed_dim, 2, "intersect", rng),
        negate_(cfg.embed_dim, 1, "negate", rng) {}

 protected:
  Embedded op_project(Embedded input, RelationId rel, Mode mode, Rng*) override {
    check_relation(rel, relation_count_);
    const std::vector<Matrix> xs{input.value, relations_.value.row(rel)};
    if (mode == Mode::eval) return {project_.forward(xs, nullptr), nullptr};
    auto cache = std::make_shared<CnnOp::Cache>();
    Matrix y = project_.forward(xs, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward), rel](const Matrix& dy) {
              const std::vector<Matrix> dxs = project_.backward(*cache, dy);
              relations_.grad.row(rel) += dxs[1].row(0);
              if (child) child(dxs[0]);
            }};
  }

  Embedded op_intersect(std::vector<Embedded> inputs, Mode mode, Rng*) override {
    if (inputs.size() < 2) throw DimensionError("intersection needs at least 2 inputs");
    Embedded acc = std::move(inputs[0]);
    for (std::size_t i = 1; i < inputs.size(); ++i) {
      count_fold();
      const std::vector<Matrix> xs{acc.value, inputs[i].value};
      if (mode == Mode::eval) {
        acc = {intersect_.forward(xs, nullptr), nullptr};
        continue;
      }
      auto cache = std::make_shared<CnnOp::Cache>();
      Matrix y = intersect_.forward(xs, cache.get());
      acc = {std::move(y),
             [this, cache, ba = std::move(acc.backward),
              bb = std::move(inputs[i].backward)](const Matrix& dy) {
               const std::vector<Matrix> dxs = intersect_.backward(*cache, dy);
               if (ba) ba(dxs[0]);
               if (bb) bb(dxs[1]);
             }};
    }
    return acc;
  }

  Embedded op_negate(Embedded input, Mode mode, Rng*) override {
    const std::vector<Matrix> xs{input.value};
    if (mode == Mode::eval) return {negate_.forward(xs, nullptr), nullptr};
    auto cache = std::make_shared<CnnOp::Cache>();
    Matrix y = negate_.forward(xs, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward)](const Matrix& dy) {
              const std::vector<Matrix> dxs = negate_.backward(*cache, dy);
              if (child) child(dxs[0]);
            }};
  }

  void collect_params(std::vector<Parameter*>& out) override {
    project_.collect(out);
    intersect_.collect(out);
    negate_.collect(out);
  }

 private:
  CnnOp project_;
  CnnOp intersect_;
  CnnOp negate_;
};

// ---- NLN -------------------------------------------------------------------------

// Projection is a per-relation d×d matrix (rows of the relation table hold the
// flattened matrices, initialized near identity); conjunction is the 2-input
// AND network; negation is the plain perceptron. T/F are learnable anchors
// used by the logical regularizer.
struct AndNet {
  Affine h1;      // 2d → d
  Parameter h2;   // d × d, no outer bias

  AndNet(Index d, const std::string& name, Rng& rng)
      : h1(2 * d, d, name + ".h1", rng), h2(d, d, name + ".h2") {
    glorot_fill(h2, d, d, rng);
  }

  struct Cache {
    Affine::Cache c1;
    Matrix pre;
    Matrix act;
  };

  Matrix forward(const Matrix& uv, Cache* cache) {
    Matrix pre = h1.forward(uv, cache ? &cache->c1 : nullptr);
    Matrix act = relu(pre);
    Matrix y = act * h2.value;
    if (cache) {
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return y;
  }

  Matrix backward(const Cache& cache, const Matrix& dy) {
    h2.grad.noalias() += cache.act.transpose() * dy;
    Matrix dact = dy * h2.value.transpose();
    Matrix dpre = relu_backward(cache.pre, dact);
    return h1.backward(cache.c1, dpre);
  }

  void collect(std::vector<Parameter*>& out) {
    h1.collect(out);
    out.push_back(&h2);
  }
};

class NlnModel : public Model {
 public:
  NlnModel(const ModelConfig& cfg, std::uint32_t ne, std::uint32_t nr, Rng& rng)
      : Model(cfg, ne, nr, static_cast<Index>(cfg.embed_dim) * cfg.embed_dim, rng),
        and_(cfg.embed_dim, "and", rng),
        negate_(cfg.embed_dim, cfg.embed_dim, cfg.mlp_layers, "negate", rng),
        t_(1, cfg.embed_dim, "true"),
        f_(1, cfg.embed_dim, "false") {
    // Relation matrices start at identity plus noise so an untrained
    // projection is near the identity map.
    const Index d = cfg.embed_dim;
    for (std::uint32_t r = 0; r < nr; ++r)
      for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
          relations_.value(r, i * d + j) =
              (i == j ? 1.0f : 0.0f) + static_cast<Scalar>(rng.uniform(-0.01, 0.01));
    t_.value.setOnes();
    f_.value.setConstant(-1.0f);
  }

  double regularizer(const Matrix& w, Matrix* dw, Mode mode,
                     double grad_scale) override;

 protected:
  Embedded op_project(Embedded input, RelationId rel, Mode mode, Rng*) override {
    check_relation(rel, relation_count_);
    const Index d = cfg_.embed_dim;
    const Eigen::Map<const Matrix> m(relations_.value.row(rel).data(), d, d);
    Matrix y = input.value * m;
    if (mode == Mode::eval) return {std::move(y), nullptr};
    auto x = std::make_shared<Matrix>(input.value);
    return {std::move(y),
            [this, x, child = std::move(input.backward), rel, d](const Matrix& dy) {
              const Eigen::Map<const Matrix> m(relations_.value.row(rel).data(), d, d);
              Eigen::Map<Matrix> dm(relations_.grad.row(rel).data(), d, d);
              dm.noalias() += x->transpose() * dy;
              if (child) child(dy * m.transpose());
            }};
  }

  Embedded op_intersect(std::vector<Embedded> inputs, Mode mode, Rng*) override {
    if (inputs.size() < 2) throw DimensionError("intersection needs at least 2 inputs");
    Embedded acc = std::move(inputs[0]);
    for (std::size_t i = 1; i < inputs.size(); ++i) {
      count_fold();
      const Index d = cfg_.embed_dim;
      const Matrix x = hcat(acc.value, inputs[i].value);
      if (mode == Mode::eval) {
        acc = {and_.forward(x, nullptr), nullptr};
        continue;
      }
      auto cache = std::make_shared<AndNet::Cache>();
      Matrix y = and_.forward(x, cache.get());
      acc = {std::move(y),
             [this, cache, ba = std::move(acc.backward),
              bb = std::move(inputs[i].backward), d](const Matrix& dy) {
               const Matrix dx = and_.backward(*cache, dy);
               if (ba) ba(dx.leftCols(d));
               if (bb) bb(dx.rightCols(d));
             }};
    }
    return acc;
  }

  Embedded op_negate(Embedded input, Mode mode, Rng*) override {
    if (mode == Mode::eval) return {negate_.forward(input.value), nullptr};
    auto cache = std::make_shared<MlpStack::Cache>();
    Matrix y = negate_.forward(input.value, cache.get());
    return {std::move(y),
            [this, cache, child = std::move(input.backward)](const Matrix& dy) {
              const Matrix dx = negate_.backward(*cache, dy);
              if (child) child(dx);
            }};
  }

  void collect_params(std::vector<Parameter*>& out) override {
    and_.collect(out);
    negate_.collect(out);
    out.push_back(&t_);
    out.push_back(&f_);
  }

 private:
  AndNet and_;
  MlpStack negate_;
  Parameter t_;
  Parameter f_;
};

// Sim(x, y) = 1 / (1 + ‖x−y‖); each regularizer row sums 1 − Sim over the
// batch. d(1−Sim)/dx = Sim² · (x−y)/‖x−y‖ (zero at x = y).
double NlnModel::regularizer(const Matrix& w, Matrix* dw, Mode mode,
                             double grad_scale) {
  const bool train = mode == Mode::train;
  const Index n = w.rows(), d = w.cols();
  if (train && !dw) throw ConfigError("training-mode regularizer needs a dw sink");
  if (dw) dw->setZero(n, d);

  double total = 0.0;
  const Scalar gw =
      static_cast<Scalar>(cfg_.nln_regularizer_weight * grad_scale);

  // Accumulates the scalar term and fills the weighted d/dx and d/dy per row.
  const auto sim_terms = [&](const Matrix& x, const Matrix& y, Matrix& dx_out,
                             Matrix& dy_out) {
    dx_out.setZero(n, d);
    dy_out.setZero(n, d);
    for (Index i = 0; i < n; ++i) {
      const Matrix diff = x.row(i) - y.row(i);
      const double dist = diff.norm();
      const double sim = 1.0 / (1.0 + dist);
      total += 1.0 - sim;
      if (dist > 1e-12) {
        const Scalar scale = gw * static_cast<Scalar>(sim * sim / dist);
        dx_out.row(i) = scale * diff;
        dy_out.row(i) = -scale * diff;
      }
    }
  };

  const Matrix t_rep = t_.value.replicate(n, 1);
  const Matrix f_rep = f_.value.replicate(n, 1);
  Matrix dx(n, d), dy(n, d);

  // w ∧ T = w
  {
    AndNet::Cache cache;
    const Matrix x1 = and_.forward(hcat(w, t_rep), train ? &cache : nullptr);
    sim_terms(x1, w, dx, dy);
    if (train) {
      const Matrix duv = and_.backward(cache, dx);
      *dw += duv.leftCols(d);
      t_.grad.row(0) += duv.rightCols(d).colwise().sum();
      *dw += dy;
    }
  }
  // w ∧ F = F
  {
    AndNet::Cache cache;
    const Matrix x2 = and_.forward(hcat(w, f_rep), train ? &cache : nullptr);
    sim_terms(x2, f_rep, dx, dy);
    if (train) {
      const Matrix duv = and_.backward(cache, dx);
      *dw += duv.leftCols(d);
      f_.grad.row(0) += duv.rightCols(d).colwise().sum();
      f_.grad.row(0) += dy.colwise().sum();
    }
  }
  // w ∧ w = w
  {
    AndNet::Cache cache;
    const Matrix x3 = and_.forward(hcat(w, w), train ? &cache : nullptr);
    sim_terms(x3, w, dx, dy);
    if (train) {
      const Matrix duv = and_.backward(cache, dx);
      *dw += duv.leftCols(d);
      *dw += duv.rightCols(d);
      *dw += dy;
    }
  }
  // w ∧ ¬w = F
  {
    MlpStack::Cache ncache;
    AndNet::Cache cache;
    const Matrix nw = negate_.forward(w, train ? &ncache : nullptr);
    const Matrix x4 = and_.forward(hcat(w, nw), train ? &cache : nullptr);
    sim_terms(x4, f_rep, dx, dy);
    if (train) {
      const Matrix duv = and_.backward(cache, dx);
      *dw += duv.leftCols(d);
      *dw += negate_.backward(ncache, duv.rightCols(d));
      f_.grad.row(0) += dy.colwise().sum();
    }
  }
  return cfg_.nln_regularizer_weight * total;
}

}  // namespace

std::unique_ptr<Model> make_model(const ModelConfig& cfg, std::uint32_t entity_count,
                                  std::uint32_t relation_count, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  switch (cfg.family) {
    case ModelFamily::mlp:
      return std::make_unique<MlpModel>(cfg, entity_count, relation_count, rng);
    case ModelFamily::mlp_mixer:
      return std::make_unique<MixerModel>(cfg, entity_count, relation_count, rng);
    case ModelFamily::mlp_attention:
      return std::make_unique<AttentionModel>(cfg, entity_count, relation_count, rng);
    case ModelFamily::mlp_2vector:
      return std::make_unique<TwoVectorModel>(cfg, entity_count, relation_count, rng);
    case ModelFamily::cnn:
      return std::make_unique<CnnModel>(cfg, entity_count, relation_count, rng);
    case ModelFamily::nln:
      return std::make_unique<NlnModel>(cfg, entity_count, relation_count, rng);
  }
  throw std::logic_error("unreachable");
}

}  // namespace nnkg
