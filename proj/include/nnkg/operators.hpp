#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nnkg/kg.hpp"
#include "nnkg/nn.hpp"
#include "nnkg/query.hpp"

namespace nnkg {

enum class ModelFamily { mlp, mlp_mixer, mlp_attention, mlp_2vector, cnn, nln };

std::string to_string(ModelFamily f);
ModelFamily family_from_string(const std::string& name);

enum class EntityInit { random, zero };

std::string to_string(EntityInit init);
EntityInit entity_init_from_string(const std::string& name);

struct ModelConfig {
  ModelFamily family = ModelFamily::mlp;
  int embed_dim = 800;
  int mlp_layers = 2;                     // perceptron blocks before the output affine
  int mixer_blocks = 2;                   // mixer modules per block
  Scalar mixer_dropout = 0.1f;            // drop probability inside mixer modules
  Scalar nln_regularizer_weight = 0.1f;   // λ on the logical regularizer
  EntityInit entity_init = EntityInit::random;

  void validate() const;
};

enum class Mode { train, eval };

// A query embedding plus the reverse pass that produced it. backward sends
// ∂loss/∂value into every parameter (and table row) on the forward path; it
// is a linear map, so calling it with two signals accumulates their sum.
// Null in eval mode.
struct Embedded {
  Matrix value;  // 1 × d
  std::function<void(const Matrix&)> backward;
};

// One model = embedding tables + the family's logical operators. Forward
// passes record explicit per-layer caches inside the backward closures; there
// is no global tape.
class Model {
 public:
  virtual ~Model() = default;

  const ModelConfig& config() const { return cfg_; }
  std::uint32_t entity_count() const { return entity_count_; }
  std::uint32_t relation_count() const { return relation_count_; }

  Parameter& entity_table() { return entities_; }
  const Parameter& entity_table() const { return entities_; }

  // Canonical order: tables first, then family parameters; checkpoints and
  // the optimizer both key off this order.
  std::vector<Parameter*> parameters();

  // Rewrites the query to DNF and folds each conjunct bottom-up; returns one
  // embedding per conjunct (so one for every structure except 2u/up's two).
  // rng drives dropout and must be set in train mode.
  virtual std::vector<Embedded> embed_query(const QueryInstance& query, Mode mode,
                                            Rng* rng = nullptr);

  // NLN logical regularizer evaluated on a batch of intermediate vectors w
  // (one row each). Returns the weighted penalty; in training mode fills dw
  // with grad_scale · ∂penalty/∂w and accumulates its own parameter gradients
  // at the same scale (the trainer passes 1/batch). Zero for every other
  // family.
  virtual double regularizer(const Matrix& w, Matrix* dw, Mode mode,
                             double grad_scale = 1.0);

  // Number of 2-input intersection-network applications since the last reset.
  std::uint64_t fold_count() const { return fold_count_; }
  void reset_fold_count() { fold_count_ = 0; }

  // When set, every operator application appends a line such as
  // "project(4)" or "intersect(2)"; used by structural tests.
  void set_trace(std::vector<std::string>* sink) { trace_ = sink; }

 protected:
  Model(const ModelConfig& cfg, std::uint32_t entities, std::uint32_t relations,
        Index relation_cols, Rng& rng);

  Embedded embed_node(const NodePtr& node, Mode mode, Rng* rng);

  virtual Embedded op_project(Embedded input, RelationId rel, Mode mode, Rng* rng) = 0;
  virtual Embedded op_intersect(std::vector<Embedded> inputs, Mode mode, Rng* rng) = 0;
  virtual Embedded op_negate(Embedded input, Mode mode, Rng* rng) = 0;
  Embedded op_anchor(EntityId entity, Mode mode);

  virtual void collect_params(std::vector<Parameter*>& out) = 0;

  void note(const std::string& line) {
    if (trace_) trace_->push_back(line);
  }
  void count_fold() { ++fold_count_; }

  ModelConfig cfg_;
  std::uint32_t entity_count_ = 0;
  std::uint32_t relation_count_ = 0;
  Parameter entities_;   // |V| × d
  Parameter relations_;  // |R| × d, except NLN where rows are d×d matrices

 private:
  std::atomic<std::uint64_t> fold_count_{0};
  std::vector<std::string>* trace_ = nullptr;
};

// Builds the family requested by cfg; `seed` drives every random draw of the
// initialization, so construction is reproducible.
std::unique_ptr<Model> make_model(const ModelConfig& cfg, std::uint32_t entity_count,
                                  std::uint32_t relation_count, std::uint64_t seed);

}  // namespace nnkg
