#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tgcn/graph.hpp"
#include "tgcn/layers.hpp"
#include "tgcn/tape.hpp"

namespace tgcn {

struct BlockConfig {
  std::vector<StcLayerSpec> layers;
  ReduceKind pool = ReduceKind::Max;
};

struct ArchitectureConfig {
  std::string name;       // "I".."V" for the named configs, else free-form
  int input_frames = 599; // temporal extent of the preprocessed input
  int input_bins = 33;    // channels of the preprocessed input
  std::vector<BlockConfig> blocks;
  std::vector<int> head_hidden = {512, 512};
  double dropout_p = 0.2;
  // Plain TCNN baseline: leads are folded into the channel axis, the graph is
  // a single self-looped node, and no structural information is used.
  bool collapse_input = false;

  void check() const;
};

// Table row "STC k-t-c", four blocks with channels 32/64/128/256 and max
// temporal pooling, 512/512 head. Layer counts per block: I=1, II=2, III=3,
// IV=3 (first k=0), V=4 (first two k=0).
ArchitectureConfig named_config(const std::string& name, StcRule rule,
                                ReduceKind aggregate = ReduceKind::Max,
                                bool use_g1 = false);

// Canonical text form, e.g. `block { stc 1-3-32; stc 1-3-32; pool max }`.
std::string config_to_text(const ArchitectureConfig& config);
ArchitectureConfig config_from_text(const std::string& text);

// Closed-form trainable parameter count; a pure function of the config,
// independent of any adjacency.
std::size_t param_count(const ArchitectureConfig& config);

struct NamedTensor {
  std::string name;
  Tensor value;
};

class TgcnModel {
 public:
  TgcnModel();
  ~TgcnModel();
  TgcnModel(const TgcnModel& other);
  TgcnModel& operator=(const TgcnModel& other);
  TgcnModel(TgcnModel&&) noexcept;
  TgcnModel& operator=(TgcnModel&&) noexcept;

  // Deterministic fan-in-scaled uniform initialization from the seed.
  static TgcnModel build(const ArchitectureConfig& config, std::uint64_t seed);

  const ArchitectureConfig& config() const { return config_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  // Batch-norm running statistics (non-trainable), in layer order.
  std::vector<BatchNormState>& bn_states() { return bn_states_; }
  const std::vector<BatchNormState>& bn_states() const { return bn_states_; }
  // Named copies of the running statistics, for inspection and persistence.
  std::vector<NamedTensor> buffers() const;
  std::size_t param_count() const;  // total elements across params()

  // Registers every parameter as a tape leaf, in store order. One binding can
  // serve many forward calls on the same tape (a whole minibatch).
  struct Binding {
    std::vector<Value> params;
  };
  Binding bind(Tape& tape) const;

  struct Output {
    Value logit;
    Value probability;
    Value h_final;  // representation before the head, T x p x c
  };

  // preprocessed: frames x p x bins (bins folded with leads when
  // collapse_input is set). Train mode mutates batch-norm running stats and
  // consumes rng for dropout.
  Output forward(Tape& tape, const Binding& binding, Value preprocessed,
                 const Adjacency& adjacency, Rng* rng = nullptr);
  Output forward(Tape& tape, const Binding& binding, const Tensor& preprocessed,
                 const Adjacency& adjacency, Rng* rng = nullptr);

  // Eval-style convenience: builds a private tape, returns the logit.
  double predict_logit(const Tensor& preprocessed, const Adjacency& adjacency);

 private:
  friend void save_model(const TgcnModel&, const std::string&);
  friend TgcnModel load_model(const std::string&);

  struct BnSlots {
    int gamma = -1, beta = -1;  // params_ indices
    int state = -1;             // bn_states_ index
  };
  struct LayerPlan {
    StcLayerSpec spec;
    int w_int = -1, b_int = -1;
    int w_comb = -1, b_comb = -1;
    BnSlots bn_g1, bn_main;
  };
  struct DensePlan {
    int w = -1, b = -1;
  };

  const Reachability& cached_reach(const Adjacency& a, int k);
  std::string bn_name(int state_index) const;

  ArchitectureConfig config_;
  std::vector<NamedTensor> params_;
  std::vector<BatchNormState> bn_states_;
  std::vector<std::string> bn_names_;
  std::vector<std::vector<LayerPlan>> block_plans_;
  std::vector<DensePlan> head_hidden_plans_;
  DensePlan head_out_plan_;
  Mode mode_ = Mode::Eval;

  struct ReachCache;
  std::unique_ptr<ReachCache> reach_cache_;
};

// Binary container: magic, format version, canonical config text, named
// little-endian 64-bit parameter/buffer blobs, trailing checksum.
void save_model(const TgcnModel& model, const std::string& path);
TgcnModel load_model(const std::string& path);

}  // namespace tgcn
