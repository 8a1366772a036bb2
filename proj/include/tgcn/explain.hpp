#pragma once

#include <string>
#include <vector>

#include "tgcn/data.hpp"
#include "tgcn/model.hpp"
#include "tgcn/stft.hpp"

namespace tgcn {

// Models sharing one input contract (config input shape and preprocessing).
// scores are averaged across members, so a single strong model highlighting
// only part of the evidence is smoothed out.
struct Ensemble {
  std::vector<TgcnModel> models;
  StftSpec stft;

  void check() const;  // non-empty, matching input contracts
};

struct AttributionResult {
  enum class Kind { Gradient, DropoutSingle, DropoutGroup };
  Kind kind = Kind::Gradient;
  Tensor scores;  // gradient kind: T_raw x p, elementwise >= 0
  std::int64_t sample_id = 0;
  int ensemble_size = 0;
};

// d logit / d raw waveform for each member, backward through the head, the
// STC stack, and the STFT; gradients averaged across members, then the
// absolute value is taken.
AttributionResult gradient_attribution(Ensemble& ensemble,
                                       const StructuralTimeSeries& sample);

struct DropoutScore {
  std::vector<int> drop_set;            // original node indices, ascending
  double mean_reduction = 0.0;          // mean over members of full - dropped
  std::vector<double> per_model;
};

// Removes each drop set's leads entirely (signal rows and adjacency
// rows/columns), re-runs the models on the reduced graph, and scores the set
// by the reduction in the logit. The empty set scores exactly 0.
std::vector<DropoutScore> sequence_dropout(
    Ensemble& ensemble, const StructuralTimeSeries& sample,
    const std::vector<std::vector<int>>& drops);

// All p one-lead sets, ascending.
std::vector<std::vector<int>> singleton_drops(int p);
// The eight brain-region groups resolved against the dataset's lead names.
std::vector<std::vector<int>> region_drops(const EegTopology& topo,
                                           const std::vector<std::string>& leads);

// Per montage pair (a, b): intensity(t) = score(t, a) + score(t, b).
// Output: T_raw x n_pairs.
Tensor render_overlay_data(const AttributionResult& attribution,
                           const std::vector<std::pair<int, int>>& montage_pairs);

// `t,lead,score` long format; lead printed by name when names are given.
std::string attribution_csv(const AttributionResult& attribution,
                            const std::vector<std::string>& leads);

// JSON array of {drop_set, mean_reduction, per_model_reductions}, with a
// metadata object noting that eval-mode batch-norm statistics are used as-is
// for the reduced inputs.
std::string dropout_json(const std::vector<DropoutScore>& scores,
                         const std::vector<std::string>& leads,
                         const std::vector<std::string>& group_names = {});

}  // namespace tgcn
