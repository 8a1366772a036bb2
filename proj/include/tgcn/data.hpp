#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tgcn/graph.hpp"
#include "tgcn/tensor.hpp"

namespace tgcn {

// One epoch: raw signal (T_raw x p, one channel per lead at ingestion), its
// graph, and the epoch label.
struct StructuralTimeSeries {
  Tensor x;
  Adjacency adjacency;
  int label = 0;
  std::int64_t id = 0;
};

struct EegRegion {
  std::string name;
  std::vector<std::string> leads;
};

// The 21-lead 10-20 arrangement: lead names, a physical-neighborhood
// adjacency, the eight brain-region groups, and the standard longitudinal
// montage pairs used for attribution overlays.
struct EegTopology {
  std::vector<std::string> leads;
  Adjacency adjacency;
  std::vector<EegRegion> regions;
  std::vector<std::pair<std::string, std::string>> montage_pairs;

  int lead_index(const std::string& name) const;  // -1 when unknown
};

const EegTopology& builtin_topology();

// Edge-list asset: one `LEAD_A LEAD_B` pair per line, '#' comments allowed.
// Names are resolved against the builtin lead list.
Adjacency load_adjacency_edges(const std::string& path,
                               const std::vector<std::string>& leads);

struct SyntheticSpec {
  int p = 21;
  int t_raw = 19200;
  double sample_rate = 200.0;
  double noise_level = 1.0;      // stationary std of the AR(1) background
  double motif_freq_lo = 15.0;   // Hz band of the planted oscillation
  double motif_freq_hi = 25.0;
  double motif_amplitude = 3.0;
  double motif_duration = 10.0;  // seconds
  int origin_node = -1;          // -1: uniform per sample
  double decay = 0.5;            // amplitude factor per hop; 0 = focal
  double positive_fraction = 0.5;
  std::uint64_t seed = 0;
  Adjacency adjacency;           // topology shared by all samples

  void check() const;
};

struct Dataset {
  int p = 0;
  int t_raw = 0;
  double sample_rate = 200.0;
  std::uint64_t seed = 0;
  std::vector<std::string> leads;  // may be empty
  std::string spec_echo;           // free-form provenance, one line
  std::vector<StructuralTimeSeries> samples;
};

// Deterministic per (spec, n): sample i is a pure function of
// derive_seed(spec.seed, i). Signals are quantized to 32-bit floats, matching
// the container precision, so save/load round-trips are exact.
Dataset generate(const SyntheticSpec& spec, int n);

// The separable ingredients of sample `id`, for analysis and oracles: the
// background noise, the motif contribution (zero for negatives), the label,
// and the motif's origin/onset.
struct SyntheticParts {
  Tensor noise;   // T_raw x p
  Tensor motif;   // T_raw x p
  int label = 0;
  int origin = -1;
  double onset_seconds = 0.0;
  double frequency = 0.0;
};
SyntheticParts synth_parts(const SyntheticSpec& spec, std::int64_t id);

struct LabeledEpoch {
  Tensor x;  // epoch_samples x p
  int label = 0;
  std::int64_t index = 0;
};

// Consecutive non-overlapping windows; a window is positive iff at least one
// onset time falls inside it. The trailing partial window is discarded.
std::vector<LabeledEpoch> epoch_label(const Tensor& session, double sample_rate,
                                      const std::vector<double>& onsets_seconds,
                                      double epoch_seconds);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace tgcn
