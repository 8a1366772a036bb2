#include "tgcn/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "tgcn/parallel.hpp"

namespace tgcn {

void Ensemble::check() const {
  if (models.empty()) throw ValueError("ensemble is empty");
  stft.check();
  const auto& first = models[0].config();
  for (const auto& m : models) {
    const auto& c = m.config();
    if (c.input_frames != first.input_frames || c.input_bins != first.input_bins ||
        c.collapse_input != first.collapse_input)
      throw ValueError("ensemble members disagree on the input contract");
  }
}

AttributionResult gradient_attribution(Ensemble& ensemble,
                                       const StructuralTimeSeries& sample) {
  ensemble.check();
  const std::size_t n = ensemble.models.size();
  std::vector<Tensor> grads(n);
  parallel_for(n, [&](std::size_t i) {
    TgcnModel& model = ensemble.models[i];
    model.set_mode(Mode::Eval);
    Tape tape;
    const Value x = tape.leaf(sample.x);
    const Value pre = stft_log_magnitude(tape, x, ensemble.stft);
    TgcnModel::Binding binding = model.bind(tape);
    auto out = model.forward(tape, binding, pre, sample.adjacency);
    tape.backward(out.logit);
    grads[i] = tape.grad(x);
  });

  AttributionResult result;
  result.kind = AttributionResult::Kind::Gradient;
  result.sample_id = sample.id;
  result.ensemble_size = static_cast<int>(n);
  result.scores = Tensor(sample.x.shape());
  for (std::size_t j = 0; j < result.scores.numel(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += grads[i][j];
    result.scores[j] = std::abs(acc / static_cast<double>(n));
  }
  return result;
}

namespace {

StructuralTimeSeries drop_leads(const StructuralTimeSeries& sample,
                                const NodeDrop& nd) {
  StructuralTimeSeries out;
  out.adjacency = nd.adjacency;
  out.label = sample.label;
  out.id = sample.id;
  const int t = sample.x.extent(0);
  const int p = sample.x.extent(1);
  const int q = static_cast<int>(nd.kept.size());
  out.x = Tensor({t, q});
  for (int tt = 0; tt < t; ++tt)
    for (int j = 0; j < q; ++j)
      out.x[static_cast<std::size_t>(tt) * q + j] =
          sample.x[static_cast<std::size_t>(tt) * p + nd.kept[static_cast<std::size_t>(j)]];
  return out;
}

}  // namespace

std::vector<DropoutScore> sequence_dropout(
    Ensemble& ensemble, const StructuralTimeSeries& sample,
    const std::vector<std::vector<int>>& drops) {
  ensemble.check();
  const int p = sample.x.extent(1);
  for (const auto& d : drops)
    if (static_cast<int>(d.size()) >= p)
      throw ValueError("sequence dropout: a drop set must leave at least one lead");

  const std::size_t n = ensemble.models.size();
  std::vector<double> full_logits(n);
  parallel_for(n, [&](std::size_t i) {
    TgcnModel& model = ensemble.models[i];
    model.set_mode(Mode::Eval);
    full_logits[i] =
        model.predict_logit(stft_log_magnitude(sample.x, ensemble.stft),
                            sample.adjacency);
  });

  std::vector<DropoutScore> scores(drops.size());
  for (std::size_t d = 0; d < drops.size(); ++d) {
    DropoutScore& score = scores[d];
    score.drop_set = drops[d];
    std::sort(score.drop_set.begin(), score.drop_set.end());
    score.per_model.resize(n);
    if (score.drop_set.empty()) {
      // Nothing removed: the reduction is 0 by definition.
      std::fill(score.per_model.begin(), score.per_model.end(), 0.0);
      continue;
    }
    const NodeDrop nd = drop_nodes(sample.adjacency, score.drop_set);
    const StructuralTimeSeries reduced = drop_leads(sample, nd);
    const Tensor pre = stft_log_magnitude(reduced.x, ensemble.stft);
    parallel_for(n, [&](std::size_t i) {
      const double logit =
          ensemble.models[i].predict_logit(pre, reduced.adjacency);
      score.per_model[i] = full_logits[i] - logit;
    });
  }
  for (auto& score : scores) {
    double acc = 0.0;
    for (double r : score.per_model) acc += r;
    score.mean_reduction = acc / static_cast<double>(n);
  }
  return scores;
}

std::vector<std::vector<int>> singleton_drops(int p) {
  if (p < 2) throw ValueError("singleton drops need at least two leads");
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) out.push_back({i});
  return out;
}

std::vector<std::vector<int>> region_drops(const EegTopology& topo,
                                           const std::vector<std::string>& leads) {
  std::vector<std::vector<int>> out;
  for (const auto& region : topo.regions) {
    std::vector<int> drop;
    for (const auto& lead : region.leads) {
      int idx = -1;
      for (std::size_t i = 0; i < leads.size(); ++i)
        if (leads[i] == lead) {
          idx = static_cast<int>(i);
          break;
        }
      if (idx < 0)
        throw DataError("region '" + region.name + "' references lead '" + lead +
                        "' not present in the dataset");
      drop.push_back(idx);
    }
    std::sort(drop.begin(), drop.end());
    out.push_back(std::move(drop));
  }
  return out;
}

Tensor render_overlay_data(const AttributionResult& attribution,
                           const std::vector<std::pair<int, int>>& montage_pairs) {
  if (attribution.kind != AttributionResult::Kind::Gradient)
    throw ValueError("overlay rendering needs a gradient attribution");
  const Tensor& s = attribution.scores;
  const int t = s.extent(0);
  const int p = s.extent(1);
  const int np = static_cast<int>(montage_pairs.size());
  for (auto [a, b] : montage_pairs)
    if (a < 0 || a >= p || b < 0 || b >= p)
      throw ValueError("montage pair references an unknown lead index");
  Tensor out({t, np});
  for (int tt = 0; tt < t; ++tt)
    for (int j = 0; j < np; ++j)
      out[static_cast<std::size_t>(tt) * np + j] =
          s[static_cast<std::size_t>(tt) * p + montage_pairs[static_cast<std::size_t>(j)].first] +
          s[static_cast<std::size_t>(tt) * p + montage_pairs[static_cast<std::size_t>(j)].second];
  return out;
}

std::string attribution_csv(const AttributionResult& attribution,
                            const std::vector<std::string>& leads) {
  const Tensor& s = attribution.scores;
  const int t = s.extent(0);
  const int p = s.extent(1);
  std::ostringstream os;
  os << "t,lead,score\n";
  char buf[40];
  for (int tt = 0; tt < t; ++tt)
    for (int n = 0; n < p; ++n) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    s[static_cast<std::size_t>(tt) * p + n]);
      os << tt << ",";
      if (static_cast<std::size_t>(n) < leads.size())
        os << leads[static_cast<std::size_t>(n)];
      else
        os << n;
      os << "," << buf << "\n";
    }
  return os.str();
}

std::string dropout_json(const std::vector<DropoutScore>& scores,
                         const std::vector<std::string>& leads,
                         const std::vector<std::string>& group_names) {
  nlohmann::json out;
  out["metadata"] = {
      {"note",
       "batch-norm running statistics are used as-is for reduced inputs"}};
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    nlohmann::json entry;
    nlohmann::json set = nlohmann::json::array();
    for (int idx : scores[i].drop_set) {
      if (static_cast<std::size_t>(idx) < leads.size())
        set.push_back(leads[static_cast<std::size_t>(idx)]);
      else
        set.push_back(idx);
    }
    entry["drop_set"] = set;
    if (i < group_names.size()) entry["group"] = group_names[i];
    entry["mean_reduction"] = scores[i].mean_reduction;
    entry["per_model_reductions"] = scores[i].per_model;
    entries.push_back(entry);
  }
  out["scores"] = entries;
  return out.dump(2) + "\n";
}

}  // namespace tgcn
