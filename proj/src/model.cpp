#include "tgcn/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "tgcn/serialize.hpp"

namespace tgcn {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int head_input_size(const ArchitectureConfig& c) {
  int t = c.input_frames;
  for (std::size_t b = 0; b < c.blocks.size(); ++b) t = (t + 1) / 2;
  const int c_last =
      c.blocks.empty() ? c.input_bins : c.blocks.back().layers.back().c_out;
  return t * c_last;
}

}  // namespace

void ArchitectureConfig::check() const {
  if (input_frames < 1 || input_bins < 1)
    throw ValueError("config: input extents must be positive");
  if (blocks.empty()) throw ValueError("config: at least one block required");
  for (const auto& block : blocks) {
    if (block.layers.empty())
      throw ValueError("config: every block needs at least one stc layer");
    for (const auto& layer : block.layers) check_layer_spec(layer);
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ValueError("config: dropout must be in [0, 1)");
  for (int h : head_hidden)
    if (h < 1) throw ValueError("config: head sizes must be positive");
}

ArchitectureConfig named_config(const std::string& name, StcRule rule,
                                ReduceKind aggregate, bool use_g1) {
  struct Shape {
    int layers;
    int zero_k;  // leading layers with k = 0
  };
  Shape shape;
  if (name == "I")
    shape = {1, 0};
  else if (name == "II")
    shape = {2, 0};
  else if (name == "III")
    shape = {3, 0};
  else if (name == "IV")
    shape = {3, 1};
  else if (name == "V")
    shape = {4, 2};
  else
    throw ValueError("unknown named config '" + name + "' (expected I..V)");

  ArchitectureConfig config;
  config.name = name;
  const int channels[4] = {32, 64, 128, 256};
  for (int b = 0; b < 4; ++b) {
    BlockConfig block;
    for (int l = 0; l < shape.layers; ++l) {
      StcLayerSpec layer;
      layer.k = l < shape.zero_k ? 0 : 1;
      layer.t = 3;
      layer.c_out = channels[b];
      layer.rule = rule;
      layer.aggregate = aggregate;
      layer.t2 = 1;
      layer.use_g1 = use_g1;
      block.layers.push_back(layer);
    }
    block.pool = ReduceKind::Max;
    config.blocks.push_back(std::move(block));
  }
  config.check();
  return config;
}

std::string config_to_text(const ArchitectureConfig& config) {
  config.check();
  const StcLayerSpec& first = config.blocks[0].layers[0];
  for (const auto& block : config.blocks)
    for (const auto& layer : block.layers)
      if (layer.rule != first.rule || layer.aggregate != first.aggregate ||
          layer.t2 != first.t2 || layer.use_g1 != first.use_g1)
        throw ValueError(
            "config text: rule/aggregate/t2/use_g1 must be uniform across layers");

  std::ostringstream os;
  os << "tgcn-config v1\n";
  os << "name " << (config.name.empty() ? "-" : config.name) << "\n";
  os << "input " << config.input_frames << " " << config.input_bins << "\n";
  os << "rule " << (first.rule == StcRule::A ? "A" : "B") << "\n";
  os << "aggregate " << (first.aggregate == ReduceKind::Max ? "max" : "mean")
     << "\n";
  os << "t2 " << first.t2 << "\n";
  os << "use_g1 " << (first.use_g1 ? 1 : 0) << "\n";
  os << "dropout " << fmt_double(config.dropout_p) << "\n";
  os << "collapse " << (config.collapse_input ? 1 : 0) << "\n";
  for (const auto& block : config.blocks) {
    os << "block {";
    for (const auto& layer : block.layers)
      os << " stc " << layer.k << "-" << layer.t << "-" << layer.c_out << ";";
    os << " pool " << (block.pool == ReduceKind::Max ? "max" : "mean") << " }\n";
  }
  os << "head {";
  for (int h : config.head_hidden) os << " dense " << h << ";";
  os << " }\n";
  return os.str();
}

namespace {

struct TokenStream {
  std::vector<std::string> tokens;
  std::size_t pos = 0;

  explicit TokenStream(const std::string& text) {
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) {
        tokens.push_back(cur);
        cur.clear();
      }
    };
    for (char ch : text) {
      if (std::isspace(static_cast<unsigned char>(ch))) {
        flush();
      } else if (ch == '{' || ch == '}' || ch == ';') {
        flush();
        tokens.push_back(std::string(1, ch));
      } else {
        cur.push_back(ch);
      }
    }
    flush();
  }

  bool done() const { return pos >= tokens.size(); }
  const std::string& peek() const {
    if (done()) throw DataError("config text: unexpected end");
    return tokens[pos];
  }
  std::string next() {
    std::string t = peek();
    ++pos;
    return t;
  }
  void expect(const std::string& want) {
    std::string got = next();
    if (got != want)
      throw DataError("config text: expected '" + want + "', got '" + got + "'");
  }
  int next_int() {
    const std::string t = next();
    try {
      std::size_t used = 0;
      int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw DataError("config text: expected integer, got '" + t + "'");
    }
  }
  double next_double() {
    const std::string t = next();
    try {
      std::size_t used = 0;
      double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw DataError("config text: expected number, got '" + t + "'");
    }
  }
};

}  // namespace

ArchitectureConfig config_from_text(const std::string& text) {
  TokenStream ts(text);
  ts.expect("tgcn-config");
  ts.expect("v1");
  ArchitectureConfig config;
  config.blocks.clear();
  config.head_hidden.clear();

  ts.expect("name");
  config.name = ts.next();
  if (config.name == "-") config.name.clear();
  ts.expect("input");
  config.input_frames = ts.next_int();
  config.input_bins = ts.next_int();
  ts.expect("rule");
  const std::string rule_s = ts.next();
  if (rule_s != "A" && rule_s != "B")
    throw DataError("config text: rule must be A or B, got '" + rule_s + "'");
  const StcRule rule = rule_s == "A" ? StcRule::A : StcRule::B;
  ts.expect("aggregate");
  const std::string agg_s = ts.next();
  if (agg_s != "max" && agg_s != "mean")
    throw DataError("config text: aggregate must be max or mean");
  const ReduceKind aggregate = agg_s == "max" ? ReduceKind::Max : ReduceKind::Mean;
  ts.expect("t2");
  const int t2 = ts.next_int();
  ts.expect("use_g1");
  const bool use_g1 = ts.next_int() != 0;
  ts.expect("dropout");
  config.dropout_p = ts.next_double();
  ts.expect("collapse");
  config.collapse_input = ts.next_int() != 0;

  while (!ts.done() && ts.peek() == "block") {
    ts.next();
    ts.expect("{");
    BlockConfig block;
    while (ts.peek() == "stc") {
      ts.next();
      const std::string triple = ts.next();
      int k = 0, t = 0, c = 0;
      if (std::sscanf(triple.c_str(), "%d-%d-%d", &k, &t, &c) != 3)
        throw DataError("config text: bad stc triple '" + triple + "'");
      StcLayerSpec layer;
      layer.k = k;
      layer.t = t;
      layer.c_out = c;
      layer.rule = rule;
      layer.aggregate = aggregate;
      layer.t2 = t2 == 0 ? t : t2;
      layer.use_g1 = use_g1;
      block.layers.push_back(layer);
      ts.expect(";");
    }
    ts.expect("pool");
    const std::string pool_s = ts.next();
    if (pool_s != "max" && pool_s != "mean")
      throw DataError("config text: pool must be max or mean");
    block.pool = pool_s == "max" ? ReduceKind::Max : ReduceKind::Mean;
    ts.expect("}");
    config.blocks.push_back(std::move(block));
  }

  ts.expect("head");
  ts.expect("{");
  while (ts.peek() == "dense") {
    ts.next();
    config.head_hidden.push_back(ts.next_int());
    ts.expect(";");
  }
  ts.expect("}");
  if (!ts.done()) throw DataError("config text: trailing tokens");

  try {
    config.check();
  } catch (const ValueError& e) {
    throw DataError(std::string("config text: ") + e.what());
  }
  return config;
}

std::size_t param_count(const ArchitectureConfig& config) {
  config.check();
  std::size_t total = 0;
  int c_in = config.input_bins;
  for (const auto& block : config.blocks)
    for (const auto& layer : block.layers) {
      total += stc_param_count(layer, c_in);
      c_in = layer.c_out;
    }
  int in = head_input_size(config);
  for (int h : config.head_hidden) {
    total += static_cast<std::size_t>(h) * in + static_cast<std::size_t>(h);
    in = h;
  }
  total += static_cast<std::size_t>(in) + 1;
  return total;
}

// --- TgcnModel -------------------------------------------------------------

struct TgcnModel::ReachCache {
  struct Entry {
    Adjacency adj;
    int k;
    Reachability reach;
  };
  std::mutex mu;
  std::unordered_map<std::uint64_t, std::vector<std::unique_ptr<Entry>>> map;
};

TgcnModel::TgcnModel() = default;
TgcnModel::~TgcnModel() = default;
TgcnModel::TgcnModel(TgcnModel&&) noexcept = default;
TgcnModel& TgcnModel::operator=(TgcnModel&&) noexcept = default;

TgcnModel::TgcnModel(const TgcnModel& other)
    : config_(other.config_),
      params_(other.params_),
      bn_states_(other.bn_states_),
      bn_names_(other.bn_names_),
      block_plans_(other.block_plans_),
      head_hidden_plans_(other.head_hidden_plans_),
      head_out_plan_(other.head_out_plan_),
      mode_(other.mode_) {}

TgcnModel& TgcnModel::operator=(const TgcnModel& other) {
  if (this == &other) return *this;
  config_ = other.config_;
  params_ = other.params_;
  bn_states_ = other.bn_states_;
  bn_names_ = other.bn_names_;
  block_plans_ = other.block_plans_;
  head_hidden_plans_ = other.head_hidden_plans_;
  head_out_plan_ = other.head_out_plan_;
  mode_ = other.mode_;
  reach_cache_.reset();
  return *this;
}

TgcnModel TgcnModel::build(const ArchitectureConfig& config, std::uint64_t seed) {
  config.check();
  TgcnModel m;
  m.config_ = config;
  Rng rng(derive_seed(seed, 0, "init"));

  auto add_param = [&](std::string name, Tensor value) {
    m.params_.push_back({std::move(name), std::move(value)});
    return static_cast<int>(m.params_.size()) - 1;
  };
  auto uniform_init = [&](std::vector<int> shape, int fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
  };
  auto add_bn = [&](const std::string& prefix, int channels) {
    BnSlots slots;
    slots.gamma = add_param(prefix + ".gamma", Tensor::full({channels}, 1.0));
    slots.beta = add_param(prefix + ".beta", Tensor({channels}));
    BatchNormState state;
    state.running_mean = Tensor({channels});
    state.running_var = Tensor::full({channels}, 1.0);
    m.bn_states_.push_back(std::move(state));
    m.bn_names_.push_back(prefix);
    slots.state = static_cast<int>(m.bn_states_.size()) - 1;
    return slots;
  };

  int c_in = config.input_bins;
  for (std::size_t b = 0; b < config.blocks.size(); ++b) {
    std::vector<LayerPlan> plans;
    for (std::size_t l = 0; l < config.blocks[b].layers.size(); ++l) {
      const StcLayerSpec& spec = config.blocks[b].layers[l];
      const std::string prefix =
          "block" + std::to_string(b + 1) + ".stc" + std::to_string(l + 1);
      LayerPlan plan;
      plan.spec = spec;
      plan.w_int = add_param(prefix + ".w_int",
                             uniform_init({spec.t, spec.c_out, c_in}, spec.t * c_in));
      plan.b_int = add_param(prefix + ".b_int", Tensor({spec.c_out}));
      if (spec.rule == StcRule::B) {
        if (spec.use_g1) plan.bn_g1 = add_bn(prefix + ".bn_g1", 2 * spec.c_out);
        plan.w_comb =
            add_param(prefix + ".w_comb",
                      uniform_init({spec.t2, spec.c_out, 2 * spec.c_out},
                                   spec.t2 * 2 * spec.c_out));
        plan.b_comb = add_param(prefix + ".b_comb", Tensor({spec.c_out}));
      }
      plan.bn_main = add_bn(prefix + ".bn", spec.c_out);
      plans.push_back(plan);
      c_in = spec.c_out;
    }
    m.block_plans_.push_back(std::move(plans));
  }

  int in = head_input_size(config);
  for (std::size_t h = 0; h < config.head_hidden.size(); ++h) {
    const int out = config.head_hidden[h];
    const std::string prefix = "head.fc" + std::to_string(h + 1);
    DensePlan plan;
    plan.w = add_param(prefix + ".w", uniform_init({out, in}, in));
    plan.b = add_param(prefix + ".b", Tensor({out}));
    m.head_hidden_plans_.push_back(plan);
    in = out;
  }
  m.head_out_plan_.w = add_param("head.out.w", uniform_init({1, in}, in));
  m.head_out_plan_.b = add_param("head.out.b", Tensor({1}));
  return m;
}

std::vector<NamedTensor> TgcnModel::buffers() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < bn_states_.size(); ++i) {
    out.push_back({bn_names_[i] + ".running_mean", bn_states_[i].running_mean});
    out.push_back({bn_names_[i] + ".running_var", bn_states_[i].running_var});
  }
  return out;
}

std::size_t TgcnModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

TgcnModel::Binding TgcnModel::bind(Tape& tape) const {
  Binding b;
  b.params.reserve(params_.size());
  for (const auto& p : params_) b.params.push_back(tape.leaf(p.value));
  return b;
}

const Reachability& TgcnModel::cached_reach(const Adjacency& a, int k) {
  if (!reach_cache_) reach_cache_ = std::make_unique<ReachCache>();
  ReachCache& cache = *reach_cache_;
  std::lock_guard<std::mutex> lock(cache.mu);
  const std::uint64_t key = a.hash() * 1315423911ULL + static_cast<std::uint64_t>(k);
  auto& bucket = cache.map[key];
  for (const auto& entry : bucket)
    if (entry->k == k && entry->adj == a) return entry->reach;
  auto entry = std::make_unique<ReachCache::Entry>(
      ReachCache::Entry{a, k, reachability(a, k)});
  bucket.push_back(std::move(entry));
  return bucket.back()->reach;
}

TgcnModel::Output TgcnModel::forward(Tape& tape, const Binding& binding,
                                     const Tensor& preprocessed,
                                     const Adjacency& adjacency, Rng* rng) {
  return forward(tape, binding, tape.leaf(preprocessed), adjacency, rng);
}

TgcnModel::Output TgcnModel::forward(Tape& tape, const Binding& binding,
                                     Value preprocessed,
                                     const Adjacency& adjacency, Rng* rng) {
  if (binding.params.size() != params_.size())
    throw Error("forward: binding does not match the parameter store");
  const Tensor& x = tape.value(preprocessed);
  if (x.rank() != 3)
    throw ShapeError("forward: preprocessed input must be frames x p x bins, got " +
                     shape_str(x.shape()));
  if (x.extent(0) != config_.input_frames)
    throw ShapeError("forward: input has " + std::to_string(x.extent(0)) +
                     " frames, config expects " +
                     std::to_string(config_.input_frames));

  Value h = preprocessed;
  Adjacency collapsed;
  const Adjacency* graph = &adjacency;
  if (config_.collapse_input) {
    if (x.extent(1) * x.extent(2) != config_.input_bins)
      throw ShapeError("forward: collapsed input needs p*bins == " +
                       std::to_string(config_.input_bins) + ", got " +
                       std::to_string(x.extent(1) * x.extent(2)));
    h = tape.reshape(h, {x.extent(0), 1, config_.input_bins});
    collapsed = Adjacency::identity(1);
    graph = &collapsed;
  } else {
    if (x.extent(1) != adjacency.node_count())
      throw ShapeError("forward: input has " + std::to_string(x.extent(1)) +
                       " sequences, adjacency has " +
                       std::to_string(adjacency.node_count()));
    if (x.extent(2) != config_.input_bins)
      throw ShapeError("forward: input has " + std::to_string(x.extent(2)) +
                       " bins, config expects " +
                       std::to_string(config_.input_bins));
  }

  for (std::size_t b = 0; b < block_plans_.size(); ++b) {
    for (const LayerPlan& plan : block_plans_[b]) {
      StcBinding sb;
      sb.w_int = binding.params[static_cast<std::size_t>(plan.w_int)];
      sb.b_int = binding.params[static_cast<std::size_t>(plan.b_int)];
      if (plan.spec.rule == StcRule::B) {
        sb.w_comb = binding.params[static_cast<std::size_t>(plan.w_comb)];
        sb.b_comb = binding.params[static_cast<std::size_t>(plan.b_comb)];
        if (plan.spec.use_g1) {
          sb.bn_g1.gamma = binding.params[static_cast<std::size_t>(plan.bn_g1.gamma)];
          sb.bn_g1.beta = binding.params[static_cast<std::size_t>(plan.bn_g1.beta)];
          sb.bn_g1.state = &bn_states_[static_cast<std::size_t>(plan.bn_g1.state)];
        }
      }
      sb.bn_main.gamma = binding.params[static_cast<std::size_t>(plan.bn_main.gamma)];
      sb.bn_main.beta = binding.params[static_cast<std::size_t>(plan.bn_main.beta)];
      sb.bn_main.state = &bn_states_[static_cast<std::size_t>(plan.bn_main.state)];
      const Reachability& reach = cached_reach(*graph, plan.spec.k);
      h = stc_forward(tape, h, reach, plan.spec, sb, mode_);
    }
    h = temporal_pool(tape, h, config_.blocks[b].pool);
  }

  HeadBinding head;
  for (const DensePlan& plan : head_hidden_plans_)
    head.hidden.push_back(
        DenseBinding{binding.params[static_cast<std::size_t>(plan.w)],
                     binding.params[static_cast<std::size_t>(plan.b)]});
  head.out = DenseBinding{binding.params[static_cast<std::size_t>(head_out_plan_.w)],
                          binding.params[static_cast<std::size_t>(head_out_plan_.b)]};
  HeadOutput ho = prediction_head(tape, h, head, config_.dropout_p, mode_, rng);
  return Output{ho.logit, ho.probability, h};
}

double TgcnModel::predict_logit(const Tensor& preprocessed,
                                const Adjacency& adjacency) {
  const Mode saved = mode_;
  mode_ = Mode::Eval;
  Tape tape;
  Binding binding = bind(tape);
  Output out = forward(tape, binding, preprocessed, adjacency, nullptr);
  mode_ = saved;
  return tape.value(out.logit)[0];
}

std::string TgcnModel::bn_name(int state_index) const {
  return bn_names_[static_cast<std::size_t>(state_index)];
}

// --- persistence -------------------------------------------------------

namespace {
constexpr char kModelMagic[8] = {'T', 'G', 'C', 'N', 'M', 'O', 'D', 'L'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(const TgcnModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  ChecksumWriter w(out);
  w.bytes(kModelMagic, sizeof kModelMagic);
  w.u32(kModelVersion);
  w.str(config_to_text(model.config()));
  w.u64(model.params().size());
  for (const auto& p : model.params()) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < p.value.numel(); ++i) w.f64(p.value[i]);
  }
  w.u64(model.bn_states_.size());
  for (std::size_t i = 0; i < model.bn_states_.size(); ++i) {
    const BatchNormState& s = model.bn_states_[i];
    w.str(model.bn_names_[i]);
    w.u32(static_cast<std::uint32_t>(s.running_mean.extent(0)));
    for (std::size_t j = 0; j < s.running_mean.numel(); ++j) w.f64(s.running_mean[j]);
    for (std::size_t j = 0; j < s.running_var.numel(); ++j) w.f64(s.running_var[j]);
  }
  w.finish();
  if (!out) throw DataError("write to '" + path + "' failed");
}

TgcnModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  ChecksumReader r(in);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw DataError("'" + path + "' is not a model file");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    throw DataError("unsupported model format version " + std::to_string(version));
  const std::string config_text = r.str();
  TgcnModel model = TgcnModel::build(config_from_text(config_text), 0);

  const std::uint64_t n_params = r.u64();
  if (n_params != model.params_.size())
    throw DataError("model file parameter count does not match its config");
  for (auto& p : model.params_) {
    const std::string name = r.str();
    if (name != p.name)
      throw DataError("model file parameter '" + name + "' does not match '" +
                      p.name + "'");
    const std::uint32_t rank = r.u32();
    if (rank != static_cast<std::uint32_t>(p.value.rank()))
      throw DataError("model file parameter '" + name + "' has wrong rank");
    for (int d : p.value.shape())
      if (r.u32() != static_cast<std::uint32_t>(d))
        throw DataError("model file parameter '" + name + "' has wrong shape");
    for (std::size_t i = 0; i < p.value.numel(); ++i) p.value[i] = r.f64();
  }
  const std::uint64_t n_bn = r.u64();
  if (n_bn != model.bn_states_.size())
    throw DataError("model file batch-norm count does not match its config");
  for (std::size_t i = 0; i < model.bn_states_.size(); ++i) {
    const std::string name = r.str();
    if (name != model.bn_names_[i])
      throw DataError("model file batch-norm site '" + name + "' does not match");
    const std::uint32_t c = r.u32();
    BatchNormState& s = model.bn_states_[i];
    if (c != static_cast<std::uint32_t>(s.running_mean.extent(0)))
      throw DataError("model file batch-norm site '" + name + "' has wrong width");
    for (std::size_t j = 0; j < s.running_mean.numel(); ++j) s.running_mean[j] = r.f64();
    for (std::size_t j = 0; j < s.running_var.numel(); ++j) s.running_var[j] = r.f64();
  }
  r.verify();
  return model;
}

}  // namespace tgcn
