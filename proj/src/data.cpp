#include "tgcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <sstream>

#include "tgcn/parallel.hpp"
#include "tgcn/rng.hpp"
#include "tgcn/serialize.hpp"

namespace tgcn {

namespace {

// "Leads analyzed" order.
const std::vector<std::string> kLeads = {
    "C3", "C4", "Cz", "F3",  "F4",   "F7",  "F8",  "Fz", "FT9", "FT10", "Fp1",
    "Fp2", "O1", "O2", "P3", "P4", "P7", "P8", "Pz", "T7", "T8"};

// Physically neighboring electrode sites of the 10-20 layout; the same list
// ships as assets/eeg1020_edges.txt.
const std::vector<std::pair<const char*, const char*>> kEdges = {
    {"Fp1", "Fp2"}, {"Fp1", "F7"}, {"Fp1", "F3"}, {"Fp2", "F8"}, {"Fp2", "F4"},
    {"F7", "F3"},   {"F7", "FT9"}, {"F7", "T7"},  {"F8", "F4"},  {"F8", "FT10"},
    {"F8", "T8"},   {"F3", "Fz"},  {"F3", "C3"},  {"F4", "Fz"},  {"F4", "C4"},
    {"Fz", "Cz"},   {"FT9", "T7"}, {"FT10", "T8"}, {"Cz", "C3"}, {"Cz", "C4"},
    {"Cz", "Pz"},   {"C3", "T7"},  {"C3", "P3"},  {"C4", "T8"},  {"C4", "P4"},
    {"T7", "P7"},   {"T8", "P8"},  {"P7", "P3"},  {"P7", "O1"},  {"P8", "P4"},
    {"P8", "O2"},   {"P3", "Pz"},  {"P3", "O1"},  {"P4", "Pz"},  {"P4", "O2"},
    {"O1", "O2"}};

const std::vector<std::pair<const char*, const char*>> kMontage = {
    {"Fp1", "F7"}, {"F7", "T7"}, {"T7", "P7"}, {"P7", "O1"}, {"Fp1", "F3"},
    {"F3", "C3"},  {"C3", "P3"}, {"P3", "O1"}, {"Fz", "Cz"}, {"Cz", "Pz"},
    {"Fp2", "F4"}, {"F4", "C4"}, {"C4", "P4"}, {"P4", "O2"}, {"Fp2", "F8"},
    {"F8", "T8"},  {"T8", "P8"}, {"P8", "O2"}, {"FT9", "F7"}, {"FT10", "F8"}};

int index_of(const std::vector<std::string>& leads, const std::string& name) {
  for (std::size_t i = 0; i < leads.size(); ++i)
    if (leads[i] == name) return static_cast<int>(i);
  return -1;
}

EegTopology make_builtin() {
  EegTopology topo;
  topo.leads = kLeads;
  std::vector<std::pair<int, int>> edges;
  for (auto [a, b] : kEdges)
    edges.emplace_back(index_of(kLeads, a), index_of(kLeads, b));
  topo.adjacency = Adjacency::from_edges(static_cast<int>(kLeads.size()), edges);
  topo.regions = {
      {"Left frontal", {"Fp1", "F3", "Fz"}},
      {"Right frontal", {"Fp2", "F4", "Fz"}},
      {"Left temporal", {"F7", "T7", "FT9"}},
      {"Right temporal", {"F8", "T8", "FT10"}},
      {"Left parietal", {"P7", "P3"}},
      {"Right parietal", {"P8", "P4"}},
      {"Left occipital", {"O1", "P7"}},
      {"Right occipital", {"O2", "P8"}},
  };
  for (auto [a, b] : kMontage) topo.montage_pairs.emplace_back(a, b);
  return topo;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Hop distance from `origin`, following rows (A[u][v] = 1 means u -> v).
std::vector<int> hop_distances(const Adjacency& a, int origin) {
  const int p = a.node_count();
  std::vector<int> dist(static_cast<std::size_t>(p), -1);
  std::deque<int> queue;
  dist[static_cast<std::size_t>(origin)] = 0;
  queue.push_back(origin);
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v = 0; v < p; ++v)
      if (a.edge(u, v) && dist[static_cast<std::size_t>(v)] < 0) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        queue.push_back(v);
      }
  }
  return dist;
}

constexpr double kNoiseAr = 0.9;  // AR(1) coefficient of the background

}  // namespace

int EegTopology::lead_index(const std::string& name) const {
  return index_of(leads, name);
}

const EegTopology& builtin_topology() {
  static const EegTopology topo = make_builtin();
  return topo;
}

Adjacency load_adjacency_edges(const std::string& path,
                               const std::vector<std::string>& leads) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge file '" + path + "'");
  std::vector<std::pair<int, int>> edges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string a, b;
    if (!(ls >> a)) continue;  // blank
    if (!(ls >> b))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected two lead names");
    const int ia = index_of(leads, a);
    const int ib = index_of(leads, b);
    if (ia < 0 || ib < 0)
      throw DataError(path + ":" + std::to_string(line_no) + ": unknown lead '" +
                      (ia < 0 ? a : b) + "'");
    edges.emplace_back(ia, ib);
  }
  return Adjacency::from_edges(static_cast<int>(leads.size()), edges);
}

void SyntheticSpec::check() const {
  if (p < 1) throw ValueError("synthetic spec: p must be >= 1");
  if (adjacency.node_count() != p)
    throw ValueError("synthetic spec: adjacency covers " +
                     std::to_string(adjacency.node_count()) + " nodes, p is " +
                     std::to_string(p));
  if (t_raw < 2) throw ValueError("synthetic spec: t_raw too small");
  if (sample_rate <= 0.0) throw ValueError("synthetic spec: bad sample rate");
  if (noise_level < 0.0) throw ValueError("synthetic spec: negative noise level");
  if (motif_freq_lo <= 0.0 || motif_freq_hi < motif_freq_lo)
    throw ValueError("synthetic spec: bad motif frequency band");
  if (motif_freq_hi > sample_rate / 2.0)
    throw ValueError("synthetic spec: motif band exceeds the Nyquist frequency");
  if (motif_amplitude < 0.0) throw ValueError("synthetic spec: negative amplitude");
  if (motif_duration <= 0.0 ||
      motif_duration >= static_cast<double>(t_raw) / sample_rate)
    throw ValueError("synthetic spec: motif duration must fit inside the epoch");
  if (origin_node >= p)
    throw ValueError("synthetic spec: origin node out of range");
  if (decay < 0.0 || decay > 1.0)
    throw ValueError("synthetic spec: decay must be in [0, 1]");
  if (positive_fraction < 0.0 || positive_fraction > 1.0)
    throw ValueError("synthetic spec: positive fraction must be in [0, 1]");
}

SyntheticParts synth_parts(const SyntheticSpec& spec, std::int64_t id) {
  spec.check();
  const auto uid = static_cast<std::uint64_t>(id);
  SyntheticParts parts;

  Rng label_rng(derive_seed(spec.seed, uid, "label"));
  parts.label = label_rng.bernoulli(spec.positive_fraction) ? 1 : 0;

  parts.noise = Tensor({spec.t_raw, spec.p});
  Rng noise_rng(derive_seed(spec.seed, uid, "noise"));
  const double sigma_w = spec.noise_level * std::sqrt(1.0 - kNoiseAr * kNoiseAr);
  for (int n = 0; n < spec.p; ++n) {
    double x = spec.noise_level * noise_rng.normal();
    parts.noise[static_cast<std::size_t>(n)] = x;
    for (int t = 1; t < spec.t_raw; ++t) {
      x = kNoiseAr * x + sigma_w * noise_rng.normal();
      parts.noise[static_cast<std::size_t>(t) * spec.p + n] = x;
    }
  }

  parts.motif = Tensor({spec.t_raw, spec.p});
  if (parts.label == 1) {
    Rng motif_rng(derive_seed(spec.seed, uid, "motif"));
    parts.frequency = motif_rng.uniform(spec.motif_freq_lo, spec.motif_freq_hi);
    parts.origin = spec.origin_node >= 0
                       ? spec.origin_node
                       : static_cast<int>(motif_rng.uniform_index(
                             static_cast<std::uint64_t>(spec.p)));
    const double t_sec = static_cast<double>(spec.t_raw) / spec.sample_rate;
    const double dt = 1.0 / spec.sample_rate;
    // Onset strictly inside the window, at least one sample after its start.
    parts.onset_seconds =
        dt + motif_rng.uniform() * (t_sec - spec.motif_duration - dt);
    const double phase = motif_rng.uniform(0.0, 2.0 * M_PI);

    const std::vector<int> dist = hop_distances(spec.adjacency, parts.origin);
    std::vector<double> node_amp(static_cast<std::size_t>(spec.p), 0.0);
    for (int n = 0; n < spec.p; ++n) {
      const int h = dist[static_cast<std::size_t>(n)];
      if (h < 0) continue;  // unreachable
      node_amp[static_cast<std::size_t>(n)] =
          spec.motif_amplitude * std::pow(spec.decay, h);
    }
    const int first = static_cast<int>(std::ceil(parts.onset_seconds * spec.sample_rate));
    const int last = std::min(
        spec.t_raw - 1,
        static_cast<int>((parts.onset_seconds + spec.motif_duration) * spec.sample_rate));
    for (int t = first; t <= last; ++t) {
      const double tau = t * dt - parts.onset_seconds;
      const double env = 0.5 * (1.0 - std::cos(2.0 * M_PI * tau / spec.motif_duration));
      const double wave = std::sin(2.0 * M_PI * parts.frequency * tau + phase);
      for (int n = 0; n < spec.p; ++n) {
        const double a = node_amp[static_cast<std::size_t>(n)];
        if (a != 0.0)
          parts.motif[static_cast<std::size_t>(t) * spec.p + n] = a * env * wave;
      }
    }
  }
  return parts;
}

Dataset generate(const SyntheticSpec& spec, int n) {
  spec.check();
  if (n < 0) throw ValueError("generate: negative sample count");
  Dataset ds;
  ds.p = spec.p;
  ds.t_raw = spec.t_raw;
  ds.sample_rate = spec.sample_rate;
  ds.seed = spec.seed;
  std::ostringstream echo;
  echo << "synthetic p=" << spec.p << " t_raw=" << spec.t_raw
       << " rate=" << fmt_double(spec.sample_rate)
       << " noise=" << fmt_double(spec.noise_level) << " band=["
       << fmt_double(spec.motif_freq_lo) << "," << fmt_double(spec.motif_freq_hi)
       << "] amp=" << fmt_double(spec.motif_amplitude)
       << " dur=" << fmt_double(spec.motif_duration)
       << " origin=" << spec.origin_node << " decay=" << fmt_double(spec.decay)
       << " posfrac=" << fmt_double(spec.positive_fraction)
       << " seed=" << spec.seed;
  ds.spec_echo = echo.str();

  ds.samples.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    SyntheticParts parts = synth_parts(spec, static_cast<std::int64_t>(i));
    StructuralTimeSeries s;
    s.x = Tensor({spec.t_raw, spec.p});
    for (std::size_t j = 0; j < s.x.numel(); ++j)
      s.x[j] = quantize_f32(parts.noise[j] + parts.motif[j]);
    s.adjacency = spec.adjacency;
    s.label = parts.label;
    s.id = static_cast<std::int64_t>(i);
    ds.samples[i] = std::move(s);
  });
  return ds;
}

std::vector<LabeledEpoch> epoch_label(const Tensor& session, double sample_rate,
                                      const std::vector<double>& onsets_seconds,
                                      double epoch_seconds) {
  if (session.rank() != 2)
    throw ShapeError("epoch_label: session must be T x p, got " +
                     shape_str(session.shape()));
  if (sample_rate <= 0.0) throw ValueError("epoch_label: bad sample rate");
  const int t_total = session.extent(0);
  const int p = session.extent(1);
  const int epoch_samples = static_cast<int>(std::llround(epoch_seconds * sample_rate));
  if (epoch_samples < 1) throw ValueError("epoch_label: epoch too short");
  if (epoch_samples > t_total)
    throw ValueError("epoch_label: epoch of " + std::to_string(epoch_samples) +
                     " samples longer than session of " + std::to_string(t_total));
  for (std::size_t i = 0; i < onsets_seconds.size(); ++i) {
    if (i > 0 && onsets_seconds[i] < onsets_seconds[i - 1])
      throw ValueError("epoch_label: onset times must be sorted");
    if (onsets_seconds[i] < 0.0 ||
        onsets_seconds[i] * sample_rate >= static_cast<double>(t_total))
      throw ValueError("epoch_label: onset outside the session");
  }

  // Windows are defined by sample index; an onset belongs to the window that
  // contains its sample.
  std::vector<long long> onset_samples;
  onset_samples.reserve(onsets_seconds.size());
  for (double o : onsets_seconds)
    onset_samples.push_back(static_cast<long long>(std::floor(o * sample_rate)));

  const int n_epochs = t_total / epoch_samples;  // trailing partial discarded
  std::vector<LabeledEpoch> epochs;
  epochs.reserve(static_cast<std::size_t>(n_epochs));
  std::size_t next_onset = 0;
  for (int e = 0; e < n_epochs; ++e) {
    LabeledEpoch ep;
    ep.index = e;
    ep.x = Tensor({epoch_samples, p});
    const std::size_t base = static_cast<std::size_t>(e) * epoch_samples * p;
    for (std::size_t j = 0; j < ep.x.numel(); ++j) ep.x[j] = session[base + j];
    const long long start = static_cast<long long>(e) * epoch_samples;
    const long long end = start + epoch_samples;
    while (next_onset < onset_samples.size() && onset_samples[next_onset] < start)
      ++next_onset;
    if (next_onset < onset_samples.size() && onset_samples[next_onset] < end)
      ep.label = 1;
    epochs.push_back(std::move(ep));
  }
  return epochs;
}

// --- persistence -------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  std::ostringstream header;
  header << "TGCN-DATASET v1\n";
  header << "n " << ds.samples.size() << "\n";
  header << "p " << ds.p << "\n";
  header << "t_raw " << ds.t_raw << "\n";
  header << "sample_rate " << fmt_double(ds.sample_rate) << "\n";
  header << "seed " << ds.seed << "\n";
  header << "leads ";
  if (ds.leads.empty()) {
    header << "-";
  } else {
    for (std::size_t i = 0; i < ds.leads.size(); ++i)
      header << (i ? "," : "") << ds.leads[i];
  }
  header << "\n";
  std::string echo = ds.spec_echo.empty() ? "-" : ds.spec_echo;
  std::replace(echo.begin(), echo.end(), '\n', ' ');
  header << "spec " << echo << "\n";
  header << "end\n";

  ChecksumWriter w(out);
  const std::string h = header.str();
  w.bytes(h.data(), h.size());
  for (const auto& s : ds.samples) {
    if (s.adjacency.node_count() != ds.p)
      throw DataError("dataset sample adjacency does not match p");
    if (s.x.rank() != 2 || s.x.extent(0) != ds.t_raw || s.x.extent(1) != ds.p)
      throw DataError("dataset sample signal does not match the manifest");
    w.bytes(s.adjacency.bits().data(), s.adjacency.bits().size());
    for (std::size_t j = 0; j < s.x.numel(); ++j)
      w.f32(static_cast<float>(s.x[j]));
    w.u8(static_cast<std::uint8_t>(s.label));
  }
  w.finish();
  if (!out) throw DataError("write to '" + path + "' failed");
}

namespace {

std::string read_header_line(ChecksumReader& r) {
  std::string line;
  for (;;) {
    char c;
    r.bytes(&c, 1);
    if (c == '\n') return line;
    line.push_back(c);
    if (line.size() > 1 << 20) throw DataError("dataset header line too long");
  }
}

std::string header_field(const std::string& line, const std::string& key) {
  if (line.size() < key.size() + 1 || line.compare(0, key.size(), key) != 0 ||
      line[key.size()] != ' ')
    throw DataError("dataset header: expected '" + key + " ...', got '" + line +
                    "'");
  return line.substr(key.size() + 1);
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  ChecksumReader r(in);
  if (read_header_line(r) != "TGCN-DATASET v1")
    throw DataError("'" + path + "' is not a dataset file (or wrong version)");
  Dataset ds;
  const std::size_t n = std::stoull(header_field(read_header_line(r), "n"));
  ds.p = std::stoi(header_field(read_header_line(r), "p"));
  ds.t_raw = std::stoi(header_field(read_header_line(r), "t_raw"));
  ds.sample_rate = std::stod(header_field(read_header_line(r), "sample_rate"));
  ds.seed = std::stoull(header_field(read_header_line(r), "seed"));
  const std::string leads = header_field(read_header_line(r), "leads");
  if (leads != "-") {
    std::istringstream ls(leads);
    std::string lead;
    while (std::getline(ls, lead, ',')) ds.leads.push_back(lead);
  }
  const std::string echo = header_field(read_header_line(r), "spec");
  if (echo != "-") ds.spec_echo = echo;
  if (read_header_line(r) != "end") throw DataError("dataset header: missing end");
  if (ds.p < 1 || ds.t_raw < 1) throw DataError("dataset header: bad dimensions");
  if (!ds.leads.empty() && static_cast<int>(ds.leads.size()) != ds.p)
    throw DataError("dataset header: lead names do not match p");

  ds.samples.reserve(n);
  const std::size_t adj_bytes = static_cast<std::size_t>(ds.p) * ds.p;
  for (std::size_t i = 0; i < n; ++i) {
    StructuralTimeSeries s;
    std::vector<int> bits(adj_bytes);
    for (std::size_t j = 0; j < adj_bytes; ++j) bits[j] = r.u8();
    try {
      s.adjacency = Adjacency::validate(ds.p, bits);
    } catch (const ValueError& e) {
      throw DataError("dataset sample " + std::to_string(i) + ": " + e.what());
    }
    s.x = Tensor({ds.t_raw, ds.p});
    for (std::size_t j = 0; j < s.x.numel(); ++j) {
      s.x[j] = static_cast<double>(r.f32());
      if (!std::isfinite(s.x[j]))
        throw DataError("dataset sample " + std::to_string(i) +
                        ": non-finite signal value");
    }
    const std::uint8_t label = r.u8();
    if (label > 1)
      throw DataError("dataset sample " + std::to_string(i) + ": bad label");
    s.label = label;
    s.id = static_cast<std::int64_t>(i);
    ds.samples.push_back(std::move(s));
  }
  r.verify();
  return ds;
}

}  // namespace tgcn
