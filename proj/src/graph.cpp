#include "tgcn/graph.hpp"

#include <string>

namespace tgcn {

Adjacency Adjacency::validate(const std::vector<std::vector<int>>& matrix) {
  const int p = static_cast<int>(matrix.size());
  std::vector<int> flat;
  flat.reserve(static_cast<std::size_t>(p) * p);
  for (const auto& row : matrix) {
    if (static_cast<int>(row.size()) != p)
      throw ValueError("adjacency must be square");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return validate(p, flat);
}

Adjacency Adjacency::validate(int p, const std::vector<int>& row_major) {
  if (p <= 0) throw ValueError("adjacency needs at least one node");
  if (row_major.size() != static_cast<std::size_t>(p) * p)
    throw ValueError("adjacency must be square");
  std::vector<std::uint8_t> bits(row_major.size());
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      const int v = row_major[static_cast<std::size_t>(i) * p + j];
      if (v != 0 && v != 1)
        throw ValueError("adjacency entries must be 0 or 1, got " +
                         std::to_string(v) + " at (" + std::to_string(i) + "," +
                         std::to_string(j) + ")");
      if (i == j && v != 1)
        throw ValueError("adjacency diagonal must be all ones (node " +
                         std::to_string(i) + ")");
      bits[static_cast<std::size_t>(i) * p + j] = static_cast<std::uint8_t>(v);
    }
  return Adjacency(p, std::move(bits));
}

Adjacency Adjacency::identity(int p) {
  if (p <= 0) throw ValueError("adjacency needs at least one node");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(p) * p, 0);
  for (int i = 0; i < p; ++i) bits[static_cast<std::size_t>(i) * p + i] = 1;
  return Adjacency(p, std::move(bits));
}

Adjacency Adjacency::complete(int p) {
  if (p <= 0) throw ValueError("adjacency needs at least one node");
  return Adjacency(p, std::vector<std::uint8_t>(static_cast<std::size_t>(p) * p, 1));
}

Adjacency Adjacency::from_edges(int p,
                                const std::vector<std::pair<int, int>>& edges) {
  Adjacency a = identity(p);
  for (auto [i, j] : edges) {
    if (i < 0 || i >= p || j < 0 || j >= p)
      throw ValueError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                       ") out of range for p=" + std::to_string(p));
    a.bits_[static_cast<std::size_t>(i) * p + j] = 1;
    a.bits_[static_cast<std::size_t>(j) * p + i] = 1;
  }
  return a;
}

std::uint64_t Adjacency::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = (h ^ static_cast<std::uint64_t>(p_)) * 0x100000001b3ULL;
  for (std::uint8_t b : bits_) h = (h ^ b) * 0x100000001b3ULL;
  return h;
}

std::vector<int> Reachability::neighborhood(int i) const {
  if (i < 0 || i >= p_)
    throw ValueError("node index " + std::to_string(i) + " out of range for p=" +
                     std::to_string(p_));
  std::vector<int> out;
  for (int j = 0; j < p_; ++j)
    if (at(i, j)) out.push_back(j);
  return out;
}

Reachability reachability(const Adjacency& a, int k) {
  if (k < 0) throw ValueError("reachability step count must be non-negative");
  const int p = a.node_count();
  std::vector<std::uint8_t> acc(static_cast<std::size_t>(p) * p, 0);
  for (int i = 0; i < p; ++i) acc[static_cast<std::size_t>(i) * p + i] = 1;
  std::vector<std::uint8_t> next(acc.size());
  for (int step = 0; step < k; ++step) {
    bool changed = false;
    for (int i = 0; i < p; ++i) {
      const std::uint8_t* row = acc.data() + static_cast<std::size_t>(i) * p;
      std::uint8_t* out = next.data() + static_cast<std::size_t>(i) * p;
      for (int j = 0; j < p; ++j) {
        std::uint8_t v = 0;
        for (int m = 0; m < p; ++m) {
          if (row[m] && a.edge(m, j)) {
            v = 1;
            break;
          }
        }
        out[j] = v;
        changed |= v != row[j];
      }
    }
    acc.swap(next);
    if (!changed) break;  // fixpoint; larger powers are equal
  }
  return Reachability(k, p, std::move(acc));
}

NodeDrop drop_nodes(const Adjacency& a, const std::vector<int>& drop) {
  const int p = a.node_count();
  std::vector<char> dropped(static_cast<std::size_t>(p), 0);
  for (int d : drop) {
    if (d < 0 || d >= p)
      throw ValueError("drop index " + std::to_string(d) + " out of range for p=" +
                       std::to_string(p));
    dropped[static_cast<std::size_t>(d)] = 1;
  }
  NodeDrop result;
  result.old_to_new.assign(static_cast<std::size_t>(p), -1);
  for (int i = 0; i < p; ++i) {
    if (!dropped[static_cast<std::size_t>(i)]) {
      result.old_to_new[static_cast<std::size_t>(i)] =
          static_cast<int>(result.kept.size());
      result.kept.push_back(i);
    }
  }
  if (result.kept.empty()) throw ValueError("cannot drop every node");
  const int q = static_cast<int>(result.kept.size());
  std::vector<int> bits(static_cast<std::size_t>(q) * q);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j)
      bits[static_cast<std::size_t>(i) * q + j] =
          a.edge(result.kept[static_cast<std::size_t>(i)],
                 result.kept[static_cast<std::size_t>(j)])
              ? 1
              : 0;
  result.adjacency = Adjacency::validate(q, bits);
  return result;
}

}  // namespace tgcn
