#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tgcn/errors.hpp"

namespace tgcn {

// Binary adjacency with a full diagonal. Row i lists the nodes j whose
// features node i aggregates (A[i][j] = 1). May be asymmetric. Immutable
// after construction.
class Adjacency {
 public:
  Adjacency() = default;

  // Rejects non-square, non-binary, or zero-diagonal input.
  static Adjacency validate(const std::vector<std::vector<int>>& matrix);
  static Adjacency validate(int p, const std::vector<int>& row_major);

  static Adjacency identity(int p);
  static Adjacency complete(int p);
  // Undirected edges; self-loops added automatically.
  static Adjacency from_edges(int p, const std::vector<std::pair<int, int>>& edges);

  int node_count() const { return p_; }
  bool edge(int i, int j) const {
    return bits_[static_cast<std::size_t>(i) * p_ + static_cast<std::size_t>(j)] != 0;
  }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::uint64_t hash() const;

  bool operator==(const Adjacency& other) const = default;

 private:
  Adjacency(int p, std::vector<std::uint8_t> bits) : p_(p), bits_(std::move(bits)) {}

  int p_ = 0;
  std::vector<std::uint8_t> bits_;
};

// A(k): entry (i, j) set iff j is reachable from i in at most k steps.
// A(0) is the identity.
class Reachability {
 public:
  Reachability() = default;
  Reachability(int k, int p, std::vector<std::uint8_t> bits)
      : k_(k), p_(p), bits_(std::move(bits)) {}

  int k() const { return k_; }
  int node_count() const { return p_; }
  bool at(int i, int j) const {
    return bits_[static_cast<std::size_t>(i) * p_ + static_cast<std::size_t>(j)] != 0;
  }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  // Ascending indices j with bit (i, j) set. Contains i whenever k >= 0
  // because the diagonal is full.
  std::vector<int> neighborhood(int i) const;

 private:
  int k_ = 0;
  int p_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Boolean matrix power (OR/AND semiring); identical support to the indicator
// of the integer power without any overflow concerns.
Reachability reachability(const Adjacency& a, int k);

struct NodeDrop {
  Adjacency adjacency;          // over the surviving nodes
  std::vector<int> old_to_new;  // -1 for dropped nodes
  std::vector<int> kept;        // ascending original indices
};

// Row/column deletion. Throws if every node would be dropped or an index is
// out of range. Duplicate indices are allowed.
NodeDrop drop_nodes(const Adjacency& a, const std::vector<int>& drop);

}  // namespace tgcn
