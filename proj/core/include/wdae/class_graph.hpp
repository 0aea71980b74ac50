#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "wdae/tensor.hpp"

namespace wdae {

/// Directed J-nearest-neighbour graph over classes. Node i's neighbours are
/// ordered by decreasing cosine similarity; strengths[i] is the temperature
/// softmax over those similarities and sums to one.
struct ClassGraph {
  std::size_t num_nodes = 0;
  std::vector<std::vector<std::size_t>> neighbors;
  std::vector<std::vector<double>> strengths;

  /// Graph for relabelled nodes: node perm[i] of the result is node i here.
  [[nodiscard]] ClassGraph permuted(std::span<const std::size_t> perm) const;

  /// CSR form of the receiver-side edge lists (one output row per node).
  [[nodiscard]] RowMixing edge_mixing() const;

  /// `i: (j, a_ij) (j, a_ij) ...` one node per line.
  void dump(std::ostream& out) const;
};

/// `rows` is an N x d row-major matrix of unit vectors. Self is never a
/// neighbour, ties go to the lower index, and every node gets min(J, N-1)
/// neighbours.
ClassGraph build_graph(std::span<const double> rows, std::size_t dim, std::size_t neighbors,
                       double inverse_temperature);

}  // namespace wdae
