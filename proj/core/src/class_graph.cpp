#include "wdae/class_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "wdae/errors.hpp"

namespace wdae {

ClassGraph build_graph(std::span<const double> rows, std::size_t dim, std::size_t neighbors,
                       double inverse_temperature) {
  if (dim == 0 || rows.size() % dim != 0) throw GraphError("build_graph: rows are not a multiple of the dimension");
  const std::size_t n = rows.size() / dim;
  if (n < 2) throw GraphError("build_graph: need at least 2 nodes, got " + std::to_string(n));
  if (neighbors == 0) throw GraphError("build_graph: neighbour count must be positive");
  if (!(inverse_temperature > 0.0)) throw GraphError("build_graph: inverse temperature must be positive");

  const std::size_t j_count = std::min(neighbors, n - 1);
  ClassGraph g;
  g.num_nodes = n;
  g.neighbors.resize(n);
  g.strengths.resize(n);

  std::vector<double> sims(n);
  std::vector<std::size_t> candidates;
  candidates.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ri = &rows[i * dim];
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* rj = &rows[j * dim];
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += ri[k] * rj[k];
      sims[j] = dot;
      candidates.push_back(j);
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(j_count), candidates.end(),
                      [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
    auto& nb = g.neighbors[i];
    nb.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(j_count));

    // Softmax over the kept similarities; nb[0] holds the maximum.
    auto& a = g.strengths[i];
    a.resize(j_count);
    const double hi = inverse_temperature * sims[nb[0]];
    double total = 0.0;
    for (std::size_t k = 0; k < j_count; ++k) {
      a[k] = std::exp(inverse_temperature * sims[nb[k]] - hi);
      total += a[k];
    }
    for (double& v : a) v /= total;
  }
  return g;
}

ClassGraph ClassGraph::permuted(std::span<const std::size_t> perm) const {
  if (perm.size() != num_nodes) throw GraphError("permuted: permutation size does not match node count");
  ClassGraph out;
  out.num_nodes = num_nodes;
  out.neighbors.resize(num_nodes);
  out.strengths.resize(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    auto& nb = out.neighbors[perm[i]];
    for (std::size_t j : neighbors[i]) nb.push_back(perm[j]);
    out.strengths[perm[i]] = strengths[i];
  }
  return out;
}

RowMixing ClassGraph::edge_mixing() const {
  RowMixing m;
  m.offsets.reserve(num_nodes + 1);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    for (std::size_t k = 0; k < neighbors[i].size(); ++k) {
      m.sources.push_back(m.sources.size());
      m.weights.push_back(strengths[i][k]);
    }
    m.offsets.push_back(m.sources.size());
  }
  return m;
}

void ClassGraph::dump(std::ostream& out) const {
  char buf[64];
  for (std::size_t i = 0; i < num_nodes; ++i) {
    out << i << ':';
    for (std::size_t k = 0; k < neighbors[i].size(); ++k) {
      std::snprintf(buf, sizeof buf, " (%zu, %.6f)", neighbors[i][k], strengths[i][k]);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace wdae
