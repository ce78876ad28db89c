#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "msda/rng.hpp"
#include "msda/tensor.hpp"

namespace msda::mrf {

/// Node slots shared by every network: prototypes in slot order
/// (slot = m * K + k), then the query.
struct NetworkLayout {
  int domains = 0;
  int classes = 0;

  std::size_t prototypes() const {
    return static_cast<std::size_t>(domains * classes);
  }
  std::size_t nodes() const { return prototypes() + 1; }
  std::size_t query() const { return prototypes(); }
  std::size_t slot(int m, int k) const;
  int class_of(std::size_t slot) const { return static_cast<int>(slot) % classes; }
  int domain_of(std::size_t slot) const { return static_cast<int>(slot) / classes; }
  // Edges per network of K cliques over M+1 prototypes each.
  std::size_t clique_edge_count() const;
};

using Edge = std::pair<std::size_t, std::size_t>;  // first < second

enum class NetworkKind { Positive, Negative, Prediction };

/// An undirected, simple edge set over the layout's node slots, kept sorted.
class MarkovNetwork {
 public:
  MarkovNetwork(NetworkLayout layout, NetworkKind kind, std::vector<Edge> edges);

  const NetworkLayout& layout() const { return layout_; }
  NetworkKind kind() const { return kind_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t size() const { return edges_.size(); }
  bool contains(Edge e) const;

  // Prototype slot joined to the query; throws unless exactly one query edge.
  std::size_t query_target() const;

  bool same_edges(const MarkovNetwork& other) const {
    return edges_ == other.edges_;
  }

 private:
  NetworkLayout layout_;
  NetworkKind kind_;
  std::vector<Edge> edges_;
};

Edge make_edge(std::size_t u, std::size_t v);

std::vector<Edge> clique_edges(const NetworkLayout& layout);
MarkovNetwork build_positive(const NetworkLayout& layout, int domain, int label);
MarkovNetwork build_prediction(const NetworkLayout& layout, int domain, int cls);

// Number of prototype pairs of distinct categories (type-2 candidates).
std::size_t cross_class_pairs(const NetworkLayout& layout);

/// K-1 networks with the query edge rewired to the other classes of the same
/// domain, followed by n2 networks that add one distinct random edge between
/// prototypes of different categories. Throws ConfigError when n2 exceeds
/// the number of such pairs.
std::vector<MarkovNetwork> sample_negatives(const MarkovNetwork& positive,
                                            Rng& rng, int n2);

// f_E = (1/tau) sum over edges of ||X_u - X_v||^2; X is [nodes, d].
double energy(const MarkovNetwork& net, const Tensor& x, double tau);
double log_unnorm_likelihood(const MarkovNetwork& net, const Tensor& x,
                             double tau);
double unnorm_likelihood(const MarkovNetwork& net, const Tensor& x, double tau);

}  // namespace msda::mrf
