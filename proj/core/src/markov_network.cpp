#include "msda/markov_network.hpp"

#include <algorithm>
#include <cmath>

#include "msda/errors.hpp"

namespace msda::mrf {

std::size_t NetworkLayout::slot(int m, int k) const {
  if (m < 0 || m >= domains || k < 0 || k >= classes)
    throw ContractError("network slot out of range");
  return static_cast<std::size_t>(m * classes + k);
}

std::size_t NetworkLayout::clique_edge_count() const {
  const auto d = static_cast<std::size_t>(domains);
  return static_cast<std::size_t>(classes) * d * (d - 1) / 2;
}

Edge make_edge(std::size_t u, std::size_t v) {
  if (u == v) throw ContractError("self-edge in Markov network");
  return u < v ? Edge{u, v} : Edge{v, u};
}

MarkovNetwork::MarkovNetwork(NetworkLayout layout, NetworkKind kind,
                             std::vector<Edge> edges)
    : layout_(layout), kind_(kind), edges_(std::move(edges)) {
  for (auto& e : edges_) {
    e = make_edge(e.first, e.second);
    if (e.second >= layout_.nodes())
      throw ContractError("edge references a node outside the layout");
  }
  std::sort(edges_.begin(), edges_.end());
  if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end())
    throw ContractError("duplicate edge in Markov network");
}

bool MarkovNetwork::contains(Edge e) const {
  return std::binary_search(edges_.begin(), edges_.end(),
                            make_edge(e.first, e.second));
}

std::size_t MarkovNetwork::query_target() const {
  const std::size_t q = layout_.query();
  std::size_t found = q;
  for (const auto& e : edges_) {
    if (e.second != q) continue;
    if (found != q) throw ContractError("network has several query edges");
    found = e.first;
  }
  if (found == q) throw ContractError("network has no query edge");
  return found;
}

std::vector<Edge> clique_edges(const NetworkLayout& layout) {
  std::vector<Edge> out;
  out.reserve(layout.clique_edge_count());
  for (int k = 0; k < layout.classes; ++k)
    for (int i = 0; i < layout.domains; ++i)
      for (int j = i + 1; j < layout.domains; ++j)
        out.push_back(make_edge(layout.slot(i, k), layout.slot(j, k)));
  return out;
}

namespace {

MarkovNetwork cliques_plus_query(const NetworkLayout& layout, NetworkKind kind,
                                 int m, int k) {
  auto edges = clique_edges(layout);
  edges.push_back(make_edge(layout.slot(m, k), layout.query()));
  return MarkovNetwork(layout, kind, std::move(edges));
}

}  // namespace

MarkovNetwork build_positive(const NetworkLayout& layout, int domain, int label) {
  return cliques_plus_query(layout, NetworkKind::Positive, domain, label);
}

MarkovNetwork build_prediction(const NetworkLayout& layout, int domain, int cls) {
  return cliques_plus_query(layout, NetworkKind::Prediction, domain, cls);
}

std::size_t cross_class_pairs(const NetworkLayout& layout) {
  const std::size_t p = layout.prototypes();
  return p * (p - 1) / 2 - layout.clique_edge_count();
}

std::vector<MarkovNetwork> sample_negatives(const MarkovNetwork& positive,
                                            Rng& rng, int n2) {
  const NetworkLayout& layout = positive.layout();
  if (layout.classes < 2) throw ConfigError("negative sampling needs K >= 2");
  if (n2 < 0) throw ConfigError("n2 must be non-negative");
  const std::size_t target = positive.query_target();
  const int m = layout.domain_of(target);
  const int y = layout.class_of(target);
  const Edge query_edge = make_edge(target, layout.query());

  std::vector<MarkovNetwork> out;
  out.reserve(static_cast<std::size_t>(layout.classes - 1 + n2));
  for (int k = 0; k < layout.classes; ++k) {
    if (k == y) continue;
    std::vector<Edge> edges;
    edges.reserve(positive.size());
    for (const auto& e : positive.edges())
      if (e != query_edge) edges.push_back(e);
    edges.push_back(make_edge(layout.slot(m, k), layout.query()));
    out.emplace_back(layout, NetworkKind::Negative, std::move(edges));
  }

  const std::size_t available = cross_class_pairs(layout);
  if (static_cast<std::size_t>(n2) > available)
    throw ConfigError("n2 = " + std::to_string(n2) + " exceeds the " +
                      std::to_string(available) +
                      " prototype pairs of distinct categories");
  // Partial Fisher-Yates over the implicit candidate list of cross-class
  // pairs, so the chosen extra edges are distinct.
  std::vector<Edge> candidates;
  candidates.reserve(available);
  const std::size_t p = layout.prototypes();
  for (std::size_t u = 0; u < p; ++u)
    for (std::size_t v = u + 1; v < p; ++v)
      if (layout.class_of(u) != layout.class_of(v)) candidates.emplace_back(u, v);
  for (int i = 0; i < n2; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    std::uniform_int_distribution<std::size_t> pick(ui, candidates.size() - 1);
    std::swap(candidates[ui], candidates[pick(rng)]);
    std::vector<Edge> edges = positive.edges();
    edges.push_back(candidates[ui]);
    out.emplace_back(layout, NetworkKind::Negative, std::move(edges));
  }
  return out;
}

double energy(const MarkovNetwork& net, const Tensor& x, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (x.rank() != 2 || x.dim(0) < net.layout().nodes())
    throw ContractError("node embeddings do not cover the network");
  const std::size_t d = x.dim(1);
  double total = 0.0;
  for (const auto& [u, v] : net.edges()) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x.at(u, j) - x.at(v, j);
      s += diff * diff;
    }
    total += s;
  }
  return total / tau;
}

double log_unnorm_likelihood(const MarkovNetwork& net, const Tensor& x,
                             double tau) {
  return -energy(net, x, tau);
}

double unnorm_likelihood(const MarkovNetwork& net, const Tensor& x, double tau) {
  return std::exp(log_unnorm_likelihood(net, x, tau));
}

}  // namespace msda::mrf
