#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "msda/crf_model.hpp"
#include "msda/datagen.hpp"
#include "msda/errors.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace msda::crf {
namespace {

using oracle::sq_distance;
using testing::random_int;
using testing::random_tensor;

constexpr int kInstances = 100;
constexpr double kOracleTol = 1e-10;

// Random rows: every source domain gets at least one labeled row; target
// rows are labeled with probability 1/2.
QueryRows random_rows(Rng& rng, int domains, int classes, std::size_t per_domain) {
  QueryRows r;
  r.domains = domains;
  r.classes = classes;
  for (int m = 0; m < domains; ++m)
    for (std::size_t i = 0; i < per_domain; ++i) {
      r.domain.push_back(m);
      const bool target = m == domains - 1;
      r.label.push_back(target && random_int(rng, 0, 1) == 0
                            ? data::kUnlabeled
                            : random_int(rng, 0, classes - 1));
    }
  return r;
}

Tensor random_simplex(Shape shape, Rng& rng) {
  Tensor t = random_tensor(shape, rng, 0.05, 1.0);
  const std::size_t K = shape.back();
  for (std::size_t r = 0; r < t.size() / K; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += t[r * K + k];
    for (std::size_t k = 0; k < K; ++k) t[r * K + k] /= s;
  }
  return t;
}

TEST(GraphTest, AdjacencyContractHoldsOnRandomGraphs) {
  Rng rng(1);
  for (int it = 0; it < kInstances; ++it) {
    const int M1 = random_int(rng, 2, 4), K = random_int(rng, 2, 5);
    const auto d = static_cast<std::size_t>(random_int(rng, 1, 6));
    const double sigma = std::uniform_real_distribution<double>(0.05, 3.0)(rng);
    const auto np = static_cast<std::size_t>(M1 * K);
    const Tensor protos = random_tensor({np, d}, rng);
    const Tensor q = random_tensor({d}, rng);
    const auto g = build_graph(q, protos, sigma);
    ASSERT_EQ(g.adjacency.dim(0), np + 1);
    EXPECT_NO_THROW(check_adjacency(g.adjacency));
    for (std::size_t i = 0; i < np; ++i) {
      const double expect = std::exp(-sq_distance(protos, i, q.reshaped({1, d}), 0) /
                                     (2 * sigma * sigma));
      EXPECT_NEAR(g.adjacency.at(i, np), expect, 1e-14);
      for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(g.nodes.at(i, k), protos.at(i, k));
    }
    for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(g.nodes.at(np, k), q[k]);
  }
}

TEST(GraphTest, KernelAnalyticPoint) {
  const double sigma = 0.37;
  // ||delta||^2 = 2 sigma^2 split over two coordinates.
  const double c = sigma;
  const Tensor protos = Tensor::matrix(2, 2, {0.0, 0.0, c, c});
  const auto g = build_graph(Tensor::matrix(1, 2, {5.0, 5.0}).reshaped({2}), protos, sigma);
  EXPECT_NEAR(g.adjacency.at(0, 1), std::exp(-1.0), 1e-12);
  EXPECT_EQ(g.adjacency.at(0, 0), 1.0);
}

TEST(GraphTest, CheckAdjacencyRejectsViolations) {
  Tensor a = Tensor::identity(3);
  a.at(0, 1) = 0.5;
  EXPECT_THROW(check_adjacency(a), NumericError);
  a.at(1, 0) = 0.5;
  EXPECT_NO_THROW(check_adjacency(a));
  a.at(2, 2) = 0.9;
  EXPECT_THROW(check_adjacency(a), NumericError);
  Tensor b = Tensor::identity(2);
  b.at(0, 1) = b.at(1, 0) = 1.5;
  EXPECT_THROW(check_adjacency(b), NumericError);
}

TEST(GraphTest, BatchedGraphsMatchSingleGraphs) {
  Rng rng(2);
  const Tensor protos = random_tensor({6, 3}, rng);
  const Tensor queries = random_tensor({4, 3}, rng);
  Tape t(false);
  const auto g = build_graphs(t.constant(protos), t.constant(queries), 0.8);
  const std::size_t N = 7;
  for (std::size_t b = 0; b < 4; ++b) {
    const auto one = build_graph(Tensor({3}, std::vector<double>(queries.row(b).begin(),
                                                                  queries.row(b).end())),
                                 protos, 0.8);
    for (std::size_t i = 0; i < N * N; ++i)
      EXPECT_EQ(g.adjacency.value()[b * N * N + i], one.adjacency[i]);
  }
}

TEST(GraphTest, NormalizationOracles) {
  Rng rng(3);
  Tensor a = random_tensor({5, 5}, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    a.at(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) a.at(i, j) = a.at(j, i);
  }
  Tape t(false);
  const Tensor a3 = a.reshaped({1, 5, 5});
  const Tensor sym = normalize_adjacency(t.constant(a3), GcnNorm::Sym).value();
  const Tensor row = normalize_adjacency(t.constant(a3), GcnNorm::Row).value();
  const Tensor none = normalize_adjacency(t.constant(a3), GcnNorm::None).value();
  std::vector<double> deg(5, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) deg[i] += a.at(i, j);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(sym[i * 5 + j], a.at(i, j) / std::sqrt(deg[i] * deg[j]), 1e-15);
      EXPECT_NEAR(row[i * 5 + j], a.at(i, j) / deg[i], 1e-15);
      EXPECT_EQ(none[i * 5 + j], a.at(i, j));
    }
}

// Naive H = act(Â relu(Â X W1) W2) for one graph.
std::vector<double> gcn_oracle(const Tensor& a_hat, const Tensor& x, const Tensor& w1,
                               const Tensor& w2, bool final_relu) {
  const std::size_t N = x.dim(0), d = x.dim(1), h = w1.dim(1), o = w2.dim(1);
  std::vector<double> xw(N * h, 0.0), h1(N * h, 0.0), hw(N * o, 0.0), h2(N * o, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < h; ++c)
      for (std::size_t k = 0; k < d; ++k) xw[i * h + c] += x.at(i, k) * w1.at(k, c);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < h; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < N; ++j) s += a_hat.at(i, j) * xw[j * h + c];
      h1[i * h + c] = std::max(0.0, s);
    }
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < o; ++c)
      for (std::size_t k = 0; k < h; ++k) hw[i * o + c] += h1[i * h + k] * w2.at(k, c);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < o; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < N; ++j) s += a_hat.at(i, j) * hw[j * o + c];
      h2[i * o + c] = final_relu ? std::max(0.0, s) : s;
    }
  return h2;
}

TEST(GcnTest, ForwardMatchesLoopOracle) {
  Rng rng(4);
  for (int it = 0; it < 30; ++it) {
    const int M1 = random_int(rng, 2, 3), K = random_int(rng, 2, 4);
    const std::size_t d = 3, h = 4, o = 3;
    const auto np = static_cast<std::size_t>(M1 * K);
    GcnParams params(d, h, o, static_cast<std::size_t>(K), rng);
    const Tensor protos = random_tensor({np, d}, rng);
    const Tensor queries = random_tensor({2, d}, rng);
    const bool final_relu = it % 2 == 0;
    for (GcnNorm norm : {GcnNorm::Sym, GcnNorm::Row, GcnNorm::None}) {
      Tape t(false);
      const auto g = build_graphs(t.constant(protos), t.constant(queries), 0.9);
      const Tensor out = gcn_forward(g, params, norm, final_relu).value();
      const Tensor a_hat = normalize_adjacency(g.adjacency, norm).value();
      const std::size_t N = np + 1;
      for (std::size_t b = 0; b < 2; ++b) {
        Tensor ab({N, N}), xb({N, d});
        std::copy_n(a_hat.data().begin() + static_cast<std::ptrdiff_t>(b * N * N), N * N,
                    ab.data().begin());
        std::copy_n(g.nodes.value().data().begin() + static_cast<std::ptrdiff_t>(b * N * d),
                    N * d, xb.data().begin());
        const auto ref = gcn_oracle(ab, xb, params.w1.value, params.w2.value, final_relu);
        for (std::size_t i = 0; i < N * o; ++i)
          EXPECT_NEAR(out[b * N * o + i], ref[i], 1e-12);
      }
    }
  }
}

TEST(LossTest, ClassificationTermsMatchLoopOracle) {
  Rng rng(5);
  for (int it = 0; it < kInstances; ++it) {
    const int M1 = random_int(rng, 2, 4), K = random_int(rng, 2, 5);
    const auto per = static_cast<std::size_t>(random_int(rng, 1, 3));
    const QueryRows rows = random_rows(rng, M1, K, per);
    const std::size_t B = rows.size(), np = static_cast<std::size_t>(M1 * K), N = np + 1;
    const auto Ku = static_cast<std::size_t>(K);
    const Tensor probs = random_simplex({B, N, Ku}, rng);
    Tape t(false);
    const ClsTerms terms = loss_cls(t.constant(probs), rows);

    const oracle::ClsTerms ref = oracle::cls_terms(probs, rows);
    EXPECT_NEAR(terms.proto.item(), ref.proto, kOracleTol);
    EXPECT_NEAR(terms.src.item(), ref.src, kOracleTol);
    EXPECT_NEAR(terms.tgt.item(), ref.tgt, kOracleTol);
  }
}

TEST(LossTest, GlobalTermMatchesLoopOracle) {
  Rng rng(6);
  for (int it = 0; it < kInstances; ++it) {
    const int D = random_int(rng, 2, 4), K = random_int(rng, 2, 5);
    const auto np = static_cast<std::size_t>(D * K);
    const Tensor block = random_tensor({np, np}, rng, 0.0, 1.0);
    Tape t(false);
    const double got = loss_global(t.constant(block), D, K).item();
    const double ref = oracle::global_term(block, D, K);
    EXPECT_NEAR(got, ref, kOracleTol);
  }
}

TEST(LossTest, GlobalTermVanishesForDomainInvariantPrototypes) {
  Rng rng(7);
  const int D = 3, K = 4;
  const Tensor base = random_tensor({4, 5}, rng);
  Tensor protos({12, 5});
  for (int m = 0; m < D; ++m)
    for (int k = 0; k < K; ++k)
      for (std::size_t j = 0; j < 5; ++j)
        protos.at(static_cast<std::size_t>(m * K + k), j) = base.at(static_cast<std::size_t>(k), j);
  Tape t(false);
  Var c = t.constant(protos);
  EXPECT_NEAR(loss_global(rbf_kernel(sqdist(c, c), 0.7), D, K).item(), 0.0, 1e-15);
}

TEST(LossTest, GlobalTermCoversOnlyDefinedDomains) {
  PrototypeBank bank(3, 2, 1, PrototypeMode::Ema);
  bank.ema_update({Tensor({6, 1}, 1.0), {true, true, true, false, false, false}, {1, 1, 1, 0, 0, 0}});
  const int none[] = {-1};
  EXPECT_EQ(defined_domains(bank, none), (std::vector<int>{0}));
  const int batch[] = {3, -1, 5};
  EXPECT_EQ(defined_domains(bank, batch), (std::vector<int>{0, 1}));

  Rng rng(17);
  const Tensor block = random_tensor({6, 6}, rng);
  Tape t(false);
  const int all[] = {0, 1, 2};
  EXPECT_EQ(domain_block(t.constant(block), all, 2).value(), block);
  const int outer[] = {0, 2};
  const Tensor sub = domain_block(t.constant(block), outer, 2).value();
  const std::size_t keep[] = {0, 1, 4, 5};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(sub.at(i, j), block.at(keep[i], keep[j]));
}

TEST(LossTest, LocalTermMatchesLoopOracle) {
  Rng rng(8);
  for (int it = 0; it < kInstances; ++it) {
    const auto n = static_cast<std::size_t>(random_int(rng, 1, 12));
    const auto np = static_cast<std::size_t>(random_int(rng, 2, 10));
    const auto d = static_cast<std::size_t>(random_int(rng, 1, 5));
    const Tensor z = random_tensor({n, d}, rng);
    const Tensor c = random_tensor({np, d}, rng);
    std::vector<int> slots(n);
    for (auto& s : slots) s = random_int(rng, -1, static_cast<int>(np) - 1);
    Tape t(false);
    const double got = loss_local(t.constant(z), t.constant(c), slots, n).item();
    const double ref = oracle::local_term(z, c, slots, n);
    EXPECT_NEAR(got, ref, kOracleTol);
  }
}

TEST(CrfModelTest, ObjectiveLeavesBankUntouchedAndPredictsDistributions) {
  auto cfg = data::preset_generator("tiny");
  const auto bundle = data::generate(cfg, 3);
  Rng rng(9);
  CrfConfig c;
  c.sigma = 1.0;
  CrfModel model(1, 2, 2, c, rng);
  data::BatchSampler sampler(bundle, 4);
  Rng srng(1);
  sampler.begin_epoch(srng);
  const auto batch = sampler.next(data::PseudoLabels(bundle.target().size()));
  const Tensor before = model.bank().values();
  Tape tape;
  const CrfLoss loss = model.objective(tape, batch);
  EXPECT_EQ(model.bank().values(), before);
  EXPECT_TRUE(std::isfinite(loss.total.item()));
  EXPECT_GE(loss.global, 0.0);
  EXPECT_GE(loss.local, 0.0);
  model.commit_prototypes(loss.estimate);
  const Tensor p = model.predict(bundle.target().features);
  for (std::size_t i = 0; i < p.dim(0); ++i) {
    const auto r = p.row(i);
    EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-12);
  }
  const Tensor adj = model.prototype_adjacency();
  EXPECT_NO_THROW(check_adjacency(adj));
}

TEST(CrfModelTest, ConfigValidation) {
  CrfConfig c;
  c.sigma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = CrfConfig{};
  c.beta = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_gcn_norm("diag"), ConfigError);
  EXPECT_EQ(parse_gcn_norm(to_string(GcnNorm::Row)), GcnNorm::Row);
}

TEST(GraphTest, CoincidentNodesAndVanishingBandwidth) {
  const Tensor protos = Tensor::matrix(3, 2, {0.0, 0.0, 0.0, 0.0, 1.0, 0.0});
  const Tensor q = Tensor({2}, {0.0, 1.0});
  const auto wide = build_graph(q, protos, 0.5);
  EXPECT_EQ(wide.adjacency.at(0, 1), 1.0);
  const auto narrow = build_graph(q, protos, 1e-3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j && !(i < 2 && j < 2)) EXPECT_LT(narrow.adjacency.at(i, j), 1e-300);
  EXPECT_THROW(build_graph(q, protos, 0.0), ConfigError);
}

// Builds a one-graph batch with an explicit adjacency.
GraphBatch single_graph(Tape& t, const Tensor& nodes, const Tensor& adjacency) {
  const std::size_t n = nodes.dim(0);
  return {t.constant(nodes.reshaped({1, n, nodes.dim(1)})),
          t.constant(adjacency.reshaped({1, n, n})), t.constant(Tensor({1, 1}))};
}

void set_identity(Parameter& p) {
  p.value.fill(0.0);
  for (std::size_t i = 0; i < std::min(p.value.dim(0), p.value.dim(1)); ++i)
    p.value.at(i, i) = 1.0;
}

TEST(GcnTest, IdentityAdjacencyAndWeightsGiveRelu) {
  Rng rng(12);
  GcnParams params(3, 3, 3, 2, rng);
  set_identity(params.w1);
  set_identity(params.w2);
  const Tensor x = random_tensor({4, 3}, rng);
  Tape t(false);
  const Tensor h =
      gcn_forward(single_graph(t, x, Tensor::identity(4)), params, GcnNorm::Sym, true).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(h[i], std::max(0.0, x[i]));
}

TEST(GcnTest, SymmetricNodesGetIdenticalRows) {
  Rng rng(13);
  GcnParams params(2, 4, 3, 2, rng);
  const Tensor x = Tensor::matrix(3, 2, {0.5, -1.0, 0.5, -1.0, 2.0, 0.3});
  const Tensor a = Tensor::matrix(3, 3, {1.0, 0.2, 0.6, 0.2, 1.0, 0.6, 0.6, 0.6, 1.0});
  Tape t(false);
  const Tensor h = gcn_forward(single_graph(t, x, a), params, GcnNorm::Sym, false).value();
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(h[c], h[3 + c]);
}

TEST(GcnTest, ZeroClassifierPredictsUniform) {
  Rng rng(14);
  GcnParams params(3, 3, 3, 4, rng);
  params.classifier.weight.value.fill(0.0);
  params.classifier.bias.value.fill(0.0);
  Tape t(false);
  const Tensor p =
      predict_labels(t.constant(random_tensor({2, 5, 3}, rng)), params.classifier).value();
  for (double v : p.values()) EXPECT_EQ(v, 0.25);
}

TEST(LossTest, ClassificationBoundaryCases) {
  const int M1 = 2, K = 3;
  QueryRows rows;
  rows.domains = M1;
  rows.classes = K;
  rows.domain = {0, 1};
  rows.label = {2, data::kUnlabeled};
  const std::size_t N = 7;
  Tensor onehot({2, N, 3});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t s = 0; s < 6; ++s) onehot[(b * N + s) * 3 + s % 3] = 1.0;
    onehot[(b * N + 6) * 3 + 2] = 1.0;
  }
  Tape t(false);
  const ClsTerms perfect = loss_cls(t.constant(onehot), rows);
  EXPECT_NEAR(perfect.proto.item(), 0.0, 1e-11);
  EXPECT_NEAR(perfect.src.item(), 0.0, 1e-11);
  EXPECT_NEAR(perfect.tgt.item(), 0.0, 1e-10);
  const ClsTerms uniform = loss_cls(t.constant(Tensor({2, N, 3}, 1.0 / 3)), rows);
  EXPECT_NEAR(uniform.tgt.item(), std::log(3.0), 1e-14);
}

TEST(LossTest, GlobalTermWithOneDomainIsZero) {
  Rng rng(15);
  Tape t(false);
  EXPECT_EQ(loss_global(t.constant(random_tensor({3, 3}, rng)), 1, 3).item(), 0.0);
}

TEST(LossTest, LocalTermBoundaryCases) {
  Rng rng(16);
  const Tensor c = random_tensor({4, 3}, rng);
  Tensor z({2, 3});
  for (std::size_t j = 0; j < 3; ++j) {
    z.at(0, j) = c.at(1, j);
    z.at(1, j) = c.at(3, j);
  }
  Tape t(false);
  const int slots[] = {1, 3};
  EXPECT_EQ(loss_local(t.constant(z), t.constant(c), slots, 2).item(), 0.0);
  const Tensor one = Tensor::matrix(1, 2, {3.0, 4.0});
  const int slot0[] = {0};
  EXPECT_NEAR(loss_local(t.constant(one), t.constant(Tensor({1, 2})), slot0, 1).item(), 25.0,
              1e-14);
}

data::MiniBatch first_batch(const data::DatasetBundle& bundle, std::size_t size) {
  data::BatchSampler sampler(bundle, size);
  Rng srng(1);
  sampler.begin_epoch(srng);
  data::PseudoLabels pseudo(bundle.target().size());
  for (std::size_t i = 0; i < pseudo.size(); i += 2) pseudo[i] = bundle.target().labels[i];
  return sampler.next(pseudo);
}

TEST(CrfModelTest, ZeroTradeOffsReduceToClassification) {
  const auto bundle = data::generate(data::preset_generator("tiny"), 5);
  const auto batch = first_batch(bundle, 6);
  CrfConfig c;
  c.sigma = 1.0;
  Rng r1(3);
  const CrfModel full(1, 2, 2, c, r1);
  c.lambda1 = c.lambda2 = 0.0;
  Rng r2(3);
  const CrfModel plain(1, 2, 2, c, r2);
  Tape ta, tb;
  const CrfLoss lf = full.objective(ta, batch);
  const CrfLoss lp = plain.objective(tb, batch);
  const double cls = lp.proto + lp.src + lp.tgt;
  EXPECT_NEAR(lp.total.item(), cls, 1e-12);
  EXPECT_GE(lf.total.item(), cls - 1e-12);
  EXPECT_NEAR(lf.total.item(), cls + 20.0 * lf.global + 0.001 * lf.local, 1e-12);
}

TEST(CrfModelTest, PredictionIsAPureFunction) {
  const auto bundle = data::generate(data::preset_generator("tiny"), 6);
  Rng rng(4);
  CrfConfig c;
  c.sigma = 1.0;
  CrfModel model(1, 2, 2, c, rng);
  Tape tape;
  model.commit_prototypes(model.objective(tape, first_batch(bundle, 6)).estimate);
  const Tensor q = Tensor::matrix(2, 2, {0.3, -0.2, 0.3, -0.2});
  const Tensor p = model.predict(q);
  EXPECT_EQ(p.row(0)[0], p.row(1)[0]);
  EXPECT_EQ(model.predict(q), p);
}

}  // namespace
}  // namespace msda::crf
