#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lgcnet/arch.hpp"
#include "lgcnet/error.hpp"
#include "lgcnet/ggm.hpp"

namespace lgc {
namespace {

using testing::grad_check;
using testing::random_tensor;
using Mat = std::vector<std::vector<double>>;

// ---- plain-loop oracle ------------------------------------------------------------

Mat to_mat(const Tensor& t) {
  Mat m(static_cast<size_t>(t.dim(0)), std::vector<double>(static_cast<size_t>(t.dim(1))));
  for (size_t r = 0; r < m.size(); ++r)
    for (size_t c = 0; c < m[r].size(); ++c) m[r][c] = t.at(static_cast<int64_t>(r), static_cast<int64_t>(c));
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat o(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j) o[i][j] += a[i][k] * b[k][j];
  return o;
}

Mat tr(const Mat& a) {
  Mat o(a[0].size(), std::vector<double>(a.size()));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[0].size(); ++j) o[j][i] = a[i][j];
  return o;
}

Mat softmax(Mat a) {
  for (auto& row : a) {
    double mx = row[0], s = 0.0;
    for (double v : row) mx = std::max(mx, v);
    for (double& v : row) s += (v = std::exp(v - mx));
    for (double& v : row) v /= s;
  }
  return a;
}

Mat affine(const Mat& x, const Tensor& w, const Tensor& b) {
  Mat o = mm(x, to_mat(w));
  for (auto& row : o)
    for (size_t j = 0; j < row.size(); ++j) row[j] += b[static_cast<int64_t>(j)];
  return o;
}

Mat oracle_update(const Tensor& cur, const Tensor& prev, const GgmPairWeights& w, double gamma) {
  const Mat a = to_mat(cur), b = to_mat(prev);
  const Mat adj = softmax(mm(mm(a, to_mat(w.w1)), tr(mm(b, to_mat(w.w2)))));
  const Mat x = affine(b, w.embed_w, w.embed_b);
  Mat h = mm(mm(adj, x), to_mat(w.gcn));
  for (size_t i = 0; i < h.size(); ++i)
    for (size_t j = 0; j < h[i].size(); ++j) h[i][j] += x[i][j];
  Mat out = affine(h, w.out_w, w.out_b);
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t j = 0; j < out[i].size(); ++j) out[i][j] = a[i][j] + gamma * out[i][j];
  return out;
}

void randomise(Tensor& t, Rng& rng, double scale = 0.5) {
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
}

GgmWeights live_weights(GgmMode mode, int cells, Rng& rng, int dim = 6) {
  GgmConfig cfg;
  cfg.mode = mode;
  cfg.dim = dim;
  GgmWeights w = GgmWeights::make(cfg, cells, 5, 8, rng);
  for (auto& p : w.pairs) {
    randomise(p.out_w, rng);
    randomise(p.out_b, rng);
  }
  return w;
}

// ---- adjacency and propagation ----------------------------------------------------

TEST(Adjacency, ZeroParametersGiveUniform) {
  Rng rng(1);
  Tensor z = Tensor::zeros({5, 8});
  Tensor a = adjacency(z, z, random_tensor({8, 8}, rng, -1, 1, false), random_tensor({8, 8}, rng, -1, 1, false));
  ASSERT_EQ(a.shape(), (Shape{5, 5}));
  for (double v : a.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Adjacency, IdentityTransformsMatchHandProduct) {
  Rng rng(2);
  Tensor eye = Tensor::zeros({8, 8});
  for (int i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  for (int t = 0; t < 5; ++t) {
    Tensor cur = random_tensor({5, 8}, rng, -1, 1, false), prev = random_tensor({5, 8}, rng, -1, 1, false);
    const Mat expect = softmax(mm(to_mat(cur), tr(to_mat(prev))));
    Tensor a = adjacency(cur, prev, eye, eye);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) EXPECT_NEAR(a.at(i, j), expect[static_cast<size_t>(i)][static_cast<size_t>(j)], 1e-14);
  }
}

TEST(Adjacency, RowStochasticOnThousandInputs) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    Tensor a = adjacency(random_tensor({5, 8}, rng, -3, 3, false), random_tensor({5, 8}, rng, -3, 3, false),
                         random_tensor({8, 8}, rng, -1, 1, false), random_tensor({8, 8}, rng, -1, 1, false));
    for (int i = 0; i < 5; ++i) {
      double s = 0.0;
      for (int j = 0; j < 5; ++j) {
        ASSERT_GT(a.at(i, j), 0.0);
        s += a.at(i, j);
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Adjacency, DimensionMismatchRaises) {
  EXPECT_THROW(adjacency(Tensor::zeros({5, 8}), Tensor::zeros({4, 8}), Tensor::zeros({8, 8}), Tensor::zeros({8, 8})),
               ShapeError);
}

TEST(Gcn, ZeroWeightIsResidualOnly) {
  Rng rng(4);
  Tensor x = random_tensor({5, 4}, rng, -1, 1, false);
  Tensor y = gcn_propagate(x, random_tensor({5, 5}, rng, 0, 1, false), Tensor::zeros({4, 4}));
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Gcn, IdentityGraphDoubles) {
  Rng rng(5);
  Tensor x = random_tensor({5, 4}, rng, -1, 1, false);
  Tensor a = Tensor::zeros({5, 5}), w = Tensor::zeros({4, 4});
  for (int i = 0; i < 5; ++i) a[i * 6] = 1.0;
  for (int i = 0; i < 4; ++i) w[i * 5] = 1.0;
  Tensor y = gcn_propagate(x, a, w);
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 2.0 * x[i]);
}

TEST(Gcn, RandomMatchesHandArithmetic) {
  Rng rng(6);
  Tensor x = random_tensor({5, 4}, rng, -1, 1, false), a = random_tensor({5, 5}, rng, 0, 1, false),
         w = random_tensor({4, 4}, rng, -1, 1, false);
  Mat expect = mm(mm(to_mat(a), to_mat(x)), to_mat(w));
  Tensor y = gcn_propagate(x, a, w);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(y.at(i, j), expect[size_t(i)][size_t(j)] + x.at(i, j), 1e-14);
}

TEST(OperationIdentity, ShapesAndOracle) {
  Tensor c = Tensor::full({5, 8}, 0.7);
  Tensor a = operation_identity_adjacency(c, c);
  ASSERT_EQ(a.shape(), (Shape{40, 40}));
  for (double v : a.data()) EXPECT_NEAR(v, 1.0 / 40, 1e-15);

  Rng rng(7);
  Tensor cur = random_tensor({5, 8}, rng, -1, 1, false), prev = random_tensor({5, 8}, rng, -1, 1, false);
  Mat outer(40, std::vector<double>(40));
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) outer[size_t(i)][size_t(j)] = cur[i] * prev[j];
  const Mat expect = softmax(outer);
  Tensor got = operation_identity_adjacency(cur, prev);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) EXPECT_NEAR(got.at(i, j), expect[size_t(i)][size_t(j)], 1e-15);
}

// ---- update identities ------------------------------------------------------------

TEST(GgmUpdate, FreshModuleIsIdentity) {
  Rng rng(8);
  for (GgmMode mode : {GgmMode::kEdgeSimilarity, GgmMode::kOperationIdentity, GgmMode::kFc}) {
    GgmConfig cfg;
    cfg.mode = mode;
    GgmWeights w = GgmWeights::make(cfg, 3, 5, 8, rng);
    Tensor cur = random_tensor({5, 8}, rng, -1, 1, false), prev = random_tensor({5, 8}, rng, -1, 1, false);
    Tensor out = ggm_update(cur, prev, w.pairs[0], cfg);
    for (int64_t i = 0; i < cur.numel(); ++i) EXPECT_EQ(out[i], cur[i]) << ggm_mode_name(mode);
  }
}

TEST(GgmUpdate, GammaZeroIsExactIdentity) {
  Rng rng(9);
  for (GgmMode mode : {GgmMode::kEdgeSimilarity, GgmMode::kOperationIdentity, GgmMode::kFc}) {
    GgmWeights w = live_weights(mode, 2, rng);
    w.config.gamma = 0.0;
    Tensor cur = random_tensor({5, 8}, rng, -1, 1, false), prev = random_tensor({5, 8}, rng, -1, 1, false);
    Tensor out = ggm_update(cur, prev, w.pairs[0], w.config);
    for (int64_t i = 0; i < cur.numel(); ++i) EXPECT_EQ(out[i], cur[i]) << ggm_mode_name(mode);
  }
}

TEST(GgmUpdate, ZeroGcnWeightUsesEmbeddingOnly) {
  // With W_gcn = 0 the graph term vanishes, so the update equals the fc path.
  Rng rng(10);
  GgmWeights w = live_weights(GgmMode::kEdgeSimilarity, 2, rng);
  for (double& v : w.pairs[0].gcn.data()) v = 0.0;
  Tensor cur = random_tensor({5, 8}, rng, -1, 1, false), prev = random_tensor({5, 8}, rng, -1, 1, false);
  Tensor a = ggm_update(cur, prev, w.pairs[0], w.config);
  GgmConfig fc = w.config;
  fc.mode = GgmMode::kFc;
  Tensor b = ggm_update(cur, prev, w.pairs[0], fc);
  for (int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(GgmUpdate, MatchesLoopOracle) {
  Rng rng(11);
  for (int t = 0; t < 5; ++t) {
    GgmWeights w = live_weights(GgmMode::kEdgeSimilarity, 2, rng, 7);
    Tensor cur = random_tensor({5, 8}, rng, -1, 1, false), prev = random_tensor({5, 8}, rng, -1, 1, false);
    const Mat expect = oracle_update(cur, prev, w.pairs[0], w.config.gamma);
    Tensor got = ggm_update(cur, prev, w.pairs[0], w.config);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 8; ++j) EXPECT_NEAR(got.at(i, j), expect[size_t(i)][size_t(j)], 1e-12);
  }
}

TEST(GgmUpdate, FiniteDifferencesEveryInput) {
  Rng rng(12);
  for (GgmMode mode : {GgmMode::kEdgeSimilarity, GgmMode::kOperationIdentity, GgmMode::kFc}) {
    for (int t = 0; t < 5; ++t) {
      GgmWeights w = live_weights(mode, 2, rng, 5);
      std::vector<Tensor> inputs{random_tensor({5, 8}, rng), random_tensor({5, 8}, rng)};
      for (auto& p : w.pairs[0].parameters()) inputs.push_back(p);
      auto fn = [&](const std::vector<Tensor>& v) { return ggm_update(v[0], v[1], w.pairs[0], w.config); };
      EXPECT_LT(grad_check(fn, inputs, rng), 1e-4) << ggm_mode_name(mode);
    }
  }
}

TEST(GgmUpdate, SumGradientWrtW1) {
  Rng rng(13);
  for (int t = 0; t < 5; ++t) {
    GgmWeights w = live_weights(GgmMode::kEdgeSimilarity, 2, rng);
    Tensor cur = random_tensor({5, 8}, rng), prev = random_tensor({5, 8}, rng);
    auto fn = [&](const std::vector<Tensor>&) { return ops::sum(ggm_update(cur, prev, w.pairs[0], w.config)); };
    EXPECT_LT(grad_check(fn, {w.pairs[0].w1}, rng, 1e-5, 64), 1e-4);
  }
}

// ---- chain --------------------------------------------------------------------------

TEST(GgmChain, CellZeroPassesThroughAndLocality) {
  Rng rng(14);
  GgmWeights w = live_weights(GgmMode::kEdgeSimilarity, 4, rng);
  std::vector<Tensor> cells;
  for (int k = 0; k < 4; ++k) cells.push_back(random_tensor({5, 8}, rng, -1, 1, false));
  const auto base = ggm_chain(cells, w);
  for (int64_t i = 0; i < 40; ++i) EXPECT_EQ(base[0][i], cells[0][i]);

  std::vector<Tensor> perturbed = cells;
  perturbed[1] = cells[1].clone();
  for (double& v : perturbed[1].data()) v += 0.3;
  const auto moved = ggm_chain(perturbed, w);
  for (int64_t i = 0; i < 40; ++i) EXPECT_EQ(moved[3][i], base[3][i]);  // k-2 perturbed, k-1 fixed
  bool changed = false;
  for (int64_t i = 0; i < 40; ++i) changed = changed || moved[2][i] != base[2][i];
  EXPECT_TRUE(changed);
}

TEST(GgmChain, CascadePropagatesFurther) {
  Rng rng(15);
  GgmWeights w = live_weights(GgmMode::kEdgeSimilarity, 3, rng);
  w.config.cascade = true;
  std::vector<Tensor> cells;
  for (int k = 0; k < 3; ++k) cells.push_back(random_tensor({5, 8}, rng, -1, 1, false));
  const auto base = ggm_chain(cells, w);
  std::vector<Tensor> perturbed = cells;
  perturbed[0] = cells[0].clone();
  perturbed[0][0] += 0.5;
  const auto moved = ggm_chain(perturbed, w);
  bool changed = false;
  for (int64_t i = 0; i < 40; ++i) changed = changed || moved[2][i] != base[2][i];
  EXPECT_TRUE(changed);
}

TEST(GgmMode, NamesRoundTrip) {
  for (GgmMode m : {GgmMode::kEdgeSimilarity, GgmMode::kOperationIdentity, GgmMode::kFc, GgmMode::kNone})
    EXPECT_EQ(ggm_mode_from_name(ggm_mode_name(m)), m);
  EXPECT_THROW(ggm_mode_from_name("gat"), ConfigError);
}

// ---- decode -------------------------------------------------------------------------

TEST(Decode, ArgmaxWithLowestIndexTies) {
  Tensor m = Tensor::from({3, 3}, {0.9, 0.05, 0.05, 1.0, 1.0, 1.0, 0.0, 2.0, 2.0});
  EXPECT_EQ(row_argmax(m), (std::vector<int>{0, 0, 1}));
  const int widths[] = {3, 3, 1};
  EXPECT_EQ(row_argmax(m, widths)[2], 0);
}

TEST(Decode, FreshSearchStateIsFirstCandidate) {
  const Topology t = testing::tiny_topology();
  ArchParams arch(t, CellSharing::kIndependent);
  Rng rng(16);
  GgmWeights ggm = GgmWeights::make({}, t.cells, 5, 8, rng);
  const Genotype g = decode(arch, ggm);
  for (const auto& cell : g.cells)
    for (Primitive p : cell) EXPECT_EQ(p, Primitive::kMaxPool3x3);
  for (int e = 0; e < FusionTemplate::kEdges; ++e)
    EXPECT_EQ(g.fusion[size_t(e)], FusionTemplate::candidates(e)[0]);
}

TEST(Decode, TwoCellToyMatchesHandUpdate) {
  Topology t = testing::tiny_topology();
  Rng rng(17);
  ArchParams arch(t, CellSharing::kIndependent);
  for (int k = 0; k < t.cells; ++k) randomise(arch.cell_logits(k), rng, 1.0);
  GgmWeights ggm = live_weights(GgmMode::kEdgeSimilarity, t.cells, rng, 8);
  for (auto& p : ggm.pairs) randomise(p.out_w, rng, 2.0);
  const Genotype g = decode(arch, ggm);
  for (int k = 1; k < t.cells; ++k) {
    const Mat upd = oracle_update(arch.cell_logits(k), arch.cell_logits(k - 1), ggm.pairs[size_t(k - 1)], 0.5);
    for (int e = 0; e < 5; ++e) {
      const auto& row = upd[size_t(e)];
      const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      EXPECT_EQ(g.cells[size_t(k)][size_t(e)], backbone_candidates()[size_t(best)]) << k << "," << e;
    }
  }
}

TEST(Decode, AllZeroCellKeepsOneSkip) {
  const Topology t = testing::tiny_topology();
  ArchParams arch(t, CellSharing::kIndependent);
  const int zero = 3;
  ASSERT_EQ(backbone_candidates()[zero], Primitive::kZero);
  for (int e = 0; e < 5; ++e) arch.cell_logits(0)[e * 8 + zero] = 1.0 + 0.1 * e;
  Rng rng(18);
  GgmConfig none;
  none.mode = GgmMode::kNone;
  const Genotype g = decode(arch, GgmWeights::make(none, t.cells, 5, 8, rng));
  for (int e = 0; e < 4; ++e) EXPECT_EQ(g.cells[0][size_t(e)], Primitive::kZero);
  EXPECT_EQ(g.cells[0][4], Primitive::kSkip);
}

TEST(ArchParams, SharedModeUsesTwoMatrices) {
  const Topology t = testing::tiny_topology();
  ArchParams arch(t, CellSharing::kShared);
  EXPECT_EQ(arch.matrix_count(), 2);
  EXPECT_EQ(arch.cell_logits(1).impl(), arch.cell_logits(2).impl());
  EXPECT_NE(arch.cell_logits(0).impl(), arch.cell_logits(1).impl());
  ArchParams indep(t, CellSharing::kIndependent);
  EXPECT_EQ(indep.matrix_count(), t.cells);
  Tensor a = indep.cell_alpha(0);
  for (double v : a.data()) EXPECT_EQ(v, 1.0);
}

}  // namespace
}  // namespace lgc
