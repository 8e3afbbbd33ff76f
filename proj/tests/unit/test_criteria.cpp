#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "layerprune/criteria.hpp"
#include "layerprune/error.hpp"
#include "layerprune/pruner.hpp"

using namespace testing_util;

namespace {

// Per-filter L2 norm by explicit loops over the weight array.
std::vector<double> loop_filter_norms(const lp::Tensor& w) {
  std::vector<double> out;
  const int F = w.dim(0), C = w.dim(1), K = w.dim(2);
  for (int f = 0; f < F; ++f) {
    double s = 0.0;
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) s += w.at(f, c, i, j) * w.at(f, c, i, j);
    out.push_back(std::sqrt(s));
  }
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

void expect_close(double got, double want, double tol) {
  EXPECT_LE(rel_diff(got, want), tol) << got << " vs " << want;
}

lp::ArchitectureDescriptor random_vgg(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> width(1, 6), depth(2, 4);
  lp::ArchitectureDescriptor d = tiny_vgg();
  d.layers.clear();
  const int n = depth(rng);
  for (int i = 0; i < n; ++i) d.layers.push_back({lp::LayerToken::Kind::conv, width(rng)});
  return d;
}

void randomize_gammas(lp::ModelGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& [name, t] : g.named_tensors())
    if (name.ends_with("bn.gamma"))
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = n(rng);
}

lp::ImportanceTable random_table(const std::vector<int>& units, std::mt19937_64& rng, const std::string& name) {
  std::uniform_int_distribution<int> score(0, 5);  // coarse scores to force ties
  lp::ImportanceTable t;
  t.criterion = name;
  for (int u : units) t.layer_scores[u] = score(rng);
  t.rank();
  return t;
}

// Positions summed table by table, then sorted with the ascending-index tie-break.
std::vector<int> brute_force_ensemble(const std::vector<lp::ImportanceTable>& tables) {
  std::map<int, double> sums;
  for (const auto& t : tables)
    for (std::size_t p = 0; p < t.rank_order.size(); ++p) sums[t.rank_order[p]] += p;
  std::vector<int> order;
  for (auto& [u, s] : sums) order.push_back(u);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int a = order[i], b = order[j];
      if (sums[b] < sums[a] || (sums[b] == sums[a] && b < a)) std::swap(order[i], order[j]);
    }
  return order;
}

}  // namespace

TEST(WeightNorm, MatchesLoopOracleOnRandomModels) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 25; ++trial) {
    const lp::ModelGraph g = lp::instantiate(random_vgg(rng), 100 + trial);
    const lp::ImportanceTable t = lp::weight_norm_importance(g);
    for (const auto& u : g.units) {
      const auto want = loop_filter_norms(u.convs[0].weight);
      ASSERT_EQ(t.filter_scores.at(u.index).size(), want.size());
      for (std::size_t f = 0; f < want.size(); ++f) expect_close(t.filter_scores.at(u.index)[f], want[f], 1e-6);
      expect_close(t.layer_scores.at(u.index), mean(want), 1e-6);
    }
  }
}

TEST(WeightNorm, ResidualUnitConcatenatesConvFilters) {
  const lp::ModelGraph g = lp::instantiate(tiny_resnet(), 3);
  const lp::ImportanceTable t = lp::weight_norm_importance(g);
  for (const auto& u : g.units) {
    std::vector<double> want;
    for (const auto& c : u.convs) {
      auto n = loop_filter_norms(c.weight);
      want.insert(want.end(), n.begin(), n.end());
    }
    ASSERT_EQ(t.filter_scores.at(u.index).size(), want.size());
    for (std::size_t f = 0; f < want.size(); ++f) expect_close(t.filter_scores.at(u.index)[f], want[f], 1e-12);
  }
}

TEST(WeightNorm, ZeroAndIdenticalFilters) {
  lp::ModelGraph g = lp::instantiate(tiny_vgg(), 4);
  g.units[0].convs[0].weight.fill(0.0);
  auto& w = g.units[1].convs[0].weight;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
  for (int f = 0; f < w.dim(0); ++f) w.at(f, 0, 0, 0) = 2.5;
  const lp::ImportanceTable t = lp::weight_norm_importance(g);
  EXPECT_EQ(t.layer_scores.at(0), 0.0);
  EXPECT_DOUBLE_EQ(t.layer_scores.at(1), 2.5);
}

TEST(WeightNorm, TwoFilterLayer) {
  lp::ArchitectureDescriptor d = tiny_vgg();
  d.layers = {{lp::LayerToken::Kind::conv, 2}, {lp::LayerToken::Kind::conv, 3}};
  const lp::ModelGraph g = lp::instantiate(d, 8);
  const auto n = loop_filter_norms(g.units[0].convs[0].weight);
  expect_close(lp::weight_norm_importance(g).layer_scores.at(0), (n[0] + n[1]) / 2, 1e-12);
}

TEST(WeightNorm, ScalingOneLayer) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_vgg"), 5);
  const lp::ImportanceTable before = lp::weight_norm_importance(g);
  lp::ModelGraph scaled = g;
  auto& w = scaled.units[3].convs[0].weight;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] *= 3.0;
  const lp::ImportanceTable after = lp::weight_norm_importance(scaled);
  expect_close(after.layer_scores.at(3), 3.0 * before.layer_scores.at(3), 1e-12);
  std::vector<int> a, b;
  for (int u : before.rank_order)
    if (u != 3) a.push_back(u);
  for (int u : after.rank_order)
    if (u != 3) b.push_back(u);
  EXPECT_EQ(a, b);
}

TEST(BnScale, MatchesSquaredGammaOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    lp::ModelGraph g = lp::instantiate(random_vgg(rng), 200 + trial);
    randomize_gammas(g, trial);
    const lp::ImportanceTable t = lp::bn_scale_importance(g);
    for (const auto& u : g.units) {
      const lp::Tensor& gamma = u.convs[0].bn->gamma;
      double s = 0.0;
      for (std::size_t i = 0; i < gamma.size(); ++i) {
        expect_close(t.filter_scores.at(u.index)[i], gamma[i] * gamma[i], 1e-6);
        s += gamma[i] * gamma[i];
      }
      expect_close(t.layer_scores.at(u.index), s / gamma.size(), 1e-6);
    }
  }
}

TEST(BnScale, FreshAndHalfScales) {
  lp::ArchitectureDescriptor d = tiny_vgg();
  d.layers = {{lp::LayerToken::Kind::conv, 2}, {lp::LayerToken::Kind::conv, 3}};
  lp::ModelGraph g = lp::instantiate(d, 1);
  lp::ImportanceTable t = lp::bn_scale_importance(g);
  for (auto& [u, s] : t.layer_scores) EXPECT_EQ(s, 1.0);
  g.units[0].convs[0].bn->gamma.fill(0.5);
  EXPECT_DOUBLE_EQ(lp::bn_scale_importance(g).layer_scores.at(0), 0.25);
}

TEST(BnScale, NoBatchNormIsInapplicable) {
  const lp::ModelGraph g = lp::instantiate(tiny_vgg(false), 1);
  try {
    lp::bn_scale_importance(g);
    FAIL() << "expected CriterionInapplicable";
  } catch (const lp::Error& e) {
    EXPECT_EQ(e.code(), lp::ErrorCode::criterion_inapplicable);
  }
}

TEST(Taylor, MatchesFiniteDifferenceGradients) {
  lp::ModelGraph g = lp::instantiate(two_layer_vgg(), 6);
  jitter_bn(g, 6);
  const auto data = random_batches(g, 2, 5, 7);
  const lp::ImportanceTable t = lp::taylor_weight_importance(g, data, 2);

  auto avg_loss = [&](const lp::ModelGraph& m) { return (model_loss(m, data[0]) + model_loss(m, data[1])) / 2; };
  lp::ModelGraph probe = g;
  const double h = 1e-6;
  for (auto& u : probe.units) {
    lp::Tensor& w = u.convs[0].weight;
    const std::size_t per = w.stride0();
    std::vector<double> filter;
    for (int f = 0; f < w.dim(0); ++f) {
      double s = 0.0;
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t i = f * per + k;
        const double orig = w[i];
        w[i] = orig + h;
        const double up = avg_loss(probe);
        w[i] = orig - h;
        const double down = avg_loss(probe);
        w[i] = orig;
        const double gw = (up - down) / (2 * h) * orig;
        s += gw * gw;
      }
      filter.push_back(std::sqrt(s));
    }
    for (int f = 0; f < w.dim(0); ++f) expect_close(t.filter_scores.at(u.index)[f], filter[f], 1e-3);
    expect_close(t.layer_scores.at(u.index), mean(filter), 1e-3);
  }
}

TEST(Taylor, SingleWeightFilter) {
  // One 1x1 filter on one input channel: score = |g * w|.
  lp::ArchitectureDescriptor d;
  d.family = lp::Family::vgg;
  d.batch_norm = false;
  d.input = {1, 1, 1};
  d.num_classes = 2;
  d.layers = {{lp::LayerToken::Kind::conv, 1}, {lp::LayerToken::Kind::conv, 1}};
  lp::ModelGraph g = lp::instantiate(d, 1);
  g.units[0].convs[0].weight.fill(3.0);
  g.units[0].convs[0].bias.fill(0.0);
  g.units[1].convs[0].weight.fill(1.0);
  g.units[1].convs[0].bias.fill(0.0);
  g.classifier.weight[0] = 1.0;
  g.classifier.weight[1] = 0.0;
  g.classifier.bias.fill(0.0);
  lp::Batch b;
  b.images = lp::Tensor({1, 1, 1, 1}, 1.0);
  b.labels = {0};
  const double dz = -1.0 / (1.0 + std::exp(3.0));  // dL/dlogit0 at logits (3, 0)
  const std::vector<lp::Batch> data{b};
  // g = dL/dw0 = dz * w1 * x, and |g * w0| = |dz| * 3.
  expect_close(lp::taylor_weight_importance(g, data, 1).layer_scores.at(0), std::abs(dz) * 3.0, 1e-12);
}

TEST(Taylor, ZeroGradientsGiveZeroScores) {
  lp::ModelGraph g = lp::instantiate(two_layer_vgg(), 2);
  g.classifier.weight.fill(0.0);
  const auto data = random_batches(g, 1, 4, 3);
  const lp::ImportanceTable t = lp::taylor_weight_importance(g, data, 1);
  for (auto& [u, scores] : t.filter_scores)
    for (double s : scores) EXPECT_EQ(s, 0.0);
}

TEST(FeatureMap, MatchesPerSampleLoop) {
  for (auto desc : {tiny_vgg(), tiny_resnet()}) {
    lp::ModelGraph g = lp::instantiate(desc, 9);
    jitter_bn(g, 9);
    const auto data = random_batches(g, 2, 3, 10);
    const lp::ImportanceTable t = lp::feature_map_importance(g, data, 2);

    std::map<int, std::vector<double>> sums;
    int samples = 0;
    for (const auto& batch : data) {
      const std::size_t per = batch.images.stride0();
      for (int s = 0; s < batch.images.dim(0); ++s) {
        lp::Tensor x({1, g.input[0], g.input[1], g.input[2]});
        std::copy_n(batch.images.data() + s * per, per, x.data());
        const std::vector<int> label{batch.labels[s]};
        lp::ModelGraph copy = g;
        lp::ModelGraph grads = g.zeros_like();
        lp::Executor exec(copy);
        exec.backward(lp::ops::softmax_cross_entropy(exec.forward(x, lp::Mode::eval), label).grad, grads);
        ++samples;
        for (const auto& u : g.units) {
          auto& acc = sums[u.index];
          std::size_t slot = 0;
          for (std::size_t j = 0; j < u.convs.size(); ++j) {
            const lp::Tensor& a = exec.conv_feature(u.index, j);
            const lp::Tensor& gr = exec.conv_feature_grad(u.index, j);
            const int C = a.dim(1), H = a.dim(2), W = a.dim(3);
            if (acc.size() < slot + C) acc.resize(slot + C, 0.0);
            for (int c = 0; c < C; ++c) {
              double q = 0.0;
              for (int i = 0; i < H; ++i)
                for (int k = 0; k < W; ++k) {
                  const double v = a.at(0, c, i, k) * gr.at(0, c, i, k);
                  q += v * v;
                }
              acc[slot + c] += std::sqrt(q) / (H * W);
            }
            slot += C;
          }
        }
      }
    }
    for (auto& [u, acc] : sums) {
      ASSERT_EQ(t.filter_scores.at(u).size(), acc.size());
      for (std::size_t f = 0; f < acc.size(); ++f) expect_close(t.filter_scores.at(u)[f], acc[f] / samples, 1e-5);
    }
  }
}

TEST(FeatureMap, ZeroInputGivesZeroScores) {
  lp::ModelGraph g = lp::instantiate(tiny_vgg(false), 4);
  for (auto& u : g.units) u.convs[0].bias.fill(0.0);
  auto data = random_batches(g, 1, 3, 1);
  data[0].images.fill(0.0);
  for (auto& [u, scores] : lp::feature_map_importance(g, data, 1).filter_scores)
    for (double s : scores) EXPECT_EQ(s, 0.0);
}

TEST(FeatureMap, OnePixelMap) {
  // 1x1 maps: the channel score is |a * g| for a single sample.
  auto d = two_layer_vgg();
  d.input = {2, 1, 1};
  lp::ModelGraph g = lp::instantiate(d, 12);
  jitter_bn(g, 12);
  const auto data = random_batches(g, 1, 1, 4);
  lp::ModelGraph copy = g, grads = g.zeros_like();
  lp::Executor exec(copy);
  exec.backward(lp::ops::softmax_cross_entropy(exec.forward(data[0].images), data[0].labels).grad, grads);
  const lp::ImportanceTable t = lp::feature_map_importance(g, data, 1);
  for (const auto& u : g.units)
    for (int c = 0; c < u.out_channels(); ++c) {
      const double want = std::abs(exec.conv_feature(u.index, 0)[c] * exec.conv_feature_grad(u.index, 0)[c]);
      expect_close(t.filter_scores.at(u.index)[c], want, 1e-12);
    }
}

TEST(Ensemble, MatchesBruteForceSum) {
  std::mt19937_64 rng(3);
  const std::vector<int> units{0, 1, 2, 3, 4, 5, 6, 7};
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<lp::ImportanceTable> tables;
    for (int i = 0; i < 4; ++i) tables.push_back(random_table(units, rng, "t" + std::to_string(i)));
    const lp::ImportanceTable e = lp::ensemble_rank(tables);
    EXPECT_EQ(e.rank_order, brute_force_ensemble(tables));
    for (int u : units) {
      double s = 0.0;
      for (const auto& t : tables)
        s += std::find(t.rank_order.begin(), t.rank_order.end(), u) - t.rank_order.begin();
      expect_close(e.layer_scores.at(u), s, 1e-12);
    }
  }
}

TEST(Ensemble, IdenticalAndReversedTables) {
  std::mt19937_64 rng(4);
  const auto t = random_table({0, 1, 2, 3, 4}, rng, "a");
  EXPECT_EQ(lp::ensemble_rank(std::vector{t, t}).rank_order, t.rank_order);

  lp::ImportanceTable a, b;
  a.layer_scores = {{0, 1.0}, {1, 2.0}, {2, 3.0}};
  b.layer_scores = {{0, 3.0}, {1, 2.0}, {2, 1.0}};
  a.rank();
  b.rank();
  const lp::ImportanceTable e = lp::ensemble_rank(std::vector{a, b});
  for (auto& [u, s] : e.layer_scores) EXPECT_EQ(s, 2.0);
  EXPECT_EQ(e.rank_order, (std::vector<int>{0, 1, 2}));
}

TEST(Ensemble, InvariantUnderTablePermutation) {
  std::mt19937_64 rng(5);
  std::vector<lp::ImportanceTable> tables;
  for (int i = 0; i < 4; ++i) tables.push_back(random_table({0, 1, 2, 3, 4, 5}, rng, "t"));
  const auto want = lp::ensemble_rank(tables).rank_order;
  std::vector<int> perm{0, 1, 2, 3};
  while (std::next_permutation(perm.begin(), perm.end())) {
    std::vector<lp::ImportanceTable> shuffled;
    for (int i : perm) shuffled.push_back(tables[i]);
    EXPECT_EQ(lp::ensemble_rank(shuffled).rank_order, want);
  }
}

TEST(Ensemble, MismatchedUnitsRejected) {
  std::mt19937_64 rng(6);
  const auto a = random_table({0, 1, 2}, rng, "a");
  const auto b = random_table({0, 1, 3}, rng, "b");
  try {
    lp::ensemble_rank(std::vector{a, b});
    FAIL();
  } catch (const lp::Error& e) {
    EXPECT_EQ(e.code(), lp::ErrorCode::mismatched_units);
  }
}

TEST(Ranking, TiesBrokenByUnitIndex) {
  lp::ImportanceTable t;
  t.layer_scores = {{4, 1.0}, {2, 1.0}, {7, 0.5}, {0, 2.0}};
  t.rank();
  EXPECT_EQ(t.rank_order, (std::vector<int>{7, 2, 4, 0}));
}

TEST(Aggregation, LayerScoreIsMeanOfFilterScores) {
  for (const char* preset : {"toy_vgg", "toy_resnet"}) {
    lp::ModelGraph g = lp::instantiate(lp::preset_descriptor(preset), 11);
    jitter_bn(g, 11);
    randomize_gammas(g, 11);
    const auto data = random_batches(g, 2, 4, 12);
    for (const char* c : {"weight_norm", "taylor", "bn", "feature_map"}) {
      lp::CriterionOptions opts;
      opts.num_batches = 2;
      const lp::ImportanceTable t = lp::compute_importance(g, c, data, opts);
      ASSERT_EQ(t.layer_scores.size(), g.units.size()) << preset << " " << c;
      for (auto& [u, scores] : t.filter_scores) {
        const double m = mean(scores);
        EXPECT_LE(std::abs(t.layer_scores.at(u) - m), 1e-6 * std::max(1.0, std::abs(m))) << preset << " " << c;
      }
    }
  }
}

TEST(Determinism, RepeatedRankingIsIdentical) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_resnet", 3), 13);
  const auto data = random_batches(g, 2, 8, 14);
  for (const char* c : {"taylor", "feature_map", "imprint", "ensemble"}) {
    lp::CriterionOptions opts;
    opts.num_batches = 2;
    EXPECT_EQ(lp::compute_importance(g, c, data, opts).rank_order, lp::compute_importance(g, c, data, opts).rank_order)
        << c;
  }
}
