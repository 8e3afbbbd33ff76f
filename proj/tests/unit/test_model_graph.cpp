#include <gtest/gtest.h>

#include "helpers.hpp"
#include "layerprune/error.hpp"
#include "layerprune/executor.hpp"

using namespace testing_util;

namespace {

template <typename F>
lp::ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const lp::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return lp::ErrorCode::io;
}

lp::PrunePlan layers(std::set<int> units) {
  lp::PrunePlan p;
  p.mode = lp::PlanMode::layers;
  p.removed_units = std::move(units);
  return p;
}

lp::PrunePlan filters(std::map<int, std::set<int>> f) {
  lp::PrunePlan p;
  p.mode = lp::PlanMode::filters;
  p.removed_filters = std::move(f);
  return p;
}

std::vector<int> forward_shape(const lp::ModelGraph& g, int batch = 2) {
  std::mt19937_64 rng(1);
  lp::Executor exec(g);
  return exec.forward(lp::gaussian_tensor({batch, g.input[0], g.input[1], g.input[2]}, 1.0, rng)).shape();
}

}  // namespace

TEST(Presets, Vgg19HasSixteenUnits) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("vgg19_bn"), 1);
  EXPECT_EQ(g.units.size(), 16u);
  EXPECT_EQ(g.signature_string(),
            "[64, 64, 'M', 128, 128, 'M', 256, 256, 256, 256, 'M', 512, 512, 512, 512, 'M', 512, 512, 512, 512, 'M']");
  for (const auto& u : g.units) {
    EXPECT_EQ(u.bn_scales().size(), static_cast<std::size_t>(u.weight_shape().filters));
    EXPECT_GE(u.weight_shape().in_channels, 1);
    EXPECT_EQ(u.weight_shape().kernel, 3);
  }
}

TEST(Presets, Vgg19LayerPruneFiveSignature) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("vgg19_bn"), 1);
  const lp::ModelGraph p = lp::remove_layers(g, layers({10, 11, 12, 13, 14}));
  EXPECT_EQ(p.signature_string(),
            "[64, 64, 'M', 128, 128, 'M', 256, 256, 256, 256, 'M', 512, 512, 0, 0, 'M', 0, 0, 0, 512, 'M']");
  EXPECT_EQ(p.units.size(), 11u);
}

TEST(Presets, ResNet56HasTwentySevenBlocks) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("resnet56"), 1);
  ASSERT_EQ(g.units.size(), 27u);
  int removable = 0;
  for (const auto& u : g.units) {
    EXPECT_EQ(u.kind, lp::UnitKind::residual_block);
    EXPECT_EQ(u.convs.size(), 2u);
    removable += u.removable;
  }
  EXPECT_EQ(removable, 25);  // the two stage-transition blocks keep their projections
}

TEST(Presets, DegenerateDescriptorsRejected) {
  lp::ArchitectureDescriptor d = tiny_vgg();
  d.layers.clear();
  EXPECT_EQ(error_of([&] { lp::instantiate(d, 1); }), lp::ErrorCode::unsupported_architecture);
  d.layers = {{lp::LayerToken::Kind::conv, 4}};
  EXPECT_EQ(error_of([&] { lp::instantiate(d, 1); }), lp::ErrorCode::unsupported_architecture);
}

TEST(Removability, LastVggUnitWithChangedWidthIsKept) {
  const lp::ModelGraph g = lp::instantiate(tiny_vgg(), 1);  // 2 -> 4, 4 -> 5, 5 -> 5
  EXPECT_TRUE(g.units[0].removable);
  EXPECT_TRUE(g.units[1].removable);
  EXPECT_TRUE(g.units[2].removable);
  lp::ArchitectureDescriptor d = tiny_vgg();
  d.layers.back().width = 7;
  EXPECT_FALSE(lp::instantiate(d, 1).units.back().removable);
}

TEST(RemoveLayers, EmptyPlanIsBitExact) {
  for (const char* preset : {"toy_vgg", "toy_resnet", "toy_bottleneck"}) {
    const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor(preset), 2);
    EXPECT_EQ(lp::remove_layers(g, layers({})), g) << preset;
    EXPECT_EQ(lp::remove_filters(g, filters({})), g) << preset;
  }
}

TEST(RemoveLayers, IdentityBlockKeepsOutputShape) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_resnet"), 3);
  for (const auto& u : g.units) {
    if (!u.removable) continue;
    const lp::ModelGraph p = lp::remove_layers(g, layers({u.index}));
    EXPECT_EQ(forward_shape(p), forward_shape(g));
    EXPECT_EQ(p.units.size(), g.units.size() - 1);
  }
}

TEST(RemoveLayers, SuccessorRepairedWithFreshStatistics) {
  lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_vgg"), 4);
  jitter_bn(g, 4);
  lp::PrunePlan plan = layers({1});  // 8 -> 8 -> 'M' -> 16: unit 2 keeps N = 8
  const lp::ModelGraph same = lp::remove_layers(g, plan);
  EXPECT_EQ(same.units[1].convs[0], g.units[2].convs[0]);

  plan = layers({2});  // unit 3 now reads 8 channels instead of 16
  plan.seed = 11;
  const lp::ModelGraph p = lp::remove_layers(g, plan);
  const auto& c = p.units[2].convs[0];
  EXPECT_EQ(c.in_channels, 8);
  EXPECT_EQ(c.weight.shape(), (std::vector<int>{16, 8, 3, 3}));
  EXPECT_EQ(c.bn->gamma, g.units[3].convs[0].bn->gamma);
  for (std::size_t i = 0; i < c.bn->running_mean.size(); ++i) {
    EXPECT_EQ(c.bn->running_mean[i], 0.0);
    EXPECT_EQ(c.bn->running_var[i], 1.0);
  }
  // Seeded repair is reproducible.
  EXPECT_EQ(lp::remove_layers(g, plan), p);
}

TEST(RemoveLayers, RepairedWeightsHaveHeVariance) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("vgg19_bn"), 5);
  lp::PrunePlan plan = layers({4, 5, 6, 7});  // unit 8 reads 128 channels instead of 256
  plan.seed = 3;
  const lp::ModelGraph p = lp::remove_layers(g, plan);
  const lp::Tensor& w = p.units[4].convs[0].weight;
  double s = 0.0, m = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s += w[i] * w[i];
    m += w[i];
  }
  const double var = s / w.size();
  EXPECT_NEAR(var, 2.0 / (128 * 9), 0.05 * 2.0 / (128 * 9));
  EXPECT_NEAR(m / w.size(), 0.0, 1e-3);
}

TEST(RemoveLayers, InvalidPlans) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_resnet"), 1);
  int locked = -1;
  for (const auto& u : g.units)
    if (!u.removable) locked = u.index;
  EXPECT_EQ(error_of([&] { lp::remove_layers(g, layers({locked})); }), lp::ErrorCode::invalid_plan);
  EXPECT_EQ(error_of([&] { lp::remove_layers(g, layers({99})); }), lp::ErrorCode::invalid_plan);
  EXPECT_EQ(error_of([&] { lp::remove_layers(g, filters({{0, {0}}})); }), lp::ErrorCode::invalid_plan);
  auto mixed = layers({1});
  mixed.removed_filters[0] = {0};
  EXPECT_EQ(error_of([&] { lp::apply_plan(g, mixed); }), lp::ErrorCode::invalid_plan);

  const lp::ModelGraph v = lp::instantiate(tiny_vgg(), 1);
  EXPECT_EQ(error_of([&] { lp::remove_layers(v, layers({0, 1, 2})); }), lp::ErrorCode::empty_model);
}

TEST(RemoveFilters, OneFilterShrinksConsumer) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_vgg"), 6);
  for (int j = 0; j + 1 < static_cast<int>(g.units.size()); ++j) {
    const lp::ModelGraph p = lp::remove_filters(g, filters({{j, {1}}}));
    EXPECT_EQ(p.units[j].out_channels(), g.units[j].out_channels() - 1);
    EXPECT_EQ(p.units[j + 1].in_channels(), g.units[j + 1].in_channels() - 1);
    EXPECT_EQ(forward_shape(p), forward_shape(g));
  }
  // The last unit feeds the classifier.
  const int last = static_cast<int>(g.units.size()) - 1;
  const lp::ModelGraph p = lp::remove_filters(g, filters({{last, {0, 5}}}));
  EXPECT_EQ(p.classifier.in_features(), g.classifier.in_features() - 2);
}

TEST(RemoveFilters, SurvivingWeightsAreCopied) {
  const lp::ModelGraph g = lp::instantiate(tiny_vgg(), 7);
  const lp::ModelGraph p = lp::remove_filters(g, filters({{0, {1, 2}}}));
  const lp::Tensor& w0 = g.units[0].convs[0].weight;
  const lp::Tensor& p0 = p.units[0].convs[0].weight;
  const std::size_t per = w0.stride0();
  for (std::size_t k = 0; k < per; ++k) {
    EXPECT_EQ(p0[k], w0[k]);
    EXPECT_EQ(p0[per + k], w0[3 * per + k]);
  }
  const lp::Tensor& w1 = g.units[1].convs[0].weight;
  const lp::Tensor& p1 = p.units[1].convs[0].weight;
  for (int f = 0; f < w1.dim(0); ++f)
    for (int a = 0; a < 3; ++a) {
      EXPECT_EQ(p1.at(f, 0, a, a), w1.at(f, 0, a, a));
      EXPECT_EQ(p1.at(f, 1, a, a), w1.at(f, 3, a, a));
    }
  EXPECT_EQ(p.units[0].convs[0].bn->gamma[1], g.units[0].convs[0].bn->gamma[3]);
}

TEST(RemoveFilters, FloorAndDependencyViolations) {
  const lp::ModelGraph g = lp::instantiate(tiny_vgg(), 1);
  EXPECT_EQ(error_of([&] { lp::remove_filters(g, filters({{0, {0, 1, 2, 3}}})); }), lp::ErrorCode::floor_violation);
  EXPECT_EQ(error_of([&] { lp::remove_filters(g, filters({{0, {0, 1, 2}}})); }), lp::ErrorCode::floor_violation);
  EXPECT_NO_THROW(lp::remove_filters(g, filters({{0, {0, 1, 2}}}), 1));
  EXPECT_EQ(error_of([&] { lp::remove_filters(g, filters({{0, {9}}})); }), lp::ErrorCode::invalid_plan);

  const lp::ModelGraph r = lp::instantiate(tiny_resnet(), 1);
  const int locked_slot = r.units[0].convs[0].out_channels;  // first filter of the summed conv
  EXPECT_EQ(error_of([&] { lp::remove_filters(r, filters({{0, {locked_slot}}})); }),
            lp::ErrorCode::dependency_violation);
}

TEST(Surgery, InputGraphUntouched) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_vgg"), 8);
  const lp::ModelGraph copy = g;
  lp::remove_layers(g, layers({2, 5}));
  lp::remove_filters(g, filters({{3, {0, 1, 2}}}));
  EXPECT_EQ(g, copy);
}

TEST(Surgery, RandomPlansKeepShapesAndCounts) {
  std::mt19937_64 rng(9);
  for (const char* preset : {"toy_vgg", "toy_resnet", "toy_bottleneck"}) {
    const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor(preset), 10);
    const auto want_shape = forward_shape(g, 1);
    for (int trial = 0; trial < 15; ++trial) {
      for (const lp::PrunePlan& plan : {random_layer_plan(g, rng), random_filter_plan(g, rng)}) {
        const lp::ModelGraph p = lp::apply_plan(g, plan);
        EXPECT_EQ(forward_shape(p, 1), want_shape) << preset;
        EXPECT_EQ(p.parameter_count(), expected_parameters(g, plan)) << preset;
        EXPECT_EQ(lp::analytic_parameter_count(p), p.parameter_count()) << preset;
      }
    }
  }
}

TEST(Surgery, NoBatchNormVggCounts) {
  std::mt19937_64 rng(12);
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_vgg_nobn"), 1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto plan = random_filter_plan(g, rng);
    EXPECT_EQ(lp::apply_plan(g, plan).parameter_count(), expected_parameters(g, plan));
  }
}

TEST(Serialization, RoundTripIsIdentity) {
  for (const char* preset : {"toy_vgg", "toy_resnet", "toy_bottleneck", "toy_vgg_nobn"}) {
    lp::ModelGraph g = lp::instantiate(lp::preset_descriptor(preset), 13);
    jitter_bn(g, 13);
    EXPECT_EQ(lp::deserialize(lp::serialize(g)), g) << preset;
  }
  std::mt19937_64 rng(14);
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_vgg"), 15);
  const lp::ModelGraph p = lp::apply_plan(g, random_layer_plan(g, rng));
  EXPECT_EQ(lp::deserialize(lp::serialize(p)), p);
}

TEST(Serialization, CheckpointFilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "layerprune_ckpt_test";
  std::filesystem::create_directories(dir);
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_resnet"), 16);
  lp::save_model(g, dir / "m.ckpt", dir / "m.arch.json");
  EXPECT_EQ(lp::load_model(dir / "m.ckpt", dir / "m.arch.json"), g);
  // A checkpoint paired with the wrong descriptor is a shape error.
  lp::save_descriptor(lp::preset_descriptor("toy_vgg"), dir / "wrong.arch.json");
  EXPECT_EQ(error_of([&] { lp::load_model(dir / "m.ckpt", dir / "wrong.arch.json"); }),
            lp::ErrorCode::shape_mismatch);
  std::filesystem::remove_all(dir);
}

TEST(Serialization, PlanJsonRoundTrip) {
  lp::PrunePlan p = filters({{0, {1, 3}}, {4, {0}}});
  p.criterion = "taylor";
  p.budget = {lp::PruneBudget::Kind::filters_n, 3};
  p.seed = 42;
  EXPECT_EQ(lp::plan_from_json(lp::to_json(p)), p);
  lp::PrunePlan l = layers({2, 5});
  l.budget = {lp::PruneBudget::Kind::latency_fraction, 0.25};
  EXPECT_EQ(lp::plan_from_json(lp::to_json(l)), l);
}

TEST(Signature, RemovedLayersReportZero) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_vgg"), 1);
  const lp::ModelGraph p = lp::remove_layers(g, layers({0, 6}));
  EXPECT_EQ(p.signature_string(), "[0, 8, 'M', 16, 16, 'M', 32, 32, 'M', 0, 32]");
  for (int w : p.signature().filters_per_unit) EXPECT_GT(w, 0);
}
