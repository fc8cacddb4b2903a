#include <gtest/gtest.h>

#include <cmath>

#include "acnn/binary_io.hpp"
#include "acnn/image_io.hpp"
#include "acnn/saliency.hpp"
#include "test_util.hpp"

namespace acnn {
namespace {

using testing::random_map;
using testing::temp_dir;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an acnn::Error";
  return ErrorCode::BadConfig;
}

FeatureMap row(std::initializer_list<float> v) {
  return FeatureMap::create(Dims{1, 1, 1, v.size()}, std::vector<float>(v));
}

TEST(SaliencyRule, WorkedExample) {
  const FeatureMap f = row({-1, 2, 3}), r = row({5, -4, 6});
  const auto bp = relu_backward_rule(SaliencyRule::Backprop, f, r);
  const auto dc = relu_backward_rule(SaliencyRule::Deconvnet, f, r);
  const auto gd = relu_backward_rule(SaliencyRule::Guided, f, r);
  EXPECT_EQ(std::vector<float>(bp.values().begin(), bp.values().end()), (std::vector<float>{0, -4, 6}));
  EXPECT_EQ(std::vector<float>(dc.values().begin(), dc.values().end()), (std::vector<float>{5, 0, 6}));
  EXPECT_EQ(std::vector<float>(gd.values().begin(), gd.values().end()), (std::vector<float>{0, 0, 6}));
}

TEST(SaliencyRule, GuidedIsBothMasks) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto f = random_map<float>(Dims{2, 3, 4, 4}, rng);
    const auto r = random_map<float>(Dims{2, 3, 4, 4}, rng);
    const auto bp = relu_backward_rule(SaliencyRule::Backprop, f, r);
    const auto dc = relu_backward_rule(SaliencyRule::Deconvnet, f, r);
    const auto gd = relu_backward_rule(SaliencyRule::Guided, f, r);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (gd[i] != 0.0f) {
        EXPECT_NE(bp[i], 0.0f);
        EXPECT_NE(dc[i], 0.0f);
      }
      EXPECT_EQ(gd[i], (bp[i] != 0.0f && dc[i] != 0.0f) ? r[i] : 0.0f);
    }
  }
}

TEST(SaliencyRule, LeakyAndIdentity) {
  const FeatureMap f = row({-1, 2}), r = row({3, -4});
  const auto leaky = activation_backward_rule(SaliencyRule::Backprop, f, r, Activation::leaky(0.25));
  EXPECT_FLOAT_EQ(leaky[0], 0.75f);
  EXPECT_FLOAT_EQ(leaky[1], -4.0f);
  for (SaliencyRule rule : {SaliencyRule::Backprop, SaliencyRule::Deconvnet, SaliencyRule::Guided}) {
    const auto id = activation_backward_rule(rule, f, r, Activation::identity());
    EXPECT_EQ(id[0], 3.0f);
    EXPECT_EQ(id[1], -4.0f);
  }
}

TEST(SaliencyRule, Names) {
  for (SaliencyRule rule : {SaliencyRule::Backprop, SaliencyRule::Deconvnet, SaliencyRule::Guided})
    EXPECT_EQ(parse_saliency_rule(to_string(rule)), rule);
  EXPECT_EQ(code_of([] { parse_saliency_rule("lrp"); }), ErrorCode::BadConfig);
}

// conv 1x1 identity -> GAP -> softmax on a 3x4x4 input.
Model pointwise_model() {
  Model m("pointwise", 3, 4, 4,
          {LayerSpec::conv(2, 1, 1, 0, Activation::identity()), LayerSpec::global_avg(), LayerSpec::softmax()});
  m.conv(0).weights = {0.5f, -1.0f, 2.0f, 3.0f, 0.25f, -0.5f};
  m.conv(0).bias = {7.0f, 7.0f};
  return m;
}

TEST(Reconstruct, PointwiseKernelLandsAtTheUnit) {
  const Model m = pointwise_model();
  const auto rec = reconstruct<float>(m, nullptr, NeuronRef::at(0, 1, 2, 3), SaliencyRule::Deconvnet, false);
  ASSERT_EQ(rec.image.dims(), (Dims{1, 3, 4, 4}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 4; ++w) {
        const float expected = (h == 2 && w == 3) ? m.conv(0).weights[3 + c] : 0.0f;
        EXPECT_EQ(rec.image.at(0, c, h, w), expected);
      }
}

TEST(Reconstruct, UnconditionedUsesCentreAndZeroGates) {
  Model m("gated", 1, 5, 5, {LayerSpec::conv(2, 3, 1, 1), LayerSpec::conv(2, 3, 1, 1), LayerSpec::global_avg(),
                              LayerSpec::softmax()});
  Rng rng(2);
  initialize_weights(m, rng);
  const auto dc = reconstruct<float>(m, nullptr, NeuronRef::max_position(1, 0), SaliencyRule::Deconvnet, false);
  EXPECT_EQ(dc.row, 2u);
  EXPECT_EQ(dc.col, 2u);
  double mass = 0.0;
  for (float v : dc.image.values()) mass += std::abs(v);
  EXPECT_GT(mass, 0.0);
  for (SaliencyRule rule : {SaliencyRule::Backprop, SaliencyRule::Guided}) {
    const auto z = reconstruct<float>(m, nullptr, NeuronRef::max_position(1, 0), rule, false);
    for (float v : z.image.values()) EXPECT_EQ(v, 0.0f);
  }
}

// Small network with every layer kind a reconstruction passes through.
Model mixed_model(std::uint64_t seed, double dropout = 0.5) {
  Model m("mixed", 3, 9, 9,
          {LayerSpec::dropout(0.2), LayerSpec::conv(6, 3, 1, 1), LayerSpec::maxpool(3, 2, 1), LayerSpec::dropout(dropout),
           LayerSpec::conv(6, 3, 1, 1), LayerSpec::pnorm(2, 2, 0, 2.0), LayerSpec::conv(4, 1, 1, 0),
           LayerSpec::global_avg(), LayerSpec::softmax()});
  Rng rng(seed);
  initialize_weights(m, rng);
  for (std::size_t i : m.conv_layers())
    for (float& b : m.conv(i).bias) b = static_cast<float>(0.1 * rng.normal());
  return m;
}

TEST(Reconstruct, BackpropWithSwitchesIsTheInputGradient) {
  const Model64 m = mixed_model(3).cast<double>();
  Rng rng(4);
  int checked = 0;
  for (int t = 0; t < 6; ++t) {
    FeatureMap64 image = random_map<double>(Dims{1, 3, 9, 9}, rng);
    const NeuronRef neuron = NeuronRef::max_position(6, static_cast<std::size_t>(t % 4));
    const auto rec = reconstruct<double>(m, &image, neuron, SaliencyRule::Backprop, true);
    const auto base = model_forward(m, image, Mode::Eval, Rng(0), std::size_t{6});
    auto unit = [&] {
      return model_forward(m, image, Mode::Eval, Rng(0), std::size_t{6}).outputs[6].at(0, neuron.channel, rec.row, rec.col);
    };
    EXPECT_NEAR(rec.activation, base.outputs[6].at(0, neuron.channel, rec.row, rec.col), 1e-12);
    for (int probe = 0; probe < 10; ++probe) {
      const std::size_t i = rng.below(image.size());
      const double eps = 1e-6;
      const double saved = image[i];
      image[i] = saved + eps;
      const bool linear_up = testing::same_activation_pattern(base, model_forward(m, image, Mode::Eval, Rng(0), std::size_t{6}));
      image[i] = saved - eps;
      const bool linear_down = testing::same_activation_pattern(base, model_forward(m, image, Mode::Eval, Rng(0), std::size_t{6}));
      image[i] = saved;
      if (!linear_up || !linear_down) continue;
      const double fd = testing::central_difference(unit, image[i], eps);
      EXPECT_LT(testing::rel_error(rec.image[i], fd, 1e-6), 1e-5) << "probe " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(Reconstruct, AfterSurgeryDeconvnetAndBackpropShareSwitchRouting) {
  Model strided("strided", 3, 8, 8,
                {LayerSpec::conv(6, 3, 1, 1), LayerSpec::conv(6, 3, 2, 1), LayerSpec::conv(5, 3, 1, 1),
                 LayerSpec::conv(4, 1, 1, 0), LayerSpec::global_avg(), LayerSpec::softmax()});
  Rng rng(5);
  initialize_weights(strided, rng);
  const Model m = pool_surgery(strided);
  std::size_t pool = 0;
  for (std::size_t i = 0; i < m.layer_count(); ++i)
    if (m.layer(i).kind == LayerKind::MaxPool) pool = i;
  ASSERT_GT(pool, 0u);
  const FeatureMap image = random_map<float>(Dims{1, 3, 8, 8}, rng);
  const auto trace = model_forward(m, image);
  const Switches& sw = trace.switches[pool];
  for (SaliencyRule rule : {SaliencyRule::Backprop, SaliencyRule::Deconvnet}) {
    const auto rec = reconstruct<float>(m, &image, NeuronRef::max_position(pool + 1, 1), rule, true);
    const auto expected = maxpool_backward(rec.grad_outputs[pool], sw, trace.outputs[pool - 1].dims());
    const auto& got = rec.grad_outputs[pool - 1];
    ASSERT_EQ(got.dims(), expected.dims());
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k], expected[k]);
    // Nonzero routed signal only at switch locations.
    const Dims in = sw.input_dims;
    std::vector<bool> on_switch(in.count(), false);
    for (std::size_t flat = 0; flat < sw.index.size(); ++flat) {
      const std::size_t plane = flat / sw.output_dims.plane();
      on_switch[plane * in.plane() + sw.index[flat]] = true;
    }
    for (std::size_t k = 0; k < got.size(); ++k)
      if (got[k] != 0.0f) EXPECT_TRUE(on_switch[k]);
  }
}

TEST(Reconstruct, DropoutRateHasNoEffect) {
  const Model a = mixed_model(6, 0.5);
  Model b = mixed_model(6, 0.9);
  Rng rng(7);
  const FeatureMap image = random_map<float>(Dims{1, 3, 9, 9}, rng);
  for (SaliencyRule rule : {SaliencyRule::Backprop, SaliencyRule::Deconvnet, SaliencyRule::Guided}) {
    const auto ra = reconstruct<float>(a, &image, NeuronRef::max_position(4, 2), rule, true);
    const auto rb = reconstruct<float>(b, &image, NeuronRef::max_position(4, 2), rule, true);
    for (std::size_t k = 0; k < ra.image.size(); ++k) EXPECT_EQ(ra.image[k], rb.image[k]);
  }
}

TEST(Reconstruct, Errors) {
  const Model m = mixed_model(8);
  Rng rng(9);
  const FeatureMap image = random_map<float>(Dims{1, 3, 9, 9}, rng);
  const auto call = [&](const FeatureMap* img, NeuronRef n, bool sw) {
    return [=, &m] { reconstruct<float>(m, img, n, SaliencyRule::Deconvnet, sw); };
  };
  EXPECT_EQ(code_of(call(&image, NeuronRef::max_position(8, 0), false)), ErrorCode::BadNeuron);
  EXPECT_EQ(code_of(call(&image, NeuronRef::max_position(1, 6), false)), ErrorCode::BadNeuron);
  EXPECT_EQ(code_of(call(&image, NeuronRef::at(1, 0, 9, 0), false)), ErrorCode::BadNeuron);
  EXPECT_EQ(code_of(call(nullptr, NeuronRef::max_position(4, 0), true)), ErrorCode::SwitchesUnavailable);
  const Model no_pool = pointwise_model();
  const FeatureMap small = random_map<float>(Dims{1, 3, 4, 4}, rng);
  EXPECT_EQ(code_of([&] { reconstruct<float>(no_pool, &small, NeuronRef::max_position(0, 0), SaliencyRule::Guided, true); }),
            ErrorCode::SwitchesUnavailable);
  EXPECT_EQ(code_of(call(&small, NeuronRef::max_position(1, 0), false)), ErrorCode::ShapeMismatch);
}

// Linear copy of a model with strictly positive weights: the input-gradient support of a unit
// is then exactly its receptive field clipped to the image.
Model positive_linear(const Model& m) {
  std::vector<LayerSpec> layers = m.layers();
  for (LayerSpec& s : layers)
    if (s.kind == LayerKind::Conv) s.activation = Activation::identity();
  Model out(m.arch_id(), m.input_dims().channels, m.input_dims().height, m.input_dims().width, layers);
  for (std::size_t i : out.conv_layers())
    for (float& w : out.conv(i).weights) w = 1.0f;
  return out;
}

TEST(ReceptiveField, MatchesGradientSupport) {
  const Model m = positive_linear(build_architecture("all-cnn-c", 10, 0.1));
  const auto trace = m.shape_trace(1);
  Rng rng(10);
  const FeatureMap image = random_map<float>(Dims{1, 3, 32, 32}, rng);
  std::size_t tested = 0;
  for (std::size_t layer = 0; layer + 1 < m.layer_count(); ++layer) {
    if (!m.is_conv(layer)) continue;
    const ReceptiveField rf = receptive_field(m, layer);
    const Dims d = trace[layer];
    for (auto [i, j] : {std::pair<std::size_t, std::size_t>{0, 0}, {d.height / 2, d.width / 2}, {d.height - 1, 0}}) {
      const auto rec = reconstruct<float>(m, &image, NeuronRef::at(layer, 0, i, j), SaliencyRule::Backprop, false);
      const long lo_r = static_cast<long>(i * rf.jump) - static_cast<long>(rf.offset);
      const long lo_c = static_cast<long>(j * rf.jump) - static_cast<long>(rf.offset);
      const long size = static_cast<long>(rf.size);
      for (long h = 0; h < 32; ++h)
        for (long w = 0; w < 32; ++w) {
          const bool inside = h >= lo_r && h < lo_r + size && w >= lo_c && w < lo_c + size;
          EXPECT_EQ(rec.image.at(0, 0, static_cast<std::size_t>(h), static_cast<std::size_t>(w)) != 0.0f, inside)
              << "layer " << layer << " unit " << i << "," << j << " pixel " << h << "," << w;
        }
    }
    ++tested;
  }
  EXPECT_EQ(tested, 9u);
}

TEST(ReceptiveField, HandComputed) {
  const Model m("rf", 1, 16, 16,
                {LayerSpec::conv(2, 3, 1, 1), LayerSpec::conv(2, 3, 2, 1), LayerSpec::conv(2, 3, 1, 1),
                 LayerSpec::global_avg(), LayerSpec::softmax()});
  EXPECT_EQ(receptive_field(m, 0).size, 3u);
  EXPECT_EQ(receptive_field(m, 1).size, 5u);
  EXPECT_EQ(receptive_field(m, 1).jump, 2u);
  EXPECT_EQ(receptive_field(m, 2).size, 9u);
  EXPECT_EQ(receptive_field(m, 2).offset, 4u);
}

Dataset spike_dataset() {
  Dataset d;
  d.images = FeatureMap(Dims{3, 1, 6, 6});
  d.labels = {0, 1, 2};
  d.images.at(1, 0, 2, 3) = 5.0f;
  d.images.at(2, 0, 0, 0) = 3.0f;
  return d;
}

TEST(TopPatches, RanksSpikesThenTies) {
  Model m("unit", 1, 6, 6, {LayerSpec::conv(3, 1, 1, 0, Activation::identity()), LayerSpec::global_avg(), LayerSpec::softmax()});
  m.conv(0).weights = {1.0f, 1.0f, 1.0f};
  const auto p = top_activating_patches(m, spike_dataset(), 0, 0, 4);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[0].image, 1u);
  EXPECT_EQ(p[0].row, 2u);
  EXPECT_EQ(p[0].col, 3u);
  EXPECT_DOUBLE_EQ(p[0].activation, 5.0);
  EXPECT_EQ(p[1].image, 2u);
  EXPECT_DOUBLE_EQ(p[1].activation, 3.0);
  EXPECT_EQ(p[2].image, 0u);
  EXPECT_EQ(p[2].row, 0u);
  EXPECT_EQ(p[2].col, 0u);
  EXPECT_EQ(p[3].image, 0u);
  EXPECT_EQ(p[3].col, 1u);
  EXPECT_EQ(p[0].crop.dims(), (Dims{1, 1, 1, 1}));
  EXPECT_EQ(p[0].crop[0], 5.0f);

  const auto all = top_activating_patches(m, spike_dataset(), 0, 0, 1000);
  EXPECT_EQ(all.size(), 3u * 36u);
  for (std::size_t k = 1; k < all.size(); ++k) EXPECT_GE(all[k - 1].activation, all[k].activation);
}

TEST(TopPatches, CornerCropsAreZeroFilled) {
  Model m("box", 1, 6, 6, {LayerSpec::conv(3, 3, 1, 1, Activation::identity()), LayerSpec::global_avg(), LayerSpec::softmax()});
  for (float& w : m.conv(0).weights) w = 1.0f;
  Dataset d;
  d.images = FeatureMap(Dims{1, 1, 6, 6}, 1.0f);
  d.labels = {0};
  const auto p = top_activating_patches(m, d, 0, 0, 36);
  const Patch* corner = nullptr;
  for (const Patch& q : p)
    if (q.row == 0 && q.col == 0) corner = &q;
  ASSERT_NE(corner, nullptr);
  EXPECT_DOUBLE_EQ(corner->activation, 4.0);
  ASSERT_EQ(corner->crop.dims(), (Dims{1, 1, 3, 3}));
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t w = 0; w < 3; ++w) EXPECT_EQ(corner->crop.at(0, 0, h, w), (h == 0 || w == 0) ? 0.0f : 1.0f);
}

TEST(TopPatches, Errors) {
  const Model m = pointwise_model();
  Dataset empty;
  EXPECT_EQ(code_of([&] { top_activating_patches(m, empty, 0, 0, 1); }), ErrorCode::EmptyDataset);
  Dataset d;
  d.images = FeatureMap(Dims{1, 3, 4, 4});
  d.labels = {0};
  EXPECT_EQ(code_of([&] { top_activating_patches(m, d, 0, 0, 0); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([&] { top_activating_patches(m, d, 0, 5, 1); }), ErrorCode::BadNeuron);
}

TEST(Render, SingleMapAndGrid) {
  const auto dir = temp_dir("render");
  Rng rng(11);
  std::vector<FeatureMap> maps, crops;
  for (int i = 0; i < 10; ++i) {
    maps.push_back(random_map<float>(Dims{1, 3, 8, 8}, rng));
    crops.push_back(random_map<float>(Dims{1, 3, 5, 5}, rng));
  }
  render_visualization(std::span(maps).first(1), {}, 5, dir / "one.ppm");
  const Raster one = decode_pnm(read_file(dir / "one.ppm"));
  EXPECT_EQ(one.width, 8u);
  EXPECT_EQ(one.height, 8u);
  EXPECT_EQ(one.channels, 3u);

  render_visualization(maps, crops, 5, dir / "grid.ppm");
  const Raster grid = decode_pnm(read_file(dir / "grid.ppm"));
  EXPECT_EQ(grid.width, 5u * 8u + 4u * 2u);
  EXPECT_EQ(grid.height, 4u * 8u + 3u * 2u);
  render_visualization(maps, crops, 5, dir / "again.ppm");
  EXPECT_EQ(read_file(dir / "grid.ppm"), read_file(dir / "again.ppm"));

  EXPECT_EQ(code_of([&] { render_visualization({}, {}, 5, dir / "x.ppm"); }), ErrorCode::EmptyOutput);
  EXPECT_EQ(code_of([&] { render_visualization(maps, std::span(crops).first(3), 5, dir / "x.ppm"); }),
            ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([&] { render_visualization(maps, {}, 0, dir / "x.ppm"); }), ErrorCode::BadConfig);
}

TEST(Render, Manifest) {
  const auto dir = temp_dir("manifest");
  const std::vector<ManifestEntry> entries{{"conv6:3", 12, 1.5, "visualization.ppm"},
                                           {"conv6:3", std::nullopt, 0.0, "visualization.ppm"}};
  write_manifest(entries, dir / "manifest.csv");
  const auto bytes = read_file(dir / "manifest.csv");
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()),
            "neuron,image,activation,file\nconv6:3,12,1.5,visualization.ppm\nconv6:3,,0,visualization.ppm\n");
}

}  // namespace
}  // namespace acnn
