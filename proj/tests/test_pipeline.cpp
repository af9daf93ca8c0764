#include "torch_doctest.hpp"

#include <random>

#include "hsd/corpus.hpp"
#include "hsd/errors.hpp"
#include "hsd/pipeline.hpp"
#include "hsd/tensor_util.hpp"
#include "test_support.hpp"

using namespace hsd;

namespace {

// Untrained but fully specified models small enough for unit tests.
SwapModels tiny_models() {
  CodecConfig cc;
  cc.base_channels = 8;
  DenoiserConfig dc;
  dc.base_channels = 16;
  dc.time_dim = 16;
  ScheduleConfig sc;
  sc.T = 100;
  LayoutGenConfig lc;
  lc.base_channels = 8;
  lc.mid_channels = 4;
  SwapModels m;
  m.codec = make_codec(cc, 1);
  m.ldm = make_sgldm(cc, dc, sc, 2);
  torch::Generator g = make_generator(3);
  init_parameters(*m.ldm.denoiser->out_conv, g);  // nonzero noise prediction
  m.layout_gen = make_layout_generator(lc, 4);
  m.codec->eval();
  m.ldm.eval();
  m.layout_gen->eval();
  return m;
}

SwapSource source(std::uint64_t seed, std::uint64_t index, int size = 32) {
  PersonSample p = make_sample(seed, index, size);
  return {p.image, p.layout, p.nose_y};
}

SwapConfig quick(std::uint64_t seed = 5) {
  SwapConfig c;
  c.ddim_steps = 6;
  c.seed = seed;
  c.image_size = 32;
  return c;
}

bool same_image(const Image& a, const Image& b) { return a.width() == b.width() && a.data() == b.data(); }

}  // namespace

TEST_CASE("blend_latents: selection oracle and degenerate partitions") {
  std::mt19937_64 rng(1);
  torch::Generator g = make_generator(1);
  for (int trial = 0; trial < 20; ++trial) {
    Mask h = testing::random_mask(rng, 6, 5, 0.3), b = testing::random_mask(rng, 6, 5, 0.4);
    RegionMaskSet m = RegionMaskSet::from_head_body(h, b);
    torch::Tensor zr = torch::randn({2, 3, 5, 6}, g), zh = torch::randn({2, 3, 5, 6}, g), zb = torch::randn({2, 3, 5, 6}, g);
    torch::Tensor out = blend_latents(zr, zh, zb, m);
    for (int n = 0; n < 2; ++n) {
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 5; ++y) {
          for (int x = 0; x < 6; ++x) {
            const torch::Tensor& src = m.head().at(x, y) ? zh : (m.body().at(x, y) ? zb : zr);
            REQUIRE(out[n][c][y][x].item<float>() == src[n][c][y][x].item<float>());
          }
        }
      }
    }
    CHECK(torch::equal(blend_latents(zr, zr, zr, m), zr));
  }
  Mask all(6, 5, true), none(6, 5, false);
  RegionMaskSet head_only(all, none, none);
  torch::Tensor z = torch::randn({1, 2, 5, 6}, g), w = torch::randn({1, 2, 5, 6}, g);
  CHECK(torch::equal(blend_latents(z, w, z, head_only), w));
  CHECK_THROWS_AS(blend_latents(z, w, torch::zeros({1, 2, 5, 5}), head_only), ShapeError);
  CHECK_THROWS_AS(RegionMaskSet(all, all, none), InvariantError);
}

TEST_CASE("swap_heads: determinism, trace invariants, outputs") {
  SwapModels m = tiny_models();
  SwapSource a = source(2, 0), b = source(2, 1);
  SwapConfig cfg = quick();
  int steps = 0;
  std::vector<int> ts;
  cfg.on_step = [&](const FusionStep& st) {
    ++steps;
    ts.push_back(st.t);
    const torch::Tensor& z = *st.blended;
    for (std::size_t k = 0; k < st.masks->size(); ++k) {
      torch::Tensor mk = (*st.masks)[k].expand_as(z);
      // Preservation by construction: masked entries equal the forward-noised source latent.
      REQUIRE(torch::equal(z.masked_select(mk), (*st.noised)[k].masked_select(mk)));
    }
    torch::Tensor cover = (*st.masks)[0].to(torch::kInt32) + (*st.masks)[1].to(torch::kInt32);
    REQUIRE(cover.max().item<int>() <= 1);
  };
  SwapResult r1 = swap_heads(a, b, m, cfg);
  CHECK(steps == 6);
  CHECK(ts == ddim_timesteps(100, 6));
  cfg.on_step = nullptr;
  SwapResult r2 = swap_heads(a, b, m, cfg);
  CHECK(same_image(r1.image, r2.image));
  CHECK(r1.completed_layout == r2.completed_layout);
  CHECK(r1.delta_w == r2.delta_w);
  CHECK(r1.seed == 5);
  CHECK(r1.image.width() == 32);

  SwapResult r3 = swap_heads(a, b, m, quick(6));
  CHECK_FALSE(same_image(r1.image, r3.image));

  // Blended layout: head classes from the (shifted) head source, body classes from the body source.
  SemanticLayout l1 = shift_horizontal(a.layout, r1.delta_w);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      if (ClassTaxonomy::head_group().contains(l1.at(x, y))) {
        CHECK(r1.blended_layout.at(x, y) == l1.at(x, y));
      } else if (ClassTaxonomy::body_group().contains(b.layout.at(x, y))) {
        CHECK(r1.blended_layout.at(x, y) == b.layout.at(x, y));
      } else {
        CHECK(r1.blended_layout.at(x, y) == kBackground);
      }
    }
  }
}

TEST_CASE("swap_heads: neck alignment") {
  SwapModels m = tiny_models();
  SwapSource a = source(3, 0);
  SwapSource b{shift_horizontal(a.image, 8), shift_horizontal(a.layout, 8), a.nose_y};
  SwapResult r = swap_heads(a, b, m, quick());
  CHECK(r.delta_w == 8);

  // With zero deviation the trick is a no-op.
  SwapConfig off = quick();
  off.align_neck = false;
  SwapResult on_r = swap_heads(a, a, m, quick());
  SwapResult off_r = swap_heads(a, a, m, off);
  CHECK(on_r.delta_w == 0);
  CHECK(same_image(on_r.image, off_r.image));

  SwapSource faceless{a.image, remove_neck(blend_layouts(a.layout, a.layout,
                                                          RegionMaskSet::from_head_body(Mask(32, 32), Mask(32, 32)))),
                      std::nullopt};
  CHECK_THROWS_AS(swap_heads(faceless, a, m, quick()), EmptyRegionError);
  CHECK_NOTHROW(swap_heads(faceless, a, m, off));
}

TEST_CASE("swap_heads: config and shape errors") {
  SwapModels m = tiny_models();
  SwapSource a = source(4, 0), big = source(4, 1, 64);
  SwapConfig c = quick();
  c.ddim_steps = 101;
  CHECK_THROWS_AS(swap_heads(a, a, m, c), ConfigError);
  c = quick();
  c.eta = 1.5;
  CHECK_THROWS_AS(swap_heads(a, a, m, c), ConfigError);
  CHECK_THROWS_AS(swap_heads(a, big, m, quick()), ShapeError);
  SwapSource bad{a.image, SemanticLayout(32, 28), std::nullopt};
  CHECK_THROWS_AS(swap_heads(bad, a, m, quick()), ShapeError);

  SwapModels broken = tiny_models();
  CodecConfig other;
  other.base_channels = 8;
  other.z_channels = 3;
  broken.codec = make_codec(other, 1);
  CHECK_THROWS_AS(swap_heads(a, a, broken, quick()), ShapeError);

  c = quick();
  c.eta = 0.5;
  SwapResult s1 = swap_heads(a, a, m, c);
  SwapResult s2 = swap_heads(a, a, m, c);
  CHECK(same_image(s1.image, s2.image));
}

TEST_CASE("replace_regions: specs and errors") {
  SwapModels m = tiny_models();
  SwapSource a = source(5, 0), b = source(5, 1);

  ReplacementSpec bad = fake_head_spec();
  bad.resample_regions.push_back(ClassSet{kUpperClothes});
  CHECK_THROWS_AS(replace_regions(a, bad, m, quick()), SpecError);
  ReplacementSpec out_of_range;
  out_of_range.preserve_regions = {{2, ClassTaxonomy::head_group()}};
  CHECK_THROWS_AS(replace_regions(a, out_of_range, m, quick()), SpecError);

  SwapResult fake = replace_regions(a, fake_head_spec(), m, quick());
  CHECK(fake.completed_layout == a.layout);
  CHECK(fake.delta_w == 0);
  SwapResult fake2 = replace_regions(a, fake_head_spec(), m, quick());
  CHECK(same_image(fake.image, fake2.image));

  int traced = 0;
  SwapConfig cfg = quick();
  cfg.on_step = [&](const FusionStep& st) {
    ++traced;
    REQUIRE(st.masks->size() == 2);
    const torch::Tensor& z = *st.blended;
    for (std::size_t k = 0; k < 2; ++k) {
      torch::Tensor mk = (*st.masks)[k].expand_as(z);
      REQUIRE(torch::equal(z.masked_select(mk), (*st.noised)[k].masked_select(mk)));
    }
  };
  SwapResult cross = replace_regions({a, b}, cross_skin_tone_spec(), m, cfg);
  CHECK(traced == 6);
  SemanticLayout blended;
  SemanticLayout cond = replacement_condition({a, b}, cross_skin_tone_spec(), m.layout_gen, &blended);
  CHECK(cond == cross.completed_layout);
  CHECK(blended == cross.blended_layout);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      if (ClassTaxonomy::head_group().contains(a.layout.at(x, y))) CHECK(blended.at(x, y) == a.layout.at(x, y));
    }
  }
}
