#include <doctest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "usb/editing.hpp"
#include "usb/error.hpp"
#include "usb/paired.hpp"

using namespace usb;

namespace {

class AffinePredictor final : public NoisePredictor {
 public:
  AffinePredictor(double a, double b) : a_(a), b_(b) {}
  Field predict(const DenoiserInput& in) const override { return a_ * in.noisy + b_ * in.condition; }

 private:
  double a_;
  double b_;
};

BinaryMask square_mask(std::size_t n, std::size_t r0, std::size_t r1) {
  BinaryMask m(n, n);
  for (std::size_t y = r0; y < r1; ++y) {
    for (std::size_t x = r0; x < r1; ++x) m.set(y, x, true);
  }
  return m;
}

}  // namespace

TEST_SUITE("editing") {

TEST_CASE("guidance gain examples") {
  const GuidanceConfig cfg;
  CHECK(guidance_gain(cfg, 0, 300) == 20.0);
  CHECK(guidance_gain(cfg, 300, 300) == doctest::Approx(12.130613194252668).epsilon(1e-14));
  GuidanceConfig flat;
  flat.k = 0.0;
  for (int t = 0; t <= 300; t += 37) CHECK(guidance_gain(flat, t, 300) == 20.0);
  CHECK_THROWS_AS(guidance_gain(cfg, 301, 300), InvalidArgument);
  CHECK_THROWS_AS(guidance_gain(cfg, -1, 300), InvalidArgument);
}

TEST_CASE("acg weight examples") {
  const GuidanceConfig cfg;
  Rng rng(1);
  const Field y0 = test::uniform_field(rng, 4, 4);
  CHECK(acg_weight(cfg, y0, y0, 17, 300) == Field(4, 4, 1.0));
  const Field w = acg_weight(cfg, Field(1, 1, 0.3), Field(1, 1, 0.4), 0, 300);
  CHECK(w[0] == doctest::Approx(0.1353352832366127).epsilon(1e-12));
  Field ramp(1, 20);
  for (std::size_t i = 0; i < 20; ++i) ramp[i] = 0.05 * static_cast<double>(i);
  const Field r = acg_weight(cfg, Field(1, 20), ramp, 100, 300);
  for (std::size_t i = 1; i < 20; ++i) CHECK(r[i] < r[i - 1]);
  CHECK_THROWS_AS(acg_weight(cfg, Field(2, 2), Field(2, 3), 1, 10), ShapeMismatch);
}

TEST_CASE("lcg weight examples") {
  GuidanceConfig cfg;
  CHECK(lcg_weight(cfg, BinaryMask(9, 9)) == Field(9, 9, 1.0));
  const Field deep = lcg_weight(cfg, square_mask(30, 5, 25));
  CHECK(deep(15, 15) == doctest::Approx(0.0).scale(1.0));
  cfg.pool_window = 3;
  BinaryMask dot(9, 9);
  dot.set(4, 4, true);
  CHECK(lcg_weight(cfg, dot)(4, 4) == doctest::Approx(1.0 - 1.0 / 9.0).epsilon(1e-14));
  cfg.eta = 0.4;
  const Field half = lcg_weight(cfg, square_mask(12, 2, 10));
  for (double v : half.values()) {
    CHECK(v >= 0.6 - 1e-15);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("guided update examples and range errors") {
  Rng rng(2);
  const Field a = test::uniform_field(rng, 3, 3), b = test::uniform_field(rng, 3, 3);
  CHECK(guided_update(a, b, Field(3, 3, 1.0)) == b);
  CHECK(guided_update(a, b, Field(3, 3, 0.0)) == a);
  CHECK(guided_update(Field(1, 1, 0.0), Field(1, 1, 1.0), Field(1, 1, 0.5))[0] == 0.5);
  CHECK_NOTHROW(guided_update(a, b, Field(3, 3, 1.0 + 1e-10)));
  CHECK_THROWS_AS(guided_update(a, b, Field(3, 3, 1.0 + 1e-8)), InvalidArgument);
  CHECK_THROWS_AS(guided_update(a, b, Field(3, 3, -1e-8)), InvalidArgument);
  CHECK_THROWS_AS(guided_update(a, b, Field(3, 2, 0.5)), ShapeMismatch);
}

TEST_CASE("weights stay in [0,1] and the update contracts toward the anchor") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    GuidanceConfig cfg;
    cfg.alpha0 = rng.uniform(0.1, 40.0);
    cfg.k = rng.uniform(0.0, 3.0);
    cfg.eta = rng.uniform(0.0, 1.0);
    const Field y0 = test::uniform_field(rng, 8, 8);
    const Field est = test::uniform_field(rng, 8, 8);
    const Field y_prev = test::uniform_field(rng, 8, 8, -3.0, 3.0);
    BinaryMask m(8, 8);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < 0.3);
    const Field lambda = mul(acg_weight(cfg, y0, est, rng.integer(0, 50), 50), lcg_weight(cfg, m));
    for (double v : lambda.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const Field out = guided_update(y_prev, y0, lambda);
    CHECK(test::max_abs_diff(out, y0) <= test::max_abs_diff(y_prev, y0) + 1e-15);
  }
}

TEST_CASE("config validation") {
  auto bad = [](auto mutate) {
    GuidanceConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](GuidanceConfig& c) { c.alpha0 = 0.0; }).validate(), InvalidArgument);
  CHECK_THROWS_AS(bad([](GuidanceConfig& c) { c.k = -0.1; }).validate(), InvalidArgument);
  CHECK_THROWS_AS(bad([](GuidanceConfig& c) { c.eta = 1.5; }).validate(), InvalidArgument);
  CHECK_THROWS_AS(bad([](GuidanceConfig& c) { c.t_start_frac = 0.0; }).validate(), InvalidArgument);
  CHECK_THROWS_AS(bad([](GuidanceConfig& c) { c.t_start_frac = 1.2; }).validate(), InvalidArgument);
  CHECK_THROWS_AS(bad([](GuidanceConfig& c) { c.pool_window = 4; }).validate(), InvalidArgument);
  CHECK_NOTHROW(GuidanceConfig{}.validate());
}

TEST_CASE("start index") {
  GuidanceConfig cfg;
  Rng rng(4);
  const RngState before = rng.state();
  CHECK(edit_start_index(cfg, 300, rng) == 180);
  CHECK(rng.state() == before);
  cfg.t_start_frac = 0.001;
  CHECK(edit_start_index(cfg, 300, rng) == 1);
  cfg.t_start_frac = 0.6;
  cfg.randomize_start = true;
  for (int k = 0; k < 200; ++k) {
    const int i = edit_start_index(cfg, 300, rng);
    CHECK(i >= 1);
    CHECK(i <= 180);
  }
}

TEST_CASE("disabled ACG equals the plain conditional chain") {
  const auto s = NoiseSchedule::linear(1024, 1e-4, 0.02);
  const auto tl = InferenceTimeline::subsample(s, 40);
  const AffinePredictor brain(0.3, 0.1);
  Rng rng(5);
  const Field source = test::uniform_field(rng, 8, 8);
  const BinaryMask mask = square_mask(8, 2, 5);
  for (const auto dir : {EditDirection::P2H, EditDirection::H2P}) {
    GuidanceConfig cfg;
    cfg.acg_enabled = false;
    Rng r(6);
    const EditResult res = edit(brain, {source, mask, dir}, cfg, s, tl, r);
    CHECK(res.start_index == 24);

    Rng manual(6);
    const Field eps = gaussian_draw(manual, 8, 8);
    const Field start = marginal_noise(s, source, tl.step(24), eps);
    const std::vector<Field> cond{dir == EditDirection::H2P ? mask.to_diffusion() : Field(8, 8, -1.0)};
    const auto chain = reverse_chains(brain, cond, {start}, 24, tl, std::span<Rng>(&manual, 1));
    CHECK(res.output == clamp(chain[0], -1.0, 1.0));
  }
}

TEST_CASE("exact estimates pin the output to the source") {
  // Point-mass data at the source: every estimate equals y0, so lambda = 1.
  const auto s = NoiseSchedule::linear(1024, 1e-4, 0.02);
  const auto tl = InferenceTimeline::subsample(s, 50);
  Rng rng(7);
  const Field source = test::uniform_field(rng, 10, 10);
  const GaussianOracle oracle({source, 0.0}, s);
  Rng r(8);
  const EditResult res = edit(oracle, {source, BinaryMask(10, 10), EditDirection::P2H}, GuidanceConfig{}, s, tl, r,
                              {30, 1});
  CHECK(test::max_abs_diff(res.output, source) < 1e-12);
  REQUIRE(res.lambda_snapshots.count(30) == 1);
  REQUIRE(res.lambda_snapshots.count(1) == 1);
  for (double v : res.lambda_snapshots.at(30).values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("h2p lesion weight releases the anchor inside the mask") {
  const auto s = NoiseSchedule::linear(1024, 1e-4, 0.02);
  const auto tl = InferenceTimeline::subsample(s, 50);
  Rng rng(9);
  const Field source = test::uniform_field(rng, 16, 16);
  const GaussianOracle oracle({source, 0.0}, s);
  const BinaryMask mask = square_mask(16, 3, 13);
  Rng r(10);
  const EditResult res =
      edit(oracle, {source, mask, EditDirection::H2P}, GuidanceConfig{}, s, tl, r, {20});
  const Field& lambda = res.lambda_snapshots.at(20);
  CHECK(lambda(8, 8) == doctest::Approx(0.0).scale(1.0));
  CHECK(lambda(0, 0) > 0.9);
}

TEST_CASE("batched edits with mixed start indices equal single edits") {
  const auto s = NoiseSchedule::linear(1024, 1e-4, 0.02);
  const auto tl = InferenceTimeline::subsample(s, 30);
  const AffinePredictor brain(0.2, -0.1);
  GuidanceConfig cfg;
  cfg.randomize_start = true;
  Rng rng(11);
  std::vector<EditRequest> reqs;
  for (int b = 0; b < 5; ++b) {
    reqs.push_back({test::uniform_field(rng, 7, 7), square_mask(7, 1, 3 + static_cast<std::size_t>(b) % 3),
                    b % 2 ? EditDirection::H2P : EditDirection::P2H});
  }
  auto rngs = trajectory_rngs(Rng(12), 0, reqs.size());
  const auto batch = edit_batch(brain, reqs, cfg, s, tl, rngs, {5});
  std::vector<int> starts;
  for (std::size_t b = 0; b < reqs.size(); ++b) {
    Rng r = Rng(12).substream(b);
    const auto single = edit(brain, reqs[b], cfg, s, tl, r, {5});
    CHECK(single.output == batch[b].output);
    CHECK(single.start_index == batch[b].start_index);
    CHECK(single.lambda_snapshots.at(5) == batch[b].lambda_snapshots.at(5));
    starts.push_back(single.start_index);
  }
  std::sort(starts.begin(), starts.end());
  CHECK(starts.front() != starts.back());
}

TEST_CASE("edit errors") {
  const auto s = NoiseSchedule::linear(100, 1e-4, 0.02);
  const auto tl = InferenceTimeline::subsample(s, 10);
  const ZeroPredictor zero;
  Rng r(13);
  CHECK_THROWS_AS(edit(zero, {Field(4, 4), BinaryMask(4, 5), EditDirection::P2H}, GuidanceConfig{}, s, tl, r),
                  ShapeMismatch);
  const auto other = NoiseSchedule::linear(50, 1e-4, 0.02);
  CHECK_THROWS_AS(edit(zero, {Field(4, 4), BinaryMask(4, 4), EditDirection::P2H}, GuidanceConfig{}, other, tl, r),
                  InvalidArgument);
  CHECK(edit_direction_from_string("h2p") == EditDirection::H2P);
  CHECK(edit_direction_from_string(to_string(EditDirection::P2H)) == EditDirection::P2H);
  CHECK_THROWS_AS(edit_direction_from_string("sideways"), InvalidArgument);
}

}
