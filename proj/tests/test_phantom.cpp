#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support.hpp"
#include "usb/error.hpp"
#include "usb/metrics.hpp"
#include "usb/phantom.hpp"

using namespace usb;

TEST_SUITE("phantom") {

TEST_CASE("healthy phantom is deterministic and in range") {
  const PhantomSpec spec;
  const auto a = generate_healthy(spec, 5);
  const auto b = generate_healthy(spec, 5);
  CHECK(a.image == b.image);
  CHECK(a.brain == b.brain);
  CHECK(a.image.height() == 48);
  CHECK(a.image.width() == 48);
  for (double v : a.image.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(a.image(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(a.brain.count() > 500);
}

TEST_CASE("untextured phantoms take few distinct values before smoothing") {
  PhantomSpec spec;
  spec.texture_amplitude = 0.0;
  spec.smoothing_sigma = 0.0;
  const auto p = generate_healthy(spec, 9);
  std::vector<double> values(p.image.values().begin(), p.image.values().end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  // background, skull, cortex, tissue and two ventricles
  CHECK(values.size() <= 6);
}

TEST_CASE("1000 seeds give pairwise distinct phantoms") {
  const PhantomSpec spec;
  std::vector<Field> images;
  images.reserve(1000);
  for (std::uint64_t s = 0; s < 1000; ++s) images.push_back(generate_healthy(spec, s).image);
  double smallest = 1e9;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = i + 1; j < images.size(); ++j) smallest = std::min(smallest, l1(images[i], images[j]));
  }
  CHECK(smallest > 0.0);
}

TEST_CASE("phantom spec validation") {
  PhantomSpec spec;
  spec.axis_major = {25.0, 30.0};
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  PhantomSpec unordered;
  unordered.tissue_intensity = {0.6, 0.3};
  CHECK_THROWS_AS(unordered.validate(), InvalidArgument);
  CHECK_NOTHROW(PhantomSpec{}.validate());
}

TEST_CASE("zero blob count gives an empty mask") {
  LesionSpec spec;
  spec.blob_count_min = 0;
  spec.blob_count_max = 0;
  const auto h = generate_healthy(PhantomSpec{}, 1);
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(generate_lesion_mask(spec, h.brain, s).none());
}

TEST_CASE("masks stay inside the brain and within the area cap") {
  const LesionSpec spec;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto h = generate_healthy(PhantomSpec{}, s);
    const auto m = generate_lesion_mask(spec, h.brain, s + 1000);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i]) CHECK(h.brain[i]);
    }
    CHECK(static_cast<double>(m.count()) <= spec.max_area_fraction * static_cast<double>(h.brain.count()));
  }
}

TEST_CASE("lesion areas over 500 seeds span 1% to 25% of the brain") {
  const LesionSpec spec;
  double lo = 1.0, hi = 0.0;
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto h = generate_healthy(PhantomSpec{}, s);
    const auto m = generate_lesion_mask(spec, h.brain, 7919 * s + 1);
    if (m.none()) continue;
    const double frac = static_cast<double>(m.count()) / static_cast<double>(h.brain.count());
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  CHECK(lo <= 0.01);
  CHECK(hi >= 0.25);
}

TEST_CASE("empty mask leaves the image untouched") {
  const auto h = generate_healthy(PhantomSpec{}, 2);
  CHECK(embed_lesion(h.image, BinaryMask(48, 48), LesionSpec{}, 3) == h.image);
}

TEST_CASE("full-brain hyper lesion with hard boundary") {
  const auto h = generate_healthy(PhantomSpec{}, 4);
  LesionSpec spec;
  spec.intensity = LesionIntensity::Hyper;
  spec.shift = {0.5, 0.5};
  spec.softness = 0.0;
  const Field out = embed_lesion(h.image, h.brain, spec, 17);
  const Field texture = lesion_texture(spec, 48, 48, 17);
  CHECK(lesion_shift(spec, 17) == 0.5);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (h.brain[i]) {
      CHECK(out[i] == std::clamp(h.image[i] + 0.5 * texture[i], -1.0, 1.0));
    } else {
      CHECK(out[i] == h.image[i]);
    }
  }
}

TEST_CASE("embedding is localized to the soft support") {
  const LesionSpec spec;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Triple t = make_triple(PhantomSpec{}, spec, s);
    const Field soft = soft_mask(t.mask, spec.softness);
    for (std::size_t i = 0; i < soft.size(); ++i) {
      if (soft[i] == 0.0) CHECK(t.pathological[i] == t.healthy[i]);
    }
  }
}

TEST_CASE("soft mask profile") {
  BinaryMask m(9, 9);
  m.set(4, 4, true);
  const Field soft = soft_mask(m, 1.0);
  CHECK(soft(4, 4) == 1.0);
  CHECK(soft(4, 5) == doctest::Approx(0.5));
  CHECK(soft(4, 6) == 0.0);
  CHECK(soft_mask(m, 0.0) == m.to_field());
  CHECK_THROWS_AS(soft_mask(m, -1.0), InvalidArgument);
}

TEST_CASE("lesion intensity modes") {
  LesionSpec spec;
  spec.intensity = LesionIntensity::Hypo;
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(lesion_shift(spec, s) < 0.0);
  spec.intensity = LesionIntensity::Hyper;
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(lesion_shift(spec, s) > 0.0);
  spec.intensity = LesionIntensity::Mixed;
  int bright = 0;
  for (std::uint64_t s = 0; s < 200; ++s) bright += lesion_shift(spec, s) > 0.0;
  CHECK(bright > 50);
  CHECK(bright < 150);
  CHECK(lesion_intensity_from_string(to_string(LesionIntensity::Mixed)) == LesionIntensity::Mixed);
  CHECK_THROWS_AS(lesion_intensity_from_string("purple"), InvalidArgument);
}

TEST_CASE("embed shape mismatch") {
  CHECK_THROWS_AS(embed_lesion(Field(4, 4), BinaryMask(4, 5), LesionSpec{}, 1), ShapeMismatch);
}

TEST_CASE("dataset round trip reproduces the triples") {
  const auto dir = test::scratch_dir("dataset");
  DatasetSpec spec;
  spec.train_count = 6;
  spec.test_count = 3;
  spec.seed = 21;
  write_dataset(dir, spec);
  const auto train = load_split(dir, "train");
  const auto test = load_split(dir, "test");
  REQUIRE(train.size() == 6);
  REQUIRE(test.size() == 3);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Triple t = make_triple(spec.phantom, spec.lesion, triple_seed(21, "train", i));
    CHECK(train[i].mask == t.mask);
    CHECK(train[i].pathological == t.pathological);
    CHECK(train[i].healthy == t.healthy);
  }
  CHECK(triple_seed(21, "train", 0) != triple_seed(21, "test", 0));
  CHECK_THROWS_AS(load_split(dir, "valid"), InvalidArgument);
  CHECK_THROWS_AS(load_split(dir / "missing", "train"), IoError);
}

}
