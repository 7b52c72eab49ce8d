#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "usb/error.hpp"
#include "usb/field.hpp"
#include "usb/rng.hpp"
#include "usb/tensor_io.hpp"

using namespace usb;

TEST_SUITE("numerics") {

TEST_CASE("pool window 1 is the identity") {
  Rng rng(1);
  const Field f = test::uniform_field(rng, 6, 9, 0.0, 1.0);
  CHECK(avg_pool_same(f, 1) == f);
}

TEST_CASE("pool of a centred impulse") {
  Field f(9, 9);
  f(4, 4) = 1.0;
  const Field p = avg_pool_same(f, 3);
  // Explicit 3x3 window enumeration around each pixel.
  for (std::size_t r = 0; r < 9; ++r) {
    for (std::size_t c = 0; c < 9; ++c) {
      double s = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr >= 0 && rr < 9 && cc >= 0 && cc < 9) s += f(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
        }
      }
      CHECK(p(r, c) == doctest::Approx(s / 9.0).epsilon(1e-15));
    }
  }
  CHECK(p(4, 4) == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("pool of ones: interior 1, borders divided by window squared") {
  const Field p = avg_pool_same(Field(7, 7, 1.0), 3);
  CHECK(p(3, 3) == doctest::Approx(1.0));
  CHECK(p(0, 3) == doctest::Approx(6.0 / 9.0));
  CHECK(p(0, 0) == doctest::Approx(4.0 / 9.0));
}

TEST_CASE("pool is linear and stays in [0,1]") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Field f = test::uniform_field(rng, 11, 8, 0.0, 1.0);
    const Field g = test::uniform_field(rng, 11, 8, 0.0, 1.0);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    const int w = 2 * static_cast<int>(rng.below(4)) + 1;
    const Field lhs = avg_pool_same(a * f + b * g, w);
    const Field rhs = a * avg_pool_same(f, w) + b * avg_pool_same(g, w);
    CHECK(test::max_abs_diff(lhs, rhs) < 1e-12);
    const Field pf = avg_pool_same(f, w);
    for (std::size_t i = 0; i < pf.size(); ++i) {
      CHECK(pf[i] >= 0.0);
      CHECK(pf[i] <= 1.0);
    }
  }
}

TEST_CASE("pool window errors") {
  const Field f(5, 7);
  CHECK_THROWS_AS(avg_pool_same(f, 2), InvalidArgument);
  CHECK_THROWS_AS(avg_pool_same(f, 0), InvalidArgument);
  CHECK_THROWS_AS(avg_pool_same(f, 7), InvalidArgument);
  CHECK_NOTHROW(avg_pool_same(f, 5));
}

TEST_CASE("elementwise examples") {
  Rng rng(3);
  const Field f = test::uniform_field(rng, 3, 4);
  CHECK(abs(f - f) == Field(3, 4));
  CHECK(exp(Field(3, 4)) == Field(3, 4, 1.0));
  const Field c = clamp(Field(1, 3, {-2.0, 0.5, 2.0}), -1.0, 1.0);
  CHECK(c == Field(1, 3, {-1.0, 0.5, 1.0}));
  CHECK(mul(f, Field(3, 4, 2.0)) == scale(f, 2.0));
  CHECK(sum(Field(2, 2, 0.25)) == 1.0);
  CHECK(mean(Field(2, 5, 3.0)) == 3.0);
}

TEST_CASE("elementwise errors") {
  CHECK_THROWS_AS(add(Field(2, 3), Field(3, 2)), ShapeMismatch);
  CHECK_THROWS_AS(sub(Field(2, 3), Field(2, 4)), ShapeMismatch);
  CHECK_THROWS_AS(mul(Field(1, 1), Field(2, 1)), ShapeMismatch);
  CHECK_THROWS_AS(clamp(Field(1, 1), 1.0, -1.0), InvalidArgument);
  CHECK_THROWS_AS(exp(Field(1, 1, 1e6)), InvalidArgument);
  CHECK_THROWS_AS(Field(2, 2, std::vector<double>{1.0, 2.0}), ShapeMismatch);
}

TEST_CASE("masks") {
  const Field f(1, 4, {-0.5, 0.0, 1e-9, 0.7});
  const BinaryMask m = binarize(f);
  CHECK(!m[0]);
  CHECK(!m[1]);
  CHECK(m[2]);
  CHECK(m[3]);
  CHECK(m.count() == 2);
  CHECK(m.to_field() == Field(1, 4, {0.0, 0.0, 1.0, 1.0}));
  CHECK(m.to_diffusion() == Field(1, 4, {-1.0, -1.0, 1.0, 1.0}));
  CHECK(binarize(m.to_diffusion()) == m);
  CHECK(BinaryMask(3, 3).none());
}

TEST_CASE("gaussian blur keeps constants and sigma 0 is the identity") {
  Rng rng(4);
  const Field f = test::uniform_field(rng, 9, 7);
  CHECK(gaussian_blur(f, 0.0) == f);
  const Field k = gaussian_blur(Field(9, 7, 0.3), 1.7);
  CHECK(test::max_abs_diff(k, Field(9, 7, 0.3)) < 1e-14);
}

TEST_CASE("same seed gives bit-identical draws") {
  Rng a(42), b(42);
  CHECK(gaussian_draw(a, 8, 8) == gaussian_draw(b, 8, 8));
  Rng c(43);
  Rng d(42);
  CHECK(gaussian_draw(c, 8, 8) != gaussian_draw(d, 8, 8));
}

TEST_CASE("normal moments over 1e6 draws") {
  Rng rng(5);
  const Field f = gaussian_draw(rng, 1000, 1000);
  double m = 0.0, v = 0.0;
  for (double x : f.values()) m += x;
  m /= static_cast<double>(f.size());
  for (double x : f.values()) v += (x - m) * (x - m);
  v /= static_cast<double>(f.size() - 1);
  CHECK(std::abs(m) < 0.005);
  CHECK(std::abs(v - 1.0) < 0.01);
  CHECK(all_finite(f));
}

TEST_CASE("disjoint substreams are uncorrelated") {
  const Rng base(9);
  Rng s1 = base.substream(0), s2 = base.substream(1);
  const int n = 100000;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = s1.normal(), y = s2.normal();
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double rho = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  CHECK(std::abs(rho) < 0.01);
}

TEST_CASE("substreams differ from each other and from the parent") {
  const Rng base(10);
  Rng p = base;
  Rng a = base.substream(3), b = base.substream(4), a2 = base.substream(3);
  const auto pa = p.next_u64(), aa = a.next_u64(), bb = b.next_u64();
  CHECK(pa != aa);
  CHECK(aa != bb);
  CHECK(a2.next_u64() == aa);
}

TEST_CASE("uniform and integer ranges") {
  Rng rng(6);
  int lo_hits = 0, hi_hits = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    const int k = rng.integer(1, 5);
    CHECK(k >= 1);
    CHECK(k <= 5);
    lo_hits += k == 1;
    hi_hits += k == 5;
    CHECK(rng.below(7) < 7);
  }
  CHECK(lo_hits > 3500);
  CHECK(hi_hits > 3500);
}

TEST_CASE("rng state round trip") {
  Rng a(77, 3);
  for (int i = 0; i < 5; ++i) a.next_u64();
  Rng b(a.state());
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("tensor round trip and header") {
  Rng rng(8);
  const Field f = gaussian_draw(rng, 3, 5);
  std::stringstream ss;
  write_tensor(ss, to_tensor(f));
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "UBT1");
  CHECK(bytes.size() == 4 + 4 + 2 * 4 + 15 * 8);
  CHECK(to_field(read_tensor(ss)) == f);
}

TEST_CASE("tensor io errors") {
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), IoError);
  std::stringstream truncated;
  write_tensor(truncated, to_tensor(Field(4, 4, 1.0)));
  std::string s = truncated.str();
  s.resize(s.size() - 3);
  std::stringstream t(s);
  CHECK_THROWS_AS(read_tensor(t), IoError);
  CHECK_THROWS_AS(load_field("/nonexistent/usb/file.ubt"), IoError);
}

TEST_CASE("pgm preview maps [-1,1] onto [0,255]") {
  const auto dir = test::scratch_dir("pgm");
  save_pgm(dir / "a.pgm", Field(1, 3, {-1.0, 0.0, 1.0}));
  std::ifstream in(dir / "a.pgm", std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(all.size() >= 3);
  CHECK(all.rfind("P5", 0) == 0);
  CHECK(static_cast<unsigned char>(all[all.size() - 3]) == 0);
  CHECK(static_cast<unsigned char>(all[all.size() - 1]) == 255);
}

}
