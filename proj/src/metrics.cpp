#include "usb/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "usb/error.hpp"

namespace usb {

double l1(const Field& a, const Field& b) {
  require_same_shape(a, b, "l1");
  if (a.size() == 0) throw InvalidArgument("l1: empty fields");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double weighted_l1(const Field& a, const Field& b, const Field& weight) {
  require_same_shape(a, b, "weighted_l1");
  require_same_shape(a, weight, "weighted_l1 weight");
  double s = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (weight[i] < 0.0) throw InvalidArgument("weighted_l1: negative weight");
    s += weight[i] * std::abs(a[i] - b[i]);
    total += weight[i];
  }
  if (!(total > 0.0)) throw InvalidArgument("weighted_l1: weights sum to zero");
  return s / total;
}

double psnr(const Field& a, const Field& b) {
  require_same_shape(a, b, "psnr");
  if (a.size() == 0) throw InvalidArgument("psnr: empty fields");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = 0.5 * (a[i] - b[i]);
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::array<double, kSsimWindow> ssim_taps() {
  std::array<double, kSsimWindow> taps{};
  double total = 0.0;
  const int r = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - r;
    taps[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Weighted window sums of f over every valid window position.
Eigen::MatrixXd window_filter(const Eigen::MatrixXd& f, const std::array<double, kSsimWindow>& taps) {
  const Eigen::Index oh = f.rows() - kSsimWindow + 1;
  const Eigen::Index ow = f.cols() - kSsimWindow + 1;
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(oh, f.cols());
  for (int k = 0; k < kSsimWindow; ++k) rows += taps[k] * f.middleRows(k, oh);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(oh, ow);
  for (int k = 0; k < kSsimWindow; ++k) out += taps[k] * rows.middleCols(k, ow);
  return out;
}

Eigen::MatrixXd unit_range(const Field& f) {
  Eigen::MatrixXd m(f.height(), f.width());
  for (std::size_t y = 0; y < f.height(); ++y) {
    for (std::size_t x = 0; x < f.width(); ++x) m(y, x) = 0.5 * (f(y, x) + 1.0);
  }
  return m;
}

}  // namespace

double ssim(const Field& a, const Field& b) {
  require_same_shape(a, b, "ssim");
  if (a.height() < kSsimWindow || a.width() < kSsimWindow) throw InvalidArgument("ssim: fields smaller than 11x11");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto taps = ssim_taps();
  const Eigen::MatrixXd x = unit_range(a);
  const Eigen::MatrixXd y = unit_range(b);
  const Eigen::ArrayXXd mx = window_filter(x, taps).array();
  const Eigen::ArrayXXd my = window_filter(y, taps).array();
  const Eigen::ArrayXXd sxx = window_filter(x.cwiseProduct(x), taps).array() - mx * mx;
  const Eigen::ArrayXXd syy = window_filter(y.cwiseProduct(y), taps).array() - my * my;
  const Eigen::ArrayXXd sxy = window_filter(x.cwiseProduct(y), taps).array() - mx * my;
  const Eigen::ArrayXXd map =
      ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean();
}

FeatureEmbedding downsample_features(std::span<const Field> images, int factor) {
  if (images.empty()) throw InvalidArgument("downsample_features: no images");
  if (factor < 1) throw InvalidArgument("downsample_features: factor must be >= 1");
  const std::size_t h = images[0].height();
  const std::size_t w = images[0].width();
  const auto f = static_cast<std::size_t>(factor);
  if (h % f != 0 || w % f != 0) throw InvalidArgument("downsample_features: factor must divide the image size");
  const std::size_t oh = h / f;
  const std::size_t ow = w / f;
  FeatureEmbedding out{Eigen::MatrixXd(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(oh * ow)),
                       "downsample-flatten(" + std::to_string(factor) + ")"};
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_shape(images[n], images[0], "downsample_features");
    for (std::size_t by = 0; by < oh; ++by) {
      for (std::size_t bx = 0; bx < ow; ++bx) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < f; ++dy) {
          for (std::size_t dx = 0; dx < f; ++dx) s += images[n](by * f + dy, bx * f + dx);
        }
        out.vectors(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(by * ow + bx)) = s * inv;
      }
    }
  }
  return out;
}

FeatureEmbedding random_projection_features(std::span<const Field> images, int dim, std::uint64_t seed) {
  if (images.empty()) throw InvalidArgument("random_projection_features: no images");
  if (dim < 1) throw InvalidArgument("random_projection_features: dim must be >= 1");
  const auto pixels = static_cast<Eigen::Index>(images[0].size());
  Rng rng(seed);
  Eigen::MatrixXd proj(pixels, dim);
  for (Eigen::Index p = 0; p < pixels; ++p) {
    for (Eigen::Index d = 0; d < dim; ++d) proj(p, d) = rng.normal();
  }
  proj /= std::sqrt(static_cast<double>(pixels));
  Eigen::MatrixXd flat(static_cast<Eigen::Index>(images.size()), pixels);
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_shape(images[n], images[0], "random_projection_features");
    for (Eigen::Index p = 0; p < pixels; ++p) flat(static_cast<Eigen::Index>(n), p) = images[n][static_cast<std::size_t>(p)];
  }
  return {flat * proj, "random-projection(" + std::to_string(dim) + ", seed " + std::to_string(seed) + ")"};
}

namespace {

Eigen::MatrixXd pooled(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd z(x.rows() + y.rows(), x.cols());
  z << x, y;
  return z;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& z) {
  const Eigen::VectorXd norms = z.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * z * z.transpose();
  d.colwise() += norms;
  d.rowwise() += norms.transpose();
  return d.cwiseMax(0.0);
}

void check_sets(const FeatureEmbedding& x, const FeatureEmbedding& y, Eigen::Index min_rows) {
  if (x.dim() != y.dim()) throw InvalidArgument("feature dimensions differ");
  if (x.count() < min_rows || y.count() < min_rows) {
    throw InvalidArgument("need at least " + std::to_string(min_rows) + " samples per set");
  }
}

double median_of_pairs(const Eigen::MatrixXd& d2) {
  std::vector<double> v;
  const Eigen::Index n = d2.rows();
  v.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) v.push_back(d2(i, j));
  }
  if (v.empty()) return 1.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m > 0.0 ? m : 1.0;
}

// Gram matrix of the pooled sample.
Eigen::MatrixXd gram(const Eigen::MatrixXd& z, const MmdOptions& options, double bandwidth) {
  if (options.kernel == Kernel::Poly3) {
    const Eigen::ArrayXXd lin = (z * z.transpose()).array() / static_cast<double>(z.cols()) + 1.0;
    return (lin * lin * lin).matrix();
  }
  return (-squared_distances(z).array() / bandwidth).exp().matrix();
}

double bandwidth_for(const Eigen::MatrixXd& z, const MmdOptions& options) {
  if (options.kernel != Kernel::RbfMedian) return 0.0;
  return options.bandwidth > 0.0 ? options.bandwidth : median_of_pairs(squared_distances(z));
}

// MMD^2 of the split where idx[0..n) forms the first set.
double mmd_from_gram(const Eigen::MatrixXd& k, const std::vector<Eigen::Index>& idx, Eigen::Index n, bool unbiased) {
  const Eigen::Index total = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index m = total - n;
  double kxx = 0.0;
  double kyy = 0.0;
  double kxy = 0.0;
  for (Eigen::Index a = 0; a < total; ++a) {
    for (Eigen::Index b = 0; b < total; ++b) {
      const double v = k(idx[a], idx[b]);
      const bool ax = a < n;
      const bool bx = b < n;
      if (ax && bx) {
        if (a != b || !unbiased) kxx += v;
      } else if (!ax && !bx) {
        if (a != b || !unbiased) kyy += v;
      } else if (ax) {
        kxy += v;
      }
    }
  }
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  if (unbiased) return kxx / (nn * (nn - 1.0)) + kyy / (mm * (mm - 1.0)) - 2.0 * kxy / (nn * mm);
  return kxx / (nn * nn) + kyy / (mm * mm) - 2.0 * kxy / (nn * mm);
}

std::vector<Eigen::Index> identity_index(Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  return idx;
}

}  // namespace

double median_bandwidth(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return median_of_pairs(squared_distances(pooled(x, y)));
}

double mmd2(const FeatureEmbedding& x, const FeatureEmbedding& y, const MmdOptions& options) {
  check_sets(x, y, options.unbiased ? 2 : 1);
  const Eigen::MatrixXd z = pooled(x.vectors, y.vectors);
  const Eigen::MatrixXd k = gram(z, options, bandwidth_for(z, options));
  return mmd_from_gram(k, identity_index(z.rows()), x.count(), options.unbiased);
}

double kid(const FeatureEmbedding& x, const FeatureEmbedding& y, std::uint64_t seed, int subsets, int subset_size) {
  check_sets(x, y, 2);
  if (subsets < 1 || subset_size < 2) throw InvalidArgument("kid: need subsets >= 1 and subset_size >= 2");
  Rng rng(seed);
  auto draw = [&rng](Eigen::Index n, Eigen::Index take) {
    std::vector<Eigen::Index> idx = identity_index(n);
    for (Eigen::Index i = 0; i < take; ++i) {
      const auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(take));
    return idx;
  };
  const Eigen::Index sx = std::min<Eigen::Index>(x.count(), subset_size);
  const Eigen::Index sy = std::min<Eigen::Index>(y.count(), subset_size);
  const MmdOptions poly{Kernel::Poly3, true, 0.0};
  double total = 0.0;
  for (int s = 0; s < subsets; ++s) {
    const auto ix = draw(x.count(), sx);
    const auto iy = draw(y.count(), sy);
    FeatureEmbedding a{Eigen::MatrixXd(sx, x.dim()), x.featurizer};
    FeatureEmbedding b{Eigen::MatrixXd(sy, y.dim()), y.featurizer};
    for (Eigen::Index r = 0; r < sx; ++r) a.vectors.row(r) = x.vectors.row(ix[static_cast<std::size_t>(r)]);
    for (Eigen::Index r = 0; r < sy; ++r) b.vectors.row(r) = y.vectors.row(iy[static_cast<std::size_t>(r)]);
    total += mmd2(a, b, poly);
  }
  return total / subsets;
}

MomentSummary moments(const FeatureEmbedding& features) {
  if (features.count() < 2) throw InvalidArgument("moments: need at least two samples");
  MomentSummary m;
  m.mean = features.vectors.colwise().mean().transpose();
  const Eigen::MatrixXd centred = features.vectors.rowwise() - m.mean.transpose();
  m.cov = centred.transpose() * centred / static_cast<double>(features.count() - 1);
  return m;
}

namespace {

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> checked_eigen(const Eigen::MatrixXd& s, const char* name) {
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw InvalidArgument(std::string("frechet_distance: ") + name + " covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw InvalidArgument(std::string("frechet_distance: ") + name + " covariance is not positive semidefinite");
  }
  return es;
}

}  // namespace

double frechet_distance(const MomentSummary& a, const MomentSummary& b) {
  const Eigen::Index d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d || b.cov.cols() != d) {
    throw InvalidArgument("frechet_distance: dimension mismatch");
  }
  const auto ea = checked_eigen(a.cov, "first");
  checked_eigen(b.cov, "second");
  const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sa_half = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd inner = sa_half * b.cov * sa_half;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner, Eigen::EigenvaluesOnly);
  const double cross = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

PermutationResult permutation_test(const FeatureEmbedding& x, const FeatureEmbedding& y, const MmdOptions& options,
                                   int permutations, std::uint64_t seed) {
  check_sets(x, y, 2);
  if (permutations < 1) throw InvalidArgument("permutation_test: need at least one permutation");
  const Eigen::MatrixXd z = pooled(x.vectors, y.vectors);
  const Eigen::MatrixXd k = gram(z, options, bandwidth_for(z, options));
  std::vector<Eigen::Index> idx = identity_index(z.rows());
  PermutationResult r;
  r.permutations = permutations;
  r.statistic = mmd_from_gram(k, idx, x.count(), options.unbiased);
  Rng rng(seed);
  std::vector<double> null(static_cast<std::size_t>(permutations));
  int exceed = 0;
  for (int p = 0; p < permutations; ++p) {
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      std::swap(idx[i], idx[static_cast<std::size_t>(rng.below(i + 1))]);
    }
    null[static_cast<std::size_t>(p)] = mmd_from_gram(k, idx, x.count(), options.unbiased);
    if (null[static_cast<std::size_t>(p)] >= r.statistic) ++exceed;
  }
  std::sort(null.begin(), null.end());
  const auto q = static_cast<std::size_t>(std::ceil(0.95 * permutations)) - 1;
  r.null_q95 = null[std::min(q, null.size() - 1)];
  r.p_value = (1.0 + exceed) / (1.0 + permutations);
  return r;
}

}  // namespace usb
