#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "usb/field.hpp"
#include "usb/rng.hpp"

namespace usb {

// Mean |a - b|.
double l1(const Field& a, const Field& b);
// Mean |a - b| over pixels with weight > 0, weighted. Throws InvalidArgument
// if the weights sum to zero.
double weighted_l1(const Field& a, const Field& b, const Field& weight);

inline constexpr double kPsnrCap = 100.0;

// Both inputs are mapped from [-1, 1] to [0, 1]; peak value 1.
double psnr(const Field& a, const Field& b);

// Mean SSIM over every full 11x11 window (Gaussian weights, sigma 1.5),
// C1 = 0.01^2, C2 = 0.03^2, on inputs mapped to [0, 1]. Throws
// InvalidArgument for fields smaller than the window.
double ssim(const Field& a, const Field& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// N x d feature matrix with the featurizer that produced it.
struct FeatureEmbedding {
  Eigen::MatrixXd vectors;
  std::string featurizer;

  Eigen::Index count() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }
};

// Box-averages each image by `factor` (which must divide both sides) and
// flattens the result.
FeatureEmbedding downsample_features(std::span<const Field> images, int factor);

// Gaussian projection onto `dim` directions scaled by 1/sqrt(pixels); the
// matrix depends only on (seed, pixels, dim).
FeatureEmbedding random_projection_features(std::span<const Field> images, int dim, std::uint64_t seed);

enum class Kernel { RbfMedian, Poly3 };

struct MmdOptions {
  Kernel kernel = Kernel::RbfMedian;
  bool unbiased = true;
  // RBF bandwidth; <= 0 selects the median pairwise squared distance of the
  // pooled sample.
  double bandwidth = 0.0;
};

// RBF exp(-|u - v|^2 / bandwidth); poly3 (u.v / d + 1)^3.
double median_bandwidth(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Squared MMD; the U-statistic when unbiased, the V-statistic otherwise.
double mmd2(const FeatureEmbedding& x, const FeatureEmbedding& y, const MmdOptions& options = {});

// Unbiased poly3 MMD^2 averaged over `subsets` random subsets of size
// min(N, subset_size) drawn without replacement from each set.
double kid(const FeatureEmbedding& x, const FeatureEmbedding& y, std::uint64_t seed = 0, int subsets = 10,
           int subset_size = 100);

struct MomentSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Sample mean and unbiased covariance; needs at least two rows.
MomentSummary moments(const FeatureEmbedding& features);

// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), with square roots
// from symmetric eigendecompositions floored at 0. Throws InvalidArgument for
// asymmetric or indefinite covariances beyond 1e-10.
double frechet_distance(const MomentSummary& a, const MomentSummary& b);

struct PermutationResult {
  double statistic = 0.0;
  double p_value = 1.0;
  // 95% quantile of the permutation null.
  double null_q95 = 0.0;
  int permutations = 0;
};

// Two-sample permutation test of mmd2 with the kernel bandwidth fixed from
// the pooled sample. p = (1 + #{null >= observed}) / (1 + permutations).
PermutationResult permutation_test(const FeatureEmbedding& x, const FeatureEmbedding& y, const MmdOptions& options,
                                   int permutations, std::uint64_t seed);

}  // namespace usb
