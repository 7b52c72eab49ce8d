// Acceptance run: one PASS/FAIL line per criterion; exits 1 if any fails.
// Criteria 6-9 reuse the dataset and checkpoint criterion 5 leaves in --work.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "usb/conv_denoiser.hpp"
#include "usb/denoiser.hpp"
#include "usb/editing.hpp"
#include "usb/error.hpp"
#include "usb/experiments.hpp"
#include "usb/gradcheck.hpp"
#include "usb/metrics.hpp"
#include "usb/paired.hpp"
#include "usb/phantom.hpp"
#include "usb/schedule.hpp"
#include "usb/trainer.hpp"

namespace fs = std::filesystem;
using namespace usb;

namespace {

constexpr int kScheduleSteps = 1024;
constexpr double kBeta1 = 1e-4;
constexpr double kBetaT = 0.02;
constexpr int kInferenceSteps = 300;
constexpr std::uint64_t kBenchSeed = 7;
constexpr std::size_t kEditCases = 20;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  fs::path cli;
  fs::path data() const { return work / "data"; }
  fs::path checkpoint() const { return work / "train" / "final.usbc"; }
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0: no limit
  std::function<Outcome(Context&)> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

// --- 1 ---------------------------------------------------------------------

Outcome schedule_exactness(Context&) {
  const auto s = NoiseSchedule::linear(kScheduleSteps, kBeta1, kBetaT);
  double worst = 0.0;
  long double product = 1.0L;
  for (int t = 1; t <= kScheduleSteps; ++t) {
    const long double beta = static_cast<long double>(kBeta1) +
                             (static_cast<long double>(kBetaT) - kBeta1) * (t - 1) / (kScheduleSteps - 1);
    product *= 1.0L - beta;
    worst = std::max(worst, static_cast<double>(std::abs((s.alpha_bar(t) - product) / product)));
  }
  const bool ends = std::abs(s.beta(1) - kBeta1) < 1e-18 && std::abs(s.beta(kScheduleSteps) - kBetaT) < 1e-15;

  const auto tl = InferenceTimeline::subsample(s, kInferenceSteps);
  bool timeline_ok = tl.length() == kInferenceSteps && tl.step(1) == 1 && tl.step(kInferenceSteps) == kScheduleSteps;
  for (int i = 1; i <= tl.length(); ++i) {
    if (i > 1 && tl.step(i) <= tl.step(i - 1)) timeline_ok = false;
    if (std::sqrt(tl.alpha_bar(i)) != std::sqrt(s.alpha_bar(tl.step(i)))) timeline_ok = false;
  }
  return {ends && worst < 1e-12 && timeline_ok,
          "endpoints " + std::string(ends ? "ok" : "wrong") + ", max rel err " + fmt(worst, 3) +
              " (< 1e-12), K=300 retiming " + (timeline_ok ? "exact" : "inexact")};
}

// --- 2 ---------------------------------------------------------------------

Outcome one_step_identity(Context&) {
  const auto s = NoiseSchedule::linear(kScheduleSteps, kBeta1, kBetaT);
  Rng rng(2);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    Field x0(48, 48);
    for (std::size_t p = 0; p < x0.size(); ++p) x0[p] = rng.uniform(-1.0, 1.0);
    const int t = rng.integer(1, kScheduleSteps);
    const Field eps = gaussian_draw(rng, 48, 48);
    const Field est = one_step_estimate(eps, marginal_noise(s, x0, t, eps), s, t, false);
    for (std::size_t p = 0; p < x0.size(); ++p) worst = std::max(worst, std::abs(est[p] - x0[p]));
  }
  return {worst < 1e-12, "max |x0_hat - x0| " + fmt(worst, 3) + " over 20 draws (< 1e-12)"};
}

// --- 3 ---------------------------------------------------------------------

Outcome oracle_sampling(Context&) {
  constexpr double mu = 0.3, var = 0.25;
  constexpr std::size_t n = 10000;
  const auto s = NoiseSchedule::linear(kScheduleSteps, kBeta1, kBetaT);
  const GaussianOracle oracle({Field(1, 1, mu), var}, s);
  bool pass = true;
  std::string detail;
  for (int k : {16, 64, 300}) {
    const auto tl = InferenceTimeline::subsample(s, k);
    auto rngs = trajectory_rngs(Rng(3), 0, n);
    const auto pairs = sample_unconditional_pairs({oracle, oracle}, tl, 1, 1, rngs);
    // The mask branch is binarized on output, so the law is read off the image branch.
    double sum = 0.0, sq = 0.0;
    for (const auto& p : pairs) sum += p.image_field[0];
    const double mean = sum / n;
    for (const auto& p : pairs) sq += std::pow(p.image_field[0] - mean, 2);
    const double v = sq / (n - 1);
    pass = pass && std::abs(mean - mu) < 0.03 && std::abs(v / var - 1.0) < 0.05;
    detail += "K=" + std::to_string(k) + " mean " + fmt(mean) + " var " + fmt(v) + "; ";
  }
  return {pass, detail + "tol mean 0.03, var 5%"};
}

// --- 4 ---------------------------------------------------------------------

Outcome gradient_check(Context&) {
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const GradcheckResult r = run_gradcheck(seed);
    pass = pass && r.passed() && r.checked == 200;
    detail += "seed " + std::to_string(seed) + ": " + std::to_string(r.failures) + "/" + std::to_string(r.checked) +
              " over, worst " + fmt(r.worst_relative, 3) + "; ";
  }
  return {pass, detail + "h=1e-5, tol 1e-5"};
}

// --- 5 ---------------------------------------------------------------------

Outcome training_smoke(Context& ctx) {
  DatasetSpec spec;
  spec.train_count = 512;
  write_dataset(ctx.data(), spec);
  TrainConfig c;
  c.steps = 3000;
  c.dataset = ctx.data();
  c.output = ctx.checkpoint().parent_path();
  c.log_interval = 100;
  c.checkpoint_interval = 0;
  const TrainResult r = train(c);
  const LossTrend trend = loss_trend(r.losses);
  const StepLosses first = r.losses.front();
  const bool unit_start = std::abs(first.lesion - 1.0) < 0.2 && std::abs(first.brain - 1.0) < 0.2;
  return {unit_start && trend.ratio() <= 0.5,
          "first step " + fmt(first.lesion) + " + " + fmt(first.brain) + ", smoothed " + fmt(trend.initial) + " -> " +
              fmt(trend.final) + " (ratio " + fmt(trend.ratio(), 3) + ", need <= 0.5)"};
}

// --- 6-9 -------------------------------------------------------------------

struct Trained {
  TrainState state;
  ConvDenoiser lesion;
  ConvDenoiser brain;
  InferenceTimeline timeline;
  LesionSpec lesion_spec;
  std::vector<Triple> cases;
};

Trained load_trained(const Context& ctx) {
  if (!fs::exists(ctx.checkpoint())) throw IoError("no trained checkpoint; run criterion 5 first");
  TrainState s = load_checkpoint(ctx.checkpoint());
  ConvDenoiser lesion(s.lesion, Precision::Float32);
  ConvDenoiser brain(s.brain, Precision::Float32);
  const auto tl = InferenceTimeline::subsample(s.schedule, kInferenceSteps);
  return {std::move(s), std::move(lesion), std::move(brain), tl, read_dataset_manifest(ctx.data()).lesion,
          lesion_cases(load_split(ctx.data(), "test"), kEditCases)};
}

Outcome acg_ablation(Context& ctx) {
  const Trained m = load_trained(ctx);
  const EditBench bench{m.brain, m.state.schedule, m.timeline, m.lesion_spec, kBenchSeed};
  const AcgAblation a = ablate_acg(bench, m.cases, GuidanceConfig{});
  return {a.holds(), "median outside L1 " + fmt(a.median_l1_with) + " with vs " + fmt(a.median_l1_without) +
                         " without; median PSNR " + fmt(a.median_psnr_with) + " vs " + fmt(a.median_psnr_without)};
}

Outcome lcg_ablation(Context& ctx) {
  const Trained m = load_trained(ctx);
  const EditBench bench{m.brain, m.state.schedule, m.timeline, m.lesion_spec, kBenchSeed};
  const LcgAblation a = ablate_lcg(bench, m.cases, GuidanceConfig{});
  return {a.holds(0.8), "inside shift with >= without on " + fmt(100.0 * a.fraction, 3) + "% of " +
                            std::to_string(m.cases.size()) + " cases (need >= 80%); medians " +
                            fmt(median(a.with.inside_shift)) + " vs " + fmt(median(a.without.inside_shift))};
}

Outcome alpha_sweep(Context& ctx) {
  const Trained m = load_trained(ctx);
  const EditBench bench{m.brain, m.state.schedule, m.timeline, m.lesion_spec, kBenchSeed};
  GuidanceConfig cfg;
  cfg.k = 0.5;
  const std::vector<double> values{5.0, 10.0, 20.0, 30.0};
  const auto points = sweep_guidance(bench, m.cases, cfg, "alpha0", values);
  std::string detail = "median input L1:";
  for (const auto& p : points) detail += " " + fmt(p.value, 3) + "->" + fmt(p.median_input_l1);
  return {non_decreasing_input_l1(points), detail};
}

Outcome onestep_ablation(Context& ctx) {
  const Trained m = load_trained(ctx);
  std::vector<Field> reference;
  for (const auto& t : load_split(ctx.data(), "train")) reference.push_back(t.pathological);
  const OneStepAblation a = ablate_onestep({m.lesion, m.brain}, m.timeline, reference, 100, kBenchSeed);
  return {a.holds(), "MMD^2 estimates " + fmt(a.mmd_estimates) + " vs noisy-state " + fmt(a.mmd_noisy)};
}

// --- 10 --------------------------------------------------------------------

// Brute-force SSIM: every valid 11x11 window, weighted moments per window.
double naive_ssim(const Field& a, const Field& b) {
  std::array<double, kSsimWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    total += g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
  }
  for (auto& v : g) v /= total;
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  int windows = 0;
  for (std::size_t r = 0; r + kSsimWindow <= a.height(); ++r) {
    for (std::size_t c = 0; c + kSsimWindow <= a.width(); ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int u = 0; u < kSsimWindow; ++u) {
        for (int v = 0; v < kSsimWindow; ++v) {
          const double w = g[static_cast<std::size_t>(u)] * g[static_cast<std::size_t>(v)];
          const double x = (a(r + u, c + v) + 1) / 2, y = (b(r + u, c + v) + 1) / 2;
          mx += w * x;
          my += w * y;
          sxx += w * x * x;
          syy += w * y * y;
          sxy += w * x * y;
        }
      }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      sum += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++windows;
    }
  }
  return sum / windows;
}

FeatureEmbedding gaussian_set(Rng& rng, int n, int d, double shift) {
  FeatureEmbedding f{Eigen::MatrixXd(n, d), "gaussian"};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) f.vectors(i, j) = rng.normal() + shift;
  }
  return f;
}

Outcome metrics_selftest(Context&) {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  Rng rng(10);

  const Field a = gaussian_blur(gaussian_draw(rng, 32, 32), 1.0);
  expect(l1(a, a) == 0.0 && psnr(a, a) == 100.0 && std::abs(ssim(a, a) - 1.0) < 1e-12, "identity");
  Field shifted = a;
  for (std::size_t p = 0; p < a.size(); ++p) shifted[p] += 0.2;
  expect(std::abs(psnr(a, shifted) - 20.0) < 1e-9, "psnr 20 dB");
  for (int k = 0; k < 5; ++k) {
    Field x(24, 24), y(24, 24);
    for (std::size_t p = 0; p < x.size(); ++p) {
      x[p] = rng.uniform(-1.0, 1.0);
      y[p] = std::clamp(x[p] + 0.3 * rng.normal(), -1.0, 1.0);
    }
    expect(std::abs(ssim(x, y) - naive_ssim(x, y)) < 1e-10, "ssim vs naive");
    expect(std::abs(ssim(x, y) - ssim(y, x)) < 1e-12, "ssim symmetry");
    expect(std::abs(psnr(x, y) - psnr(y, x)) < 1e-12, "psnr symmetry");
    expect(l1(x, y) == l1(y, x), "l1 symmetry");
  }

  for (const Kernel kernel : {Kernel::RbfMedian, Kernel::Poly3}) {
    const std::string name = kernel == Kernel::RbfMedian ? "rbf" : "poly3";
    const MmdOptions opts{kernel, true, 0.0};
    const auto x = gaussian_set(rng, 500, 4, 0.0);
    const auto y = gaussian_set(rng, 500, 4, 0.0);
    const auto z = gaussian_set(rng, 500, 4, 1.0);
    const PermutationResult same = permutation_test(x, y, opts, 200, 11);
    expect(same.statistic < same.null_q95, name + " same-law below null q95");
    const PermutationResult diff = permutation_test(x, z, opts, 200, 12);
    expect(diff.p_value < 0.05, name + " shifted law rejected");
    expect(std::abs(mmd2(x, x, {kernel, false, 0.0})) < 1e-12, name + " identical biased zero");
    expect(std::abs(mmd2(x, z, opts) - mmd2(z, x, opts)) < 1e-12, name + " symmetry");
  }
  {
    const auto x = gaussian_set(rng, 300, 4, 0.0);
    const auto z = gaussian_set(rng, 300, 4, 1.0);
    expect(kid(x, z, 1) > kid(x, gaussian_set(rng, 300, 4, 0.0), 1), "kid orders shifted above same-law");
  }

  const auto m = moments(gaussian_set(rng, 200, 3, 0.5));
  expect(std::abs(frechet_distance(m, m)) < 1e-9, "frechet identity");
  MomentSummary p{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Ones(1, 1)};
  MomentSummary q{Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 1)};
  expect(std::abs(frechet_distance(p, q) - 1.0) < 1e-12, "frechet scalar");
  MomentSummary d1{Eigen::Vector2d(0.1, -0.4), Eigen::Vector2d(0.5, 2.0).asDiagonal()};
  MomentSummary d2{Eigen::Vector2d(0.7, 0.2), Eigen::Vector2d(1.5, 0.3).asDiagonal()};
  double oracle = 0.0;
  for (int j = 0; j < 2; ++j) {
    const double sa = d1.cov(j, j), sb = d2.cov(j, j);
    oracle += std::pow(d1.mean(j) - d2.mean(j), 2) + sa + sb - 2 * std::sqrt(sa * sb);
  }
  expect(std::abs(frechet_distance(d1, d2) - oracle) < 1e-10, "frechet diagonal");
  expect(std::abs(frechet_distance(d1, d2) - frechet_distance(d2, d1)) < 1e-12, "frechet symmetry");

  std::string detail = failed.empty() ? "all examples hold" : "failed:";
  for (const auto& f : failed) detail += " [" + f + "]";
  return {failed.empty(), detail};
}

// --- 11 --------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).generic_string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

Outcome cli_reproducibility(Context& ctx) {
  const fs::path root = ctx.work / "cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path log = root / "cli.log";
  const std::string data = (root / "data").string();
  const std::string ckpt = (root / "train" / "final.usbc").string();
  const std::string tiny = " --steps 8";

  struct Step {
    std::string name;
    std::string args;
  };
  const std::vector<Step> steps{
      {"data", "phantom --train-count 12 --test-count 6 --previews 2"},
      {"train", "train --data " + quote(data) + " --steps 6 --batch 4 --checkpoint-interval 3 --log-interval 2"},
      {"uncond", "sample-uncond --checkpoint " + quote(ckpt) + " --n 3" + tiny},
      {"cond", "sample-cond --checkpoint " + quote(ckpt) + " --mask " + quote(data + "/test/0.mask.ubt") + " --n 2" +
                   tiny},
      {"p2h", "edit --checkpoint " + quote(ckpt) + " --direction p2h --input " + quote(data + "/test/0.path.ubt") +
                  " --mask " + quote(data + "/test/0.mask.ubt") + " --snapshot 2" + tiny},
      {"h2p", "edit --checkpoint " + quote(ckpt) + " --direction h2p --input " +
                  quote(data + "/test/1.healthy.ubt") + " --mask " + quote(data + "/test/0.mask.ubt") +
                  " --randomize-start" + tiny},
      {"eval", "eval --images " + quote((root / "uncond").string()) + " --reference " + quote(data) +
                   " --split train --kind path --factor 4 --permutations 20"},
      {"ablate", "ablate --checkpoint " + quote(ckpt) + " --data " + quote(data) +
                     " --toggle acg --toggle lcg --toggle onestep --sweep alpha0 --sweep eta --cases 2 --samples 3" +
                     tiny},
      {"gradcheck", "gradcheck --seeds 1 --params 20 --size 8"},
      {"rerun", "rerun " + quote((root / "data" / "run.json").string())},
  };

  std::vector<std::string> problems;
  std::size_t compared = 0;
  for (const auto& s : steps) {
    const fs::path out = root / s.name;
    std::map<std::string, std::string> first;
    for (int pass = 0; pass < 2; ++pass) {
      fs::remove_all(out);
      const std::string cmd = quote(ctx.cli.string()) + " --seed 1 --out " + quote(out.string()) + " " + s.args +
                              " >>" + quote(log.string()) + " 2>&1";
      const int status = std::system(cmd.c_str());
      if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        problems.push_back(s.name + " exited " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
        break;
      }
      auto files = snapshot(out);
      if (pass == 0) {
        first = std::move(files);
      } else if (files != first) {
        problems.push_back(s.name + " outputs differ");
      } else {
        compared += files.size();
      }
    }
  }
  std::string detail = std::to_string(steps.size()) + " subcommand runs, " + std::to_string(compared) +
                       " files bit-identical across repeats";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Context ctx;
  std::string work = (fs::temp_directory_path() / "usb_acceptance").string();
  std::string cli;
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory (dataset, checkpoint, CLI outputs)");
  app.add_option("--cli", cli, "Path to the usb executable")->required();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  ctx.cli = fs::absolute(cli);
  fs::create_directories(ctx.work);

  const std::vector<Criterion> criteria{
      {1, "schedule exactness", 1, schedule_exactness},
      {2, "one-step denoising identity", 1, one_step_identity},
      {3, "oracle reverse-sampling law", 120, oracle_sampling},
      {4, "gradient correctness", 120, gradient_check},
      {5, "training smoke", 900, training_smoke},
      {6, "ACG ablation direction", 600, acg_ablation},
      {7, "LCG ablation direction", 600, lcg_ablation},
      {8, "alpha0 sweep monotonicity", 900, alpha_sweep},
      {9, "one-step conditioning ablation", 0, onestep_ablation},
      {10, "metrics self-tests", 120, metrics_selftest},
      {11, "CLI reproducibility", 0, cli_reproducibility},
  };
  const std::set<int> selected(only.begin(), only.end());

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_seconds <= 0 || seconds < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << "  [" << std::setw(2) << c.id << "] " << c.name << ": " << o.detail
              << " (" << fmt(seconds, 3) << " s"
              << (c.budget_seconds > 0 ? ", budget " + fmt(c.budget_seconds, 4) + " s" : std::string()) << ")"
              << (in_time ? "" : " OVER TIME") << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
