#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "parallel.hpp"
#include "usb/config.hpp"
#include "usb/error.hpp"
#include "usb/experiments.hpp"
#include "usb/gradcheck.hpp"
#include "usb/metrics.hpp"
#include "usb/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace usb::tools {
namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitCheck = 4;

// A verification step ran to completion and failed.
class CheckFailure : public Error {
 public:
  using Error::Error;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

std::string numbered(const std::string& stem, std::size_t i, const std::string& suffix) {
  std::ostringstream s;
  s << stem << std::setw(3) << std::setfill('0') << i << suffix;
  return s.str();
}

// Options shared by every subcommand plus the record of one run.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
  RunConfig cfg;
  json inputs = json::array();

  // Default < config file < USB_SEED < flags.
  void resolve() {
    if (config_path) cfg = load_run_config(*config_path);
    if (const char* env = std::getenv("USB_SEED")) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
        apply_seed(v);
      } catch (const std::exception&) {
        throw ConfigError(std::string("USB_SEED is not an unsigned integer: '") + env + "'");
      }
    }
    if (seed) apply_seed(*seed);
    if (jobs) cfg.jobs = *jobs;
    if (out) cfg.output = *out;
    if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  }

  void apply_seed(std::uint64_t v) {
    if (command == "phantom") {
      cfg.dataset.seed = v;
    } else if (command == "train") {
      cfg.train.seed = v;
    } else {
      cfg.seed = v;
    }
  }

  void input(const std::string& role, const fs::path& path) {
    inputs.push_back({{"role", role}, {"path", path.string()}, {"sha256", sha256_file(path)}});
  }

  // Resolved config, seeds and input hashes; enough to rerun.
  void write_manifest(const fs::path& dir, const json& extra = json::object()) const {
    json outputs = json::array();
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "run.json") {
        names.push_back(fs::relative(e.path(), dir).generic_string());
      }
    }
    std::sort(names.begin(), names.end());
    for (const auto& n : names) outputs.push_back(n);
    json m{{"command", command}, {"argv", argv},     {"config", to_json(cfg)},
           {"inputs", inputs},   {"outputs", outputs}, {"details", extra}};
    write_json(dir / "run.json", m);
  }
};

struct LoadedModels {
  TrainState state;
  ConvDenoiser lesion;
  ConvDenoiser brain;
};

LoadedModels load_models(Run& run, const fs::path& checkpoint) {
  run.input("checkpoint", checkpoint);
  TrainState s = load_checkpoint(checkpoint);
  ConvDenoiser lesion(s.lesion, run.cfg.train.precision);
  ConvDenoiser brain(s.brain, run.cfg.train.precision);
  return {std::move(s), std::move(lesion), std::move(brain)};
}

// --- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::optional<std::size_t> train_count;
  std::optional<std::size_t> test_count;
  std::optional<std::string> intensity;
  int previews = 4;
};

void cmd_phantom(Run& run, const PhantomArgs& a) {
  if (a.train_count) run.cfg.dataset.train_count = *a.train_count;
  if (a.test_count) run.cfg.dataset.test_count = *a.test_count;
  if (a.intensity) run.cfg.dataset.lesion.intensity = lesion_intensity_from_string(*a.intensity);
  const fs::path root = run.cfg.output;
  write_dataset(root, run.cfg.dataset);
  if (a.previews > 0) {
    make_dir(root / "previews");
    const auto triples = load_split(root, "train");
    for (std::size_t i = 0; i < std::min<std::size_t>(triples.size(), static_cast<std::size_t>(a.previews)); ++i) {
      save_pgm(root / "previews" / numbered("train_", i, ".mask.pgm"), triples[i].mask.to_diffusion());
      save_pgm(root / "previews" / numbered("train_", i, ".path.pgm"), triples[i].pathological);
      save_pgm(root / "previews" / numbered("train_", i, ".healthy.pgm"), triples[i].healthy);
    }
  }
  run.write_manifest(root);
  std::cout << "dataset written to " << root << " (" << run.cfg.dataset.train_count << " train, "
            << run.cfg.dataset.test_count << " test)\n";
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::optional<std::string> data;
  std::optional<int> steps;
  std::optional<int> batch;
  std::optional<double> lr;
  std::optional<std::string> precision;
  std::optional<int> checkpoint_interval;
  std::optional<int> log_interval;
  std::optional<std::string> resume;
};

void cmd_train(Run& run, const TrainArgs& a) {
  TrainConfig& c = run.cfg.train;
  if (a.data) c.dataset = *a.data;
  if (a.steps) c.steps = *a.steps;
  if (a.batch) c.batch = *a.batch;
  if (a.lr) c.lr = *a.lr;
  if (a.precision) c.precision = precision_from_string(*a.precision);
  if (a.checkpoint_interval) c.checkpoint_interval = *a.checkpoint_interval;
  if (a.log_interval) c.log_interval = *a.log_interval;
  c.output = run.cfg.output;
  run.input("dataset_manifest", c.dataset / "manifest.json");
  std::optional<TrainState> initial;
  if (a.resume) {
    run.input("resume", *a.resume);
    initial = load_checkpoint(*a.resume);
  }
  const TrainResult r = train(c, std::move(initial));
  json extra{{"final_step", r.state.step}};
  if (!r.losses.empty()) {
    const LossTrend trend = loss_trend(r.losses);
    extra["loss_initial"] = trend.initial;
    extra["loss_final"] = trend.final;
  }
  run.write_manifest(c.output, extra);
  std::cout << "trained to step " << r.state.step << "; checkpoint " << (c.output / "final.usbc").string() << "\n";
}

// --- sample-uncond ---------------------------------------------------------

struct SampleArgs {
  std::string checkpoint;
  std::size_t n = 1;
  std::optional<int> steps;
  std::optional<std::string> conditioning;
  bool no_clamp = false;
  int size = 48;
  std::string mask;
};

void apply_sampler(Run& run, const SampleArgs& a) {
  if (a.steps) run.cfg.sampler.steps = *a.steps;
  if (a.conditioning) run.cfg.sampler.conditioning = pair_conditioning_from_string(*a.conditioning);
  if (a.no_clamp) run.cfg.sampler.clamp_estimates = false;
}

void cmd_sample_uncond(Run& run, const SampleArgs& a) {
  apply_sampler(run, a);
  if (a.size < 1) throw InvalidArgument("size must be >= 1");
  const LoadedModels m = load_models(run, a.checkpoint);
  const auto timeline = InferenceTimeline::subsample(m.state.schedule, run.cfg.sampler.steps);
  const PairModels models{m.lesion, m.brain};
  const SamplerOptions options{run.cfg.sampler.conditioning, run.cfg.sampler.clamp_estimates};
  std::vector<SamplePair> pairs(a.n);
  const Rng base(run.cfg.seed);
  const auto size = static_cast<std::size_t>(a.size);
  parallel_chunks(a.n, run.cfg.jobs, [&](std::size_t begin, std::size_t end) {
    std::vector<Rng> rngs = trajectory_rngs(base, begin, end - begin);
    auto chunk = sample_unconditional_pairs(models, timeline, size, size, rngs, options);
    for (std::size_t b = begin; b < end; ++b) pairs[b] = std::move(chunk[b - begin]);
  });
  const fs::path dir = run.cfg.output;
  make_dir(dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    save_field(dir / numbered("pair_", i, ".mask.ubt"), pairs[i].mask_field);
    save_field(dir / numbered("pair_", i, ".image.ubt"), pairs[i].image_field);
    save_pgm(dir / numbered("pair_", i, ".mask.pgm"), pairs[i].mask_field);
    save_pgm(dir / numbered("pair_", i, ".image.pgm"), pairs[i].image_field);
  }
  run.write_manifest(dir);
  std::cout << "wrote " << pairs.size() << " pairs to " << dir << "\n";
}

// --- sample-cond -----------------------------------------------------------

void cmd_sample_cond(Run& run, const SampleArgs& a) {
  apply_sampler(run, a);
  const LoadedModels m = load_models(run, a.checkpoint);
  run.input("mask", a.mask);
  const BinaryMask mask = binarize(load_field(a.mask), 0.5);
  const auto timeline = InferenceTimeline::subsample(m.state.schedule, run.cfg.sampler.steps);
  std::vector<Field> images(a.n);
  const Rng base(run.cfg.seed);
  parallel_chunks(a.n, run.cfg.jobs, [&](std::size_t begin, std::size_t end) {
    std::vector<Rng> rngs = trajectory_rngs(base, begin, end - begin);
    std::vector<BinaryMask> masks(end - begin, mask);
    auto chunk = sample_conditional_batch(m.brain, masks, timeline, rngs);
    for (std::size_t b = begin; b < end; ++b) images[b] = std::move(chunk[b - begin]);
  });
  const fs::path dir = run.cfg.output;
  make_dir(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    save_field(dir / numbered("image_", i, ".ubt"), images[i]);
    save_pgm(dir / numbered("image_", i, ".pgm"), images[i]);
  }
  run.write_manifest(dir);
  std::cout << "wrote " << images.size() << " images to " << dir << "\n";
}

// --- edit ------------------------------------------------------------------

struct GuidanceArgs {
  std::optional<double> alpha0;
  std::optional<double> k;
  std::optional<double> eta;
  std::optional<int> pool_window;
  std::optional<double> t_start;
  bool no_acg = false;
  bool no_lcg = false;
  bool randomize_start = false;
};

void apply_guidance(Run& run, const GuidanceArgs& g) {
  GuidanceConfig& c = run.cfg.guidance;
  if (g.alpha0) c.alpha0 = *g.alpha0;
  if (g.k) c.k = *g.k;
  if (g.eta) c.eta = *g.eta;
  if (g.pool_window) c.pool_window = *g.pool_window;
  if (g.t_start) c.t_start_frac = *g.t_start;
  if (g.no_acg) c.acg_enabled = false;
  if (g.no_lcg) c.lcg_enabled = false;
  if (g.randomize_start) c.randomize_start = true;
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

struct EditArgs {
  std::string checkpoint;
  std::string direction;
  std::string input;
  std::optional<std::string> mask;
  std::optional<int> steps;
  std::vector<int> snapshots;
  GuidanceArgs guidance;
};

void cmd_edit(Run& run, const EditArgs& a) {
  apply_guidance(run, a.guidance);
  if (a.steps) run.cfg.sampler.steps = *a.steps;
  const LoadedModels m = load_models(run, a.checkpoint);
  run.input("input", a.input);
  EditRequest req;
  req.direction = edit_direction_from_string(a.direction);
  req.source = load_field(a.input);
  if (a.mask) {
    run.input("mask", *a.mask);
    req.mask = binarize(load_field(*a.mask), 0.5);
  } else if (req.direction == EditDirection::H2P) {
    throw ConfigError("edit --direction h2p needs --mask");
  } else {
    req.mask = BinaryMask(req.source.height(), req.source.width());
  }
  const auto timeline = InferenceTimeline::subsample(m.state.schedule, run.cfg.sampler.steps);
  Rng rng = Rng(run.cfg.seed).substream(0);
  const EditResult r = edit(m.brain, req, run.cfg.guidance, m.state.schedule, timeline, rng, a.snapshots);
  const fs::path dir = run.cfg.output;
  make_dir(dir);
  save_field(dir / "edited.ubt", r.output);
  save_pgm(dir / "edited.pgm", r.output);
  json snapshots = json::array();
  for (const auto& [i, lambda] : r.lambda_snapshots) {
    const std::string name = "lambda_" + std::to_string(i);
    save_field(dir / (name + ".ubt"), lambda);
    save_pgm(dir / (name + ".pgm"), 2.0 * lambda - Field(lambda.height(), lambda.width(), 1.0));
    snapshots.push_back({{"index", i}, {"mean", mean(lambda)}, {"file", name + ".ubt"}});
  }
  json record{{"direction", to_string(req.direction)},
              {"start_index", r.start_index},
              {"start_step", timeline.step(r.start_index)},
              {"trajectory_substream", 0},
              {"l1_to_input", l1(r.output, req.source)},
              {"lambda", snapshots}};
  run.write_manifest(dir, record);
  std::cout << "edited image written to " << (dir / "edited.ubt").string() << " (L1 to input "
            << record["l1_to_input"].get<double>() << ")\n";
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string images;
  std::string reference;
  std::string split = "test";
  std::string kind = "healthy";
  std::string features = "downsample";
  int factor = 4;
  int dim = 64;
  int permutations = 200;
  bool paired = false;
};

std::vector<Field> load_image_dir(Run& run, const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".ubt" && name.find(".mask.") == std::string::npos &&
        name.rfind("lambda_", 0) != 0) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no images in " + dir.string());
  std::vector<Field> out;
  for (const auto& f : files) {
    run.input("image", f);
    out.push_back(load_field(f));
  }
  return out;
}

void cmd_eval(Run& run, const EvalArgs& a) {
  const std::vector<Field> images = load_image_dir(run, a.images);
  run.input("reference_manifest", fs::path(a.reference) / "manifest.json");
  const auto triples = load_split(a.reference, a.split);
  std::vector<Field> reference;
  for (const auto& t : triples) {
    if (a.kind == "healthy") {
      reference.push_back(t.healthy);
    } else if (a.kind == "path") {
      reference.push_back(t.pathological);
    } else {
      throw ConfigError("eval --kind must be healthy or path");
    }
  }
  auto featurize = [&](const std::vector<Field>& set) {
    if (a.features == "downsample") return downsample_features(set, a.factor);
    if (a.features == "projection") return random_projection_features(set, a.dim, run.cfg.seed);
    throw ConfigError("eval --features must be downsample or projection");
  };
  const FeatureEmbedding x = featurize(images);
  const FeatureEmbedding y = featurize(reference);
  const PermutationResult perm = permutation_test(x, y, {}, a.permutations, run.cfg.seed);
  json report{{"featurizer", x.featurizer},
              {"count", images.size()},
              {"reference_count", reference.size()},
              {"mmd2_rbf_median", perm.statistic},
              {"mmd2_permutation_p", perm.p_value},
              {"mmd2_null_q95", perm.null_q95},
              {"kid", kid(x, y, run.cfg.seed)},
              {"frechet", frechet_distance(moments(x), moments(y))}};
  if (a.paired) {
    if (images.size() > reference.size()) throw ConfigError("eval --paired needs at most one image per reference");
    json per = json::array();
    double sl1 = 0.0, sp = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const double l = l1(images[i], reference[i]);
      const double p = psnr(images[i], reference[i]);
      const double s = ssim(images[i], reference[i]);
      sl1 += l;
      sp += p;
      ss += s;
      per.push_back({{"index", i}, {"l1", l}, {"psnr", p}, {"ssim", s}});
    }
    const double n = static_cast<double>(images.size());
    report["pairs"] = per;
    report["mean_l1"] = sl1 / n;
    report["mean_psnr"] = sp / n;
    report["mean_ssim"] = ss / n;
  }
  const fs::path dir = run.cfg.output;
  make_dir(dir);
  write_json(dir / "report.json", report);
  run.write_manifest(dir);
  std::cout << report.dump(2) << "\n";
}

// --- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string checkpoint;
  std::string data;
  std::vector<std::string> toggles;
  std::vector<std::string> sweeps;
  std::vector<double> values;
  std::size_t cases = 20;
  std::size_t samples = 100;
  std::optional<int> steps;
  bool check = false;
  GuidanceArgs guidance;
};

json sweep_json(const std::vector<SweepPoint>& points) {
  json out = json::array();
  for (const auto& p : points) {
    out.push_back({{"value", p.value}, {"median_input_l1", p.median_input_l1},
                   {"median_inside_shift", p.median_inside_shift}});
  }
  return out;
}

void cmd_ablate(Run& run, const AblateArgs& a) {
  apply_guidance(run, a.guidance);
  if (a.steps) run.cfg.sampler.steps = *a.steps;
  if (a.toggles.empty() && a.sweeps.empty()) throw ConfigError("ablate needs --toggle or --sweep");
  const LoadedModels m = load_models(run, a.checkpoint);
  const auto timeline = InferenceTimeline::subsample(m.state.schedule, run.cfg.sampler.steps);
  run.input("data_manifest", fs::path(a.data) / "manifest.json");
  const DatasetSpec spec = read_dataset_manifest(a.data);
  const EditBench bench{m.brain, m.state.schedule, timeline, spec.lesion, run.cfg.seed};
  std::vector<Triple> cases;
  auto need_cases = [&] {
    if (cases.empty()) cases = lesion_cases(load_split(a.data, "test"), a.cases);
  };

  json table = json::object();
  bool ok = true;
  for (const auto& t : a.toggles) {
    if (t == "acg") {
      need_cases();
      const AcgAblation r = ablate_acg(bench, cases, run.cfg.guidance);
      table["acg"] = {{"median_outside_l1_with", r.median_l1_with},
                      {"median_outside_l1_without", r.median_l1_without},
                      {"median_psnr_with", r.median_psnr_with},
                      {"median_psnr_without", r.median_psnr_without},
                      {"holds", r.holds()}};
      ok = ok && r.holds();
    } else if (t == "lcg") {
      need_cases();
      const LcgAblation r = ablate_lcg(bench, cases, run.cfg.guidance);
      table["lcg"] = {{"inside_shift_with", r.with.inside_shift},
                      {"inside_shift_without", r.without.inside_shift},
                      {"fraction_with_ge_without", r.fraction},
                      {"holds", r.holds()}};
      ok = ok && r.holds();
    } else if (t == "onestep") {
      const auto train = load_split(a.data, "train");
      std::vector<Field> reference;
      for (const auto& tr : train) reference.push_back(tr.pathological);
      const OneStepAblation r = ablate_onestep({m.lesion, m.brain}, timeline, reference, a.samples, run.cfg.seed,
                                               run.cfg.sampler.clamp_estimates);
      table["onestep"] = {{"mmd2_estimates", r.mmd_estimates}, {"mmd2_noisy_state", r.mmd_noisy}, {"holds", r.holds()}};
      ok = ok && r.holds();
    } else {
      throw ConfigError("unknown toggle '" + t + "' (acg, lcg, onestep)");
    }
  }
  for (const auto& s : a.sweeps) {
    std::vector<double> values = a.values;
    if (values.empty()) {
      if (s == "alpha0") values = {5.0, 10.0, 20.0, 30.0};
      if (s == "k") values = {0.0, 0.25, 0.5, 1.0};
      if (s == "eta") values = {0.0, 0.5, 1.0};
    }
    if (s != "alpha0" && s != "k" && s != "eta") throw ConfigError("unknown sweep '" + s + "' (alpha0, k, eta)");
    need_cases();
    const auto points = sweep_guidance(bench, cases, run.cfg.guidance, s, values);
    table["sweep_" + s] = sweep_json(points);
    if (s == "alpha0") {
      table["sweep_alpha0_non_decreasing"] = non_decreasing_input_l1(points);
      ok = ok && non_decreasing_input_l1(points);
    }
  }
  const fs::path dir = run.cfg.output;
  make_dir(dir);
  write_json(dir / "ablation.json", table);
  run.write_manifest(dir);
  std::cout << table.dump(2) << "\n";
  if (a.check && !ok) throw CheckFailure("ablation: a directional property failed");
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  int seeds = 3;
  GradcheckOptions options;
};

void cmd_gradcheck(Run& run, const GradcheckArgs& a) {
  if (a.seeds < 1) throw ConfigError("gradcheck --seeds must be >= 1");
  json results = json::array();
  bool ok = true;
  for (int s = 0; s < a.seeds; ++s) {
    const auto seed = run.cfg.seed + static_cast<std::uint64_t>(s);
    const GradcheckResult r = run_gradcheck(seed, a.options);
    results.push_back({{"seed", seed},
                       {"checked", r.checked},
                       {"failures", r.failures},
                       {"worst_relative", r.worst_relative},
                       {"forward_error", r.forward_error}});
    std::cout << "seed " << seed << ": " << r.checked << " parameters, " << r.failures
              << " failures, worst relative error " << r.worst_relative << "\n";
    ok = ok && r.passed();
  }
  if (run.out) {
    const fs::path dir = run.cfg.output;
    make_dir(dir);
    write_json(dir / "gradcheck.json", results);
    run.write_manifest(dir);
  }
  if (!ok) throw CheckFailure("gradcheck failed");
}

int dispatch(std::vector<std::string> args);

// --- rerun -----------------------------------------------------------------

int cmd_rerun(const std::string& manifest_path, const std::optional<std::string>& out) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(manifest_path + ": " + e.what());
  }
  if (!m.contains("argv") || !m["argv"].is_array()) throw ConfigError(manifest_path + ": no argv");
  std::vector<std::string> args = m["argv"].get<std::vector<std::string>>();
  if (out) {
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] == "--out") args[i + 1] = *out;
    }
  }
  return dispatch(args);
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Paired lesion/brain diffusion toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Run run;
  run.argv = args;
  app.add_option("--config", run.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", run.seed, "Seed for this subcommand (overrides config and USB_SEED)");
  app.add_option("--jobs", run.jobs, "Maximum parallel trajectories");
  app.add_option("--out", run.out, "Output directory");

  PhantomArgs phantom;
  auto* sp = app.add_subcommand("phantom", "Build a synthetic phantom dataset");
  sp->add_option("--train-count", phantom.train_count);
  sp->add_option("--test-count", phantom.test_count);
  sp->add_option("--intensity", phantom.intensity, "hypo, hyper or mixed");
  sp->add_option("--previews", phantom.previews, "PGM previews of the first training triples");

  TrainArgs tr;
  auto* st = app.add_subcommand("train", "Train both denoisers");
  st->add_option("--data", tr.data, "Dataset directory");
  st->add_option("--steps", tr.steps);
  st->add_option("--batch", tr.batch);
  st->add_option("--lr", tr.lr);
  st->add_option("--precision", tr.precision, "f32 or f64");
  st->add_option("--checkpoint-interval", tr.checkpoint_interval);
  st->add_option("--log-interval", tr.log_interval);
  st->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  SampleArgs su;
  auto* ssu = app.add_subcommand("sample-uncond", "Generate mask/image pairs");
  ssu->add_option("--checkpoint", su.checkpoint)->required()->check(CLI::ExistingFile);
  ssu->add_option("--n", su.n, "Number of pairs");
  ssu->add_option("--steps", su.steps, "Inference steps K");
  ssu->add_option("--conditioning", su.conditioning, "estimates, lesion-on-noisy-image or noisy-state");
  ssu->add_flag("--no-clamp", su.no_clamp, "Do not clamp one-step estimates");
  ssu->add_option("--size", su.size, "Image side in pixels");

  SampleArgs sc;
  auto* ssc = app.add_subcommand("sample-cond", "Generate images for a given mask");
  ssc->add_option("--checkpoint", sc.checkpoint)->required()->check(CLI::ExistingFile);
  ssc->add_option("--mask", sc.mask, "Mask .ubt ({0,1} or +-1)")->required()->check(CLI::ExistingFile);
  ssc->add_option("--n", sc.n);
  ssc->add_option("--steps", sc.steps);

  auto add_guidance = [](CLI::App* sub, GuidanceArgs& g) {
    sub->add_option("--alpha0", g.alpha0);
    sub->add_option("--k", g.k);
    sub->add_option("--eta", g.eta);
    sub->add_option("--pool-window", g.pool_window);
    sub->add_option("--t-start", g.t_start, "Fraction of the timeline where noise is injected");
    sub->add_flag("--no-acg", g.no_acg);
    sub->add_flag("--no-lcg", g.no_lcg);
    sub->add_flag("--randomize-start", g.randomize_start);
  };

  EditArgs ed;
  auto* se = app.add_subcommand("edit", "Pathology/healthy editing");
  se->add_option("--checkpoint", ed.checkpoint)->required()->check(CLI::ExistingFile);
  se->add_option("--direction", ed.direction, "p2h or h2p")->required();
  se->add_option("--input", ed.input)->required()->check(CLI::ExistingFile);
  se->add_option("--mask", ed.mask)->check(CLI::ExistingFile);
  se->add_option("--steps", ed.steps);
  se->add_option("--snapshot", ed.snapshots, "Inference indices whose guidance weight is saved");
  add_guidance(se, ed.guidance);

  EvalArgs ev;
  auto* sv = app.add_subcommand("eval", "Metrics of an image set against a dataset split");
  sv->add_option("--images", ev.images)->required()->check(CLI::ExistingDirectory);
  sv->add_option("--reference", ev.reference, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  sv->add_option("--split", ev.split);
  sv->add_option("--kind", ev.kind, "healthy or path");
  sv->add_option("--features", ev.features, "downsample or projection");
  sv->add_option("--factor", ev.factor);
  sv->add_option("--dim", ev.dim);
  sv->add_option("--permutations", ev.permutations);
  sv->add_flag("--paired", ev.paired, "Also compare image i with reference i");

  AblateArgs ab;
  auto* sa = app.add_subcommand("ablate", "Editing and sampling ablations");
  sa->add_option("--checkpoint", ab.checkpoint)->required()->check(CLI::ExistingFile);
  sa->add_option("--data", ab.data)->required()->check(CLI::ExistingDirectory);
  sa->add_option("--toggle", ab.toggles, "acg, lcg, onestep");
  sa->add_option("--sweep", ab.sweeps, "alpha0, k, eta");
  sa->add_option("--values", ab.values, "Sweep values");
  sa->add_option("--cases", ab.cases);
  sa->add_option("--samples", ab.samples, "Samples per mode for onestep");
  sa->add_option("--steps", ab.steps);
  sa->add_flag("--check", ab.check, "Exit 4 if a directional property fails");
  add_guidance(sa, ab.guidance);

  GradcheckArgs gc;
  auto* sg = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  sg->add_option("--seeds", gc.seeds);
  sg->add_option("--params", gc.options.parameters);
  sg->add_option("--size", gc.options.size);
  sg->add_option("--tolerance", gc.options.tolerance, "Largest accepted relative error");

  std::string manifest;
  auto* sr = app.add_subcommand("rerun", "Repeat a run from its run.json");
  sr->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (sr->parsed()) return cmd_rerun(manifest, run.out);

  for (auto* sub : app.get_subcommands()) run.command = sub->get_name();
  const bool needs_out = run.command != "gradcheck";
  if (needs_out && !run.out) {
    throw ConfigError(run.command + " needs --out");
  }
  run.resolve();
  if (run.command == "phantom") cmd_phantom(run, phantom);
  if (run.command == "train") cmd_train(run, tr);
  if (run.command == "sample-uncond") cmd_sample_uncond(run, su);
  if (run.command == "sample-cond") cmd_sample_cond(run, sc);
  if (run.command == "edit") cmd_edit(run, ed);
  if (run.command == "eval") cmd_eval(run, ev);
  if (run.command == "ablate") cmd_ablate(run, ab);
  if (run.command == "gradcheck") cmd_gradcheck(run, gc);
  return 0;
}

}  // namespace
}  // namespace usb::tools

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return usb::tools::dispatch(args);
  } catch (const usb::tools::CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return usb::tools::kExitCheck;
  } catch (const usb::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return usb::tools::kExitIo;
  } catch (const usb::Error& e) {
    // Config, argument and shape errors all mean the request was invalid.
    std::cerr << "config error: " << e.what() << "\n";
    return usb::tools::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
