#include "shadowem/cli.hpp"

#include "shadowem/baselines.hpp"
#include "shadowem/em.hpp"
#include "shadowem/io.hpp"
#include "shadowem/metrics.hpp"
#include "shadowem/parallel.hpp"
#include "shadowem/solar.hpp"
#include "shadowem/synth.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>

namespace shadowem::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename F>
void check_params(F&& validate) {
  try {
    validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

// Sequences in color are repaired for saturation before conversion to gray.
struct Prepared {
  ImageSequence working;
  ImageSequence gray;
  LightingTable lights;
  Mask force_lit;
  Index repaired = 0;
};

Prepared prepare(const fs::path& manifest) {
  Prepared p;
  p.working = load_sequence(manifest);
  p.working.validate();
  p.lights = lighting_table(p.working);
  if (p.working.is_color()) {
    SaturationRepair repair = repair_saturation(p.working);
    p.working = std::move(repair.sequence);
    p.force_lit = std::move(repair.force_lit);
    p.repaired = repair.repaired_values;
  } else {
    p.force_lit = Mask::Constant(p.working.pixel_count(), false);
  }
  p.gray = to_grayscale(p.working);
  return p;
}

// --- estimate --------------------------------------------------------------

struct EstimateArgs {
  std::string manifest;
  std::string out;
  int max_iterations = 50;
  int workers = 0;
};

int estimate(const EstimateArgs& a, std::ostream& out) {
  EmConfig config;
  config.max_iterations = a.max_iterations;
  config.workers = a.workers;
  check_params([&] { config.validate(); });

  const Prepared p = prepare(a.manifest);
  if (p.lights.daylight_count() == 0) throw NumericalFailure("no frame has the sun above the horizon");
  const EmResult result = run_em(p.gray, p.lights, config, &p.force_lit);
  const PixelModel model = finalize_color(p.working, p.lights, result);

  const fs::path dir(a.out);
  save_shadow_volume(result.shadows, dir / "shadows");
  save_model(model, p.gray.grid, dir / "model");

  std::map<int, Index> histogram;
  for (Index x = 0; x < result.iterations.size(); ++x) ++histogram[result.iterations[x]];
  const Index p_count = p.gray.pixel_count();
  const Index defined = model.defined.count();
  std::string summary = "frames: " + std::to_string(p.gray.frame_count()) +
                        "\ndaylight_frames: " + std::to_string(p.lights.daylight_count()) +
                        "\npixels: " + std::to_string(p_count) +
                        "\nmax_iterations: " + std::to_string(config.max_iterations) +
                        "\nconverged: " + std::to_string(p_count - result.unconverged_count()) +
                        "\nunconverged: " + std::to_string(result.unconverged_count()) +
                        "\nrank_deficient: " + std::to_string(result.rank_deficient_count()) +
                        "\nforce_lit: " + std::to_string(p.force_lit.count()) +
                        "\nrepaired_saturated_values: " + std::to_string(p.repaired) +
                        "\ndefined_models: " + std::to_string(defined) + "\n# iterations,pixels\n";
  for (const auto& [iters, count] : histogram) summary += std::to_string(iters) + "," + std::to_string(count) + "\n";
  write_text(dir / "summary.txt", summary);

  out << "pixels " << p_count << ", frames " << p.gray.frame_count() << ", unconverged "
      << result.unconverged_count() << ", rank-deficient " << result.rank_deficient_count() << "\n";
  if (defined == 0) throw NumericalFailure("no pixel admits a model; outputs hold only NaN maps");
  return kSuccess;
}

// --- baseline --------------------------------------------------------------

struct BaselineArgs {
  std::string algo;
  std::string manifest;
  std::string out;
  std::optional<double> theta_p;
  std::optional<double> theta_k;
  std::optional<double> theta_lambda;
  int workers = 0;
};

int baseline(const BaselineArgs& a, std::ostream& out) {
  ShadowVolume volume;
  if (a.algo == "ftlv") {
    if (a.theta_lambda) throw UsageError("--theta-lambda applies to hs only");
    FtlvParams params;
    params.theta_p = a.theta_p.value_or(params.theta_p);
    params.theta_k = a.theta_k.value_or(params.theta_k);
    check_params([&] { params.validate(); });
    volume = ftlv_shadows(to_grayscale(load_sequence(a.manifest)), params, a.workers);
  } else {
    if (a.theta_k) throw UsageError("--theta-k applies to ftlv only");
    HsParams params;
    params.theta_p = a.theta_p.value_or(params.theta_p);
    params.theta_lambda = a.theta_lambda.value_or(params.theta_lambda);
    check_params([&] { params.validate(); });
    volume = hs_shadows(to_grayscale(load_sequence(a.manifest)), params, a.workers);
  }
  volume.converged.setConstant(true);
  save_shadow_volume(volume, fs::path(a.out) / "shadows");
  out << a.algo << ": wrote " << volume.frame_count() << " masks\n";
  return kSuccess;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string scene = "wall";
  std::string descriptor;
  std::optional<int> size;
  std::optional<int> sky_rows;
  int frames = 300;
  double span_days = 365.0;
  std::uint64_t seed = 1;
  std::string out;
  std::string response;
};

int synth(const SynthArgs& a, std::ostream& out) {
  SceneDescriptor d;
  if (!a.descriptor.empty()) {
    d = read_scene_descriptor(a.descriptor);
  } else {
    d.scene = a.scene;
    d.seed = a.seed;
  }
  if (a.size) d.size = *a.size;
  if (a.sky_rows) d.sky_rows = *a.sky_rows;
  if (a.frames < 1) throw UsageError("--frames must be >= 1");
  if (!(a.span_days > 0.0)) throw UsageError("--span must be positive");
  std::optional<ResponseFunction> response;
  if (!a.response.empty()) {
    try {
      response = ResponseFunction::parse(a.response);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  SyntheticScene scene;
  try {
    scene = make_scene(d);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const UtcTime start = experiment_window(d.location, d.start, a.span_days, a.seed);
  const auto instants = sample_daylight(d.location, start, a.span_days, a.frames, a.seed);
  if (!instants) {
    throw DataError("a " + std::to_string(a.span_days) + "-day window from " + format_utc(start) + " holds fewer than " +
                    std::to_string(a.frames) + " daylight instants");
  }
  const Rendering r = render_sequence(scene, *instants);

  const fs::path dir(a.out);
  save_sequence(r.color, dir);
  ShadowVolume truth = r.truth;
  truth.converged.setConstant(true);
  save_shadow_volume(truth, dir / "truth");
  save_labels(labels_from_volume(truth), dir / "labels");
  write_scene_descriptor(dir / "scene.txt", d);
  if (response) {
    ImageSequence distorted = apply_response(r.color, *response);
    for (Eigen::MatrixXd& channel : distorted.channels) channel = channel.array().round().matrix();
    save_sequence(distorted, dir / "distorted");
  }
  write_text(dir / "synth.txt", "frames: " + std::to_string(a.frames) + "\nspan_days: " + std::to_string(a.span_days) +
                                    "\nseed: " + std::to_string(a.seed) + "\nwindow_start: " + format_utc(start) +
                                    "\nclipped_values: " + std::to_string(r.clipped_values) +
                                    "\nresponse: " + (response ? response->name() : std::string("none")) + "\n");
  out << d.scene << ": " << a.frames << " frames, " << r.clipped_values << " clipped values\n";
  return kSuccess;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::vector<std::string> scenes;
  std::string algo = "both";
  std::vector<double> theta_p;
  std::vector<double> theta_k;
  std::vector<double> theta_lambda;
  std::string out;
  int workers = 0;
};

int sweep(const SweepArgs& a, std::ostream& out) {
  SweepGrid grid = SweepGrid::standard();
  if (!a.theta_p.empty()) grid.theta_p = a.theta_p;
  if (!a.theta_k.empty()) grid.theta_k = a.theta_k;
  if (!a.theta_lambda.empty()) grid.theta_lambda = a.theta_lambda;
  for (double p : grid.theta_p) check_params([&] { HsParams{p, 0.5}.validate(); });
  for (double k : grid.theta_k) check_params([&] { FtlvParams{0.5, k}.validate(); });
  for (double l : grid.theta_lambda) check_params([&] { HsParams{0.5, l}.validate(); });

  std::vector<SweepScene> scenes;
  for (const std::string& s : a.scenes) {
    const fs::path dir(s);
    SweepScene scene;
    scene.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    scene.gray = to_grayscale(load_sequence(dir / "manifest.txt"));
    scene.labels = load_labels(dir / "labels", &scene.gray.timestamps);
    scenes.push_back(std::move(scene));
  }
  std::vector<TableRow> rows;
  for (Baseline algo : {Baseline::Ftlv, Baseline::Hs}) {
    if (a.algo != "both" && a.algo != baseline_name(algo)) continue;
    SweepTable table = parameter_sweep(scenes, algo, grid, a.workers);
    rows.insert(rows.end(), table.rows.begin(), table.rows.end());
  }
  rows = sorted_rows(std::move(rows));
  if (!a.out.empty()) write_table_csv(a.out, rows);
  out << format_table(rows);
  return kSuccess;
}

// --- score -----------------------------------------------------------------

struct ScoreArgs {
  std::string masks;
  std::string labels;
  std::string algo = "em";
  std::string strategy = kParameterFree;
  std::string scene;
  std::string out;
};

int score_command(const ScoreArgs& a, std::ostream& out) {
  const ShadowVolume volume = load_shadow_volume(a.masks);
  const LabelSet labels = load_labels(a.labels, &volume.timestamps);
  const AccuracyReport report = score(volume, labels);
  out << "accuracy " << percent(report.accuracy) << "\nmacro_accuracy " << percent(report.macro_accuracy)
      << "\nlabeled " << report.labeled() << " (lit " << report.lit << ", shadow " << report.shadow << ", unknown "
      << report.unknown << ")\n";
  if (!a.out.empty()) {
    const std::string scene = a.scene.empty() ? fs::path(a.labels).parent_path().filename().string() : a.scene;
    write_table_csv(a.out, {{a.algo, a.strategy, scene.empty() ? std::string("scene") : scene,
                             100.0 * report.accuracy}});
  }
  return kSuccess;
}

// --- report ----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> csv;
  std::string out;
};

int report(const ReportArgs& a, std::ostream& out) {
  std::vector<TableRow> rows;
  for (const std::string& path : a.csv) {
    std::vector<TableRow> more = read_table_csv(path);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  rows = sorted_rows(std::move(rows));
  if (!a.out.empty()) write_table_csv(a.out, rows);
  out << format_table(rows);
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shadow estimation for geolocated time-lapse imagery", "shadowem"};
  app.require_subcommand(1, 1);

  EstimateArgs est;
  auto* est_cmd = app.add_subcommand("estimate", "Run EM on a sequence and write masks and model maps");
  est_cmd->add_option("--manifest", est.manifest, "Sequence manifest")->required();
  est_cmd->add_option("--out", est.out, "Output directory")->required();
  est_cmd->add_option("--max-iters", est.max_iterations, "EM iteration cap")->capture_default_str();
  est_cmd->add_option("--workers", est.workers, "Worker threads (0 = all available)")->capture_default_str();

  BaselineArgs base;
  auto* base_cmd = app.add_subcommand("baseline", "Threshold baselines");
  base_cmd->add_option("--algo", base.algo, "ftlv or hs")->required()->check(CLI::IsMember({"ftlv", "hs"}));
  base_cmd->add_option("--manifest", base.manifest, "Sequence manifest")->required();
  base_cmd->add_option("--out", base.out, "Output directory")->required();
  base_cmd->add_option("--theta-p", base.theta_p, "Percentile (default 0.2 ftlv, 0.8 hs)");
  base_cmd->add_option("--theta-k", base.theta_k, "FTLV multiplier (default 1.5)");
  base_cmd->add_option("--theta-lambda", base.theta_lambda, "HS centroid retention (default 0.05)");
  base_cmd->add_option("--workers", base.workers, "Worker threads (0 = all available)");

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "Render a synthetic sequence with ground truth");
  auto* scene_opt = syn_cmd->add_option("--scene", syn.scene, "wall, city or hills")->capture_default_str();
  syn_cmd->add_option("--descriptor", syn.descriptor, "Scene descriptor file")->excludes(scene_opt);
  syn_cmd->add_option("--size", syn.size, "Grid size in pixels");
  syn_cmd->add_option("--sky-rows", syn.sky_rows, "Rows at the top treated as sky");
  syn_cmd->add_option("--frames", syn.frames, "Frame count")->capture_default_str();
  syn_cmd->add_option("--span", syn.span_days, "Window length in days")->capture_default_str();
  syn_cmd->add_option("--seed", syn.seed, "Random seed")->capture_default_str();
  syn_cmd->add_option("--out", syn.out, "Output directory")->required();
  syn_cmd->add_option("--response", syn.response, "identity, gamma:G or cubic:K");

  SweepArgs swp;
  auto* swp_cmd = app.add_subcommand("sweep", "Grid-search baseline parameters against labels");
  swp_cmd->add_option("--scenes", swp.scenes, "Scene directories holding manifest.txt and labels/")
      ->required()
      ->expected(1, -1);
  swp_cmd->add_option("--algo", swp.algo, "ftlv, hs or both")
      ->check(CLI::IsMember({"ftlv", "hs", "both"}))
      ->capture_default_str();
  swp_cmd->add_option("--theta-p", swp.theta_p, "theta_p candidates")->expected(1, -1);
  swp_cmd->add_option("--theta-k", swp.theta_k, "theta_k candidates")->expected(1, -1);
  swp_cmd->add_option("--theta-lambda", swp.theta_lambda, "theta_lambda candidates")->expected(1, -1);
  swp_cmd->add_option("--out", swp.out, "CSV output");
  swp_cmd->add_option("--workers", swp.workers, "Worker threads (0 = all available)");

  ScoreArgs sc;
  auto* sc_cmd = app.add_subcommand("score", "Score a shadow volume against labels");
  sc_cmd->add_option("--masks", sc.masks, "Shadow volume directory")->required();
  sc_cmd->add_option("--labels", sc.labels, "Label directory")->required();
  sc_cmd->add_option("--algo", sc.algo, "Algorithm name for the CSV row")->capture_default_str();
  sc_cmd->add_option("--strategy", sc.strategy, "Strategy name for the CSV row")->capture_default_str();
  sc_cmd->add_option("--scene", sc.scene, "Scene name for the CSV row");
  sc_cmd->add_option("--out", sc.out, "CSV output");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Merge accuracy CSVs into the summary table");
  rep_cmd->add_option("--csv", rep.csv, "Input CSV files")->required()->expected(1, -1);
  rep_cmd->add_option("--out", rep.out, "Merged CSV output");

  std::vector<std::string> storage{"shadowem"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*est_cmd) return estimate(est, out);
    if (*base_cmd) return baseline(base, out);
    if (*syn_cmd) return synth(syn, out);
    if (*swp_cmd) return sweep(swp, out);
    if (*sc_cmd) return score_command(sc, out);
    if (*rep_cmd) return report(rep, out);
  } catch (const UsageError& e) {
    err << "shadowem: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalFailure& e) {
    err << "shadowem: numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const IoError& e) {
    err << "shadowem: " << io_error_name(e.kind()) << ": " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "shadowem: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace shadowem::cli
