// Synthetic outdoor scenes: heightfield geometry viewed top-down, per-pixel
// albedo and skylight, Lambertian rendering under solar lighting with cast
// and attached shadows, camera response distortion and the sequence-length
// experiment.
#pragma once

#include "shadowem/core.hpp"
#include "shadowem/em.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace shadowem {

/// Generator inputs for one of the shipped scenes.
struct SceneDescriptor {
  std::string scene = "wall";  // wall | city | hills
  int size = 64;
  std::uint64_t seed = 1;
  Geolocation location{38.63, -90.20};
  UtcTime start = std::chrono::sys_days{std::chrono::year{2012} / 1 / 1};
  double exposure = 200.0;  // intensity of unit albedo under unit shading
  int sky_rows = 0;         // rows at the top of the image treated as sky
};

const std::vector<std::string>& scene_names();

/// Heights on the image grid; row 0 is the northern edge, columns run east.
class Heightfield {
 public:
  Heightfield() = default;
  explicit Heightfield(Eigen::MatrixXd heights);

  const Eigen::MatrixXd& heights() const { return heights_; }
  Index rows() const { return heights_.rows(); }
  Index cols() const { return heights_.cols(); }

  /// Bilinear height at fractional (row, col), clamped to the grid.
  double at(double row, double col) const;

  /// True when the ray from the surface at (row, col) toward `sun` passes
  /// below the surface. Marches in half-pixel horizontal steps.
  bool occluded(Index row, Index col, const Eigen::Vector3d& sun) const;

  /// Unit normals per grid cell (row-major columns). Central differences,
  /// except across height discontinuities where the flatter one-sided
  /// difference is used.
  Eigen::Matrix3Xd normals() const;

 private:
  Eigen::MatrixXd heights_;
  double max_height_ = 0.0;
};

struct SyntheticScene {
  SceneDescriptor descriptor;
  Heightfield terrain;
  Eigen::Matrix3Xd albedo;    // RGB in [0, 1], one column per grid cell
  Eigen::VectorXd skylight;   // per grid cell, >= 0
  Eigen::Matrix3Xd normals;   // per grid cell
  PixelGrid grid;

  int width() const { return grid.width(); }
  int height() const { return grid.height(); }
};

/// Builds a shipped scene; throws std::invalid_argument for unknown names.
SyntheticScene make_scene(const SceneDescriptor& descriptor);

struct RenderOptions {
  bool quantize = true;  // round to whole intensities after clipping
};

struct Rendering {
  ImageSequence color;
  ShadowVolume truth;
  LightingTable lights;
  std::vector<Eigen::MatrixXd> unclipped;  // per channel, before clipping/rounding
  Index clipped_values = 0;
};

/// Renders one frame per instant. Ground truth is shadowed where the sun is
/// occluded or faces away from the surface. Throws if any instant has the
/// sun below the horizon or the scene has no albedo.
Rendering render_sequence(const SyntheticScene& scene, const std::vector<UtcTime>& instants,
                          const RenderOptions& options = {});

/// `count` distinct instants (60 s granularity or coarser) in
/// [start, start + span_days] with solar elevation above `min_elevation_deg`,
/// sorted. Empty when the window holds fewer candidates than `count`.
std::optional<std::vector<UtcTime>> sample_daylight(const Geolocation& location, UtcTime start,
                                                    double span_days, int count, std::uint64_t seed,
                                                    double min_elevation_deg = 5.0);

/// Start of a `span_days` window inside the year after `period_start`.
/// Windows shorter than a day are centered on local solar noon.
UtcTime experiment_window(const Geolocation& location, UtcTime period_start, double span_days,
                          std::uint64_t seed);

/// Monotone camera response on [0, 1] with f(0) = 0 and f(1) = 1.
class ResponseFunction {
 public:
  enum class Family { Identity, Gamma, Cubic };

  static ResponseFunction identity() { return {Family::Identity, 1.0}; }
  /// f(x) = x^g, g > 0.
  static ResponseFunction gamma(double g);
  /// f(x) = x + k x (1 - x)^2, -1 < k < 3.
  static ResponseFunction cubic(double k);
  /// "identity", "gamma:<g>" or "cubic:<k>".
  static ResponseFunction parse(std::string_view text);

  double operator()(double x) const;
  std::string name() const;
  Family family() const { return family_; }
  double parameter() const { return parameter_; }

 private:
  ResponseFunction(Family family, double parameter) : family_(family), parameter_(parameter) {}

  Family family_;
  double parameter_;
};

/// The shipped robustness family: gamma curves between 0.4 and 2.5 plus
/// cubic perturbations of the identity.
std::vector<ResponseFunction> response_family();

/// Maps every intensity x to 255 f(x / 255). Intensities must lie in [0, 255].
ImageSequence apply_response(const ImageSequence& seq, const ResponseFunction& f);

struct SubsampleCell {
  int count = 0;
  double span_days = 0.0;
  bool feasible = false;
  std::vector<double> trial_accuracy;  // fractions
  double mean = 0.0;
  double median = 0.0;
};

/// For every (count, span) pair: sample frames, render, run EM and score
/// against ground truth, `trials` times with seeded frame selection.
std::vector<SubsampleCell> subsample_experiment(const SyntheticScene& scene, const std::vector<int>& counts,
                                                const std::vector<double>& spans_days, int trials,
                                                std::uint64_t seed, const EmConfig& config);

/// Shadow accuracy of EM on a rendering, scored on every pixel and frame.
double em_accuracy(const Rendering& rendering, const EmConfig& config);

}  // namespace shadowem
