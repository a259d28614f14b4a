// Thresholding baselines: fixed-percentile thresholding (FTLV) and adaptive
// dual-centroid thresholding (Heliometric Stereo, HS), plus the parameter
// sweep used to report Suggested / Global / Optimal strategies.
#pragma once

#include "shadowem/core.hpp"
#include "shadowem/metrics.hpp"

#include <span>
#include <string>
#include <vector>

namespace shadowem {

struct FtlvParams {
  double theta_p = 0.2;  // percentile fraction
  double theta_k = 1.5;  // threshold multiplier

  void validate() const;
};

struct HsParams {
  double theta_p = 0.8;         // percentile fraction for the initial centroids
  double theta_lambda = 0.05;   // centroid smoothing factor

  void validate() const;
};

/// Nearest-rank lower percentile: the value of rank ceil(fraction * n),
/// clamped to [1, n], in ascending order.
double lower_percentile(std::span<const double> values, double fraction);

/// Labels for one trajectory; lit iff I_t >= theta_k * percentile.
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> ftlv_labels(const Eigen::Ref<const Eigen::VectorXd>& trajectory,
                                                           const FtlvParams& params);

/// Labels for one chronological trajectory: centroids start at the upper and
/// lower percentile, are smoothed forward and then backward, and each frame is
/// lit iff it is no farther from the lit centroid than from the shadow one.
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> hs_labels(const Eigen::Ref<const Eigen::VectorXd>& trajectory,
                                                         const HsParams& params);

ShadowVolume ftlv_shadows(const ImageSequence& gray, const FtlvParams& params, int workers = 0);
ShadowVolume hs_shadows(const ImageSequence& gray, const HsParams& params, int workers = 0);

enum class Baseline { Ftlv, Hs };

std::string baseline_name(Baseline algo);

/// Candidate values per parameter. theta_k applies to FTLV, theta_lambda to HS.
struct SweepGrid {
  std::vector<double> theta_p;
  std::vector<double> theta_k;
  std::vector<double> theta_lambda;

  static SweepGrid standard();
};

struct SweepScene {
  std::string name;
  ImageSequence gray;
  LabelSet labels;
};

struct SweepPoint {
  double theta_p = 0.0;
  double second = 0.0;  // theta_k (FTLV) or theta_lambda (HS)
  std::vector<double> accuracy;  // per scene, fraction
  double mean_accuracy = 0.0;
};

struct SweepTable {
  Baseline algo = Baseline::Ftlv;
  std::vector<SweepPoint> points;
  std::vector<TableRow> rows;  // Suggested / Global / Optimal per scene and aggregates
};

/// Evaluates every grid point on every scene. Rejects an empty grid.
SweepTable parameter_sweep(const std::vector<SweepScene>& scenes, Baseline algo,
                           const SweepGrid& grid, int workers = 0);

}  // namespace shadowem
