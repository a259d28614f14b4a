// Parameter-free expectation-maximization shadow estimation.
//
// Every pixel is solved independently. The E-step fits the auxiliary unknowns
// (a, b, c, d) of the Lambertian model with skylight by linear least squares
// given the current shadow labels; the M-step relabels each observation by
// comparing the lit and shadowed reconstruction residuals. Frames with the sun
// below the horizon never enter a linear system and are always labeled
// shadowed.
#pragma once

#include "shadowem/core.hpp"

namespace shadowem {

struct EmConfig {
  int max_iterations = 50;
  double rank_tolerance = 1e-8;  // relative singular-value cutoff
  int workers = 0;               // <= 0: all available

  void validate() const;
};

struct EmResult {
  ShadowVolume shadows;
  PixelModel model;
  Eigen::VectorXi iterations;  // iteration at which each pixel stopped
  Mask rank_deficient;
  Mask force_lit;

  Index unconverged_count() const { return (!shadows.converged).count(); }
  Index rank_deficient_count() const { return rank_deficient.count(); }
};

/// n x 4 rows [S_t L_t^T, 1] for the daylight frames of one pixel.
using DesignMatrix = Eigen::Matrix<double, Eigen::Dynamic, 4>;

template <typename Labels>
DesignMatrix design_matrix(const LightingTable& lights, const Eigen::MatrixBase<Labels>& labels) {
  const Index rows = lights.daylight_count();
  DesignMatrix a(rows, 4);
  Index k = 0;
  for (Index t = 0; t < lights.frame_count(); ++t) {
    if (!lights.above_horizon[t]) continue;
    if (labels(t)) {
      a.template block<1, 3>(k, 0) = lights.directions.col(t).transpose();
    } else {
      a.template block<1, 3>(k, 0).setZero();
    }
    a(k, 3) = 1.0;
    ++k;
  }
  return a;
}

/// Number of singular values above `relative_tolerance` times the largest.
int numerical_rank(const DesignMatrix& a, double relative_tolerance);

/// S = 1 everywhere except the darkest daylight frame of each pixel (earliest
/// on ties). Night frames start shadowed.
ShadowVolume initialize_shadows(const ImageSequence& gray, const LightingTable& lights);
/// Same, treating every frame as daylight.
ShadowVolume initialize_shadows(const ImageSequence& gray);

/// Relabels the brightest shadowed daylight frame of pixel x as lit until its
/// design matrix has full rank. Returns false when every daylight frame is lit
/// and the system is still singular.
bool repair_rank(const ImageSequence& gray, const LightingTable& lights, ShadowVolume& shadows,
                 Index x, const EmConfig& config);

/// Least-squares fit of (a, b, c, d) for every pixel. Pixels whose system is
/// singular, or whose fitted albedo vanishes, are left undefined in the result.
PixelModel expectation_step(const ImageSequence& gray, const LightingTable& lights,
                            const ShadowVolume& shadows, const EmConfig& config);

/// Residual-comparison relabeling. Undefined pixels keep their labels from
/// `previous`.
ShadowVolume maximization_step(const ImageSequence& gray, const LightingTable& lights,
                               const PixelModel& model, const ShadowVolume& previous,
                               int workers = 0);

/// Full EM driver. `force_lit`, when given, marks pixels fixed as directly lit
/// (see repair_saturation); they are fitted once and never relabeled.
EmResult run_em(const ImageSequence& gray, const LightingTable& lights, const EmConfig& config,
                const Mask* force_lit = nullptr);

struct SaturationRepair {
  ImageSequence sequence;
  Mask force_lit;
  Index repaired_values = 0;
};

/// Replaces saturated (255) channels with the value implied by the pixel's
/// mean unsaturated color and the frame's least-squares brightness. Pixels
/// that are pure white in every frame are reported as force-lit.
SaturationRepair repair_saturation(const ImageSequence& color);

/// Per-channel albedo as the mean ratio of observed intensity to modeled
/// shading, over daylight frames with shading >= 1e-9.
PixelModel finalize_color(const ImageSequence& color, const LightingTable& lights,
                          const EmResult& result);

}  // namespace shadowem
