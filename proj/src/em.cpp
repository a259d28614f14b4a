#include "shadowem/em.hpp"

#include "shadowem/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

namespace shadowem {

namespace {

using LabelVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

constexpr double kSaturated = 255.0;

Eigen::VectorXd daylight_values(const Eigen::Ref<const Eigen::VectorXd>& trajectory,
                                const LightingTable& lights) {
  Eigen::VectorXd b(lights.daylight_count());
  Index k = 0;
  for (Index t = 0; t < lights.frame_count(); ++t) {
    if (lights.above_horizon[t]) b[k++] = trajectory[t];
  }
  return b;
}

std::optional<Eigen::Vector4d> solve_labels(const Eigen::VectorXd& day_intensity,
                                            const LightingTable& lights, const LabelVector& labels,
                                            double tolerance) {
  const DesignMatrix a = design_matrix(lights, labels);
  if (numerical_rank(a, tolerance) < 4) return std::nullopt;
  return Eigen::Vector4d(a.colPivHouseholderQr().solve(day_intensity));
}

bool repair_labels(const Eigen::Ref<const Eigen::VectorXd>& trajectory, const LightingTable& lights,
                   LabelVector& labels, double tolerance) {
  for (;;) {
    if (numerical_rank(design_matrix(lights, labels), tolerance) == 4) return true;
    Index brightest = -1;
    for (Index t = 0; t < lights.frame_count(); ++t) {
      if (!lights.above_horizon[t] || labels[t] != 0) continue;
      if (brightest < 0 || trajectory[t] > trajectory[brightest]) brightest = t;
    }
    if (brightest < 0) return false;
    labels[brightest] = 1;
  }
}

// Lit iff |I - rho (max(L.N, 0) + A)|^2 <= |I - rho A|^2.
template <typename Out>
void relabel(const Eigen::Ref<const Eigen::VectorXd>& trajectory, const LightingTable& lights,
             double rho, const Eigen::Vector3d& normal, double skylight, Out&& labels) {
  for (Index t = 0; t < lights.frame_count(); ++t) {
    if (!lights.above_horizon[t]) {
      labels(t) = 0;
      continue;
    }
    const double sun = std::max(lights.directions.col(t).dot(normal), 0.0);
    const double r1 = std::pow(trajectory[t] - rho * (sun + skylight), 2);
    const double r0 = std::pow(trajectory[t] - rho * skylight, 2);
    labels(t) = r1 <= r0 ? 1 : 0;
  }
}

double hinge_residual(const Eigen::Ref<const Eigen::VectorXd>& trajectory, const LightingTable& lights,
                      const LabelVector& labels, const Eigen::Vector4d& abcd) {
  double total = 0.0;
  for (Index t = 0; t < lights.frame_count(); ++t) {
    if (!lights.above_horizon[t]) continue;
    const double sun = labels[t] ? std::max(lights.directions.col(t).dot(abcd.head<3>()), 0.0) : 0.0;
    total += std::pow(trajectory[t] - sun - abcd[3], 2);
  }
  return total;
}

LabelVector initial_labels(const Eigen::Ref<const Eigen::VectorXd>& trajectory, const Mask& daylight) {
  LabelVector labels(trajectory.size());
  Index darkest = -1;
  for (Index t = 0; t < trajectory.size(); ++t) {
    labels[t] = daylight[t] ? 1 : 0;
    if (daylight[t] && (darkest < 0 || trajectory[t] < trajectory[darkest])) darkest = t;
  }
  if (darkest >= 0) labels[darkest] = 0;
  return labels;
}

struct PixelOutcome {
  LabelVector labels;
  std::optional<Eigen::Vector4d> aux;
  int iterations = 0;
  bool converged = false;
  bool rank_deficient = false;
};

bool albedo_vanishes(const Eigen::Vector4d& abcd) { return !(abcd.head<3>().norm() >= 1e-12); }

PixelOutcome run_pixel(const Eigen::Ref<const Eigen::VectorXd>& trajectory, const LightingTable& lights,
                       const EmConfig& config, bool force_lit) {
  PixelOutcome out;
  const Eigen::VectorXd day = daylight_values(trajectory, lights);
  const double tol = config.rank_tolerance;

  if (force_lit) {
    out.labels = LabelVector::Ones(trajectory.size());
    out.aux = solve_labels(day, lights, out.labels, tol);
    if (out.aux && albedo_vanishes(*out.aux)) out.aux.reset();
    out.rank_deficient = !out.aux;
    out.converged = true;
    return out;
  }

  LabelVector labels = initial_labels(trajectory, lights.above_horizon);
  if (lights.daylight_count() == 0) {
    out.labels = labels;
    out.rank_deficient = true;
    out.converged = true;
    return out;
  }

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    const LabelVector previous = labels;
    LabelVector repaired = labels;
    out.iterations = iter;

    if (!repair_labels(trajectory, lights, repaired, tol)) {
      // Every daylight frame lit and still singular: flag and freeze.
      out.labels = repaired;
      out.rank_deficient = true;
      out.converged = true;
      return out;
    }
    const auto fit = solve_labels(day, lights, repaired, tol);
    if (!fit || albedo_vanishes(*fit)) {
      // No measurable sun response: nothing in the trajectory is explained by
      // direct light.
      out.labels = LabelVector::Zero(trajectory.size());
      out.rank_deficient = true;
      out.converged = true;
      return out;
    }

    const double rho = fit->head<3>().norm();
    LabelVector next(trajectory.size());
    relabel(trajectory, lights, rho, fit->head<3>() / rho, (*fit)[3] / rho, next);

    // Comparing against the pre-repair labels also accepts pixels whose
    // reassignment was undone by the M-step.
    if (next == previous) {
      out.labels = next;
      out.aux = fit;
      out.converged = true;
      return out;
    }

    if (iter == config.max_iterations) {
      // Keep whichever of the last two labelings explains the data better.
      LabelVector next_repaired = next;
      std::optional<Eigen::Vector4d> next_fit;
      if (repair_labels(trajectory, lights, next_repaired, tol)) {
        next_fit = solve_labels(day, lights, next_repaired, tol);
      }
      const double prev_residual = hinge_residual(trajectory, lights, previous, *fit);
      const double next_residual = next_fit ? hinge_residual(trajectory, lights, next, *next_fit)
                                            : std::numeric_limits<double>::infinity();
      if (next_fit && !albedo_vanishes(*next_fit) && next_residual <= prev_residual) {
        out.labels = next;
        out.aux = next_fit;
      } else {
        out.labels = previous;
        out.aux = fit;
      }
      out.converged = false;
      return out;
    }
    labels = std::move(next);
  }
  return out;  // unreachable: max_iterations >= 1
}

}  // namespace

void EmConfig::validate() const {
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (!(rank_tolerance > 0.0)) throw std::invalid_argument("rank_tolerance must be > 0");
}

int numerical_rank(const DesignMatrix& a, double relative_tolerance) {
  if (a.rows() == 0) return 0;
  const Eigen::JacobiSVD<DesignMatrix> svd(a);
  const auto& sv = svd.singularValues();
  if (!(sv[0] > 0.0)) return 0;
  return static_cast<int>((sv.array() > relative_tolerance * sv[0]).count());
}

ShadowVolume initialize_shadows(const ImageSequence& gray, const LightingTable& lights) {
  if (gray.channel_count() != 1) throw std::invalid_argument("initialize_shadows needs grayscale");
  ShadowVolume sv = ShadowVolume::filled(gray.grid, gray.timestamps, 1);
  for (Index x = 0; x < gray.pixel_count(); ++x) {
    sv.labels.col(x) = initial_labels(gray.channels[0].col(x), lights.above_horizon);
  }
  sv.converged.setConstant(false);
  return sv;
}

ShadowVolume initialize_shadows(const ImageSequence& gray) {
  LightingTable all_day;
  all_day.directions = Eigen::Matrix3Xd::Zero(3, gray.frame_count());
  all_day.above_horizon = Mask::Constant(gray.frame_count(), true);
  return initialize_shadows(gray, all_day);
}

bool repair_rank(const ImageSequence& gray, const LightingTable& lights, ShadowVolume& shadows,
                 Index x, const EmConfig& config) {
  LabelVector labels = shadows.labels.col(x);
  const bool full = repair_labels(gray.channels[0].col(x), lights, labels, config.rank_tolerance);
  shadows.labels.col(x) = labels;
  return full;
}

PixelModel expectation_step(const ImageSequence& gray, const LightingTable& lights,
                            const ShadowVolume& shadows, const EmConfig& config) {
  config.validate();
  PixelModel model = PixelModel::undefined(gray.pixel_count());
  parallel_for(gray.pixel_count(), config.workers, [&](Index x) {
    const LabelVector labels = shadows.labels.col(x);
    const auto fit = solve_labels(daylight_values(gray.channels[0].col(x), lights), lights, labels,
                                  config.rank_tolerance);
    if (fit) model.set_aux(x, *fit);
  });
  return model;
}

ShadowVolume maximization_step(const ImageSequence& gray, const LightingTable& lights,
                               const PixelModel& model, const ShadowVolume& previous, int workers) {
  ShadowVolume next = previous;
  parallel_for(gray.pixel_count(), workers, [&](Index x) {
    if (!model.defined[x]) return;
    relabel(gray.channels[0].col(x), lights, model.gray_albedo[x], model.normal.col(x),
            model.skylight[x], next.labels.col(x));
  });
  return next;
}

EmResult run_em(const ImageSequence& gray, const LightingTable& lights, const EmConfig& config,
                const Mask* force_lit) {
  config.validate();
  if (gray.channel_count() != 1) throw std::invalid_argument("run_em needs a grayscale sequence");
  if (gray.frame_count() < 1) throw std::invalid_argument("run_em needs at least one frame");
  if (lights.frame_count() != gray.frame_count()) {
    throw std::invalid_argument("lighting table does not match the sequence length");
  }
  if (force_lit && force_lit->size() != gray.pixel_count()) {
    throw std::invalid_argument("force-lit mask does not match the pixel count");
  }

  const Index p = gray.pixel_count();
  EmResult result;
  result.shadows = ShadowVolume::filled(gray.grid, gray.timestamps, 0);
  result.model = PixelModel::undefined(p);
  result.iterations = Eigen::VectorXi::Zero(p);
  result.rank_deficient = Mask::Constant(p, false);
  result.force_lit = force_lit ? *force_lit : Mask::Constant(p, false);

  parallel_for(p, config.workers, [&](Index x) {
    const PixelOutcome out =
        run_pixel(gray.channels[0].col(x), lights, config, result.force_lit[x]);
    result.shadows.labels.col(x) = out.labels;
    result.shadows.converged[x] = out.converged;
    result.iterations[x] = out.iterations;
    result.rank_deficient[x] = out.rank_deficient;
    if (out.aux) result.model.set_aux(x, *out.aux);
  });
  return result;
}

SaturationRepair repair_saturation(const ImageSequence& color) {
  if (!color.is_color()) throw std::invalid_argument("repair_saturation needs an RGB sequence");
  SaturationRepair out;
  out.sequence = color;
  const Index n = color.frame_count();
  const Index p = color.pixel_count();
  out.force_lit = Mask::Constant(p, false);
  auto& ch = out.sequence.channels;

  for (Index x = 0; x < p; ++x) {
    Eigen::Vector3d mean_color = Eigen::Vector3d::Zero();
    Index clean = 0;
    bool all_white = n > 0;
    for (Index t = 0; t < n; ++t) {
      const Eigen::Vector3d v(ch[0](t, x), ch[1](t, x), ch[2](t, x));
      const bool any = (v.array() >= kSaturated).any();
      all_white = all_white && (v.array() >= kSaturated).all();
      if (!any) {
        mean_color += v;
        ++clean;
      }
    }
    if (all_white) {
      out.force_lit[x] = true;
      continue;
    }
    if (clean == 0) continue;  // no color estimate available
    mean_color /= static_cast<double>(clean);

    for (Index t = 0; t < n; ++t) {
      double num = 0.0;
      double den = 0.0;
      bool saturated = false;
      for (int c = 0; c < 3; ++c) {
        if (ch[c](t, x) >= kSaturated) {
          saturated = true;
        } else {
          num += ch[c](t, x) * mean_color[c];
          den += mean_color[c] * mean_color[c];
        }
      }
      if (!saturated || !(den > 0.0)) continue;
      const double alpha = num / den;
      for (int c = 0; c < 3; ++c) {
        if (ch[c](t, x) >= kSaturated) {
          ch[c](t, x) = alpha * mean_color[c];
          ++out.repaired_values;
        }
      }
    }
  }
  return out;
}

PixelModel finalize_color(const ImageSequence& color, const LightingTable& lights,
                          const EmResult& result) {
  if (color.channel_count() != 3 && color.channel_count() != 1) {
    throw std::invalid_argument("finalize_color needs a 1- or 3-channel sequence");
  }
  PixelModel model = result.model;
  const Index n = color.frame_count();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Index x = 0; x < color.pixel_count(); ++x) {
    if (!model.defined[x]) {
      model.albedo_rgb.col(x).setConstant(nan);
      continue;
    }
    const Eigen::Vector3d normal = model.normal.col(x);
    const double skylight = model.skylight[x];
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    Index count = 0;
    for (Index t = 0; t < n; ++t) {
      if (!lights.above_horizon[t]) continue;
      const double sun = std::max(lights.directions.col(t).dot(normal), 0.0);
      const double shading = sun * result.shadows.labels(t, x) + skylight;
      if (!(shading >= 1e-9)) continue;
      for (int c = 0; c < 3; ++c) {
        const auto& channel = color.channels[color.is_color() ? c : 0];
        sum[c] += channel(t, x) / shading;
      }
      ++count;
    }
    if (count == 0) {
      model.albedo_rgb.col(x).setConstant(nan);
    } else {
      model.albedo_rgb.col(x) = sum / static_cast<double>(count);
    }
  }
  return model;
}

}  // namespace shadowem
