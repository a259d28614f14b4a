#include "shadowem/baselines.hpp"

#include "shadowem/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace shadowem {

namespace {

using LabelVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

Index nearest_rank(Index n, double fraction) {
  // The epsilon keeps products such as 0.2 * 5 from rounding up to rank 2.
  const auto rank = static_cast<Index>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<Index>(rank, 1, n);
}

template <typename Labeler>
ShadowVolume per_pixel(const ImageSequence& gray, int workers, Labeler&& labeler) {
  if (gray.channel_count() != 1) throw std::invalid_argument("baselines need a grayscale sequence");
  ShadowVolume sv = ShadowVolume::filled(gray.grid, gray.timestamps, 0);
  parallel_for(gray.pixel_count(), workers,
               [&](Index x) { sv.labels.col(x) = labeler(gray.channels[0].col(x)); });
  return sv;
}

}  // namespace

void FtlvParams::validate() const {
  if (!(theta_p > 0.0 && theta_p < 1.0)) throw std::invalid_argument("FTLV theta_p must be in (0, 1)");
  if (!(theta_k > 0.0)) throw std::invalid_argument("FTLV theta_k must be > 0");
}

void HsParams::validate() const {
  if (!(theta_p > 0.0 && theta_p < 1.0)) throw std::invalid_argument("HS theta_p must be in (0, 1)");
  if (!(theta_lambda >= 0.0 && theta_lambda <= 1.0)) {
    throw std::invalid_argument("HS theta_lambda must be in [0, 1]");
  }
}

double lower_percentile(std::span<const double> values, double fraction) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  const Index rank = nearest_rank(static_cast<Index>(sorted.size()), fraction);
  std::nth_element(sorted.begin(), sorted.begin() + (rank - 1), sorted.end());
  return sorted[static_cast<std::size_t>(rank - 1)];
}

LabelVector ftlv_labels(const Eigen::Ref<const Eigen::VectorXd>& trajectory, const FtlvParams& params) {
  const double threshold =
      params.theta_k * lower_percentile({trajectory.data(), static_cast<std::size_t>(trajectory.size())},
                                        params.theta_p);
  return (trajectory.array() >= threshold).cast<std::uint8_t>();
}

LabelVector hs_labels(const Eigen::Ref<const Eigen::VectorXd>& trajectory, const HsParams& params) {
  const Index n = trajectory.size();
  LabelVector labels(n);
  if (n == 0) return labels;
  // theta_p and 1 - theta_p name the same pair of tails.
  const double tail = std::min(params.theta_p, 1.0 - params.theta_p);
  std::vector<double> sorted(trajectory.data(), trajectory.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const Index rank = nearest_rank(n, tail);
  double lit = sorted[static_cast<std::size_t>(n - rank)];
  double shadow = sorted[static_cast<std::size_t>(rank - 1)];

  const double keep = params.theta_lambda;
  const auto update = [&](double intensity) {
    if (std::abs(intensity - lit) < std::abs(intensity - shadow)) {
      lit = lit * keep + intensity * (1.0 - keep);
    } else {
      shadow = shadow * keep + intensity * (1.0 - keep);
    }
  };
  for (Index t = 0; t < n; ++t) update(trajectory[t]);
  for (Index t = n - 1; t >= 0; --t) {
    update(trajectory[t]);
    labels[t] = std::abs(trajectory[t] - lit) <= std::abs(trajectory[t] - shadow) ? 1 : 0;
  }
  return labels;
}

ShadowVolume ftlv_shadows(const ImageSequence& gray, const FtlvParams& params, int workers) {
  params.validate();
  return per_pixel(gray, workers, [&](const auto& traj) { return ftlv_labels(traj, params); });
}

ShadowVolume hs_shadows(const ImageSequence& gray, const HsParams& params, int workers) {
  params.validate();
  return per_pixel(gray, workers, [&](const auto& traj) { return hs_labels(traj, params); });
}

std::string baseline_name(Baseline algo) { return algo == Baseline::Ftlv ? "ftlv" : "hs"; }

SweepGrid SweepGrid::standard() {
  return {{0.02, 0.05, 0.1, 0.2, 0.3},
          {1.1, 1.25, 1.5, 1.75, 2.0, 2.5},
          {0.005, 0.01, 0.02, 0.05, 0.1, 0.2}};
}

namespace {

struct Evaluation {
  std::vector<double> accuracy;
  std::vector<Index> correct;
  std::vector<Index> labeled;

  double mean() const {
    double s = 0.0;
    for (double a : accuracy) s += a;
    return s / static_cast<double>(accuracy.size());
  }
  double pooled() const {
    Index c = 0, l = 0;
    for (std::size_t i = 0; i < correct.size(); ++i) {
      c += correct[i];
      l += labeled[i];
    }
    return static_cast<double>(c) / static_cast<double>(l);
  }
};

Evaluation evaluate(const std::vector<SweepScene>& scenes, Baseline algo, double theta_p, double second,
                    int workers) {
  Evaluation e;
  for (const SweepScene& scene : scenes) {
    const ShadowVolume sv = algo == Baseline::Ftlv
                                ? ftlv_shadows(scene.gray, FtlvParams{theta_p, second}, workers)
                                : hs_shadows(scene.gray, HsParams{theta_p, second}, workers);
    const AccuracyReport r = score(sv, scene.labels);
    e.accuracy.push_back(r.accuracy);
    e.correct.push_back(r.correct);
    e.labeled.push_back(r.labeled());
  }
  return e;
}

}  // namespace

SweepTable parameter_sweep(const std::vector<SweepScene>& scenes, Baseline algo, const SweepGrid& grid,
                           int workers) {
  const std::vector<double>& seconds = algo == Baseline::Ftlv ? grid.theta_k : grid.theta_lambda;
  if (grid.theta_p.empty() || seconds.empty()) throw std::invalid_argument("parameter grid is empty");
  if (scenes.empty()) throw std::invalid_argument("parameter sweep needs at least one scene");

  SweepTable table;
  table.algo = algo;
  std::vector<Evaluation> evals;
  for (double p : grid.theta_p) {
    for (double s : seconds) {
      Evaluation e = evaluate(scenes, algo, p, s, workers);
      table.points.push_back({p, s, e.accuracy, e.mean()});
      evals.push_back(std::move(e));
    }
  }

  const Evaluation suggested = algo == Baseline::Ftlv
                                   ? evaluate(scenes, algo, FtlvParams{}.theta_p, FtlvParams{}.theta_k, workers)
                                   : evaluate(scenes, algo, HsParams{}.theta_p, HsParams{}.theta_lambda, workers);

  std::size_t global = 0;
  std::size_t global_pooled = 0;
  for (std::size_t i = 1; i < evals.size(); ++i) {
    if (evals[i].mean() > evals[global].mean()) global = i;
    if (evals[i].pooled() > evals[global_pooled].pooled()) global_pooled = i;
  }

  const std::string name = baseline_name(algo);
  double optimal_sum = 0.0;
  Index optimal_correct = 0;
  Index optimal_labeled = 0;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < evals.size(); ++i) {
      if (evals[i].accuracy[k] > evals[best].accuracy[k]) best = i;
    }
    optimal_sum += evals[best].accuracy[k];
    optimal_correct += evals[best].correct[k];
    optimal_labeled += evals[best].labeled[k];
    table.rows.push_back({name, "Suggested", scenes[k].name, 100.0 * suggested.accuracy[k]});
    table.rows.push_back({name, "Global", scenes[k].name, 100.0 * evals[global].accuracy[k]});
    table.rows.push_back({name, "Optimal", scenes[k].name, 100.0 * evals[best].accuracy[k]});
  }
  const auto count = static_cast<double>(scenes.size());
  table.rows.push_back({name, "Suggested", kAggregateScene, 100.0 * suggested.mean()});
  table.rows.push_back({name, "Global", kAggregateScene, 100.0 * evals[global].mean()});
  table.rows.push_back({name, "Optimal", kAggregateScene, 100.0 * optimal_sum / count});
  table.rows.push_back({name, "Suggested", kPooledScene, 100.0 * suggested.pooled()});
  table.rows.push_back({name, "Global", kPooledScene, 100.0 * evals[global_pooled].pooled()});
  table.rows.push_back({name, "Optimal", kPooledScene,
                        100.0 * static_cast<double>(optimal_correct) / static_cast<double>(optimal_labeled)});
  table.rows = sorted_rows(std::move(table.rows));
  return table;
}

}  // namespace shadowem
