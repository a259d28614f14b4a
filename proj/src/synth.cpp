#include "shadowem/synth.hpp"

#include "shadowem/metrics.hpp"
#include "shadowem/parallel.hpp"
#include "shadowem/solar.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace shadowem {

namespace {

constexpr double kOcclusionSlack = 1e-6;
constexpr double kDiscontinuity = 1.0;  // height change per pixel treated as a step

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

Index uniform_index(std::mt19937_64& rng, Index bound) {
  return static_cast<Index>(rng() % static_cast<std::uint64_t>(bound));
}

// Paints random albedo and skylight onto square blocks of the grid.
void paint_blocks(std::mt19937_64& rng, int size, int block, Eigen::Matrix3Xd& albedo,
                  Eigen::VectorXd& skylight) {
  const int blocks = (size + block - 1) / block;
  Eigen::Matrix3Xd colors(3, blocks * blocks);
  Eigen::VectorXd sky(blocks * blocks);
  for (Index b = 0; b < colors.cols(); ++b) {
    for (int c = 0; c < 3; ++c) colors(c, b) = uniform(rng, 0.25, 0.9);
    sky[b] = uniform(rng, 0.15, 0.35);
  }
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const Index b = (r / block) * blocks + c / block;
      albedo.col(r * size + c) = colors.col(b);
      skylight[r * size + c] = sky[b];
    }
  }
}

void fill_rect(Eigen::MatrixXd& h, int r0, int c0, int rows, int cols, double value) {
  const int r1 = std::min<int>(static_cast<int>(h.rows()), r0 + rows);
  const int c1 = std::min<int>(static_cast<int>(h.cols()), c0 + cols);
  for (int r = std::max(r0, 0); r < r1; ++r) {
    for (int c = std::max(c0, 0); c < c1; ++c) h(r, c) = std::max(h(r, c), value);
  }
}

void set_rect_material(int size, int r0, int c0, int rows, int cols, const Eigen::Vector3d& rgb, double sky,
                       Eigen::Matrix3Xd& albedo, Eigen::VectorXd& skylight) {
  for (int r = std::max(r0, 0); r < std::min(size, r0 + rows); ++r) {
    for (int c = std::max(c0, 0); c < std::min(size, c0 + cols); ++c) {
      albedo.col(r * size + c) = rgb;
      skylight[r * size + c] = sky;
    }
  }
}

}  // namespace

const std::vector<std::string>& scene_names() {
  static const std::vector<std::string> names{"wall", "city", "hills"};
  return names;
}

Heightfield::Heightfield(Eigen::MatrixXd heights) : heights_(std::move(heights)) {
  max_height_ = heights_.size() > 0 ? heights_.maxCoeff() : 0.0;
}

double Heightfield::at(double row, double col) const {
  const double r = std::clamp(row, 0.0, static_cast<double>(rows() - 1));
  const double c = std::clamp(col, 0.0, static_cast<double>(cols() - 1));
  const auto r0 = static_cast<Index>(std::floor(r));
  const auto c0 = static_cast<Index>(std::floor(c));
  const Index r1 = std::min(r0 + 1, rows() - 1);
  const Index c1 = std::min(c0 + 1, cols() - 1);
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  return (1 - fr) * ((1 - fc) * heights_(r0, c0) + fc * heights_(r0, c1)) +
         fr * ((1 - fc) * heights_(r1, c0) + fc * heights_(r1, c1));
}

bool Heightfield::occluded(Index row, Index col, const Eigen::Vector3d& sun) const {
  if (sun.z() <= 0.0) return true;
  const double horizontal = std::hypot(sun.x(), sun.y());
  if (horizontal < 1e-12) return false;
  // Unit horizontal step in grid coordinates: columns run east, rows south.
  const double dc = sun.x() / horizontal;
  const double dr = -sun.y() / horizontal;
  const double rise = sun.z() / horizontal;
  const double z0 = heights_(row, col);
  const double last_row = static_cast<double>(rows() - 1);
  const double last_col = static_cast<double>(cols() - 1);
  for (int k = 1;; ++k) {
    const double s = 0.5 * k;
    const double r = static_cast<double>(row) + dr * s;
    const double c = static_cast<double>(col) + dc * s;
    if (r < 0.0 || c < 0.0 || r > last_row || c > last_col) return false;
    const double z = z0 + rise * s;
    if (z > max_height_) return false;
    if (z < at(r, c) - kOcclusionSlack) return true;
  }
}

Eigen::Matrix3Xd Heightfield::normals() const {
  const Index H = rows();
  const Index W = cols();
  const auto slope = [](double minus, double plus, bool has_minus, bool has_plus) {
    if (!has_minus) return plus;
    if (!has_plus) return minus;
    if (std::abs(plus - minus) > kDiscontinuity) return std::abs(minus) < std::abs(plus) ? minus : plus;
    return 0.5 * (minus + plus);
  };
  Eigen::Matrix3Xd n(3, H * W);
  for (Index r = 0; r < H; ++r) {
    for (Index c = 0; c < W; ++c) {
      const double h = heights_(r, c);
      // dz/dEast from columns, dz/dNorth from rows (north is row - 1).
      const double east = slope(c > 0 ? h - heights_(r, c - 1) : 0.0, c + 1 < W ? heights_(r, c + 1) - h : 0.0,
                                c > 0, c + 1 < W);
      const double north = slope(r + 1 < H ? h - heights_(r + 1, c) : 0.0, r > 0 ? heights_(r - 1, c) - h : 0.0,
                                 r + 1 < H, r > 0);
      n.col(r * W + c) = Eigen::Vector3d(-east, -north, 1.0).normalized();
    }
  }
  return n;
}

SyntheticScene make_scene(const SceneDescriptor& d) {
  if (d.size < 8) throw std::invalid_argument("scene size must be at least 8");
  if (d.sky_rows < 0 || d.sky_rows >= d.size) throw std::invalid_argument("sky_rows out of range");
  if (!(d.exposure > 0.0)) throw std::invalid_argument("exposure must be positive");
  d.location.validate();

  const int S = d.size;
  std::mt19937_64 rng(d.seed);
  Eigen::MatrixXd heights = Eigen::MatrixXd::Zero(S, S);
  Eigen::Matrix3Xd albedo(3, S * S);
  Eigen::VectorXd skylight(S * S);
  paint_blocks(rng, S, std::max(2, S / 8), albedo, skylight);

  if (d.scene == "wall") {
    // East-west wall across the middle of a flat ground plane.
    const int wall_height = std::max(2, S / 8);
    const int r0 = S / 2;
    const int c0 = S / 8;
    const int cols = S - 2 * c0;
    fill_rect(heights, r0, c0, 2, cols, wall_height);
    set_rect_material(S, r0, c0, 2, cols, Eigen::Vector3d(0.7, 0.68, 0.65), 0.3, albedo, skylight);
  } else if (d.scene == "city") {
    const int boxes = std::max(3, S * S / 400);
    for (int b = 0; b < boxes; ++b) {
      const int w = 3 + static_cast<int>(uniform_index(rng, std::max(1, S / 6 - 2)));
      const int h = 3 + static_cast<int>(uniform_index(rng, std::max(1, S / 6 - 2)));
      const int r0 = static_cast<int>(uniform_index(rng, S - h));
      const int c0 = static_cast<int>(uniform_index(rng, S - w));
      const double top = 2.0 + uniform(rng, 0.0, std::max(1.0, S / 6.0));
      fill_rect(heights, r0, c0, h, w, top);
      const Eigen::Vector3d roof(uniform(rng, 0.3, 0.9), uniform(rng, 0.3, 0.9), uniform(rng, 0.3, 0.9));
      set_rect_material(S, r0, c0, h, w, roof, uniform(rng, 0.2, 0.35), albedo, skylight);
    }
  } else if (d.scene == "hills") {
    const int bumps = 6;
    for (int b = 0; b < bumps; ++b) {
      const double cr = uniform(rng, 0.0, S);
      const double cc = uniform(rng, 0.0, S);
      const double sigma = uniform(rng, S / 8.0, S / 4.0);
      const double amp = uniform(rng, S / 16.0, S / 8.0);
      for (int r = 0; r < S; ++r) {
        for (int c = 0; c < S; ++c) {
          const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
          heights(r, c) += amp * std::exp(-d2 / (2 * sigma * sigma));
        }
      }
    }
  } else {
    throw std::invalid_argument("unknown scene '" + d.scene + "' (expected wall, city or hills)");
  }

  SyntheticScene scene;
  scene.descriptor = d;
  scene.terrain = Heightfield(std::move(heights));
  scene.albedo = std::move(albedo);
  scene.skylight = std::move(skylight);
  scene.normals = scene.terrain.normals();
  Mask mask = Mask::Constant(static_cast<Index>(S) * S, true);
  mask.head(static_cast<Index>(d.sky_rows) * S).setConstant(false);
  scene.grid = PixelGrid(S, S, std::move(mask));
  return scene;
}

Rendering render_sequence(const SyntheticScene& scene, const std::vector<UtcTime>& instants,
                          const RenderOptions& options) {
  if (instants.empty()) throw std::invalid_argument("render_sequence needs at least one instant");
  if (!(scene.albedo.array().abs().maxCoeff() > 0.0)) throw std::invalid_argument("scene albedo is all zero");

  const PixelGrid& grid = scene.grid;
  const auto n = static_cast<Index>(instants.size());
  const Index p = grid.pixel_count();
  const int W = scene.width();
  const double exposure = scene.descriptor.exposure;

  Rendering out;
  out.lights = lighting_table(instants, scene.descriptor.location);
  if (!out.lights.above_horizon.all()) {
    throw std::invalid_argument("render_sequence: sun below the horizon for some instant");
  }
  out.truth = ShadowVolume::filled(grid, instants, 0);
  out.unclipped.assign(3, Eigen::MatrixXd(n, p));

  parallel_for(n, 0, [&](Index t) {
    const Eigen::Vector3d sun = out.lights.directions.col(t);
    for (Index x = 0; x < p; ++x) {
      const Index g = grid.grid_index(x);
      const double facing = sun.dot(scene.normals.col(g));
      const bool lit = facing > 0.0 && !scene.terrain.occluded(g / W, g % W, sun);
      out.truth.labels(t, x) = lit ? 1 : 0;
      const double shading = (lit ? facing : 0.0) + scene.skylight[g];
      for (int c = 0; c < 3; ++c) out.unclipped[static_cast<std::size_t>(c)](t, x) = exposure * scene.albedo(c, g) * shading;
    }
  });

  out.color.grid = grid;
  out.color.timestamps = instants;
  out.color.location = scene.descriptor.location;
  for (const Eigen::MatrixXd& raw : out.unclipped) {
    out.clipped_values += (raw.array() > 255.0).count();
    Eigen::MatrixXd img = raw.cwiseMin(255.0);
    if (options.quantize) img = img.array().round().matrix();
    out.color.channels.push_back(std::move(img));
  }
  return out;
}

std::optional<std::vector<UtcTime>> sample_daylight(const Geolocation& location, UtcTime start,
                                                    double span_days, int count, std::uint64_t seed,
                                                    double min_elevation_deg) {
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  if (!(span_days > 0.0)) throw std::invalid_argument("span must be positive");
  const double span_s = span_days * 86400.0;
  const auto step = static_cast<std::int64_t>(std::max(60.0, std::floor(span_s / 100000.0)));
  const auto steps = static_cast<std::int64_t>(std::floor(span_s / static_cast<double>(step)));

  std::vector<UtcTime> candidates;
  for (std::int64_t k = 0; k <= steps; ++k) {
    const UtcTime t = start + std::chrono::seconds{k * step};
    if (sun_direction({t, location}).elevation_deg > min_elevation_deg) candidates.push_back(t);
  }
  if (static_cast<Index>(candidates.size()) < count) return std::nullopt;

  std::mt19937_64 rng(seed);
  for (Index i = 0; i < count; ++i) {
    const Index j = i + uniform_index(rng, static_cast<Index>(candidates.size()) - i);
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(j)]);
  }
  candidates.resize(static_cast<std::size_t>(count));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

UtcTime experiment_window(const Geolocation& location, UtcTime period_start, double span_days,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (span_days >= 1.0) {
    const double offset_days = uniform(rng, 0.0, std::max(0.0, 365.0 - span_days));
    return period_start + std::chrono::seconds{static_cast<std::int64_t>(std::floor(offset_days)) * 86400};
  }
  const auto day = static_cast<std::int64_t>(uniform_index(rng, 365));
  // Local mean solar noon, ignoring the equation of time.
  const double noon_s = 43200.0 - location.longitude_deg * 240.0;
  const double start_s = static_cast<double>(day) * 86400.0 + noon_s - 0.5 * span_days * 86400.0;
  return period_start + std::chrono::seconds{static_cast<std::int64_t>(std::llround(start_s))};
}

ResponseFunction ResponseFunction::gamma(double g) {
  if (!(g > 0.0)) throw std::invalid_argument("gamma must be positive");
  return {Family::Gamma, g};
}

ResponseFunction ResponseFunction::cubic(double k) {
  if (!(k > -1.0 && k < 3.0)) throw std::invalid_argument("cubic response needs -1 < k < 3 to stay monotone");
  return {Family::Cubic, k};
}

ResponseFunction ResponseFunction::parse(std::string_view text) {
  if (text == "identity") return identity();
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("bad response text '" + std::string(text) + "'");
  const std::string_view family = text.substr(0, colon);
  const std::string_view value = text.substr(colon + 1);
  double v = 0.0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || end != value.data() + value.size()) {
    throw std::invalid_argument("bad response parameter in '" + std::string(text) + "'");
  }
  if (family == "gamma") return gamma(v);
  if (family == "cubic") return cubic(v);
  throw std::invalid_argument("unknown response family '" + std::string(family) + "'");
}

double ResponseFunction::operator()(double x) const {
  switch (family_) {
    case Family::Identity:
      return x;
    case Family::Gamma:
      return std::pow(x, parameter_);
    case Family::Cubic:
      return x + parameter_ * x * (1.0 - x) * (1.0 - x);
  }
  return x;
}

std::string ResponseFunction::name() const {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, parameter_);
  switch (family_) {
    case Family::Identity:
      return "identity";
    case Family::Gamma:
      return "gamma:" + std::string(buf, end);
    case Family::Cubic:
      return "cubic:" + std::string(buf, end);
  }
  return "identity";
}

std::vector<ResponseFunction> response_family() {
  std::vector<ResponseFunction> family;
  for (double g : {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.1, 1.25, 1.5, 1.75, 2.0, 2.2, 2.5}) {
    family.push_back(ResponseFunction::gamma(g));
  }
  for (double k : {-0.5, 0.5, 1.0, 2.0}) family.push_back(ResponseFunction::cubic(k));
  return family;
}

ImageSequence apply_response(const ImageSequence& seq, const ResponseFunction& f) {
  ImageSequence out = seq;
  for (Eigen::MatrixXd& channel : out.channels) {
    if (channel.size() > 0 && !(channel.minCoeff() >= 0.0 && channel.maxCoeff() <= 255.0)) {
      throw std::invalid_argument("apply_response needs intensities in [0, 255]");
    }
    channel = channel.unaryExpr([&](double v) { return 255.0 * f(v / 255.0); });
  }
  return out;
}

double em_accuracy(const Rendering& rendering, const EmConfig& config) {
  const ImageSequence gray = to_grayscale(rendering.color);
  const EmResult result = run_em(gray, rendering.lights, config);
  const Index total = rendering.truth.labels.size();
  const Index correct = (result.shadows.labels.array() == rendering.truth.labels.array()).count();
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<SubsampleCell> subsample_experiment(const SyntheticScene& scene, const std::vector<int>& counts,
                                                const std::vector<double>& spans_days, int trials,
                                                std::uint64_t seed, const EmConfig& config) {
  if (counts.empty() || spans_days.empty()) throw std::invalid_argument("counts and spans must be nonempty");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::vector<SubsampleCell> cells;
  std::uint64_t cell_index = 0;
  for (double span : spans_days) {
    for (int count : counts) {
      SubsampleCell cell;
      cell.count = count;
      cell.span_days = span;
      cell.feasible = true;
      for (int trial = 0; trial < trials && cell.feasible; ++trial) {
        std::seed_seq seq{seed, cell_index, static_cast<std::uint64_t>(trial)};
        std::uint64_t trial_seed = 0;
        seq.generate(reinterpret_cast<std::uint32_t*>(&trial_seed),
                     reinterpret_cast<std::uint32_t*>(&trial_seed) + 2);
        const UtcTime start =
            experiment_window(scene.descriptor.location, scene.descriptor.start, span, trial_seed);
        const auto instants =
            sample_daylight(scene.descriptor.location, start, span, count, trial_seed ^ 0x9e3779b97f4a7c15ULL);
        if (!instants) {
          cell.feasible = false;
          break;
        }
        cell.trial_accuracy.push_back(em_accuracy(render_sequence(scene, *instants), config));
      }
      if (!cell.feasible) cell.trial_accuracy.clear();
      if (!cell.trial_accuracy.empty()) {
        std::vector<double> sorted = cell.trial_accuracy;
        std::sort(sorted.begin(), sorted.end());
        cell.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
        const std::size_t m = sorted.size();
        cell.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
      }
      cells.push_back(std::move(cell));
      ++cell_index;
    }
  }
  return cells;
}

}  // namespace shadowem
