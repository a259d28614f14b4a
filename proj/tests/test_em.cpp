#include "shadowem/em.hpp"

#include "shadowem/solar.hpp"
#include "shadowem/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace shadowem;

namespace {

using LongMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LongVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

std::vector<UtcTime> hourly(Index n) {
  std::vector<UtcTime> stamps;
  for (Index t = 0; t < n; ++t) stamps.push_back(parse_utc("2012-01-01T00:00:00Z") + std::chrono::hours{t});
  return stamps;
}

ImageSequence gray_sequence(const Eigen::MatrixXd& values) {
  ImageSequence seq;
  seq.grid = PixelGrid::full(static_cast<int>(values.cols()), 1);
  seq.timestamps = hourly(values.rows());
  seq.location = {0.0, 0.0};
  seq.channels = {values};
  return seq;
}

LightingTable random_lights(Index n, std::mt19937_64& rng, double min_up = 0.1) {
  std::normal_distribution<double> normal;
  LightingTable lights;
  lights.directions.resize(3, n);
  lights.above_horizon = Mask::Constant(n, true);
  for (Index t = 0; t < n; ++t) {
    Eigen::Vector3d d;
    do {
      d = Eigen::Vector3d(normal(rng), normal(rng), std::abs(normal(rng))).normalized();
    } while (d.z() < min_up);
    lights.directions.col(t) = d;
  }
  return lights;
}

using Labels = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

// Oracle: normal equations in extended precision.
Eigen::Vector4d normal_equation_solve(const DesignMatrix& a, const Eigen::VectorXd& b) {
  const LongMatrix al = a.cast<long double>();
  const LongVector bl = b.cast<long double>();
  const LongMatrix ata = al.transpose() * al;
  const LongVector atb = al.transpose() * bl;
  return ata.ldlt().solve(atb).cast<double>();
}

}  // namespace

TEST_CASE("initialization shadows only the darkest frame") {
  auto init = [](std::initializer_list<double> values) {
    Eigen::VectorXd v(static_cast<Index>(values.size()));
    Index k = 0;
    for (double x : values) v[k++] = x;
    return initialize_shadows(gray_sequence(v)).labels.col(0).cast<int>().eval();
  };
  CHECK(init({50, 10, 200}) == Eigen::Vector3i(1, 0, 1));
  CHECK(init({10, 10, 10}) == Eigen::Vector3i(0, 1, 1));
  CHECK(init({7}) == Eigen::Matrix<int, 1, 1>(0));
}

TEST_CASE("initialization skips night frames") {
  const ImageSequence seq = gray_sequence(Eigen::Vector3d(5, 20, 10));
  LightingTable lights;
  lights.directions = Eigen::Matrix3Xd::Zero(3, 3);
  lights.above_horizon = Mask(3);
  lights.above_horizon << false, true, true;
  CHECK(initialize_shadows(seq, lights).labels.col(0).cast<int>().eval() == Eigen::Vector3i(0, 1, 0));
}

TEST_CASE("design matrix rows hold S_t L_t and a constant") {
  std::mt19937_64 rng(3);
  LightingTable lights = random_lights(4, rng);
  lights.above_horizon[2] = false;
  Labels labels(4);
  labels << 1, 0, 1, 1;
  const DesignMatrix a = design_matrix(lights, labels);
  REQUIRE(a.rows() == 3);
  CHECK(a.row(0).head<3>() == lights.directions.col(0).transpose());
  CHECK(a.row(1).head<3>().isZero(0.0));
  CHECK(a.row(2).head<3>() == lights.directions.col(3).transpose());
  CHECK(a.col(3).isOnes(0.0));
}

TEST_CASE("numerical rank agrees with an explicit construction") {
  std::mt19937_64 rng(5);
  const LightingTable lights = random_lights(12, rng);
  Labels labels = Labels::Ones(12);
  CHECK(numerical_rank(design_matrix(lights, labels), 1e-8) == 4);
  labels.setZero();
  CHECK(numerical_rank(design_matrix(lights, labels), 1e-8) == 1);
  labels[3] = 1;
  CHECK(numerical_rank(design_matrix(lights, labels), 1e-8) == 2);
  labels[7] = 1;
  CHECK(numerical_rank(design_matrix(lights, labels), 1e-8) == 3);
}

TEST_CASE("E-step recovers an exactly generated pixel") {
  std::mt19937_64 rng(11);
  const LightingTable lights = random_lights(20, rng);
  const Eigen::Vector3d n = Eigen::Vector3d(0.3, -0.2, 0.93).normalized();
  const double rho = 140.0;
  const double sky = 0.27;
  Eigen::VectorXd intensity(20);
  ShadowVolume sv = ShadowVolume::filled(PixelGrid::full(1, 1), hourly(20), 1);
  for (Index t = 0; t < 20; ++t) {
    // Facing-away frames would need the hinge; keep the system linear.
    const std::uint8_t s = t % 3 == 0 || lights.directions.col(t).dot(n) <= 0.0 ? 0 : 1;
    sv.labels(t, 0) = s;
    intensity[t] = rho * (std::max(lights.directions.col(t).dot(n), 0.0) * s + sky);
  }
  const PixelModel m = expectation_step(gray_sequence(intensity), lights, sv, EmConfig{});
  REQUIRE(m.defined[0]);
  CHECK(std::acos(std::clamp(m.normal.col(0).dot(n), -1.0, 1.0)) <= 1e-6);
  CHECK(std::abs(m.gray_albedo[0] - rho) <= 1e-6);
  CHECK(std::abs(m.gray_albedo[0] * m.skylight[0] - rho * sky) <= 1e-6);
  CHECK(std::abs(m.normal.col(0).norm() - 1.0) <= 1e-9);
}

TEST_CASE("E-step matches an extended-precision normal-equation oracle") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> value(0.0, 255.0);
  std::bernoulli_distribution lit(0.7);
  for (int trial = 0; trial < 50; ++trial) {
    const LightingTable lights = random_lights(20, rng);
    Eigen::VectorXd intensity(20);
    ShadowVolume sv = ShadowVolume::filled(PixelGrid::full(1, 1), hourly(20), 1);
    for (Index t = 0; t < 20; ++t) {
      intensity[t] = value(rng);
      sv.labels(t, 0) = lit(rng) ? 1 : 0;
    }
    const DesignMatrix a = design_matrix(lights, sv.labels.col(0));
    if (numerical_rank(a, 1e-8) < 4) continue;
    const PixelModel m = expectation_step(gray_sequence(intensity), lights, sv, EmConfig{});
    const Eigen::Vector4d expected = normal_equation_solve(a, intensity);
    CHECK((m.aux.col(0) - expected).norm() <= 1e-8 * expected.norm());

    // No nearby point does better.
    const double best = (a * m.aux.col(0) - intensity).squaredNorm();
    std::normal_distribution<double> step;
    for (int k = 0; k < 1000; ++k) {
      Eigen::Vector4d delta(step(rng), step(rng), step(rng), step(rng));
      delta *= 1e-3 / delta.norm();
      CHECK((a * (m.aux.col(0) + delta) - intensity).squaredNorm() >= best);
    }
  }
}

TEST_CASE("M-step examples") {
  const LightingTable lights = [] {
    LightingTable l;
    l.directions.resize(3, 2);
    l.directions.col(0) = Eigen::Vector3d(0, 0, 1);
    l.directions.col(1) = Eigen::Vector3d(0, 0.6, -0.8);  // faces away from N = up
    l.above_horizon = Mask::Constant(2, true);
    return l;
  }();
  PixelModel m = PixelModel::undefined(1);
  REQUIRE(m.set_aux(0, Eigen::Vector4d(0, 0, 100, 30)));  // rho = 100, N = up, A = 0.3
  // I = rho A exactly under a sun that faces the surface: shadow.
  // Second frame: L.N < 0 so both residuals coincide and the tie goes to lit.
  const ImageSequence seq = gray_sequence(Eigen::Vector2d(30.0, 200.0));
  const ShadowVolume prev = ShadowVolume::filled(seq.grid, seq.timestamps, 1);
  const ShadowVolume next = maximization_step(seq, lights, m, prev);
  CHECK(next.labels(0, 0) == 0);
  CHECK(next.labels(1, 0) == 1);
}

TEST_CASE("M-step labels match an independent residual evaluator") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> value(0.0, 255.0);
  const Index n = 40;
  const Index p = 25;
  const LightingTable lights = random_lights(n, rng, -1.0);
  ImageSequence seq = gray_sequence(Eigen::MatrixXd::NullaryExpr(n, p, [&] { return value(rng); }));
  PixelModel m = PixelModel::undefined(p);
  std::normal_distribution<double> g;
  for (Index x = 0; x < p; ++x) m.set_aux(x, Eigen::Vector4d(g(rng) * 80, g(rng) * 80, g(rng) * 80, std::abs(g(rng)) * 40));
  const ShadowVolume prev = ShadowVolume::filled(seq.grid, seq.timestamps, 1);
  const ShadowVolume next = maximization_step(seq, lights, m, prev, 2);
  for (Index x = 0; x < p; ++x) {
    const Eigen::Vector4d abcd = m.aux.col(x);
    for (Index t = 0; t < n; ++t) {
      // Separate evaluation path: unnormalized aux with the hinge on (a,b,c).
      const double direct = std::max(0.0, lights.directions.col(t).dot(abcd.head<3>()));
      const double with_sun = seq.channels[0](t, x) - direct - abcd[3];
      const double without = seq.channels[0](t, x) - abcd[3];
      const int expected = with_sun * with_sun <= without * without ? 1 : 0;
      if (std::abs(with_sun * with_sun - without * without) < 1e-9 * (1 + without * without)) continue;
      CHECK(next.labels(t, x) == expected);
    }
  }
}

TEST_CASE("M-step leaves undefined pixels untouched") {
  std::mt19937_64 rng(2);
  const LightingTable lights = random_lights(5, rng);
  const ImageSequence seq = gray_sequence(Eigen::VectorXd::Constant(5, 40.0));
  ShadowVolume prev = ShadowVolume::filled(seq.grid, seq.timestamps, 0);
  prev.labels(2, 0) = 1;
  const ShadowVolume next = maximization_step(seq, lights, PixelModel::undefined(1), prev);
  CHECK(next.labels == prev.labels);
}

TEST_CASE("rank repair relabels the brightest shadowed frames") {
  std::mt19937_64 rng(8);
  const LightingTable lights = random_lights(10, rng);
  Eigen::VectorXd intensity(10);
  intensity << 5, 90, 20, 90, 60, 10, 70, 30, 15, 40;
  const ImageSequence seq = gray_sequence(intensity);
  ShadowVolume sv = ShadowVolume::filled(seq.grid, seq.timestamps, 0);
  REQUIRE(repair_rank(seq, lights, sv, 0, EmConfig{}));
  // Brightest first, earliest on ties: frames 1, 3, 6.
  Labels expected = Labels::Zero(10);
  expected[1] = expected[3] = expected[6] = 1;
  CHECK(sv.labels.col(0) == expected);
  CHECK(numerical_rank(design_matrix(lights, sv.labels.col(0)), 1e-8) == 4);

  // Already full rank: untouched.
  ShadowVolume full = ShadowVolume::filled(seq.grid, seq.timestamps, 1);
  full.labels(4, 0) = 0;
  const LabelMatrix before = full.labels;
  CHECK(repair_rank(seq, lights, full, 0, EmConfig{}));
  CHECK(full.labels == before);
}

TEST_CASE("three frames can never reach rank four") {
  std::mt19937_64 rng(9);
  const LightingTable lights = random_lights(3, rng);
  const ImageSequence seq = gray_sequence(Eigen::Vector3d(10, 80, 40));
  ShadowVolume sv = ShadowVolume::filled(seq.grid, seq.timestamps, 0);
  CHECK_FALSE(repair_rank(seq, lights, sv, 0, EmConfig{}));
  CHECK((sv.labels.array() == 1).all());
  CHECK(Eigen::JacobiSVD<DesignMatrix>(design_matrix(lights, sv.labels.col(0))).rank() <= 3);

  const EmResult r = run_em(seq, lights, EmConfig{});
  CHECK(r.rank_deficient[0]);
  CHECK_FALSE(r.model.defined[0]);
  CHECK((r.shadows.labels.array() == 1).all());
  CHECK(r.shadows.converged[0]);
}

TEST_CASE("constant-intensity pixel converges") {
  std::mt19937_64 rng(13);
  const LightingTable lights = random_lights(30, rng);
  const EmResult r = run_em(gray_sequence(Eigen::VectorXd::Constant(30, 77.0)), lights, EmConfig{});
  CHECK(r.shadows.converged[0]);
  CHECK(r.iterations[0] <= 50);
  // Golden: no sun response can be measured, so nothing is directly lit.
  CHECK(r.rank_deficient[0]);
  CHECK((r.shadows.labels.array() == 0).all());
}

namespace {

struct Fixture {
  SyntheticScene scene;
  Rendering rendering;
  ImageSequence gray;
};

Fixture make_fixture(const std::string& name, int size, int frames, bool quantize) {
  SceneDescriptor d;
  d.scene = name;
  d.size = size;
  d.seed = 4;
  Fixture f;
  f.scene = make_scene(d);
  const auto instants = sample_daylight(d.location, d.start, 365.0, frames, 17);
  REQUIRE(instants);
  f.rendering = render_sequence(f.scene, *instants, RenderOptions{quantize});
  f.gray = to_grayscale(f.rendering.color);
  return f;
}

}  // namespace

TEST_CASE("run_em is independent of worker count and pixel subsets") {
  const Fixture f = make_fixture("city", 24, 80, true);
  EmConfig one;
  one.workers = 1;
  EmConfig many;
  many.workers = 4;
  const EmResult a = run_em(f.gray, f.rendering.lights, one);
  const EmResult b = run_em(f.gray, f.rendering.lights, many);
  CHECK(a.shadows.labels == b.shadows.labels);
  CHECK((a.shadows.converged == b.shadows.converged).all());
  CHECK(a.iterations == b.iterations);
  CHECK(a.model.aux.cwiseEqual(b.model.aux).count() + (a.model.aux.array().isNaN()).count() == a.model.aux.size());

  // A subset sequence of every third pixel.
  Mask keep = Mask::Constant(f.gray.grid.grid_size(), false);
  for (Index g = 0; g < keep.size(); g += 3) keep[g] = true;
  ImageSequence sub = f.gray;
  sub.grid = PixelGrid(f.gray.grid.width(), f.gray.grid.height(), keep);
  sub.channels[0].resize(f.gray.frame_count(), sub.grid.pixel_count());
  for (Index x = 0; x < sub.grid.pixel_count(); ++x) {
    sub.channels[0].col(x) = f.gray.channels[0].col(f.gray.grid.pixel_at(sub.grid.grid_index(x)));
  }
  const EmResult s = run_em(sub, f.rendering.lights, one);
  for (Index x = 0; x < sub.grid.pixel_count(); ++x) {
    CHECK(s.shadows.labels.col(x) == a.shadows.labels.col(f.gray.grid.pixel_at(sub.grid.grid_index(x))));
  }
}

TEST_CASE("iteration cap marks unconverged pixels") {
  const Fixture f = make_fixture("city", 16, 60, true);
  EmConfig capped;
  capped.max_iterations = 1;
  const EmResult r = run_em(f.gray, f.rendering.lights, capped);
  CHECK(r.unconverged_count() > 0);
  CHECK((r.iterations.array() <= 1).all());
  const EmResult full = run_em(f.gray, f.rendering.lights, EmConfig{});
  CHECK(full.unconverged_count() <= r.unconverged_count());
}

TEST_CASE("night frames are excluded and reported as shadow") {
  std::mt19937_64 rng(19);
  LightingTable lights = random_lights(30, rng);
  Eigen::VectorXd intensity(30);
  const Eigen::Vector3d n(0, 0, 1);
  for (Index t = 0; t < 30; ++t) intensity[t] = 120 * (lights.directions.col(t).dot(n) + 0.2);
  lights.directions.col(4) = Eigen::Vector3d(0, 0.8, -0.6);
  lights.above_horizon[4] = false;
  intensity[4] = 250;  // would be a wild outlier if it entered the fit
  const EmResult r = run_em(gray_sequence(intensity), lights, EmConfig{});
  CHECK(r.shadows.labels(4, 0) == 0);
  REQUIRE(r.model.defined[0]);
  CHECK(r.model.normal.col(0).isApprox(n, 1e-9));
  CHECK(r.model.gray_albedo[0] == doctest::Approx(120.0));
}

TEST_CASE("force-lit pixels are fitted once and never relabeled") {
  std::mt19937_64 rng(23);
  const LightingTable lights = random_lights(12, rng);
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(12, 10, 200);
  Mask force = Mask::Constant(1, true);
  const EmResult r = run_em(gray_sequence(v), lights, EmConfig{}, &force);
  CHECK((r.shadows.labels.array() == 1).all());
  CHECK(r.iterations[0] == 0);
  CHECK(r.shadows.converged[0]);
  CHECK(r.force_lit[0]);
}

TEST_CASE("saturation repair examples") {
  ImageSequence seq;
  seq.grid = PixelGrid::full(2, 1);
  seq.timestamps = hourly(2);
  Eigen::MatrixXd r(2, 2), g(2, 2), b(2, 2);
  // Pixel 0: clean frame (100, 200, 50) then a clipped frame (255, 255, 63.75).
  // Pixel 1: white throughout.
  r << 100, 255, 255, 255;
  g << 200, 255, 255, 255;
  b << 50, 255, 63.75, 255;
  seq.channels = {r, g, b};
  const SaturationRepair out = repair_saturation(seq);
  CHECK(out.sequence.channels[0](1, 0) == doctest::Approx(127.5));
  CHECK(out.sequence.channels[1](1, 0) == doctest::Approx(255.0));
  CHECK(out.sequence.channels[2](1, 0) == 63.75);
  CHECK(out.sequence.channels[0](0, 0) == 100.0);
  CHECK(out.repaired_values == 2);
  CHECK_FALSE(out.force_lit[0]);
  CHECK(out.force_lit[1]);

  seq.channels = {Eigen::MatrixXd::Constant(2, 2, 10), Eigen::MatrixXd::Constant(2, 2, 20),
                  Eigen::MatrixXd::Constant(2, 2, 30)};
  const SaturationRepair none = repair_saturation(seq);
  for (int c = 0; c < 3; ++c) CHECK(none.sequence.channels[c] == seq.channels[c]);
  CHECK(none.repaired_values == 0);
  CHECK_FALSE(none.force_lit.any());
}

TEST_CASE("color albedo formula special cases") {
  ImageSequence seq;
  seq.grid = PixelGrid::full(1, 1);
  seq.timestamps = hourly(1);
  seq.channels = {Eigen::MatrixXd::Constant(1, 1, 100), Eigen::MatrixXd::Constant(1, 1, 100),
                  Eigen::MatrixXd::Constant(1, 1, 100)};
  LightingTable lights;
  lights.directions = direction_from_angles(0.0, 30.0);  // L.N = 0.5 for N = up
  lights.above_horizon = Mask::Constant(1, true);
  EmResult r;
  r.shadows = ShadowVolume::filled(seq.grid, seq.timestamps, 1);
  r.model = PixelModel::undefined(1);
  r.model.set_aux(0, Eigen::Vector4d(0, 0, 1, 0.5));
  PixelModel m = finalize_color(seq, lights, r);
  CHECK(m.albedo_rgb.col(0).isApprox(Eigen::Vector3d::Constant(100.0)));

  // All shadowed with A > 0: mean intensity over A.
  ImageSequence two = seq;
  two.timestamps = hourly(2);
  two.channels = {Eigen::Vector2d(30, 50), Eigen::Vector2d(60, 100), Eigen::Vector2d(15, 25)};
  LightingTable l2;
  l2.directions = Eigen::Matrix3Xd(3, 2);
  l2.directions << lights.directions, lights.directions;
  l2.above_horizon = Mask::Constant(2, true);
  EmResult r2;
  r2.shadows = ShadowVolume::filled(two.grid, two.timestamps, 0);
  r2.model = PixelModel::undefined(1);
  r2.model.set_aux(0, Eigen::Vector4d(0, 0, 1, 0.25));
  m = finalize_color(two, l2, r2);
  CHECK(m.albedo_rgb.col(0).isApprox(Eigen::Vector3d(40, 80, 20) / 0.25));

  // Zero skylight and all shadow: every denominator vanishes.
  r2.model.set_aux(0, Eigen::Vector4d(0, 0, 1, 0.0));
  m = finalize_color(two, l2, r2);
  CHECK(m.albedo_rgb.col(0).array().isNaN().all());
}

TEST_CASE("color albedo recovered from an exact rendering") {
  const Fixture f = make_fixture("city", 24, 120, false);
  const EmResult r = run_em(f.gray, f.rendering.lights, EmConfig{});
  const PixelModel m = finalize_color(f.rendering.color, f.rendering.lights, r);
  const double exposure = f.scene.descriptor.exposure;
  Index checked = 0;
  for (Index x = 0; x < f.gray.pixel_count(); ++x) {
    if (r.shadows.labels.col(x) != f.rendering.truth.labels.col(x) || !m.defined[x]) continue;
    const Index g = f.gray.grid.grid_index(x);
    CHECK((m.albedo_rgb.col(x) - exposure * f.scene.albedo.col(g)).cwiseAbs().maxCoeff() <= 1e-4);
    ++checked;
  }
  CHECK(checked > f.gray.pixel_count() * 9 / 10);
}

TEST_CASE("configuration validation") {
  EmConfig c;
  c.max_iterations = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = EmConfig{};
  c.rank_tolerance = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
