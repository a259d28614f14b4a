#include "shadowem/core.hpp"

#include "shadowem/parallel.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

namespace shadowem {

namespace {

int parse_field(std::string_view text, std::size_t pos, std::size_t len) {
  int value = 0;
  if (pos + len > text.size()) throw DataError("timestamp too short: '" + std::string(text) + "'");
  auto [end, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
  if (ec != std::errc{} || end != text.data() + pos + len) {
    throw DataError("malformed timestamp: '" + std::string(text) + "'");
  }
  return value;
}

void expect_char(std::string_view text, std::size_t pos, std::string_view allowed) {
  if (pos >= text.size() || allowed.find(text[pos]) == std::string_view::npos) {
    throw DataError("malformed timestamp: '" + std::string(text) + "'");
  }
}

}  // namespace

UtcTime parse_utc(std::string_view text) {
  using namespace std::chrono;
  // YYYY-MM-DDTHH:MM:SS[Z]
  const int y = parse_field(text, 0, 4);
  expect_char(text, 4, "-");
  const int mo = parse_field(text, 5, 2);
  expect_char(text, 7, "-");
  const int d = parse_field(text, 8, 2);
  expect_char(text, 10, "T ");
  const int h = parse_field(text, 11, 2);
  expect_char(text, 13, ":");
  const int mi = parse_field(text, 14, 2);
  expect_char(text, 16, ":");
  const int s = parse_field(text, 17, 2);
  if (text.size() > 19 && !(text.size() == 20 && (text[19] == 'Z' || text[19] == 'z'))) {
    throw DataError("malformed timestamp (only UTC 'Z' suffix allowed): '" + std::string(text) + "'");
  }
  const year_month_day date{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!date.ok() || h > 23 || mi > 59 || s > 59) {
    throw DataError("timestamp out of range: '" + std::string(text) + "'");
  }
  return sys_days{date} + hours{h} + minutes{mi} + seconds{s};
}

std::string format_utc(UtcTime t) {
  using namespace std::chrono;
  const auto day_start = floor<days>(t);
  const year_month_day date{day_start};
  const hh_mm_ss tod{t - day_start};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()),
                static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                static_cast<long long>(tod.seconds().count()));
  return buf;
}

void Geolocation::validate() const {
  if (!(latitude_deg >= -90.0 && latitude_deg <= 90.0)) {
    throw std::invalid_argument("latitude outside [-90, 90]");
  }
  if (!(longitude_deg >= -180.0 && longitude_deg <= 180.0)) {
    throw std::invalid_argument("longitude outside [-180, 180]");
  }
}

PixelGrid::PixelGrid(int width, int height, Mask scene_mask)
    : width_(width), height_(height), mask_(std::move(scene_mask)) {
  if (width < 0 || height < 0 || mask_.size() != grid_size()) {
    throw std::invalid_argument("scene mask does not match grid dimensions");
  }
  lookup_.assign(static_cast<std::size_t>(grid_size()), -1);
  for (Index g = 0; g < grid_size(); ++g) {
    if (mask_[g]) {
      lookup_[static_cast<std::size_t>(g)] = static_cast<Index>(pixels_.size());
      pixels_.push_back(g);
    }
  }
}

PixelGrid PixelGrid::full(int width, int height) {
  return PixelGrid(width, height, Mask::Constant(static_cast<Index>(width) * height, true));
}

bool PixelGrid::operator==(const PixelGrid& other) const {
  return width_ == other.width_ && height_ == other.height_ && (mask_ == other.mask_).all();
}

void ImageSequence::validate(double max_intensity) const {
  location.validate();
  if (channels.size() != 1 && channels.size() != 3) {
    throw DataError("image sequence must have 1 or 3 channels");
  }
  for (const auto& c : channels) {
    if (c.rows() != frame_count() || c.cols() != pixel_count()) {
      throw DataError("channel shape does not match frames x pixels");
    }
    if (c.size() > 0 && !(c.minCoeff() >= 0.0 && c.maxCoeff() <= max_intensity)) {
      throw DataError("intensity outside [0, " + std::to_string(max_intensity) + "]");
    }
  }
  for (std::size_t t = 1; t < timestamps.size(); ++t) {
    if (timestamps[t] <= timestamps[t - 1]) {
      throw DataError("timestamps not strictly increasing at frame " + std::to_string(t));
    }
  }
}

ShadowVolume ShadowVolume::filled(const PixelGrid& grid, std::vector<UtcTime> timestamps,
                                  std::uint8_t value) {
  ShadowVolume sv;
  sv.grid = grid;
  const auto n = static_cast<Index>(timestamps.size());
  sv.timestamps = std::move(timestamps);
  sv.labels = LabelMatrix::Constant(n, grid.pixel_count(), value);
  sv.converged = Mask::Constant(grid.pixel_count(), true);
  return sv;
}

void ShadowVolume::validate() const {
  if (labels.rows() != static_cast<Index>(timestamps.size()) || labels.cols() != grid.pixel_count() ||
      converged.size() != grid.pixel_count()) {
    throw DataError("shadow volume dimensions are inconsistent");
  }
  if (labels.size() > 0 && labels.maxCoeff() > 1) throw DataError("shadow labels must be 0 or 1");
}

PixelModel PixelModel::undefined(Index pixels) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  PixelModel m;
  m.aux = Eigen::Matrix4Xd::Constant(4, pixels, nan);
  m.gray_albedo = Eigen::VectorXd::Constant(pixels, nan);
  m.normal = Eigen::Matrix3Xd::Constant(3, pixels, nan);
  m.skylight = Eigen::VectorXd::Constant(pixels, nan);
  m.albedo_rgb = Eigen::Matrix3Xd::Constant(3, pixels, nan);
  m.defined = Mask::Constant(pixels, false);
  return m;
}

bool PixelModel::set_aux(Index x, const Eigen::Vector4d& abcd) {
  const double rho = abcd.head<3>().norm();
  if (!(rho >= 1e-12)) {
    set_undefined(x);
    return false;
  }
  aux.col(x) = abcd;
  gray_albedo[x] = rho;
  normal.col(x) = abcd.head<3>() / rho;
  skylight[x] = abcd[3] / rho;
  defined[x] = true;
  return true;
}

void PixelModel::set_undefined(Index x) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  aux.col(x).setConstant(nan);
  gray_albedo[x] = nan;
  normal.col(x).setConstant(nan);
  skylight[x] = nan;
  albedo_rgb.col(x).setConstant(nan);
  defined[x] = false;
}

ImageSequence to_grayscale(const ImageSequence& seq) {
  if (seq.channels.size() == 1) return seq;
  if (seq.channels.size() != 3) throw DataError("grayscale conversion needs 1 or 3 channels");
  ImageSequence gray;
  gray.grid = seq.grid;
  gray.timestamps = seq.timestamps;
  gray.location = seq.location;
  gray.channels.push_back(luma(seq.channels[0], seq.channels[1], seq.channels[2]));
  return gray;
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {

void parallel_for_impl(Index count, int workers, void (*body)(void*, Index), void* context) {
  const int threads = resolve_workers(workers);
#pragma omp parallel for num_threads(threads) schedule(dynamic, 16)
  for (Index i = 0; i < count; ++i) body(context, i);
}

}  // namespace detail

}  // namespace shadowem
