// Shared domain types: pixel grids, image sequences, shadow volumes, per-pixel
// Lambertian models, lighting tables and ternary label masks.
#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace shadowem {

using Eigen::Index;

/// Seconds-resolution UTC instant.
using UtcTime = std::chrono::sys_seconds;

/// Parses "YYYY-MM-DDTHH:MM:SS[Z]" (a space may replace the 'T').
UtcTime parse_utc(std::string_view text);
std::string format_utc(UtcTime t);

/// Per-pixel boolean flags.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// n x p matrix of shadow labels; 1 = directly lit, 0 = shadowed.
using LabelMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Geolocation {
  double latitude_deg = 0.0;
  double longitude_deg = 0.0;

  void validate() const;
};

/// Image grid with a dense index over its non-sky pixels. Grid indices are
/// row-major; pixel indices enumerate the non-sky pixels in grid order.
class PixelGrid {
 public:
  PixelGrid() = default;
  PixelGrid(int width, int height, Mask scene_mask);

  static PixelGrid full(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  Index grid_size() const { return static_cast<Index>(width_) * height_; }
  Index pixel_count() const { return static_cast<Index>(pixels_.size()); }

  /// True for non-sky grid cells.
  const Mask& scene_mask() const { return mask_; }
  bool is_scene(Index grid_index) const { return mask_[grid_index]; }

  Index grid_index(Index pixel) const { return pixels_[static_cast<std::size_t>(pixel)]; }
  /// -1 for sky cells.
  Index pixel_at(Index grid_index) const { return lookup_[static_cast<std::size_t>(grid_index)]; }

  bool operator==(const PixelGrid& other) const;

 private:
  int width_ = 0;
  int height_ = 0;
  Mask mask_;
  std::vector<Index> pixels_;
  std::vector<Index> lookup_;
};

/// n registered frames restricted to the p non-sky pixels. Each channel is an
/// n x p matrix whose columns are per-pixel intensity trajectories.
struct ImageSequence {
  PixelGrid grid;
  std::vector<UtcTime> timestamps;
  Geolocation location;
  std::vector<Eigen::MatrixXd> channels;

  Index frame_count() const { return static_cast<Index>(timestamps.size()); }
  Index pixel_count() const { return grid.pixel_count(); }
  Index channel_count() const { return static_cast<Index>(channels.size()); }
  bool is_color() const { return channels.size() == 3; }

  /// Throws DataError when shapes, timestamp order or intensity range are
  /// inconsistent. `max_intensity` is relaxed after saturation repair.
  void validate(double max_intensity = 255.0) const;
};

/// Binary shadow labels S_t(x) plus per-pixel convergence flags.
struct ShadowVolume {
  PixelGrid grid;
  std::vector<UtcTime> timestamps;
  LabelMatrix labels;
  Mask converged;

  Index frame_count() const { return labels.rows(); }
  Index pixel_count() const { return labels.cols(); }

  static ShadowVolume filled(const PixelGrid& grid, std::vector<UtcTime> timestamps,
                             std::uint8_t value);
  void validate() const;
};

/// Per-pixel Lambertian parameters. Undefined pixels (rank-deficient or
/// otherwise unrecoverable) carry NaN in every field and `defined = false`.
struct PixelModel {
  Eigen::Matrix4Xd aux;          // (a, b, c, d): [a b c] = albedo * N, d = albedo * A
  Eigen::VectorXd gray_albedo;   // |(a, b, c)|
  Eigen::Matrix3Xd normal;       // unit, East-North-Up
  Eigen::VectorXd skylight;      // d / gray_albedo
  Eigen::Matrix3Xd albedo_rgb;   // filled by color finalization
  Mask defined;

  Index pixel_count() const { return aux.cols(); }

  static PixelModel undefined(Index pixels);

  /// Stores (a,b,c,d) for pixel x and derives albedo, normal and skylight.
  /// Returns false (and leaves the pixel undefined) when |(a,b,c)| < 1e-12.
  bool set_aux(Index x, const Eigen::Vector4d& abcd);
  void set_undefined(Index x);
};

/// Unit sun directions (East-North-Up), one column per frame.
struct LightingTable {
  Eigen::Matrix3Xd directions;
  Mask above_horizon;

  Index frame_count() const { return directions.cols(); }
  Index daylight_count() const { return above_horizon.count(); }
};

enum class Label : std::uint8_t { Shadow = 0, Lit = 1, Unknown = 2 };

/// Ternary ground truth for one frame over the full image grid.
struct LabelFrame {
  Index frame = 0;
  std::vector<Label> cells;  // row-major, width * height
};

struct LabelSet {
  int width = 0;
  int height = 0;
  std::vector<LabelFrame> frames;
};

/// ITU-R BT.601 luma.
template <typename R, typename G, typename B>
auto luma(const Eigen::MatrixBase<R>& r, const Eigen::MatrixBase<G>& g,
          const Eigen::MatrixBase<B>& b) {
  return (0.299 * r + 0.587 * g + 0.114 * b).eval();
}

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

/// Single-channel copy of `seq`; sequences that are already grayscale are
/// returned unchanged.
ImageSequence to_grayscale(const ImageSequence& seq);

}  // namespace shadowem
