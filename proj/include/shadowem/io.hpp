// Persistence: images (PNG, PGM/PPM), sequence manifests, shadow volume
// directories, model maps, label directories, table CSVs and scene
// descriptors.
//
// Text files are line oriented. A line starting with `identifier:` (the ':'
// before any ',') is a `key: value` header; any other non-blank line is a
// comma-separated row. Blank lines and lines starting with '#' are ignored. Relative file
// names resolve against the directory holding the text file.
#pragma once

#include "shadowem/core.hpp"
#include "shadowem/metrics.hpp"
#include "shadowem/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace shadowem {

namespace fs = std::filesystem;

class IoError : public DataError {
 public:
  enum class Kind {
    MissingFile,
    Decode,
    DimensionMismatch,
    NonMonotoneTimestamps,
    Syntax,
    FrameCountMismatch,
    Write,
  };

  IoError(Kind kind, const std::string& message) : DataError(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

const char* io_error_name(IoError::Kind kind);

/// 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int row, int col, int channel = 0) {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + channel];
  }
  std::uint8_t at(int row, int col, int channel = 0) const {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + channel];
  }
  static Image blank(int width, int height, int channels, std::uint8_t value = 0);
};

/// Format chosen by extension: .png, .pgm or .ppm. Alpha is dropped, palette
/// and low bit depths are expanded; 16-bit data is rejected.
Image read_image(const fs::path& path);
void write_image(const fs::path& path, const Image& image);

struct KeyValueFile {
  std::map<std::string, std::string> headers;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> row_lines;  // 1-based source line of each row
};

KeyValueFile read_key_value(const fs::path& path);
/// Header lookup; throws a Syntax error naming the file when `key` is absent.
const std::string& require_key(const KeyValueFile& file, const std::string& key, const fs::path& path);

struct SequenceManifest {
  int version = 1;
  Geolocation location;
  std::string sky_mask;  // empty: every pixel is scene
  std::vector<std::pair<std::string, UtcTime>> frames;
};

SequenceManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const SequenceManifest& manifest);

/// Loads a manifest and its images. RGB frames give a three-channel
/// sequence, gray frames a single channel. Sky-mask cells that are nonzero
/// are scene.
ImageSequence load_sequence(const fs::path& manifest_path);

/// Writes frame_NNNN.png, sky_mask.png and manifest.txt into `dir`.
/// Intensities are rounded and clamped to [0, 255]. Returns the manifest path.
fs::path save_sequence(const ImageSequence& seq, const fs::path& dir);

/// volume.txt plus one PGM per frame (255 lit, 0 shadow, 128 sky) and
/// converged.pgm (255 converged, 0 not, 128 sky).
void save_shadow_volume(const ShadowVolume& volume, const fs::path& dir);
ShadowVolume load_shadow_volume(const fs::path& dir);

/// Raw little-endian float32 planes, one after another, row-major over the
/// grid. Sky cells hold NaN.
void write_float_planes(const fs::path& path, const PixelGrid& grid, const Eigen::MatrixXd& values);
/// Returns a planes x p matrix over the scene pixels of `grid`.
Eigen::MatrixXd read_float_planes(const fs::path& path, const PixelGrid& grid, Index planes);

/// Hue follows the normal's compass azimuth, lightness is
/// 1 - zenith / 180 degrees. NaN normals and sky cells are black.
Image normal_visualization(const PixelGrid& grid, const Eigen::Matrix3Xd& normals);
Eigen::Vector3d normal_color(const Eigen::Vector3d& normal);

/// model.txt, albedo.png (scaled to the brightest defined albedo),
/// albedo.f32 (R,G,B), normals.f32 (E,N,U), skylight.f32, gray_albedo.f32,
/// scene_mask.pgm and normals_vis.png. Undefined pixels are NaN.
void save_model(const PixelModel& model, const PixelGrid& grid, const fs::path& dir);

struct LoadedModel {
  PixelGrid grid;
  PixelModel model;
  double albedo_png_scale = 1.0;
};
LoadedModel load_model(const fs::path& dir);

/// labels.txt rows are `frame,file` where frame is a 0-based index or a
/// timestamp. Label images: 255 lit, 0 shadow, anything else unknown.
/// Timestamps need `timestamps` to resolve them.
LabelSet load_labels(const fs::path& dir, const std::vector<UtcTime>* timestamps = nullptr);
void save_labels(const LabelSet& labels, const fs::path& dir);

std::vector<TableRow> parse_table_csv(const std::string& text, const std::string& source = "<csv>");
std::vector<TableRow> read_table_csv(const fs::path& path);
void write_table_csv(const fs::path& path, const std::vector<TableRow>& rows);

/// Keys: scene, size, seed, latitude, longitude, start, exposure, sky_rows.
/// Missing keys keep their defaults.
SceneDescriptor read_scene_descriptor(const fs::path& path);
void write_scene_descriptor(const fs::path& path, const SceneDescriptor& descriptor);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace shadowem
