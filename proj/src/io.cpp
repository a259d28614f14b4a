#include "shadowem/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace shadowem {

namespace {

std::string quoted(const fs::path& path) { return "'" + path.string() + "'"; }

[[noreturn]] void fail(IoError::Kind kind, const std::string& message) { throw IoError(kind, message); }

[[noreturn]] void syntax(const fs::path& path, int line, const std::string& message) {
  fail(IoError::Kind::Syntax, path.string() + ":" + std::to_string(line) + ": " + message);
}

void require_file(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) fail(IoError::Kind::MissingFile, "missing file " + quoted(path));
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

bool is_identifier(std::string_view s) {
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(), [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_'; });
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end;
}

template <typename T>
T header_number(const KeyValueFile& file, const std::string& key, const fs::path& path) {
  T value{};
  const std::string& text = require_key(file, key, path);
  if (!parse_number(text, value)) {
    fail(IoError::Kind::Syntax, path.string() + ": bad value '" + text + "' for key '" + key + "'");
  }
  return value;
}

std::string number_text(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

UtcTime timestamp_field(const std::string& text, const fs::path& path, int line) {
  try {
    return parse_utc(text);
  } catch (const std::exception& e) {
    syntax(path, line, e.what());
  }
}

fs::path resolve(const fs::path& base_file, const std::string& name) {
  const fs::path p(name);
  return p.is_absolute() ? p : base_file.parent_path() / p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(IoError::Kind::Write, "cannot create directory " + quoted(dir) + ": " + ec.message());
}

std::string frame_name(const char* prefix, Index t, const char* extension) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04lld%s", prefix, static_cast<long long>(t), extension);
  return buf;
}

// --- PNG -------------------------------------------------------------------

Image read_png(const fs::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail(IoError::Kind::Decode, "cannot decode PNG " + quoted(path) + ": " + png.message);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    fail(IoError::Kind::Decode, "16-bit PNG not supported: " + quoted(path));
  }
  const bool color = png.format & PNG_FORMAT_FLAG_COLOR;
  const bool alpha = png.format & PNG_FORMAT_FLAG_ALPHA;
  png.format = (color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY) | (alpha ? PNG_FORMAT_FLAG_ALPHA : 0U);
  const int stored = (color ? 3 : 1) + (alpha ? 1 : 0);
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    fail(IoError::Kind::Decode, "cannot decode PNG " + quoted(path) + ": " + png.message);
  }
  Image img = Image::blank(static_cast<int>(png.width), static_cast<int>(png.height), color ? 3 : 1);
  const std::size_t cells = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < cells; ++i) {
    for (int c = 0; c < img.channels; ++c) img.pixels[i * img.channels + c] = buffer[i * stored + c];
  }
  return img;
}

void write_png(const fs::path& path, const Image& img) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    fail(IoError::Kind::Write, "cannot write PNG " + quoted(path) + ": " + png.message);
  }
}

// --- Netpbm ----------------------------------------------------------------

class PnmReader {
 public:
  PnmReader(std::string data, const fs::path& path) : data_(std::move(data)), path_(path) {}

  int integer() {
    skip_space();
    int value = 0;
    auto [ptr, ec] = std::from_chars(data_.data() + pos_, data_.data() + data_.size(), value);
    if (ec != std::errc{} || value < 0) fail(IoError::Kind::Decode, "malformed netpbm header in " + quoted(path_));
    pos_ = static_cast<std::size_t>(ptr - data_.data());
    return value;
  }

  // Exactly one whitespace byte separates the header from binary data.
  void end_header() {
    if (pos_ >= data_.size() || !std::isspace(static_cast<unsigned char>(data_[pos_]))) {
      fail(IoError::Kind::Decode, "malformed netpbm header in " + quoted(path_));
    }
    ++pos_;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  const std::uint8_t* cursor() const { return reinterpret_cast<const std::uint8_t*>(data_.data() + pos_); }

 private:
  void skip_space() {
    while (pos_ < data_.size()) {
      if (data_[pos_] == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(data_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string data_;
  const fs::path& path_;
  std::size_t pos_ = 2;
};

Image read_pnm(const fs::path& path) {
  const std::string data = read_text(path);
  if (data.size() < 2 || data[0] != 'P' || !std::strchr("2356", data[1])) {
    fail(IoError::Kind::Decode, "not a PGM/PPM file: " + quoted(path));
  }
  const char kind = data[1];
  const bool ascii = kind == '2' || kind == '3';
  const int channels = (kind == '3' || kind == '6') ? 3 : 1;
  PnmReader in(data, path);
  const int width = in.integer();
  const int height = in.integer();
  const int maxval = in.integer();
  if (width <= 0 || height <= 0) fail(IoError::Kind::Decode, "empty netpbm image " + quoted(path));
  if (maxval <= 0 || maxval > 255) {
    fail(IoError::Kind::Decode, "netpbm maxval must be 1..255 in " + quoted(path));
  }
  Image img = Image::blank(width, height, channels);
  const auto rescale = [maxval](int v) {
    return static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  };
  if (ascii) {
    for (std::uint8_t& px : img.pixels) {
      const int v = in.integer();
      if (v > maxval) fail(IoError::Kind::Decode, "sample above maxval in " + quoted(path));
      px = rescale(v);
    }
  } else {
    in.end_header();
    if (in.remaining() < img.pixels.size()) fail(IoError::Kind::Decode, "truncated netpbm data in " + quoted(path));
    const std::uint8_t* src = in.cursor();
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      if (src[i] > maxval) fail(IoError::Kind::Decode, "sample above maxval in " + quoted(path));
      img.pixels[i] = rescale(src[i]);
    }
  }
  return img;
}

void write_pnm(const fs::path& path, const Image& img) {
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  write_text(path, out);
}

// --- float planes ----------------------------------------------------------

void append_float(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(bits & 0xffU));
    bits >>= 8;
  }
}

float decode_float(const unsigned char* bytes) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | bytes[i];
  return std::bit_cast<float>(bits);
}

Image mask_image(const PixelGrid& grid, const auto& value_of) {
  Image img = Image::blank(grid.width(), grid.height(), 1, 128);
  for (Index x = 0; x < grid.pixel_count(); ++x) img.pixels[static_cast<std::size_t>(grid.grid_index(x))] = value_of(x);
  return img;
}

// 255 for scene cells, 0 for sky.
Image scene_mask_image(const PixelGrid& grid) {
  Image img = Image::blank(grid.width(), grid.height(), 1, 0);
  for (Index g = 0; g < grid.grid_size(); ++g) {
    if (grid.is_scene(g)) img.pixels[static_cast<std::size_t>(g)] = 255;
  }
  return img;
}

}  // namespace

const char* io_error_name(IoError::Kind kind) {
  switch (kind) {
    case IoError::Kind::MissingFile:
      return "missing file";
    case IoError::Kind::Decode:
      return "decode error";
    case IoError::Kind::DimensionMismatch:
      return "dimension mismatch";
    case IoError::Kind::NonMonotoneTimestamps:
      return "non-monotone timestamps";
    case IoError::Kind::Syntax:
      return "syntax error";
    case IoError::Kind::FrameCountMismatch:
      return "frame count mismatch";
    case IoError::Kind::Write:
      return "write error";
  }
  return "io error";
}

Image Image::blank(int width, int height, int channels, std::uint8_t value) {
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(width) * height * channels, value);
  return img;
}

std::string read_text(const fs::path& path) {
  require_file(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(IoError::Kind::MissingFile, "cannot open " + quoted(path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(IoError::Kind::Write, "cannot write " + quoted(path));
}

Image read_image(const fs::path& path) {
  require_file(path);
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm(path);
  fail(IoError::Kind::Decode, "unsupported image format " + quoted(path));
}

void write_image(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) fail(IoError::Kind::Write, "images need 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    fail(IoError::Kind::Write, "image buffer size does not match its dimensions");
  }
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, image);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    if (ext == ".pgm" && image.channels != 1) fail(IoError::Kind::Write, "PGM needs a gray image");
    if (ext == ".ppm" && image.channels != 3) fail(IoError::Kind::Write, "PPM needs an RGB image");
    return write_pnm(path, image);
  }
  fail(IoError::Kind::Write, "unsupported image format " + quoted(path));
}

KeyValueFile read_key_value(const fs::path& path) {
  const std::string text = read_text(path);
  KeyValueFile file;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    const auto colon = s.find(':');
    const auto comma = s.find(',');
    const std::string key = colon == std::string::npos ? std::string() : trim(std::string_view(s).substr(0, colon));
    if (is_identifier(key) && (comma == std::string::npos || colon < comma)) {
      if (!file.headers.emplace(key, trim(std::string_view(s).substr(colon + 1))).second) {
        syntax(path, line, "duplicate key '" + key + "'");
      }
    } else if (comma != std::string::npos) {
      std::vector<std::string> fields;
      std::size_t start = 0;
      for (;;) {
        const auto next = s.find(',', start);
        fields.push_back(trim(std::string_view(s).substr(start, next - start)));
        if (next == std::string::npos) break;
        start = next + 1;
      }
      file.rows.push_back(std::move(fields));
      file.row_lines.push_back(line);
    } else {
      syntax(path, line, "expected 'key: value' or a comma-separated row");
    }
  }
  return file;
}

const std::string& require_key(const KeyValueFile& file, const std::string& key, const fs::path& path) {
  auto it = file.headers.find(key);
  if (it == file.headers.end()) fail(IoError::Kind::Syntax, path.string() + ": missing key '" + key + "'");
  return it->second;
}

SequenceManifest read_manifest(const fs::path& path) {
  const KeyValueFile file = read_key_value(path);
  SequenceManifest m;
  m.version = header_number<int>(file, "version", path);
  if (m.version != 1) fail(IoError::Kind::Syntax, path.string() + ": unsupported manifest version");
  m.location.latitude_deg = header_number<double>(file, "latitude", path);
  m.location.longitude_deg = header_number<double>(file, "longitude", path);
  try {
    m.location.validate();
  } catch (const std::exception& e) {
    fail(IoError::Kind::Syntax, path.string() + ": " + e.what());
  }
  if (auto it = file.headers.find("sky_mask"); it != file.headers.end()) m.sky_mask = it->second;
  for (std::size_t i = 0; i < file.rows.size(); ++i) {
    const auto& row = file.rows[i];
    if (row.size() != 2 || row[0].empty()) syntax(path, file.row_lines[i], "expected 'image,timestamp'");
    m.frames.emplace_back(row[0], timestamp_field(row[1], path, file.row_lines[i]));
    if (i > 0 && m.frames[i].second <= m.frames[i - 1].second) {
      fail(IoError::Kind::NonMonotoneTimestamps, path.string() + ":" + std::to_string(file.row_lines[i]) +
                                                     ": timestamp " + row[1] + " is not after the previous frame");
    }
  }
  if (m.frames.empty()) fail(IoError::Kind::FrameCountMismatch, path.string() + ": manifest lists no frames");
  return m;
}

void write_manifest(const fs::path& path, const SequenceManifest& m) {
  std::string out = "version: " + std::to_string(m.version) + "\n";
  out += "latitude: " + number_text(m.location.latitude_deg) + "\n";
  out += "longitude: " + number_text(m.location.longitude_deg) + "\n";
  if (!m.sky_mask.empty()) out += "sky_mask: " + m.sky_mask + "\n";
  for (const auto& [image, t] : m.frames) out += image + "," + format_utc(t) + "\n";
  write_text(path, out);
}

ImageSequence load_sequence(const fs::path& manifest_path) {
  const SequenceManifest m = read_manifest(manifest_path);
  const Image first = read_image(resolve(manifest_path, m.frames.front().first));
  const int width = first.width;
  const int height = first.height;

  Mask scene = Mask::Constant(static_cast<Index>(width) * height, true);
  if (!m.sky_mask.empty()) {
    const fs::path mask_path = resolve(manifest_path, m.sky_mask);
    const Image mask = read_image(mask_path);
    if (mask.width != width || mask.height != height) {
      fail(IoError::Kind::DimensionMismatch, "sky mask " + quoted(mask_path) + " is " + std::to_string(mask.width) +
                                                 "x" + std::to_string(mask.height) + ", frames are " +
                                                 std::to_string(width) + "x" + std::to_string(height));
    }
    for (Index g = 0; g < scene.size(); ++g) {
      scene[g] = mask.pixels[static_cast<std::size_t>(g) * mask.channels] != 0;
    }
  }

  ImageSequence seq;
  seq.grid = PixelGrid(width, height, std::move(scene));
  seq.location = m.location;
  const auto n = static_cast<Index>(m.frames.size());
  const Index p = seq.grid.pixel_count();
  seq.channels.assign(static_cast<std::size_t>(first.channels), Eigen::MatrixXd(n, p));
  for (Index t = 0; t < n; ++t) {
    const fs::path image_path = resolve(manifest_path, m.frames[static_cast<std::size_t>(t)].first);
    const Image img = t == 0 ? first : read_image(image_path);
    if (img.width != width || img.height != height || img.channels != first.channels) {
      fail(IoError::Kind::DimensionMismatch, "frame " + quoted(image_path) + " does not match the first frame's " +
                                                 std::to_string(width) + "x" + std::to_string(height) + "x" +
                                                 std::to_string(first.channels) + " layout");
    }
    for (Index x = 0; x < p; ++x) {
      const auto g = static_cast<std::size_t>(seq.grid.grid_index(x));
      for (int c = 0; c < img.channels; ++c) {
        seq.channels[static_cast<std::size_t>(c)](t, x) = img.pixels[g * img.channels + c];
      }
    }
    seq.timestamps.push_back(m.frames[static_cast<std::size_t>(t)].second);
  }
  return seq;
}

fs::path save_sequence(const ImageSequence& seq, const fs::path& dir) {
  if (seq.channel_count() != 1 && seq.channel_count() != 3) {
    throw std::invalid_argument("save_sequence needs 1 or 3 channels");
  }
  ensure_dir(dir);
  const PixelGrid& grid = seq.grid;
  const auto channels = static_cast<int>(seq.channel_count());
  SequenceManifest m;
  m.location = seq.location;
  m.sky_mask = "sky_mask.png";
  write_image(dir / m.sky_mask, scene_mask_image(grid));
  for (Index t = 0; t < seq.frame_count(); ++t) {
    Image img = Image::blank(grid.width(), grid.height(), channels, 0);
    for (Index x = 0; x < seq.pixel_count(); ++x) {
      const auto g = static_cast<std::size_t>(grid.grid_index(x));
      for (int c = 0; c < channels; ++c) {
        const double v = seq.channels[static_cast<std::size_t>(c)](t, x);
        img.pixels[g * channels + c] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
    const std::string name = frame_name("frame", t, ".png");
    write_image(dir / name, img);
    m.frames.emplace_back(name, seq.timestamps[static_cast<std::size_t>(t)]);
  }
  const fs::path manifest = dir / "manifest.txt";
  write_manifest(manifest, m);
  return manifest;
}

void save_shadow_volume(const ShadowVolume& volume, const fs::path& dir) {
  volume.validate();
  if (volume.frame_count() == 0) fail(IoError::Kind::FrameCountMismatch, "cannot save a volume with no frames");
  ensure_dir(dir);
  const PixelGrid& grid = volume.grid;
  std::string header = "width: " + std::to_string(grid.width()) + "\nheight: " + std::to_string(grid.height()) +
                       "\nframes: " + std::to_string(volume.frame_count()) +
                       "\npixels: " + std::to_string(volume.pixel_count()) + "\nconverged: converged.pgm\n";
  write_image(dir / "converged.pgm",
              mask_image(grid, [&](Index x) { return std::uint8_t(volume.converged[x] ? 255 : 0); }));
  for (Index t = 0; t < volume.frame_count(); ++t) {
    const std::string name = frame_name("mask", t, ".pgm");
    write_image(dir / name, mask_image(grid, [&](Index x) { return std::uint8_t(volume.labels(t, x) ? 255 : 0); }));
    header += name + "," + format_utc(volume.timestamps[static_cast<std::size_t>(t)]) + "\n";
  }
  write_text(dir / "volume.txt", header);
}

ShadowVolume load_shadow_volume(const fs::path& dir) {
  const fs::path header_path = dir / "volume.txt";
  const KeyValueFile file = read_key_value(header_path);
  const int width = header_number<int>(file, "width", header_path);
  const int height = header_number<int>(file, "height", header_path);
  const Index frames = header_number<Index>(file, "frames", header_path);
  const Index pixels = header_number<Index>(file, "pixels", header_path);
  if (width <= 0 || height <= 0) fail(IoError::Kind::Syntax, header_path.string() + ": bad dimensions");
  if (frames <= 0) fail(IoError::Kind::FrameCountMismatch, header_path.string() + ": volume has no frames");
  if (static_cast<Index>(file.rows.size()) != frames) {
    fail(IoError::Kind::FrameCountMismatch, header_path.string() + ": header says " + std::to_string(frames) +
                                                " frames but lists " + std::to_string(file.rows.size()));
  }

  const fs::path converged_path = resolve(header_path, require_key(file, "converged", header_path));
  const Image conv = read_image(converged_path);
  const auto check_dims = [&](const Image& img, const fs::path& path) {
    if (img.width != width || img.height != height || img.channels != 1) {
      fail(IoError::Kind::DimensionMismatch, quoted(path) + " is not a " + std::to_string(width) + "x" +
                                                 std::to_string(height) + " gray mask");
    }
  };
  check_dims(conv, converged_path);
  Mask scene(static_cast<Index>(width) * height);
  for (Index g = 0; g < scene.size(); ++g) scene[g] = conv.pixels[static_cast<std::size_t>(g)] != 128;

  ShadowVolume volume;
  volume.grid = PixelGrid(width, height, scene);
  if (volume.grid.pixel_count() != pixels) {
    fail(IoError::Kind::DimensionMismatch, header_path.string() + ": header says " + std::to_string(pixels) +
                                               " pixels but the masks hold " +
                                               std::to_string(volume.grid.pixel_count()));
  }
  volume.labels.resize(frames, pixels);
  volume.converged.resize(pixels);
  const auto binary = [](std::uint8_t v, const fs::path& path) {
    if (v != 0 && v != 255) fail(IoError::Kind::Decode, quoted(path) + " holds a value other than 0, 128 or 255");
    return v == 255;
  };
  for (Index x = 0; x < pixels; ++x) {
    volume.converged[x] = binary(conv.pixels[static_cast<std::size_t>(volume.grid.grid_index(x))], converged_path);
  }
  for (Index t = 0; t < frames; ++t) {
    const auto& row = file.rows[static_cast<std::size_t>(t)];
    const int line = file.row_lines[static_cast<std::size_t>(t)];
    if (row.size() != 2) syntax(header_path, line, "expected 'mask,timestamp'");
    volume.timestamps.push_back(timestamp_field(row[1], header_path, line));
    if (t > 0 && volume.timestamps.back() <= volume.timestamps[static_cast<std::size_t>(t - 1)]) {
      fail(IoError::Kind::NonMonotoneTimestamps, header_path.string() + ":" + std::to_string(line) +
                                                     ": timestamps must increase");
    }
    const fs::path mask_path = resolve(header_path, row[0]);
    const Image mask = read_image(mask_path);
    check_dims(mask, mask_path);
    for (Index g = 0; g < volume.grid.grid_size(); ++g) {
      const std::uint8_t v = mask.pixels[static_cast<std::size_t>(g)];
      if ((v == 128) != !volume.grid.is_scene(g)) {
        fail(IoError::Kind::DimensionMismatch, quoted(mask_path) + " sky cells differ from " + quoted(converged_path));
      }
      if (v != 128) volume.labels(t, volume.grid.pixel_at(g)) = binary(v, mask_path) ? 1 : 0;
    }
  }
  return volume;
}

void write_float_planes(const fs::path& path, const PixelGrid& grid, const Eigen::MatrixXd& values) {
  if (values.cols() != grid.pixel_count()) throw std::invalid_argument("float planes need one column per pixel");
  std::string out;
  out.reserve(static_cast<std::size_t>(values.rows() * grid.grid_size() * 4));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (Index plane = 0; plane < values.rows(); ++plane) {
    for (Index g = 0; g < grid.grid_size(); ++g) {
      const Index x = grid.pixel_at(g);
      append_float(out, x < 0 ? nan : static_cast<float>(values(plane, x)));
    }
  }
  write_text(path, out);
}

Eigen::MatrixXd read_float_planes(const fs::path& path, const PixelGrid& grid, Index planes) {
  const std::string data = read_text(path);
  const auto expected = static_cast<std::size_t>(planes * grid.grid_size() * 4);
  if (data.size() != expected) {
    fail(IoError::Kind::DimensionMismatch, quoted(path) + " holds " + std::to_string(data.size()) + " bytes, expected " +
                                               std::to_string(expected));
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  Eigen::MatrixXd values(planes, grid.pixel_count());
  for (Index plane = 0; plane < planes; ++plane) {
    for (Index x = 0; x < grid.pixel_count(); ++x) {
      const auto offset = static_cast<std::size_t>((plane * grid.grid_size() + grid.grid_index(x)) * 4);
      values(plane, x) = decode_float(bytes + offset);
    }
  }
  return values;
}

Eigen::Vector3d normal_color(const Eigen::Vector3d& n) {
  if (!n.allFinite()) return Eigen::Vector3d::Zero();
  constexpr double kPi = 3.14159265358979323846;
  const double zenith = std::acos(std::clamp(n.z() / n.norm(), -1.0, 1.0)) * 180.0 / kPi;
  double hue = std::atan2(n.x(), n.y()) * 180.0 / kPi;
  if (hue < 0.0) hue += 360.0;
  const double lightness = 1.0 - zenith / 180.0;
  // HSL with full saturation.
  const double chroma = (1.0 - std::abs(2.0 * lightness - 1.0));
  const double h = hue / 60.0;
  const double x = chroma * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  Eigen::Vector3d rgb;
  if (h < 1) rgb = {chroma, x, 0};
  else if (h < 2) rgb = {x, chroma, 0};
  else if (h < 3) rgb = {0, chroma, x};
  else if (h < 4) rgb = {0, x, chroma};
  else if (h < 5) rgb = {x, 0, chroma};
  else rgb = {chroma, 0, x};
  return (rgb.array() + (lightness - chroma / 2.0)).cwiseMax(0.0).cwiseMin(1.0);
}

Image normal_visualization(const PixelGrid& grid, const Eigen::Matrix3Xd& normals) {
  Image img = Image::blank(grid.width(), grid.height(), 3, 0);
  for (Index x = 0; x < grid.pixel_count(); ++x) {
    const Eigen::Vector3d rgb = normal_color(normals.col(x));
    const auto g = static_cast<std::size_t>(grid.grid_index(x));
    for (int c = 0; c < 3; ++c) img.pixels[g * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * rgb[c]));
  }
  return img;
}

void save_model(const PixelModel& model, const PixelGrid& grid, const fs::path& dir) {
  if (model.pixel_count() != grid.pixel_count()) throw std::invalid_argument("model and grid disagree on pixel count");
  ensure_dir(dir);

  double brightest = 0.0;
  for (Index x = 0; x < model.pixel_count(); ++x) {
    for (int c = 0; c < 3; ++c) {
      const double v = model.albedo_rgb(c, x);
      if (std::isfinite(v)) brightest = std::max(brightest, v);
    }
  }
  const double scale = brightest > 0.0 ? 255.0 / brightest : 1.0;
  Image albedo = Image::blank(grid.width(), grid.height(), 3, 0);
  for (Index x = 0; x < model.pixel_count(); ++x) {
    const auto g = static_cast<std::size_t>(grid.grid_index(x));
    for (int c = 0; c < 3; ++c) {
      const double v = model.albedo_rgb(c, x);
      albedo.pixels[g * 3 + c] =
          std::isfinite(v) ? static_cast<std::uint8_t>(std::clamp(std::round(v * scale), 0.0, 255.0)) : 0;
    }
  }
  write_image(dir / "albedo.png", albedo);
  write_image(dir / "scene_mask.pgm", scene_mask_image(grid));
  write_image(dir / "normals_vis.png", normal_visualization(grid, model.normal));
  write_float_planes(dir / "albedo.f32", grid, model.albedo_rgb);
  write_float_planes(dir / "normals.f32", grid, model.normal);
  write_float_planes(dir / "skylight.f32", grid, model.skylight.transpose());
  write_float_planes(dir / "gray_albedo.f32", grid, model.gray_albedo.transpose());

  std::string header = "width: " + std::to_string(grid.width()) + "\nheight: " + std::to_string(grid.height()) +
                       "\npixels: " + std::to_string(grid.pixel_count()) +
                       "\nlayout: float32 little-endian, planar, row-major, NaN for sky and undefined pixels" +
                       "\nscene_mask: scene_mask.pgm\nalbedo_png: albedo.png\nalbedo_png_scale: " +
                       number_text(scale) +
                       "\nalbedo: albedo.f32\nalbedo_channels: R G B\nnormals: normals.f32\nnormals_channels: E N U" +
                       "\nskylight: skylight.f32\ngray_albedo: gray_albedo.f32\nnormals_visualization: normals_vis.png\n";
  write_text(dir / "model.txt", header);
}

LoadedModel load_model(const fs::path& dir) {
  const fs::path header_path = dir / "model.txt";
  const KeyValueFile file = read_key_value(header_path);
  const int width = header_number<int>(file, "width", header_path);
  const int height = header_number<int>(file, "height", header_path);
  const Index pixels = header_number<Index>(file, "pixels", header_path);
  const fs::path mask_path = resolve(header_path, require_key(file, "scene_mask", header_path));
  const Image mask = read_image(mask_path);
  if (mask.width != width || mask.height != height || mask.channels != 1) {
    fail(IoError::Kind::DimensionMismatch, quoted(mask_path) + " does not match the model header");
  }
  Mask scene(static_cast<Index>(width) * height);
  for (Index g = 0; g < scene.size(); ++g) scene[g] = mask.pixels[static_cast<std::size_t>(g)] == 255;

  LoadedModel out;
  out.grid = PixelGrid(width, height, scene);
  if (out.grid.pixel_count() != pixels) {
    fail(IoError::Kind::DimensionMismatch, header_path.string() + ": pixel count does not match the scene mask");
  }
  out.albedo_png_scale = header_number<double>(file, "albedo_png_scale", header_path);
  const auto planes = [&](const char* key, Index count) {
    return read_float_planes(resolve(header_path, require_key(file, key, header_path)), out.grid, count);
  };
  PixelModel& m = out.model;
  m = PixelModel::undefined(pixels);
  m.albedo_rgb = planes("albedo", 3);
  m.normal = planes("normals", 3);
  m.skylight = planes("skylight", 1).transpose();
  m.gray_albedo = planes("gray_albedo", 1).transpose();
  for (Index x = 0; x < pixels; ++x) {
    m.defined[x] = std::isfinite(m.gray_albedo[x]);
    if (m.defined[x]) {
      m.aux.col(x).head<3>() = m.gray_albedo[x] * m.normal.col(x);
      m.aux(3, x) = m.gray_albedo[x] * m.skylight[x];
    }
  }
  return out;
}

LabelSet load_labels(const fs::path& dir, const std::vector<UtcTime>* timestamps) {
  const fs::path header_path = dir / "labels.txt";
  const KeyValueFile file = read_key_value(header_path);
  LabelSet set;
  set.width = header_number<int>(file, "width", header_path);
  set.height = header_number<int>(file, "height", header_path);
  for (std::size_t i = 0; i < file.rows.size(); ++i) {
    const auto& row = file.rows[i];
    const int line = file.row_lines[i];
    if (row.size() != 2) syntax(header_path, line, "expected 'frame,file'");
    LabelFrame lf;
    if (!parse_number(row[0], lf.frame)) {
      const UtcTime t = timestamp_field(row[0], header_path, line);
      if (!timestamps) syntax(header_path, line, "timestamp labels need the sequence timestamps");
      auto it = std::find(timestamps->begin(), timestamps->end(), t);
      if (it == timestamps->end()) {
        fail(IoError::Kind::FrameCountMismatch, header_path.string() + ":" + std::to_string(line) + ": no frame at " +
                                                    row[0]);
      }
      lf.frame = it - timestamps->begin();
    }
    const fs::path image_path = resolve(header_path, row[1]);
    const Image img = read_image(image_path);
    if (img.width != set.width || img.height != set.height) {
      fail(IoError::Kind::DimensionMismatch, quoted(image_path) + " is " + std::to_string(img.width) + "x" +
                                                 std::to_string(img.height) + ", labels are " +
                                                 std::to_string(set.width) + "x" + std::to_string(set.height));
    }
    lf.cells.resize(static_cast<std::size_t>(set.width) * set.height);
    for (std::size_t g = 0; g < lf.cells.size(); ++g) {
      const std::uint8_t v = img.pixels[g * img.channels];
      lf.cells[g] = v == 255 ? Label::Lit : v == 0 ? Label::Shadow : Label::Unknown;
    }
    set.frames.push_back(std::move(lf));
  }
  return set;
}

void save_labels(const LabelSet& labels, const fs::path& dir) {
  ensure_dir(dir);
  std::string header = "width: " + std::to_string(labels.width) + "\nheight: " + std::to_string(labels.height) + "\n";
  for (const LabelFrame& lf : labels.frames) {
    Image img = Image::blank(labels.width, labels.height, 1, 128);
    if (lf.cells.size() != img.pixels.size()) throw std::invalid_argument("label frame has the wrong cell count");
    for (std::size_t g = 0; g < lf.cells.size(); ++g) {
      img.pixels[g] = lf.cells[g] == Label::Lit ? 255 : lf.cells[g] == Label::Shadow ? 0 : 128;
    }
    const std::string name = frame_name("label", lf.frame, ".pgm");
    write_image(dir / name, img);
    header += std::to_string(lf.frame) + "," + name + "\n";
  }
  write_text(dir / "labels.txt", header);
}

std::vector<TableRow> parse_table_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  std::vector<TableRow> rows;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != "algorithm,strategy,scene,accuracy_percent") {
        fail(IoError::Kind::Syntax, source + ":" + std::to_string(number) + ": unexpected CSV header");
      }
      header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto next = line.find(',', start);
      fields.push_back(line.substr(start, next - start));
      if (next == std::string::npos) break;
      start = next + 1;
    }
    TableRow row;
    if (fields.size() != 4 || !parse_number(fields[3], row.accuracy_percent)) {
      fail(IoError::Kind::Syntax, source + ":" + std::to_string(number) + ": expected 4 fields with a numeric accuracy");
    }
    row.algorithm = fields[0];
    row.strategy = fields[1];
    row.scene = fields[2];
    rows.push_back(std::move(row));
  }
  if (!header) fail(IoError::Kind::Syntax, source + ": empty CSV");
  return rows;
}

std::vector<TableRow> read_table_csv(const fs::path& path) { return parse_table_csv(read_text(path), path.string()); }

void write_table_csv(const fs::path& path, const std::vector<TableRow>& rows) { write_text(path, format_csv(rows)); }

SceneDescriptor read_scene_descriptor(const fs::path& path) {
  const KeyValueFile file = read_key_value(path);
  if (!file.rows.empty()) syntax(path, file.row_lines.front(), "scene descriptors hold only key: value lines");
  SceneDescriptor d;
  for (const auto& [key, value] : file.headers) {
    bool ok = true;
    if (key == "scene") {
      d.scene = value;
    } else if (key == "size") {
      ok = parse_number(value, d.size);
    } else if (key == "seed") {
      ok = parse_number(value, d.seed);
    } else if (key == "latitude") {
      ok = parse_number(value, d.location.latitude_deg);
    } else if (key == "longitude") {
      ok = parse_number(value, d.location.longitude_deg);
    } else if (key == "start") {
      d.start = timestamp_field(value, path, 0);
    } else if (key == "exposure") {
      ok = parse_number(value, d.exposure);
    } else if (key == "sky_rows") {
      ok = parse_number(value, d.sky_rows);
    } else {
      fail(IoError::Kind::Syntax, path.string() + ": unknown key '" + key + "'");
    }
    if (!ok) fail(IoError::Kind::Syntax, path.string() + ": bad value '" + value + "' for key '" + key + "'");
  }
  return d;
}

void write_scene_descriptor(const fs::path& path, const SceneDescriptor& d) {
  write_text(path, "scene: " + d.scene + "\nsize: " + std::to_string(d.size) + "\nseed: " + std::to_string(d.seed) +
                       "\nlatitude: " + number_text(d.location.latitude_deg) +
                       "\nlongitude: " + number_text(d.location.longitude_deg) + "\nstart: " + format_utc(d.start) +
                       "\nexposure: " + number_text(d.exposure) + "\nsky_rows: " + std::to_string(d.sky_rows) + "\n");
}

}  // namespace shadowem
