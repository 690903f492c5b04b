// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "exnerf/error.hpp"

namespace exnerf {

namespace {

struct FileCloser {
  void operator()(std::FILE *f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path &path, const char *mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto *where = static_cast<std::string *>(png_get_error_ptr(png));
  throw IoError("PNG error in '" + *where + "': " + msg);
}

void png_warning_fn(png_structp, png_const_charp) {}

// bit_depth 8 or 16; channels 1 or 3. `rows` hold big-endian samples for 16-bit.
void write_png(const fs::path &path, int width, int height, int channels, int bit_depth,
               const std::vector<std::uint8_t> &bytes) {
  if (width <= 0 || height <= 0) throw InvalidArgument("write_png: empty image");
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  std::string where = path.string();
  {
    FilePtr f = open_file(tmp, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &where, png_error_fn, png_warning_fn);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    struct Guard {
      png_structp *p;
      png_infop *i;
      ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    for (int r = 0; r < height; ++r)
      png_write_row(png, const_cast<png_bytep>(bytes.data() + r * stride));
    png_write_end(png, nullptr);
    if (std::fflush(f.get()) != 0) throw IoError("failed writing '" + where + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;
};

// Reads a PNG, stripping alpha and expanding palettes / low bit depths.
PngData read_png(const fs::path &path, bool keep_16) {
  FilePtr f = open_file(path, "rb");
  std::string where = path.string();
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("'" + where + "' is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &where, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp *p;
    png_infop *i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16 && !keep_16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  PngData out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int r = 0; r < out.height; ++r) rows[r] = out.bytes.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return out;
}

}  // namespace

std::uint8_t quantize_channel(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

std::vector<std::uint8_t> quantize(const Image &img) {
  std::vector<std::uint8_t> out(img.rgb.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize_channel(img.rgb[i]);
  return out;
}

Image dequantize(int width, int height, const std::vector<std::uint8_t> &rgb) {
  Image img(width, height);
  if (rgb.size() != img.rgb.size()) throw InvalidArgument("dequantize: size mismatch");
  for (std::size_t i = 0; i < rgb.size(); ++i) img.rgb[i] = static_cast<float>(rgb[i]) / 255.0f;
  return img;
}

void write_png_rgb(const fs::path &path, const Image &img) {
  write_png(path, img.width, img.height, 3, 8, quantize(img));
}

Image read_png_rgb(const fs::path &path) {
  PngData d = read_png(path, false);
  if (d.channels == 1) {
    std::vector<std::uint8_t> rgb(d.bytes.size() * 3);
    for (std::size_t i = 0; i < d.bytes.size(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = d.bytes[i];
    return dequantize(d.width, d.height, rgb);
  }
  if (d.channels != 3) throw UnsupportedFormat("'" + path.string() + "': unsupported channel layout");
  return dequantize(d.width, d.height, d.bytes);
}

void write_png_gray8(const fs::path &path, int width, int height, const std::vector<std::uint8_t> &pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw InvalidArgument("write_png_gray8: size mismatch");
  write_png(path, width, height, 1, 8, pixels);
}

std::vector<std::uint8_t> read_png_gray8(const fs::path &path, int &width, int &height) {
  PngData d = read_png(path, false);
  width = d.width;
  height = d.height;
  if (d.channels == 1) return d.bytes;
  if (d.channels != 3) throw UnsupportedFormat("'" + path.string() + "': unsupported channel layout");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d.bytes[3 * i];
  return out;
}

void write_png_gray16(const fs::path &path, int width, int height, const std::vector<std::uint16_t> &pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw InvalidArgument("write_png_gray16: size mismatch");
  std::vector<std::uint8_t> bytes(pixels.size() * 2);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(pixels[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(pixels[i] & 0xFF);
  }
  write_png(path, width, height, 1, 16, bytes);
}

std::vector<std::uint16_t> read_png_gray16(const fs::path &path, int &width, int &height) {
  PngData d = read_png(path, true);
  if (d.channels != 1 || d.bit_depth != 16)
    throw UnsupportedFormat("'" + path.string() + "' is not a 16-bit grayscale PNG");
  width = d.width;
  height = d.height;
  std::vector<std::uint16_t> out(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint16_t>((d.bytes[2 * i] << 8) | d.bytes[2 * i + 1]);
  return out;
}

void write_mask_png(const fs::path &path, const SilhouetteMask &mask) {
  std::vector<std::uint8_t> px(mask.bits.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.bits[i] ? 255 : 0;
  write_png_gray8(path, mask.width, mask.height, px);
}

SilhouetteMask read_mask_png(const fs::path &path) {
  int w = 0, h = 0;
  const auto px = read_png_gray8(path, w, h);
  SilhouetteMask m(w, h);
  for (std::size_t i = 0; i < px.size(); ++i) m.bits[i] = px[i] >= 128 ? 1 : 0;
  return m;
}

void write_depth_png(const fs::path &path, const ScalarImage &depth, double t_near, double t_far) {
  if (!(t_far > t_near)) throw InvalidArgument("write_depth_png: t_far must exceed t_near");
  std::vector<std::uint16_t> px(depth.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::clamp((depth.values[i] - t_near) / (t_far - t_near), 0.0, 1.0);
    px[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  write_png_gray16(path, depth.width, depth.height, px);
  nlohmann::json side = {{"t_near", t_near}, {"t_far", t_far}, {"scale", (t_far - t_near) / 65535.0},
                         {"encoding", "depth = t_near + value * scale"}};
  write_text_atomic(path.string() + ".json", side.dump(2) + "\n");
}

void write_obj(const fs::path &path, const TriangleMesh &mesh) {
  std::ostringstream os;
  os.precision(17);
  for (const auto &v : mesh.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto &t : mesh.triangles) os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  write_text_atomic(path, os.str());
}

TriangleMesh read_obj(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  TriangleMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z()))
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i < 0 ? static_cast<int>(mesh.vertices.size()) + i : i - 1);
      }
      if (idx.size() < 3) throw IoError(path.string() + ":" + std::to_string(lineno) + ": face needs 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  mesh.validate();
  return mesh;
}

nlohmann::json camera_to_json(const Camera &camera) {
  std::vector<double> m(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m[r * 4 + c] = camera.camera_to_world(r, c);
  return {{"width", camera.width}, {"height", camera.height}, {"fx", camera.fx}, {"fy", camera.fy},
          {"cx", camera.cx},       {"cy", camera.cy},         {"c2w", m}};
}

Camera camera_from_json(const nlohmann::json &j) {
  try {
    Camera c;
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.value("cx", c.width / 2.0);
    c.cy = j.value("cy", c.height / 2.0);
    const auto m = j.at("c2w").get<std::vector<double>>();
    if (m.size() != 16) throw InvalidArgument("camera: c2w must hold 16 numbers");
    for (int r = 0; r < 4; ++r)
      for (int k = 0; k < 4; ++k) c.camera_to_world(r, k) = m[r * 4 + k];
    c.validate();
    return c;
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument(std::string("camera: ") + e.what());
  }
}

nlohmann::json read_json(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument("'" + path.string() + "': " + e.what());
  }
}

void write_text_atomic(const fs::path &path, const std::string &text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

}  // namespace exnerf
