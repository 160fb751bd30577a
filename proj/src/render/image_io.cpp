#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "adasample/render.hpp"

namespace adasample {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const NdArray& image) {
  require_rank(image, 3, "write_png");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3 && c != 4) throw ShapeError("write_png: dimension 0 must be 1, 3 or 4, got " + std::to_string(c));
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(w) * c);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path);
  }
  png_init_io(png, f.get());
  const int color = c == 1 ? PNG_COLOR_TYPE_GRAY : c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(png, info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        float v = image.at(ch, y, x);
        if (!std::isfinite(v)) v = 0.0f;
        row[static_cast<std::size_t>(x) * c + ch] = static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

NdArray read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot read " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed");
  }
  NdArray out;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed png " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  if (c == 2) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("gray+alpha png not supported: " + path);
  }
  out = NdArray({c, h, w});
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) out.at(ch, y, x) = row[static_cast<std::size_t>(x) * c + ch] / 255.0f;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_chan(const std::string& path, const ChannelImage& image) {
  require_rank(image.data, 3, "write_chan");
  if (static_cast<int>(image.names.size()) != image.channels()) {
    throw ShapeError("write_chan: " + std::to_string(image.names.size()) + " names for " +
                     std::to_string(image.channels()) + " channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "ADSCHAN 1\n" << image.height() << ' ' << image.width() << ' ' << image.channels() << '\n';
  for (std::size_t i = 0; i < image.names.size(); ++i) out << (i ? " " : "") << image.names[i];
  out << '\n';
  out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size() * 4));
  if (!out) throw IoError("failed writing " + path);
}

ChannelImage read_chan(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string magic, names_line;
  std::getline(in, magic);
  if (magic != "ADSCHAN 1") throw IoError(path + ": not a channel file");
  int h = 0, w = 0, c = 0;
  std::string dims_line;
  std::getline(in, dims_line);
  std::istringstream ds(dims_line);
  if (!(ds >> h >> w >> c) || h < 1 || w < 1 || c < 1) throw IoError(path + ": bad header");
  std::getline(in, names_line);
  ChannelImage img;
  std::istringstream ns(names_line);
  for (std::string n; ns >> n;) img.names.push_back(n);
  if (static_cast<int>(img.names.size()) != c) throw IoError(path + ": channel name count mismatch");
  img.data = NdArray({c, h, w});
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size() * 4)) throw IoError(path + ": truncated payload");
  return img;
}

}  // namespace adasample
