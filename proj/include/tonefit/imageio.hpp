#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tonefit/image.hpp"

namespace tonefit {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedFormat : public IoError {
 public:
  using IoError::IoError;
};

namespace detail {

[[noreturn]] inline void png_throw(png_structp, png_const_charp message) {
  throw IoError(std::string("PNG error: ") + message);
}

inline void png_ignore_warning(png_structp, png_const_charp) {}

struct PngReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset{0};
};

inline void png_read_from_span(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->bytes.size()) {
    png_error(png, "unexpected end of data");
  }
  std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
  cursor->offset += length;
}

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

inline void png_flush_noop(png_structp) {}

inline const char* color_type_name(int color_type) {
  switch (color_type) {
    case PNG_COLOR_TYPE_GRAY: return "grayscale";
    case PNG_COLOR_TYPE_GRAY_ALPHA: return "grayscale+alpha";
    case PNG_COLOR_TYPE_RGB: return "RGB";
    case PNG_COLOR_TYPE_RGB_ALPHA: return "RGBA";
    case PNG_COLOR_TYPE_PALETTE: return "palette";
    default: return "unknown";
  }
}

class PngReader {
 public:
  PngReader() {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw,
                                  png_ignore_warning);
    if (png_ == nullptr) throw IoError("png_create_read_struct failed");
    info_ = png_create_info_struct(png_);
    if (info_ == nullptr) {
      png_destroy_read_struct(&png_, nullptr, nullptr);
      throw IoError("png_create_info_struct failed");
    }
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  png_structp png() const noexcept { return png_; }
  png_infop info() const noexcept { return info_; }

 private:
  png_structp png_{nullptr};
  png_infop info_{nullptr};
};

class PngWriter {
 public:
  PngWriter() {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw,
                                   png_ignore_warning);
    if (png_ == nullptr) throw IoError("png_create_write_struct failed");
    info_ = png_create_info_struct(png_);
    if (info_ == nullptr) {
      png_destroy_write_struct(&png_, nullptr);
      throw IoError("png_create_info_struct failed");
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  png_structp png() const noexcept { return png_; }
  png_infop info() const noexcept { return info_; }

 private:
  png_structp png_{nullptr};
  png_infop info_{nullptr};
};

}  // namespace detail

// Decodes an 8/16-bit gray, gray+alpha, RGB or RGBA PNG to a 3-channel image
// in [0,1]. Alpha is dropped; gray is replicated to all channels.
inline Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw IoError("data is not a PNG file");
  }
  detail::PngReader reader;
  detail::PngReadCursor cursor{bytes, 0};
  png_set_read_fn(reader.png(), &cursor, detail::png_read_from_span);
  png_read_info(reader.png(), reader.info());

  const int width = static_cast<int>(png_get_image_width(reader.png(), reader.info()));
  const int height = static_cast<int>(png_get_image_height(reader.png(), reader.info()));
  const int depth = png_get_bit_depth(reader.png(), reader.info());
  const int color = png_get_color_type(reader.png(), reader.info());

  int channels = 0;
  switch (color) {
    case PNG_COLOR_TYPE_GRAY: channels = 1; break;
    case PNG_COLOR_TYPE_GRAY_ALPHA: channels = 2; break;
    case PNG_COLOR_TYPE_RGB: channels = 3; break;
    case PNG_COLOR_TYPE_RGB_ALPHA: channels = 4; break;
    default:
      throw UnsupportedFormat(std::string("unsupported PNG color type: ") +
                              detail::color_type_name(color));
  }
  if (depth != 8 && depth != 16) {
    throw UnsupportedFormat("unsupported PNG bit depth: " + std::to_string(depth));
  }
  png_set_interlace_handling(reader.png());
  png_read_update_info(reader.png(), reader.info());

  const std::size_t row_bytes = png_get_rowbytes(reader.png(), reader.info());
  std::vector<std::uint8_t> pixels(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = pixels.data() + y * row_bytes;
  png_read_image(reader.png(), rows.data());
  png_read_end(reader.png(), nullptr);

  Image img(width, height, 3);
  img.set_bit_depth(depth);
  const double max_value = depth == 16 ? 65535.0 : 255.0;
  const int bytes_per_sample = depth / 8;
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* row = rows[y];
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src_channel = channels >= 3 ? c : 0;
        const std::uint8_t* s =
            row + (static_cast<std::size_t>(x) * channels + src_channel) * bytes_per_sample;
        const unsigned value = depth == 16 ? (unsigned{s[0]} << 8) | s[1] : s[0];
        img.at(c, y, x) = value / max_value;
      }
    }
  }
  return img;
}

// Quantized stored value of v in [0,1] at the given bit depth (round half up).
inline unsigned quantize(double v, int bit_depth) noexcept {
  const double max_value = bit_depth == 16 ? 65535.0 : 255.0;
  return static_cast<unsigned>(std::floor(std::clamp(v, 0.0, 1.0) * max_value + 0.5));
}

// Encodes a 1-channel (grayscale) or 3-channel (RGB) image; values are
// clamped to [0,1] and quantized.
inline std::vector<std::uint8_t> encode_png(const Image& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) {
    throw UnsupportedFormat("unsupported PNG bit depth: " + std::to_string(bit_depth));
  }
  if (img.channels() != 1 && img.channels() != 3) {
    throw UnsupportedFormat("PNG encoding supports 1 or 3 channels");
  }
  const int channels = img.channels();
  const int bytes_per_sample = bit_depth / 8;
  const std::size_t row_bytes =
      static_cast<std::size_t>(img.width()) * channels * bytes_per_sample;
  std::vector<std::uint8_t> pixels(row_bytes * img.height());
  for (int y = 0; y < img.height(); ++y) {
    std::uint8_t* row = pixels.data() + y * row_bytes;
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        const unsigned q = quantize(img.at(c, y, x), bit_depth);
        std::uint8_t* d =
            row + (static_cast<std::size_t>(x) * channels + c) * bytes_per_sample;
        if (bit_depth == 16) {
          d[0] = static_cast<std::uint8_t>(q >> 8);
          d[1] = static_cast<std::uint8_t>(q & 0xff);
        } else {
          d[0] = static_cast<std::uint8_t>(q);
        }
      }
    }
  }

  std::vector<std::uint8_t> out;
  detail::PngWriter writer;
  png_set_write_fn(writer.png(), &out, detail::png_write_to_vector,
                   detail::png_flush_noop);
  png_set_IHDR(writer.png(), writer.info(), img.width(), img.height(), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(writer.png(), writer.info());
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) rows[y] = pixels.data() + y * row_bytes;
  png_write_image(writer.png(), rows.data());
  png_write_end(writer.png(), nullptr);
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Image load_png(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_png(bytes);
  } catch (const UnsupportedFormat& e) {
    throw UnsupportedFormat(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void save_png(const Image& img, const std::filesystem::path& path,
                     int bit_depth = 8) {
  write_file(path, encode_png(img, bit_depth));
}

enum class ResizeMethod { Bilinear, Nearest };

namespace detail {

// One output sample of a 1D bilinear resample with pixel-center alignment.
struct BilinearTap {
  int i0, i1;
  double frac;
};

// Taps at arbitrary sample centers given in normalized [0,1] coordinates.
inline std::vector<BilinearTap> bilinear_taps_at(std::span<const double> centers, int src) {
  std::vector<BilinearTap> t(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double pos = std::clamp(centers[i] * src - 0.5, 0.0, src - 1.0);
    const int i0 = static_cast<int>(pos);
    t[i] = {i0, std::min(i0 + 1, src - 1), pos - i0};
  }
  return t;
}

inline std::vector<BilinearTap> bilinear_taps(int dst, int src) {
  const double scale = static_cast<double>(src) / dst;
  std::vector<BilinearTap> t(dst);
  for (int i = 0; i < dst; ++i) {
    const double pos = std::clamp((i + 0.5) * scale - 0.5, 0.0, src - 1.0);
    const int i0 = static_cast<int>(pos);
    t[i] = {i0, std::min(i0 + 1, src - 1), pos - i0};
  }
  return t;
}

// Separable bilinear resample of one plane; `rows` is scratch space.
inline void resample_plane(std::span<const double> src, int src_w, int src_h,
                           std::span<double> dst, int dst_w, int dst_h,
                           const std::vector<BilinearTap>& tx,
                           const std::vector<BilinearTap>& ty, std::vector<double>& rows) {
  rows.resize(static_cast<std::size_t>(dst_w) * src_h);
  for (int y = 0; y < src_h; ++y) {
    const double* s = src.data() + static_cast<std::size_t>(y) * src_w;
    double* d = rows.data() + static_cast<std::size_t>(y) * dst_w;
    for (int x = 0; x < dst_w; ++x) {
      const BilinearTap& t = tx[x];
      d[x] = s[t.i0] + (s[t.i1] - s[t.i0]) * t.frac;
    }
  }
  for (int y = 0; y < dst_h; ++y) {
    const BilinearTap& t = ty[y];
    const double* r0 = rows.data() + static_cast<std::size_t>(t.i0) * dst_w;
    const double* r1 = rows.data() + static_cast<std::size_t>(t.i1) * dst_w;
    double* d = dst.data() + static_cast<std::size_t>(y) * dst_w;
    for (int x = 0; x < dst_w; ++x) d[x] = r0[x] + (r1[x] - r0[x]) * t.frac;
  }
}

// Adjoint of resample_plane: accumulates into `src_grad`.
inline void resample_plane_adjoint(std::span<const double> dst_grad, int dst_w, int dst_h,
                                   std::span<double> src_grad, int src_w, int src_h,
                                   const std::vector<BilinearTap>& tx,
                                   const std::vector<BilinearTap>& ty,
                                   std::vector<double>& rows) {
  rows.assign(static_cast<std::size_t>(dst_w) * src_h, 0.0);
  for (int y = 0; y < dst_h; ++y) {
    const BilinearTap& t = ty[y];
    const double* g = dst_grad.data() + static_cast<std::size_t>(y) * dst_w;
    double* r0 = rows.data() + static_cast<std::size_t>(t.i0) * dst_w;
    double* r1 = rows.data() + static_cast<std::size_t>(t.i1) * dst_w;
    for (int x = 0; x < dst_w; ++x) {
      r0[x] += g[x] * (1.0 - t.frac);
      r1[x] += g[x] * t.frac;
    }
  }
  for (int y = 0; y < src_h; ++y) {
    const double* r = rows.data() + static_cast<std::size_t>(y) * dst_w;
    double* s = src_grad.data() + static_cast<std::size_t>(y) * src_w;
    for (int x = 0; x < dst_w; ++x) {
      const BilinearTap& t = tx[x];
      s[t.i0] += r[x] * (1.0 - t.frac);
      s[t.i1] += r[x] * t.frac;
    }
  }
}

}  // namespace detail

// Separable bilinear (pixel-center aligned) or nearest-neighbour resize.
inline Image resize(const Image& img, int width, int height,
                    ResizeMethod method = ResizeMethod::Bilinear) {
  if (width < 1 || height < 1) throw std::invalid_argument("resize target must be at least 1x1");
  Image out(width, height, img.channels());
  out.set_bit_depth(img.bit_depth());

  if (method == ResizeMethod::Nearest) {
    const double sx = static_cast<double>(img.width()) / width;
    const double sy = static_cast<double>(img.height()) / height;
    for (int y = 0; y < height; ++y) {
      const int yy = std::min(static_cast<int>((y + 0.5) * sy), img.height() - 1);
      for (int x = 0; x < width; ++x) {
        const int xx = std::min(static_cast<int>((x + 0.5) * sx), img.width() - 1);
        for (int c = 0; c < img.channels(); ++c) out.at(c, y, x) = img.at(c, yy, xx);
      }
    }
    return out;
  }

  const auto tx = detail::bilinear_taps(width, img.width());
  const auto ty = detail::bilinear_taps(height, img.height());
  std::vector<double> rows;
  for (int c = 0; c < img.channels(); ++c) {
    detail::resample_plane(img.plane(c), img.width(), img.height(), out.plane(c), width,
                           height, tx, ty, rows);
  }
  return out;
}

inline int scaled_extent(int extent, int factor) noexcept {
  return std::max(1, (extent + factor / 2) / factor);
}

inline Image downsample(const Image& img, int factor,
                        ResizeMethod method = ResizeMethod::Bilinear) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return img;
  return resize(img, scaled_extent(img.width(), factor),
                scaled_extent(img.height(), factor), method);
}

}  // namespace tonefit
