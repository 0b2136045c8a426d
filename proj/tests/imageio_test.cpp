#include "tonefit/imageio.hpp"

#include <gtest/gtest.h>
#include <png.h>

#include <algorithm>
#include <random>
#include <vector>

#include "support/test_util.hpp"

namespace tonefit {
namespace {

using testing::random_image;
using testing::TempDir;

// Encodes raw interleaved samples with an arbitrary color type, independently
// of the library's own encoder.
std::vector<std::uint8_t> raw_png(int width, int height, int color_type, int depth,
                                  const std::vector<std::uint8_t>& samples,
                                  const std::vector<png_color>& palette = {}) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    ADD_FAILURE() << "libpng failed while building a fixture";
    return {};
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + n);
      },
      nullptr);
  png_set_IHDR(png, info, width, height, depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (!palette.empty()) png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  png_write_info(png, info);
  const std::size_t row_bytes = samples.size() / height;
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(samples.data() + y * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

TEST(DecodePng, EightBitRgbNormalizes) {
  const auto bytes = raw_png(2, 1, PNG_COLOR_TYPE_RGB, 8, {255, 0, 51, 0, 128, 255});
  const Image img = decode_png(bytes);
  EXPECT_EQ(img.width(), 2);
  EXPECT_EQ(img.height(), 1);
  EXPECT_EQ(img.channels(), 3);
  EXPECT_EQ(img.bit_depth(), 8);
  EXPECT_EQ(img.at(0, 0, 0), 1.0);
  EXPECT_EQ(img.at(1, 0, 0), 0.0);
  EXPECT_EQ(img.at(2, 0, 0), 51 / 255.0);
  EXPECT_EQ(img.at(1, 0, 1), 128 / 255.0);
}

TEST(DecodePng, SixteenBit) {
  // Big-endian samples: 0, 65535, 0x1234.
  const auto bytes = raw_png(1, 1, PNG_COLOR_TYPE_RGB, 16, {0, 0, 0xff, 0xff, 0x12, 0x34});
  const Image img = decode_png(bytes);
  EXPECT_EQ(img.bit_depth(), 16);
  EXPECT_EQ(img.at(0, 0, 0), 0.0);
  EXPECT_EQ(img.at(1, 0, 0), 1.0);
  EXPECT_EQ(img.at(2, 0, 0), 0x1234 / 65535.0);
}

TEST(DecodePng, GrayIsReplicatedAndAlphaDropped) {
  const Image gray = decode_png(raw_png(2, 1, PNG_COLOR_TYPE_GRAY, 8, {10, 200}));
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(gray.at(c, 0, 0), 10 / 255.0);
    EXPECT_EQ(gray.at(c, 0, 1), 200 / 255.0);
  }
  const Image ga = decode_png(raw_png(1, 1, PNG_COLOR_TYPE_GRAY_ALPHA, 8, {77, 3}));
  for (int c = 0; c < 3; ++c) EXPECT_EQ(ga.at(c, 0, 0), 77 / 255.0);

  const Image rgba = decode_png(raw_png(1, 1, PNG_COLOR_TYPE_RGB_ALPHA, 8, {1, 2, 3, 0}));
  EXPECT_EQ(rgba.at(0, 0, 0), 1 / 255.0);
  EXPECT_EQ(rgba.at(1, 0, 0), 2 / 255.0);
  EXPECT_EQ(rgba.at(2, 0, 0), 3 / 255.0);
}

TEST(DecodePng, PaletteIsRejectedByName) {
  const auto bytes =
      raw_png(1, 1, PNG_COLOR_TYPE_PALETTE, 8, {0}, {png_color{255, 0, 0}});
  try {
    decode_png(bytes);
    FAIL() << "expected UnsupportedFormat";
  } catch (const UnsupportedFormat& e) {
    EXPECT_NE(std::string(e.what()).find("palette"), std::string::npos) << e.what();
  }
}

TEST(DecodePng, LowBitDepthRejected) {
  EXPECT_THROW(decode_png(raw_png(8, 1, PNG_COLOR_TYPE_GRAY, 1, {0xAA})), UnsupportedFormat);
}

TEST(DecodePng, GarbageAndTruncation) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(decode_png(junk), IoError);
  auto bytes = encode_png(Image(8, 8, 3, 0.5));
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_png(bytes), IoError);
}

TEST(Quantize, RoundHalfUpAndClamp) {
  EXPECT_EQ(quantize(0.5, 8), 128u);
  EXPECT_EQ(quantize(1.2, 8), 255u);
  EXPECT_EQ(quantize(-0.1, 8), 0u);
  EXPECT_EQ(quantize(1.0, 16), 65535u);
  EXPECT_EQ(quantize(0.5, 16), 32768u);
}

TEST(SavePng, StoresQuantizedValues) {
  TempDir dir("imageio");
  Image img(3, 1, 3);
  for (int c = 0; c < 3; ++c) {
    img.at(c, 0, 0) = 0.5;
    img.at(c, 0, 1) = 1.2;
    img.at(c, 0, 2) = -0.1;
  }
  save_png(img, dir / "q.png", 8);
  const Image back = load_png(dir / "q.png");
  EXPECT_EQ(back.at(0, 0, 0), 128 / 255.0);
  EXPECT_EQ(back.at(1, 0, 1), 1.0);
  EXPECT_EQ(back.at(2, 0, 2), 0.0);
}

TEST(SavePng, RoundTripIsStable) {
  TempDir dir("imageio");
  std::mt19937_64 rng(11);
  for (int depth : {8, 16}) {
    const Image img = random_image(rng, 23, 17, 3, -0.2, 1.2);
    save_png(img, dir / "a.png", depth);
    const Image once = load_png(dir / "a.png");
    EXPECT_EQ(once.bit_depth(), depth);
    const double half_step = 0.5 / (depth == 8 ? 255.0 : 65535.0);
    const Image ref = clamped(img);
    for (std::size_t i = 0; i < img.size(); ++i) {
      ASSERT_LE(std::abs(once.data()[i] - ref.data()[i]), half_step + 1e-15);
    }
    save_png(once, dir / "b.png", depth);
    const Image twice = load_png(dir / "b.png");
    EXPECT_EQ(once, twice);
    // Pixel data identical after the first quantization.
    EXPECT_EQ(encode_png(once, depth), encode_png(twice, depth));
  }
}

TEST(SavePng, UnwritableAndUnreadable) {
  EXPECT_THROW(save_png(Image(2, 2, 3), "/nonexistent-dir/x/y.png"), IoError);
  EXPECT_THROW(load_png("/nonexistent-dir/none.png"), IoError);
  EXPECT_THROW(encode_png(Image(2, 2, 3), 12), UnsupportedFormat);
}

TEST(Resize, ConstantStaysConstant) {
  const Image img(7, 5, 3, 0.37);
  for (auto method : {ResizeMethod::Bilinear, ResizeMethod::Nearest}) {
    for (auto [w, h] : {std::pair{3, 2}, std::pair{14, 11}, std::pair{1, 1}}) {
      const Image out = resize(img, w, h, method);
      EXPECT_EQ(out.width(), w);
      EXPECT_EQ(out.height(), h);
      for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.37);
    }
  }
}

TEST(Resize, CheckerboardToOnePixel) {
  Image img(2, 2, 3);
  for (int c = 0; c < 3; ++c) {
    img.at(c, 0, 0) = 0.0;
    img.at(c, 0, 1) = 1.0;
    img.at(c, 1, 0) = 1.0;
    img.at(c, 1, 1) = 0.0;
  }
  const Image out = resize(img, 1, 1);
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.at(c, 0, 0), 0.5);
}

TEST(Resize, NearestUpsample) {
  const Image img(1, 1, 3, 0.8);
  const Image out = resize(img, 2, 2, ResizeMethod::Nearest);
  for (double v : out.data()) EXPECT_EQ(v, 0.8);
}

TEST(Resize, BilinearStaysWithinInputRange) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 10; ++t) {
    const Image img = random_image(rng, 9, 13);
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    for (auto [w, h] : {std::pair{4, 5}, std::pair{20, 31}, std::pair{9, 13}}) {
      const Image out = resize(img, w, h);
      for (double v : out.data()) {
        ASSERT_GE(v, *lo);
        ASSERT_LE(v, *hi);
      }
    }
  }
}

TEST(Resize, SameSizeIsIdentityAndZeroRejected) {
  std::mt19937_64 rng(13);
  const Image img = random_image(rng, 6, 4);
  EXPECT_EQ(resize(img, 6, 4), img);
  EXPECT_THROW(resize(img, 0, 4), std::invalid_argument);
  EXPECT_THROW(resize(img, 4, 0), std::invalid_argument);
}

TEST(Downsample, Extents) {
  EXPECT_EQ(scaled_extent(64, 2), 32);
  EXPECT_EQ(scaled_extent(65, 2), 33);
  EXPECT_EQ(scaled_extent(3, 4), 1);
  const Image img(64, 48, 3, 0.1);
  const Image half = downsample(img, 2);
  EXPECT_EQ(half.width(), 32);
  EXPECT_EQ(half.height(), 24);
  EXPECT_EQ(downsample(img, 1), img);
  EXPECT_THROW(downsample(img, 0), std::invalid_argument);
}

}  // namespace
}  // namespace tonefit
