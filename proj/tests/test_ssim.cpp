#include <catch2/catch_amalgamated.hpp>

#include "aot/rng.hpp"
#include "aot/ssim.hpp"
#include "ssim_oracle.hpp"

using namespace aot;
using Catch::Approx;

namespace {
ImageBuffer noise_image(int w, int h, std::uint64_t seed) {
  ImageBuffer img(w, h, 1);
  RngStream rng(seed);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(rng.next_below(256));
  return img;
}

ImageBuffer add_noise(const ImageBuffer& img, int amplitude, std::uint64_t seed) {
  ImageBuffer out = img;
  RngStream rng(seed);
  for (auto& p : out.pixels) {
    const int delta = static_cast<int>(rng.next_int(-amplitude, amplitude));
    p = static_cast<std::uint8_t>(std::clamp(int(p) + delta, 0, 255));
  }
  return out;
}
}  // namespace

TEST_CASE("ssim identity is exactly 1") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const ImageBuffer img = noise_image(24, 24, seed);
    CHECK(ssim(img, img) == Approx(1.0).margin(1e-12));
  }
  const ImageBuffer small = noise_image(7, 7, 4);
  CHECK(ssim(small, small) == Approx(1.0).margin(1e-12));
}

TEST_CASE("ssim is symmetric") {
  const ImageBuffer a = noise_image(24, 24, 10);
  const ImageBuffer b = noise_image(24, 24, 11);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
}

TEST_CASE("constant images match the closed-form single-window value") {
  // Variances are zero, so SSIM reduces to the luminance term
  // (2*mu1*mu2 + C1) / (mu1^2 + mu2^2 + C1).
  const ImageBuffer a(16, 16, 1, 100);
  const ImageBuffer b(16, 16, 1, 150);
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double expected = (2.0 * 100 * 150 + c1) / (100.0 * 100 + 150.0 * 150 + c1);
  CHECK(ssim(a, b) == Approx(expected).margin(1e-9));
}

TEST_CASE("windowed ssim matches the direct-summation oracle") {
  SECTION("two fixed 16x16 noise patches") {
    const ImageBuffer a = noise_image(16, 16, 21);
    const ImageBuffer b = noise_image(16, 16, 22);
    CHECK(ssim(a, b) == Approx(oracle::ssim_reference(a, b)).margin(1e-6));
  }
  SECTION("50 random 24x24 pairs") {
    for (std::uint64_t i = 0; i < 50; ++i) {
      const ImageBuffer a = noise_image(24, 24, 100 + i);
      const ImageBuffer b = add_noise(a, static_cast<int>(8 + i), 200 + i);
      REQUIRE(ssim(a, b) == Approx(oracle::ssim_reference(a, b)).margin(1e-6));
    }
  }
  SECTION("small patches use the uniform window") {
    const ImageBuffer a = noise_image(8, 8, 31);
    const ImageBuffer b = noise_image(8, 8, 32);
    CHECK(ssim(a, b) == Approx(oracle::ssim_reference(a, b)).margin(1e-9));
  }
}

TEST_CASE("ssim degrades monotonically with noise amplitude") {
  const ImageBuffer base = noise_image(32, 32, 50);
  double prev = 2.0;
  for (int amplitude : {0, 8, 16, 24, 32, 40, 48, 56, 64}) {
    const double s = ssim(base, add_noise(base, amplitude, 99));
    CHECK(s <= prev + 1e-9);
    prev = s;
  }
}

TEST_CASE("ssim rejects mismatched dimensions") {
  CHECK_THROWS_AS(ssim(ImageBuffer(8, 8, 1), ImageBuffer(9, 8, 1)),
                  ContractViolation);
}

TEST_CASE("ssim accepts color inputs via luma conversion") {
  ImageBuffer rgb(16, 16, 3);
  RngStream rng(60);
  for (auto& p : rgb.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
  CHECK(ssim(rgb, rgb) == Approx(1.0).margin(1e-12));
  CHECK(ssim(rgb, to_grayscale(rgb)) == Approx(1.0).margin(1e-12));
}

TEST_CASE("min_patch_ssim") {
  const ImageBuffer orig = noise_image(64, 64, 70);
  const std::vector<BBox> boxes{{4, 4, 24, 24}, {36, 36, 60, 60}};

  SECTION("identical images give 1") {
    CHECK(min_patch_ssim(orig, orig, boxes) == Approx(1.0).margin(1e-12));
  }
  SECTION("perturbing one region: min equals that region's score") {
    ImageBuffer adv = orig;
    RngStream rng(71);
    for (int y = 36; y < 60; ++y)
      for (int x = 36; x < 60; ++x)
        adv.at(x, y) = static_cast<std::uint8_t>(rng.next_below(256));
    const double per_box0 =
        ssim(extract_patch(orig, boxes[0]), extract_patch(adv, boxes[0]));
    const double per_box1 =
        ssim(extract_patch(orig, boxes[1]), extract_patch(adv, boxes[1]));
    const double m = min_patch_ssim(orig, adv, boxes);
    CHECK(m == Approx(std::min(per_box0, per_box1)).margin(1e-12));
    CHECK(m == Approx(per_box1).margin(1e-12));
    CHECK(m <= per_box0);
  }
  SECTION("empty critical list is an error") {
    CHECK_THROWS_AS(min_patch_ssim(orig, orig, {}), ContractViolation);
  }
}
