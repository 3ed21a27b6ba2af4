#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aot/config.hpp"
#include "aot/dataset.hpp"
#include "aot/image.hpp"
#include "aot/png_io.hpp"
#include "aot/rng.hpp"
#include "aot/sim.hpp"

namespace aot {

// Deterministic desk-scale pool: structured little scenes with one annotated
// target rectangle each. Answers follow the shared question-hash rule, which
// is what lets the simulated defender grade itself honestly end to end.
namespace synthetic_detail {

inline constexpr const char* kNouns[] = {
    "lantern", "kettle",  "satchel", "easel",   "drum",
    "trophy",  "candle",  "helmet",  "bucket",  "radio",
    "vase",    "ladder",  "mirror",  "clock",   "stool"};

inline ImageBuffer make_scene(int size, const BBox& target, RngStream& rng) {
  ImageBuffer img(size, size, 3);
  const int base_r = static_cast<int>(rng.next_int(40, 200));
  const int base_g = static_cast<int>(rng.next_int(40, 200));
  const int base_b = static_cast<int>(rng.next_int(40, 200));
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int shade = (x + y) * 40 / (2 * size);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(base_r + shade, 0, 255));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(base_g + shade, 0, 255));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(base_b - shade, 0, 255));
    }
  }
  // a couple of background blocks plus the textured target rectangle
  for (int block = 0; block < 3; ++block) {
    const int w = static_cast<int>(rng.next_int(8, size / 4));
    const int h = static_cast<int>(rng.next_int(8, size / 4));
    const int x0 = static_cast<int>(rng.next_int(0, size - w));
    const int y0 = static_cast<int>(rng.next_int(0, size - h));
    const std::uint8_t shade = static_cast<std::uint8_t>(rng.next_int(0, 255));
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = shade;
  }
  // The target is a smooth low-variance patch. The SSIM gate's behaviour
  // under noise depends on local texture variance; keeping it gentle gives
  // the gate a live boundary inside the strength range.
  const PixelRect r = rasterize_box(target);
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) {
      const double ripple = 10.0 * std::sin(x * 0.8) + 10.0 * std::sin(y * 0.8);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(200.0 + ripple, 0.0, 255.0));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(70.0 + ripple, 0.0, 255.0));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(60.0 - ripple, 0.0, 255.0));
    }
  }
  return img;
}

}  // namespace synthetic_detail

// Writes PNGs under dir/images/ and returns the records; save_dataset on the
// result gives a loadable pool file. Everything derives from the seed.
inline std::vector<SampleRecord> make_synthetic_pool(
    const SyntheticSpec& spec, std::uint64_t seed,
    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::vector<SampleRecord> records;
  records.reserve(static_cast<std::size_t>(spec.count));
  const int size = spec.image_size;

  for (int i = 0; i < spec.count; ++i) {
    RngStream rng = RngStream::derive(seed, "synthetic",
                                      static_cast<std::uint64_t>(i));
    SampleRecord s;
    s.id = "syn-" + std::to_string(i);

    const int side = static_cast<int>(rng.next_int(size / 5, size / 3));
    const int x0 = static_cast<int>(rng.next_int(2, size - side - 2));
    const int y0 = static_cast<int>(rng.next_int(2, size - side - 2));
    const BBox target{double(x0), double(y0), double(x0 + side),
                      double(y0 + side)};

    const char* noun = synthetic_detail::kNouns[rng.next_below(
        std::size(synthetic_detail::kNouns))];
    s.question = "In scene " + std::to_string(i) +
                 ", which corner of the image is the " + noun + " closest to?";
    static const char* kCornerNames[] = {"the top left", "the top right",
                                         "the bottom left", "the bottom right",
                                         "the exact middle", "the upper edge"};
    for (int o = 0; o < spec.n_options; ++o)
      s.options[static_cast<char>('A' + o)] =
          kCornerNames[o % std::size(kCornerNames)];
    s.answer = sim::truth_letter(s.question, spec.n_options);

    s.targets.push_back({noun, {target}, 1});

    const ImageBuffer img = synthetic_detail::make_scene(size, target, rng);
    const std::string rel = "images/" + s.id + ".png";
    write_png(dir / rel, img);
    s.image = rel;
    records.push_back(std::move(s));
  }
  return records;
}

}  // namespace aot
