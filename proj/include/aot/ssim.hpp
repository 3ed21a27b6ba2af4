#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "aot/errors.hpp"
#include "aot/image.hpp"

namespace aot {

// Structural similarity with the classic parameters: 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, dynamic range 255, computed on luma.
// Patches smaller than the window fall back to a single uniform window over
// the whole patch.
namespace ssim_detail {

inline constexpr int kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
inline constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

inline const std::vector<double>& gaussian_taps() {
  static const std::vector<double> taps = [] {
    std::vector<double> t(kWindow);
    double sum = 0.0;
    const int half = kWindow / 2;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - half;
      t[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
      sum += t[i];
    }
    for (auto& v : t) v /= sum;
    return t;
  }();
  return taps;
}

struct Plane {
  int width = 0, height = 0;
  std::vector<double> v;
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

inline Plane to_plane(const ImageBuffer& gray) {
  Plane p{gray.width, gray.height, {}};
  p.v.assign(gray.pixels.begin(), gray.pixels.end());
  return p;
}

inline Plane multiply(const Plane& a, const Plane& b) {
  Plane out{a.width, a.height, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

// Valid-mode separable convolution with the window taps; output shrinks by
// kWindow-1 on each axis.
inline Plane filter_valid(const Plane& in) {
  const auto& taps = gaussian_taps();
  const int ow = in.width - kWindow + 1;
  const int oh = in.height - kWindow + 1;
  Plane horiz{ow, in.height, std::vector<double>(static_cast<std::size_t>(ow) * in.height)};
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * in.at(x + k, y);
      horiz.v[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  Plane out{ow, oh, std::vector<double>(static_cast<std::size_t>(ow) * oh)};
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * horiz.at(x, y + k);
      out.v[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

inline double ssim_from_moments(double mu_a, double mu_b, double ex_aa,
                                double ex_bb, double ex_ab) {
  const double var_a = ex_aa - mu_a * mu_a;
  const double var_b = ex_bb - mu_b * mu_b;
  const double cov = ex_ab - mu_a * mu_b;
  return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

// Single uniform window over the entire patch.
inline double ssim_uniform(const Plane& a, const Plane& b) {
  const double n = static_cast<double>(a.v.size());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    sa += a.v[i];
    sb += b.v[i];
    saa += a.v[i] * a.v[i];
    sbb += b.v[i] * b.v[i];
    sab += a.v[i] * b.v[i];
  }
  return ssim_from_moments(sa / n, sb / n, saa / n, sbb / n, sab / n);
}

}  // namespace ssim_detail

// Mean SSIM over all valid 11x11 window positions (stride 1). Color inputs
// are converted to luma first. Result is in [-1, 1]; identical images score
// exactly 1.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width != b.width || a.height != b.height)
    throw ContractViolation("ssim: dimension mismatch");
  using namespace ssim_detail;
  const Plane pa = to_plane(to_grayscale(a));
  const Plane pb = to_plane(to_grayscale(b));
  if (a.width < kWindow || a.height < kWindow) return ssim_uniform(pa, pb);

  const Plane mu_a = filter_valid(pa);
  const Plane mu_b = filter_valid(pb);
  const Plane ex_aa = filter_valid(multiply(pa, pa));
  const Plane ex_bb = filter_valid(multiply(pb, pb));
  const Plane ex_ab = filter_valid(multiply(pa, pb));

  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.v.size(); ++i)
    sum += ssim_from_moments(mu_a.v[i], mu_b.v[i], ex_aa.v[i], ex_bb.v[i],
                             ex_ab.v[i]);
  return sum / static_cast<double>(mu_a.v.size());
}

// The localized integrity score: minimum SSIM over identically cropped
// critical patches. The gate is never vacuous, so an empty box list is an
// error rather than +inf.
inline double min_patch_ssim(const ImageBuffer& orig, const ImageBuffer& adv,
                             std::span<const BBox> critical) {
  if (!orig.same_dims(adv))
    throw ContractViolation("min_patch_ssim: dimension mismatch");
  if (critical.empty())
    throw ContractViolation("min_patch_ssim: no critical boxes");
  double best = 1.0;
  for (const BBox& box : critical) {
    const double s = ssim(extract_patch(orig, box), extract_patch(adv, box));
    best = std::min(best, s);
  }
  return best;
}

}  // namespace aot
