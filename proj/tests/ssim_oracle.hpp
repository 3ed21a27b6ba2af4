// Test-only reference SSIM: direct per-window summation with explicit 2D
// Gaussian weights. Deliberately naive (O(n * w^2)) and independent of the
// separable-filter implementation it checks.
#pragma once

#include <cmath>
#include <vector>

#include "aot/image.hpp"

namespace oracle {

inline constexpr int kWin = 11;
inline constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
inline constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

inline std::vector<double> gaussian_weights_2d() {
  std::vector<double> w(kWin * kWin);
  double sum = 0.0;
  for (int y = 0; y < kWin; ++y) {
    for (int x = 0; x < kWin; ++x) {
      const double dx = x - kWin / 2;
      const double dy = y - kWin / 2;
      w[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      sum += w[y * kWin + x];
    }
  }
  for (auto& v : w) v /= sum;
  return w;
}

inline double ssim_value(double mu_a, double mu_b, double var_a, double var_b,
                         double cov) {
  return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

inline double ssim_reference(const aot::ImageBuffer& a_in,
                             const aot::ImageBuffer& b_in) {
  const aot::ImageBuffer a = aot::to_grayscale(a_in);
  const aot::ImageBuffer b = aot::to_grayscale(b_in);

  if (a.width < kWin || a.height < kWin) {
    const double n = static_cast<double>(a.pixels.size());
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      sa += a.pixels[i];
      sb += b.pixels[i];
    }
    const double mu_a = sa / n, mu_b = sb / n;
    double var_a = 0, var_b = 0, cov = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      var_a += (a.pixels[i] - mu_a) * (a.pixels[i] - mu_a);
      var_b += (b.pixels[i] - mu_b) * (b.pixels[i] - mu_b);
      cov += (a.pixels[i] - mu_a) * (b.pixels[i] - mu_b);
    }
    return ssim_value(mu_a, mu_b, var_a / n, var_b / n, cov / n);
  }

  static const std::vector<double> w = gaussian_weights_2d();
  double total = 0.0;
  int windows = 0;
  for (int oy = 0; oy + kWin <= a.height; ++oy) {
    for (int ox = 0; ox + kWin <= a.width; ++ox) {
      double mu_a = 0, mu_b = 0;
      for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
          mu_a += w[y * kWin + x] * a.at(ox + x, oy + y);
          mu_b += w[y * kWin + x] * b.at(ox + x, oy + y);
        }
      double var_a = 0, var_b = 0, cov = 0;
      for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
          const double da = a.at(ox + x, oy + y) - mu_a;
          const double db = b.at(ox + x, oy + y) - mu_b;
          var_a += w[y * kWin + x] * da * da;
          var_b += w[y * kWin + x] * db * db;
          cov += w[y * kWin + x] * da * db;
        }
      total += ssim_value(mu_a, mu_b, var_a, var_b, cov);
      ++windows;
    }
  }
  return total / windows;
}

}  // namespace oracle
