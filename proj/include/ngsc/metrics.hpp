// Copyright 2026 The ngsc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Distortion and rate metrics, RD curves, Bjontegaard delta rate and
// bit-allocation maps.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ngsc/bitstream.hpp"

namespace ngsc {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kDefaultWeightRoi = 0.5;

inline double psnr_from_mse(double mse) { return mse > 0 ? std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse)) : kPsnrCap; }

template <class T>
double mse(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape()) throw ShapeError("mse: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  if (x.numel() == 0) throw ShapeError("mse: empty tensors");
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return s / static_cast<double>(x.numel());
}

/// 10 log10(1 / MSE) for images in [0, 1]; identical images give 100 dB.
template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& x_hat) {
  return psnr_from_mse(mse(x, x_hat));
}

struct WeightedPsnr {
  double full = 0, roi = 0, nroi = 0;
  double mse_roi = 0, mse_nroi = 0;
  int64_t roi_pixels = 0, nroi_pixels = 0;
};

/// Region PSNRs with r binarized at 0.5 and full = PSNR of
/// w_roi * MSE_roi + (1 - w_roi) * MSE_nroi. An empty region reports 100 dB
/// and is left out of the combination.
template <class T>
WeightedPsnr weighted_psnr(const Tensor<T>& x, const Tensor<T>& x_hat, const Tensor<T>& r,
                           double w_roi = kDefaultWeightRoi) {
  if (x.shape() != x_hat.shape() || x.rank() != 4) throw ShapeError("weighted_psnr: image shapes differ or not rank 4");
  if (r.shape() != Shape{x.dim(0), 1, x.dim(2), x.dim(3)})
    throw ShapeError("weighted_psnr: mask " + shape_str(r.shape()) + " does not match " + shape_str(x.shape()));
  if (!(w_roi > 0 && w_roi < 1)) throw ConfigError("w_roi must lie in (0, 1)");
  const int64_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
  double s_roi = 0, s_nroi = 0;
  WeightedPsnr out;
  for (int64_t b = 0; b < x.dim(0); ++b)
    for (int64_t i = 0; i < plane; ++i) {
      const bool in = r[b * plane + i] >= T(0.5);
      (in ? out.roi_pixels : out.nroi_pixels) += 1;
      for (int64_t k = 0; k < c; ++k) {
        const int64_t j = (b * c + k) * plane + i;
        const double d = static_cast<double>(x[j]) - static_cast<double>(x_hat[j]);
        (in ? s_roi : s_nroi) += d * d;
      }
    }
  out.mse_roi = out.roi_pixels ? s_roi / static_cast<double>(out.roi_pixels * c) : 0;
  out.mse_nroi = out.nroi_pixels ? s_nroi / static_cast<double>(out.nroi_pixels * c) : 0;
  out.roi = out.roi_pixels ? psnr_from_mse(out.mse_roi) : kPsnrCap;
  out.nroi = out.nroi_pixels ? psnr_from_mse(out.mse_nroi) : kPsnrCap;
  if (!out.roi_pixels)
    out.full = out.nroi;
  else if (!out.nroi_pixels)
    out.full = out.roi;
  else
    out.full = psnr_from_mse(w_roi * out.mse_roi + (1 - w_roi) * out.mse_nroi);
  return out;
}

/// 8 * bytes / pixels of the unpadded image.
inline double bpp(size_t stream_bytes, int64_t height, int64_t width) {
  if (height <= 0 || width <= 0) throw ShapeError("bpp: empty image");
  return 8.0 * static_cast<double>(stream_bytes) / static_cast<double>(height * width);
}

inline double bpp(const Bitstream& s) { return bpp(s.byte_size(), s.height, s.width); }

struct RDPoint {
  double bpp = 0, psnr = 0;
  double psnr_roi = 0, psnr_nroi = 0;
  double q = -1;  // negative when unlabeled
};

struct RDCurve {
  std::string name;
  std::vector<RDPoint> points;
};

/// Non-fatal issues: non-increasing bpp or PSNR along the curve.
inline std::vector<std::string> curve_warnings(const RDCurve& c) {
  std::vector<std::string> w;
  for (size_t i = 1; i < c.points.size(); ++i) {
    if (!(c.points[i].bpp > c.points[i - 1].bpp))
      w.push_back(c.name + ": bpp not increasing at point " + std::to_string(i));
    if (c.points[i].psnr < c.points[i - 1].psnr)
      w.push_back(c.name + ": PSNR decreases at point " + std::to_string(i));
  }
  return w;
}

namespace detail {

/// Least-squares cubic log10(bpp) = a0 + a1 p + a2 p^2 + a3 p^3 in PSNR p.
inline Eigen::Vector4d fit_log_rate(const RDCurve& c) {
  const auto n = static_cast<Eigen::Index>(c.points.size());
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = c.points[static_cast<size_t>(i)];
    if (!(p.bpp > 0) || !std::isfinite(p.bpp) || !std::isfinite(p.psnr))
      throw ConfigError(c.name + ": RD points need finite PSNR and bpp > 0");
    a(i, 0) = 1;
    a(i, 1) = p.psnr;
    a(i, 2) = p.psnr * p.psnr;
    a(i, 3) = p.psnr * p.psnr * p.psnr;
    y(i) = std::log10(p.bpp);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < 4) throw ConfigError(c.name + ": BD-rate needs at least 4 distinct PSNR values");
  return qr.solve(y);
}

inline double poly_integral(const Eigen::Vector4d& a, double lo, double hi) {
  auto prim = [&](double p) { return a(0) * p + a(1) * p * p / 2 + a(2) * p * p * p / 3 + a(3) * p * p * p * p / 4; };
  return prim(hi) - prim(lo);
}

}  // namespace detail

inline std::pair<double, double> psnr_range(const RDCurve& c) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& p : c.points) lo = std::min(lo, p.psnr), hi = std::max(hi, p.psnr);
  return {lo, hi};
}

/// Bjontegaard delta rate in percent (classical cubic fit of log10 rate over
/// PSNR, integrated over the common PSNR interval). Negative means `test`
/// needs fewer bits.
inline double bd_rate(const RDCurve& anchor, const RDCurve& test) {
  for (const RDCurve* c : {&anchor, &test})
    if (c->points.size() < 4)
      throw ConfigError("BD-rate needs at least 4 points per curve; '" + c->name + "' has " + std::to_string(c->points.size()));
  const auto [alo, ahi] = psnr_range(anchor);
  const auto [tlo, thi] = psnr_range(test);
  const double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
  if (!(hi - lo >= 1.0)) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << "BD-rate: PSNR overlap below 1 dB ('" << anchor.name << "' [" << alo
       << ", " << ahi << "] dB, '" << test.name << "' [" << tlo << ", " << thi << "] dB)";
    throw ConfigError(os.str());
  }
  const Eigen::Vector4d fa = detail::fit_log_rate(anchor), ft = detail::fit_log_rate(test);
  const double avg = (detail::poly_integral(ft, lo, hi) - detail::poly_integral(fa, lo, hi)) / (hi - lo);
  return 100.0 * (std::pow(10.0, avg) - 1.0);
}

struct BitAllocationMap {
  int64_t channel = 0;
  int64_t height = 0, width = 0;  // latent grid
  std::vector<double> bits;       // -log2 p per latent position of `channel`
  Tensor<float> image;            // [1, 1, 16h, 16w], bits / max(bits)
};

/// Picks the channel with the largest total -log2 p (first on ties) of
/// likelihood_y [1, C, h, w] and upsamples its bit map x16.
template <class T>
BitAllocationMap bit_allocation_map(const Tensor<T>& likelihood_y) {
  if (likelihood_y.rank() != 4 || likelihood_y.dim(0) != 1)
    throw ShapeError("bit_allocation_map expects [1,C,h,w], got " + shape_str(likelihood_y.shape()));
  BitAllocationMap m;
  const int64_t c = likelihood_y.dim(1);
  m.height = likelihood_y.dim(2);
  m.width = likelihood_y.dim(3);
  const int64_t plane = m.height * m.width;
  double best = -1;
  for (int64_t k = 0; k < c; ++k) {
    double s = 0;
    for (int64_t i = 0; i < plane; ++i) s -= std::log2(static_cast<double>(likelihood_y[k * plane + i]));
    if (s > best) best = s, m.channel = k;
  }
  m.bits.resize(static_cast<size_t>(plane));
  double mx = 0;
  for (int64_t i = 0; i < plane; ++i) {
    m.bits[static_cast<size_t>(i)] = -std::log2(static_cast<double>(likelihood_y[m.channel * plane + i]));
    mx = std::max(mx, m.bits[static_cast<size_t>(i)]);
  }
  const int64_t s = kLatentStride;
  m.image = Tensor<float>({1, 1, m.height * s, m.width * s});
  for (int64_t y = 0; y < m.height * s; ++y)
    for (int64_t x = 0; x < m.width * s; ++x)
      m.image[y * m.width * s + x] = mx > 0 ? static_cast<float>(m.bits[static_cast<size_t>((y / s) * m.width + x / s)] / mx) : 0.0f;
  return m;
}

inline std::string bit_map_csv(const BitAllocationMap& m) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (int64_t y = 0; y < m.height; ++y) {
    for (int64_t x = 0; x < m.width; ++x) os << (x ? "," : "") << m.bits[static_cast<size_t>(y * m.width + x)];
    os << '\n';
  }
  return os.str();
}

/// For each q: encode and decode every image at a constant QIndex, then
/// average bpp and PSNR. With `rois`, region PSNRs use the masks (which also
/// steer the encoder); otherwise they equal the plain PSNR.
inline RDCurve sweep_rd(const Model& model, const std::vector<Tensor<float>>& images, const std::vector<double>& q_list,
                        const std::vector<Tensor<float>>* rois = nullptr, double w_roi = kDefaultWeightRoi,
                        std::string name = "sweep") {
  if (images.empty()) throw ConfigError("sweep_rd: no images");
  if (rois && rois->size() != images.size()) throw ConfigError("sweep_rd: one ROI mask per image required");
  RDCurve curve;
  curve.name = std::move(name);
  for (double q : q_list) {
    RDPoint pt;
    pt.q = q;
    for (size_t i = 0; i < images.size(); ++i) {
      const auto& x = images[i];
      Tensor<float> m({1, 1, x.dim(2), x.dim(3)}, static_cast<float>(q));
      const Tensor<float>* r = rois ? &(*rois)[i] : nullptr;
      const auto enc = encode_image(model, x, m, r);
      const auto dec = decode_image(model, parse_bitstream(write_bitstream(enc.stream)));
      pt.bpp += bpp(enc.stream);
      if (r) {
        const auto w = weighted_psnr(x, dec.x_hat, *r, w_roi);
        pt.psnr += w.full, pt.psnr_roi += w.roi, pt.psnr_nroi += w.nroi;
      } else {
        const double p = psnr(x, dec.x_hat);
        pt.psnr += p, pt.psnr_roi += p, pt.psnr_nroi += p;
      }
    }
    const double n = static_cast<double>(images.size());
    pt.bpp /= n, pt.psnr /= n, pt.psnr_roi /= n, pt.psnr_nroi /= n;
    curve.points.push_back(pt);
  }
  return curve;
}

inline std::string rd_csv(const RDCurve& c) {
  std::ostringstream os;
  os << "q,bpp,psnr,psnr_roi,psnr_nroi\n" << std::setprecision(10);
  for (const auto& p : c.points) os << p.q << ',' << p.bpp << ',' << p.psnr << ',' << p.psnr_roi << ',' << p.psnr_nroi << '\n';
  return os.str();
}

inline std::string rd_gnuplot(const RDCurve& c) {
  std::ostringstream os;
  os << "# " << c.name << "\n# q bpp psnr psnr_roi psnr_nroi\n" << std::setprecision(10);
  for (const auto& p : c.points) os << p.q << ' ' << p.bpp << ' ' << p.psnr << ' ' << p.psnr_roi << ' ' << p.psnr_nroi << '\n';
  return os.str();
}

/// Parses rd_csv output. Requires the bpp and psnr columns; q, psnr_roi and
/// psnr_nroi are optional.
inline RDCurve parse_rd_csv(const std::string& text, std::string name) {
  RDCurve c;
  c.name = std::move(name);
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) {
      const auto a = cur.find_first_not_of(" \t\r"), b = cur.find_last_not_of(" \t\r");
      f.push_back(a == std::string::npos ? "" : cur.substr(a, b - a + 1));
    }
    return f;
  };
  if (!std::getline(in, line)) throw FormatError(c.name + ": empty CSV");
  const auto head = split(line);
  auto col = [&](const char* key) -> int {
    for (size_t i = 0; i < head.size(); ++i)
      if (head[i] == key) return static_cast<int>(i);
    return -1;
  };
  const int iq = col("q"), ib = col("bpp"), ip = col("psnr"), ir = col("psnr_roi"), in_ = col("psnr_nroi");
  if (ib < 0 || ip < 0) throw FormatError(c.name + ": CSV header must contain bpp and psnr columns");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split(line);
    auto num = [&](int i, double fallback) {
      if (i < 0) return fallback;
      if (static_cast<size_t>(i) >= f.size()) throw FormatError(c.name + ":" + std::to_string(lineno) + ": missing column");
      size_t used = 0;
      double v = 0;
      try {
        v = std::stod(f[static_cast<size_t>(i)], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != f[static_cast<size_t>(i)].size())
        throw FormatError(c.name + ":" + std::to_string(lineno) + ": malformed number '" + f[static_cast<size_t>(i)] + "'");
      return v;
    };
    RDPoint p;
    p.q = num(iq, -1);
    p.bpp = num(ib, 0);
    p.psnr = num(ip, 0);
    p.psnr_roi = num(ir, p.psnr);
    p.psnr_nroi = num(in_, p.psnr);
    c.points.push_back(p);
  }
  return c;
}

/// Plain-text BD-rate report.
inline std::string bd_rate_report(const RDCurve& anchor, const RDCurve& test) {
  const double v = bd_rate(anchor, test);
  std::ostringstream os;
  os << "anchor: " << anchor.name << " (" << anchor.points.size() << " points)\n"
     << "test:   " << test.name << " (" << test.points.size() << " points)\n"
     << "method: cubic least-squares fit of log10(bpp) over PSNR, integrated on the common PSNR interval\n"
     << "BD-rate: " << std::fixed << std::setprecision(2) << (std::abs(v) < 0.005 ? 0.0 : v) << "%\n";
  return os.str();
}

}  // namespace ngsc
