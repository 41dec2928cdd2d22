#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajector/error.hpp"
#include "trajector/io.hpp"

namespace trajector {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // predict positive when score >= threshold

  bool operator==(const RocPoint&) const = default;
};

struct EvalReport {
  double acc = 0.0;
  double auc = 0.0;
  std::vector<RocPoint> roc;
  std::size_t n_samples = 0;
  std::size_t n_positive = 0;

  bool operator==(const EvalReport&) const = default;
};

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw MetricError("prediction/label length mismatch");
  if (preds.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// ROC over the sorted unique score thresholds, from (0,0) at threshold +inf to
// (1,1). AUC by the trapezoidal rule, accumulated in integer counts so that
// ties get exactly half credit (the Mann-Whitney statistic).
inline EvalReport roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw MetricError("score/label length mismatch");
  std::size_t positives = 0;
  for (int y : labels) positives += y == 1 ? 1 : 0;
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw MetricError("ROC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  EvalReport report;
  report.n_samples = scores.size();
  report.n_positive = positives;
  report.roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0, area2 = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double threshold = scores[order[k]];
    const std::uint64_t tp_prev = tp, fp_prev = fp;
    for (; k < order.size() && scores[order[k]] == threshold; ++k) (labels[order[k]] == 1 ? tp : fp) += 1;
    area2 += (fp - fp_prev) * (tp + tp_prev);
    report.roc.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                          static_cast<double>(tp) / static_cast<double>(positives), threshold});
  }
  report.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
  return report;
}

// Full report: ROC/AUC from scores plus accuracy of score > threshold.
inline EvalReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                                  double threshold = 0.5) {
  EvalReport report = roc_auc(scores, labels);
  std::vector<int> preds;
  preds.reserve(scores.size());
  for (double s : scores) preds.push_back(s > threshold ? 1 : 0);
  report.acc = accuracy(preds, labels);
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json doc;
  doc["acc"] = r.acc;
  doc["auc"] = r.auc;
  doc["n_samples"] = r.n_samples;
  doc["n_positive"] = r.n_positive;
  doc["roc"] = nlohmann::json::array();
  for (const auto& p : r.roc) {
    // JSON has no infinity; the leading +inf threshold is written as null.
    doc["roc"].push_back({{"fpr", p.fpr},
                          {"tpr", p.tpr},
                          {"threshold", std::isinf(p.threshold) ? nlohmann::json(nullptr) : nlohmann::json(p.threshold)}});
  }
  return doc;
}

inline EvalReport report_from_json(const nlohmann::json& doc) {
  EvalReport r;
  r.acc = doc.at("acc").get<double>();
  r.auc = doc.at("auc").get<double>();
  r.n_samples = doc.at("n_samples").get<std::size_t>();
  r.n_positive = doc.at("n_positive").get<std::size_t>();
  for (const auto& p : doc.at("roc")) {
    const auto& t = p.at("threshold");
    r.roc.push_back({p.at("fpr").get<double>(), p.at("tpr").get<double>(),
                     t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>()});
  }
  return r;
}

inline std::string roc_to_csv(const EvalReport& r) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : r.roc)
    out += format_double(p.fpr) + "," + format_double(p.tpr) + "," +
           (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) + "\n";
  return out;
}

enum class ReportFormat { json, csv };

inline void write_report(const EvalReport& r, const std::filesystem::path& path, ReportFormat format) {
  write_file_atomic(path, format == ReportFormat::json ? report_to_json(r).dump(2) + "\n" : roc_to_csv(r));
}

inline EvalReport read_report(const std::filesystem::path& path) {
  return report_from_json(nlohmann::json::parse(read_file(path)));
}

// ---------------------------------------------------------------------------
// Image quality metrics on grayscale planes.

struct ImagePlane {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major, [0, 255]

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row * width + col)]; }
};

inline void require_same_size(const ImagePlane& a, const ImagePlane& b) {
  if (a.width != b.width || a.height != b.height) throw MetricError("image dimensions differ");
  if (a.pixels.size() != static_cast<std::size_t>(a.width) * static_cast<std::size_t>(a.height) ||
      b.pixels.size() != a.pixels.size())
    throw MetricError("pixel count does not match dimensions");
}

// Reads binary PGM (P5) or PPM (P6) with maxval 255. Color is reduced to
// luma with the ITU-R BT.601 weights.
inline ImagePlane read_pnm(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P6") throw IoError("unsupported image format in " + path.string());
  ImagePlane img;
  int maxval = 0;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw IoError("bad image header in " + path.string());
  }
  if (img.width <= 0 || img.height <= 0 || maxval != 255) throw IoError("unsupported image header in " + path.string());
  ++pos;  // single whitespace before the raster
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (data.size() < pos + count * channels) throw IoError("truncated image " + path.string());
  img.pixels.resize(count);
  auto byte = [&](std::size_t i) { return static_cast<double>(static_cast<unsigned char>(data[pos + i])); };
  for (std::size_t i = 0; i < count; ++i) {
    img.pixels[i] = channels == 1 ? byte(i)
                                  : 0.299 * byte(3 * i) + 0.587 * byte(3 * i + 1) + 0.114 * byte(3 * i + 2);
  }
  return img;
}

inline void write_pgm(const ImagePlane& img, const std::filesystem::path& path) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (double p : img.pixels) out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(p), 0L, 255L))));
  write_file_atomic(path, out);
}

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 10 log10(255^2 / MSE); +infinity when the images are identical.
inline double psnr(const ImagePlane& a, const ImagePlane& b) {
  require_same_size(a, b);
  double sse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable "valid" correlation of a row-major plane with kernel x kernel.
inline std::vector<double> filter_valid(const std::vector<double>& src, int width, int height,
                                        const std::vector<double>& kernel) {
  const int n = static_cast<int>(kernel.size());
  const int ow = width - n + 1, oh = height - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += kernel[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(r * width + c + k)];
      tmp[static_cast<std::size_t>(r * ow + c)] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * static_cast<std::size_t>(oh));
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += kernel[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((r + k) * ow + c)];
      out[static_cast<std::size_t>(r * ow + c)] = s;
    }
  return out;
}

}  // namespace detail

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

// Mean SSIM over all fully contained Gaussian-weighted windows.
inline double ssim(const ImagePlane& a, const ImagePlane& b, const SsimOptions& o = {}) {
  require_same_size(a, b);
  if (o.window < 1 || o.window % 2 == 0) throw MetricError("SSIM window must be odd");
  if (a.width < o.window || a.height < o.window) throw MetricError("image smaller than SSIM window");
  const auto kernel = detail::gaussian_kernel(o.window, o.sigma);
  const std::size_t n = a.pixels.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a.pixels[i] * a.pixels[i];
    bb[i] = b.pixels[i] * b.pixels[i];
    ab[i] = a.pixels[i] * b.pixels[i];
  }
  const auto mu_a = detail::filter_valid(a.pixels, a.width, a.height, kernel);
  const auto mu_b = detail::filter_valid(b.pixels, a.width, a.height, kernel);
  const auto e_aa = detail::filter_valid(aa, a.width, a.height, kernel);
  const auto e_bb = detail::filter_valid(bb, a.width, a.height, kernel);
  const auto e_ab = detail::filter_valid(ab, a.width, a.height, kernel);
  const double c1 = (o.k1 * o.dynamic_range) * (o.k1 * o.dynamic_range);
  const double c2 = (o.k2 * o.dynamic_range) * (o.k2 * o.dynamic_range);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    sum += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

struct UqiResult {
  double value = 0.0;
  std::size_t windows = 0;  // windows that entered the mean
  std::size_t skipped = 0;  // windows with a zero denominator
};

// Universal quality index: mean over sliding block x block windows of
// 4 cov mu_a mu_b / ((var_a + var_b)(mu_a^2 + mu_b^2)). Window statistics are
// two-pass so that flat windows give an exactly zero variance; windows with a
// zero denominator are skipped and counted. NaN if every window is skipped.
inline UqiResult uqi(const ImagePlane& a, const ImagePlane& b, int block = 8) {
  require_same_size(a, b);
  if (block < 1) throw MetricError("UQI block must be positive");
  if (a.width < block || a.height < block) throw MetricError("image smaller than UQI window");
  const double count = static_cast<double>(block) * block;
  UqiResult r;
  double sum = 0.0;
  for (int top = 0; top + block <= a.height; ++top) {
    for (int left = 0; left + block <= a.width; ++left) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int i = top; i < top + block; ++i)
        for (int j = left; j < left + block; ++j) {
          mu_a += a.at(i, j);
          mu_b += b.at(i, j);
        }
      mu_a /= count;
      mu_b /= count;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int i = top; i < top + block; ++i)
        for (int j = left; j < left + block; ++j) {
          const double da = a.at(i, j) - mu_a, db = b.at(i, j) - mu_b;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= count;
      vb /= count;
      cov /= count;
      const double den = (va + vb) * (mu_a * mu_a + mu_b * mu_b);
      if (den == 0.0) {
        ++r.skipped;
        continue;
      }
      sum += 4.0 * cov * mu_a * mu_b / den;
      ++r.windows;
    }
  }
  r.value = r.windows ? sum / static_cast<double>(r.windows) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace trajector
