#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mrcn/raster_io.hpp"

namespace mrcn {

// counts[i][j]: pixels of reference class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : C_(classes), counts_(classes * classes, 0) {
    if (classes < 1) throw ConfigError("confusion matrix needs at least one class");
  }

  std::size_t classes() const { return C_; }
  std::uint64_t& at(std::size_t ref, std::size_t pred) { return counts_.at(ref * C_ + pred); }
  std::uint64_t at(std::size_t ref, std::size_t pred) const { return counts_.at(ref * C_ + pred); }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto v : counts_) n += v;
    return n;
  }
  std::uint64_t diagonal() const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < C_; ++i) n += at(i, i);
    return n;
  }
  // n_{i+}: pixels predicted as class i.
  std::uint64_t predicted(std::size_t i) const {
    std::uint64_t n = 0;
    for (std::size_t r = 0; r < C_; ++r) n += at(r, i);
    return n;
  }
  // n_{+i}: reference pixels of class i.
  std::uint64_t reference(std::size_t i) const {
    std::uint64_t n = 0;
    for (std::size_t p = 0; p < C_; ++p) n += at(i, p);
    return n;
  }

  void merge(const ConfusionMatrix& o) {
    if (o.C_ != C_) throw ShapeError("cannot merge confusion matrices of different sizes");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += o.counts_[k];
  }

 private:
  std::size_t C_;
  std::vector<std::uint64_t> counts_;
};

// Adds one count per labeled reference pixel.
inline void accumulate(ConfusionMatrix& cm, const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& ref) {
  if (pred.dims() != ref.dims()) {
    throw ShapeError("prediction " + pred.dims().str() + " and reference " + ref.dims().str() + " differ");
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const std::uint8_t r = ref[i];
    if (r == kUnlabeled) continue;
    const std::uint8_t p = pred[i];
    if (p >= cm.classes() || r >= cm.classes()) {
      throw DataError("class index " + std::to_string(std::max(p, r)) + " outside [0," +
                      std::to_string(cm.classes()) + ")");
    }
    ++cm.at(r, p);
  }
}

namespace detail {
inline void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("empty evaluation: no labeled pixels");
}
}  // namespace detail

inline double overall_accuracy(const ConfusionMatrix& cm) {
  detail::require_nonempty(cm);
  return static_cast<double>(cm.diagonal()) / static_cast<double>(cm.total());
}

// Chance-corrected agreement. When the chance term fills the whole
// denominator (a single class everywhere) kappa is 1 for a perfect map and
// 0 otherwise.
inline double kappa(const ConfusionMatrix& cm) {
  detail::require_nonempty(cm);
  const double n = static_cast<double>(cm.total());
  double chance = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    chance += static_cast<double>(cm.predicted(i)) * static_cast<double>(cm.reference(i));
  }
  const double den = n * n - chance;
  if (den == 0) return cm.diagonal() == cm.total() ? 1.0 : 0.0;
  return (n * static_cast<double>(cm.diagonal()) - chance) / den;
}

enum class AaDenominator { predicted, reference };

// Per-class rate n_ii / n_{i+} (precision) or n_ii / n_{+i} (recall);
// 0 when the denominator is 0.
inline double class_rate(const ConfusionMatrix& cm, std::size_t i, AaDenominator d) {
  const std::uint64_t den = d == AaDenominator::predicted ? cm.predicted(i) : cm.reference(i);
  return den == 0 ? 0.0 : static_cast<double>(cm.at(i, i)) / static_cast<double>(den);
}

inline double average_accuracy(const ConfusionMatrix& cm, AaDenominator d = AaDenominator::predicted) {
  detail::require_nonempty(cm);
  double s = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) s += class_rate(cm, i, d);
  return s / static_cast<double>(cm.classes());
}

inline double class_f1(const ConfusionMatrix& cm, std::size_t i) {
  const double p = class_rate(cm, i, AaDenominator::predicted);
  const double r = class_rate(cm, i, AaDenominator::reference);
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

inline double mean_f1(const ConfusionMatrix& cm) {
  detail::require_nonempty(cm);
  double s = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) s += class_f1(cm, i);
  return s / static_cast<double>(cm.classes());
}

struct MetricSummary {
  double oa = 0, kappa = 0, aa = 0, f1 = 0;
};

inline MetricSummary summarize(const ConfusionMatrix& cm, AaDenominator d = AaDenominator::predicted) {
  return {overall_accuracy(cm), kappa(cm), average_accuracy(cm, d), mean_f1(cm)};
}

inline std::string report_table(const ConfusionMatrix& cm, AaDenominator d = AaDenominator::predicted) {
  const MetricSummary m = summarize(cm, d);
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "class  precision  recall     f1         support\n";
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    os << std::setw(5) << i << "  " << std::setw(9) << class_rate(cm, i, AaDenominator::predicted) << "  "
       << std::setw(9) << class_rate(cm, i, AaDenominator::reference) << "  " << std::setw(9) << class_f1(cm, i)
       << "  " << cm.reference(i) << "\n";
  }
  os << "OA     " << m.oa << "\nkappa  " << m.kappa << "\nAA     " << m.aa << "\nF1     " << m.f1 << "\n";
  os << "pixels " << cm.total() << "\n";
  return os.str();
}

inline std::string report_csv(const ConfusionMatrix& cm, AaDenominator d = AaDenominator::predicted) {
  const MetricSummary m = summarize(cm, d);
  std::ostringstream os;
  os << std::setprecision(8);
  os << "class,precision,recall,f1\n";
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    os << i << "," << class_rate(cm, i, AaDenominator::predicted) << "," << class_rate(cm, i, AaDenominator::reference)
       << "," << class_f1(cm, i) << "\n";
  }
  os << "OA," << m.oa << "\nkappa," << m.kappa << "\nAA," << m.aa << "\nF1," << m.f1 << "\n";
  return os.str();
}

}  // namespace mrcn
