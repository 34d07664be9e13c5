#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmhar/imu.hpp"

namespace mmhar {

/// counts[t * C + p]: rows are ground truth, columns predictions.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * classes + pred];
  }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths,
                          std::size_t classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // no predictions of this class
  bool recall_undefined = false;     // no ground truth of this class
};

struct MetricReport {
  std::uint64_t samples = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  /// Leave-one-out only; the headline fields then hold the unweighted
  /// mean over folds.
  std::vector<MetricReport> folds;
  std::vector<std::string> fold_names;
};

/// 2PR/(P+R), and 0 when P = R = 0.
double f1_score(double precision, double recall);

MetricReport metrics(const ConfusionMatrix& cm);

/// Headline fields become the unweighted mean of the fold headlines.
MetricReport mean_over_folds(std::vector<MetricReport> folds, std::vector<std::string> names);

/// Indices into a dataset's windows.
struct Split {
  std::string name;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle; the first ceil(N/2) go to train. With stratified set,
/// each class is shuffled and halved on its own.
Split split_half_half(const Dataset& ds, std::uint64_t seed, bool stratified = false);

/// One fold per subject, in catalog order.
std::vector<Split> split_leave_one_out(const Dataset& ds);

}  // namespace mmhar
