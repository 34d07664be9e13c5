#include "mmhar/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "mmhar/common.hpp"

namespace mmhar {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (o.classes != classes) fail(ErrorKind::Data, "confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  return *this;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths,
                          std::size_t classes) {
  if (preds.size() != truths.size()) {
    fail(ErrorKind::Data, "confusion: " + std::to_string(preds.size()) + " predictions vs " +
                              std::to_string(truths.size()) + " labels");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || truths[i] < 0 || static_cast<std::size_t>(preds[i]) >= classes ||
        static_cast<std::size_t>(truths[i]) >= classes) {
      fail(ErrorKind::Data, "confusion: label out of range at index " + std::to_string(i));
    }
    ++cm.at(static_cast<std::size_t>(truths[i]), static_cast<std::size_t>(preds[i]));
  }
  return cm;
}

double f1_score(double precision, double recall) {
  if (precision == 0.0 && recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricReport metrics(const ConfusionMatrix& cm) {
  const std::size_t C = cm.classes;
  MetricReport r;
  r.samples = cm.total();
  if (r.samples == 0) fail(ErrorKind::Data, "metrics of an empty confusion matrix");
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < C; ++c) trace += cm.at(c, c);
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.samples);
  r.per_class.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t tp = cm.at(c, c), col = 0, row = 0;
    for (std::size_t o = 0; o < C; ++o) {
      col += cm.at(o, c);
      row += cm.at(c, o);
    }
    auto& m = r.per_class[c];
    m.precision_undefined = col == 0;
    m.recall_undefined = row == 0;
    m.precision = col == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col);
    m.recall = row == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(row);
    m.f1 = f1_score(m.precision, m.recall);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  r.macro_precision /= static_cast<double>(C);
  r.macro_recall /= static_cast<double>(C);
  r.macro_f1 /= static_cast<double>(C);
  return r;
}

MetricReport mean_over_folds(std::vector<MetricReport> folds, std::vector<std::string> names) {
  if (folds.empty()) fail(ErrorKind::Data, "no folds to aggregate");
  MetricReport r;
  const std::size_t C = folds.front().per_class.size();
  r.per_class.resize(C);
  for (const auto& f : folds) {
    r.samples += f.samples;
    r.accuracy += f.accuracy;
    r.macro_precision += f.macro_precision;
    r.macro_recall += f.macro_recall;
    r.macro_f1 += f.macro_f1;
    for (std::size_t c = 0; c < C; ++c) {
      r.per_class[c].precision += f.per_class[c].precision;
      r.per_class[c].recall += f.per_class[c].recall;
      r.per_class[c].f1 += f.per_class[c].f1;
      r.per_class[c].precision_undefined |= f.per_class[c].precision_undefined;
      r.per_class[c].recall_undefined |= f.per_class[c].recall_undefined;
    }
  }
  const double n = static_cast<double>(folds.size());
  r.accuracy /= n;
  r.macro_precision /= n;
  r.macro_recall /= n;
  r.macro_f1 /= n;
  for (auto& m : r.per_class) {
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
  }
  r.folds = std::move(folds);
  r.fold_names = std::move(names);
  return r;
}

Split split_half_half(const Dataset& ds, std::uint64_t seed, bool stratified) {
  const std::size_t N = ds.windows.size();
  if (N < 2) fail(ErrorKind::Data, "half-half split needs at least two windows");
  Split s;
  s.name = "hh";
  Rng rng(seed);
  auto take = [&](std::vector<std::size_t> idx) {
    rng.shuffle(idx);
    std::size_t half = (idx.size() + 1) / 2;
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
    s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end());
  };
  if (!stratified) {
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    take(std::move(idx));
  } else {
    for (std::size_t c = 0; c < ds.num_classes(); ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < N; ++i)
        if (static_cast<std::size_t>(ds.windows[i].label) == c) idx.push_back(i);
      take(std::move(idx));
    }
  }
  return s;
}

std::vector<Split> split_leave_one_out(const Dataset& ds) {
  std::vector<int> subjects = ds.subjects;
  if (subjects.empty()) {
    for (const auto& w : ds.windows) subjects.push_back(w.subject);
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  }
  if (subjects.size() < 2) fail(ErrorKind::Data, "leave-one-out needs at least two subjects");
  std::vector<Split> folds;
  for (int subj : subjects) {
    Split s;
    s.name = "subject " + std::to_string(subj);
    for (std::size_t i = 0; i < ds.windows.size(); ++i) {
      (ds.windows[i].subject == subj ? s.test : s.train).push_back(i);
    }
    folds.push_back(std::move(s));
  }
  return folds;
}

}  // namespace mmhar
