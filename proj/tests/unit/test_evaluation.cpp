#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "mmhar/common.hpp"
#include "mmhar/evaluation.hpp"
#include "oracles.hpp"

using namespace mmhar;

namespace {

Dataset toy_dataset(std::size_t n, std::vector<int> subjects, int classes = 3) {
  Dataset ds;
  for (int c = 0; c < classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
  ds.subjects = subjects;
  for (std::size_t i = 0; i < n; ++i) {
    ImuWindow w;
    w.id = "w" + std::to_string(i);
    w.subject = subjects[i % subjects.size()];
    w.label = static_cast<int>(i % static_cast<std::size_t>(classes));
    w.length = 1;
    w.data.assign(10, 0.0);
    ds.windows.push_back(w);
  }
  return ds;
}

void expect_partition(const Split& s, std::size_t n) {
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), n);
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
}

}  // namespace

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  std::vector<int> y{0, 1, 2, 2, 1};
  auto cm = confusion(y, y, 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      if (a != b) EXPECT_EQ(cm.at(a, b), 0u);
  EXPECT_EQ(cm.at(2, 2), 2u);
}

TEST(Confusion, HandCountedExample) {
  std::vector<int> truths{0, 0, 1}, preds{0, 1, 1};
  auto cm = confusion(preds, truths, 2);
  EXPECT_EQ(cm.at(0, 0), 1u);
  EXPECT_EQ(cm.at(0, 1), 1u);
  EXPECT_EQ(cm.at(1, 1), 1u);
  EXPECT_EQ(cm.at(1, 0), 0u);
}

TEST(Confusion, EmptyInputIsZeroMatrix) {
  auto cm = confusion(std::vector<int>{}, std::vector<int>{}, 4);
  EXPECT_EQ(cm.total(), 0u);
  EXPECT_THROW(metrics(cm), Error);
}

TEST(Confusion, RejectsBadLabels) {
  EXPECT_THROW(confusion(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 3), Error);
  EXPECT_THROW(confusion(std::vector<int>{0}, std::vector<int>{0, 1}, 3), Error);
}

TEST(Metrics, PerfectPredictionsScoreOne) {
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) y.push_back(i % 6);
  auto r = metrics(confusion(y, y, 6));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(Metrics, F1OfOneAndHalfIsTwoThirds) {
  EXPECT_EQ(f1_score(1.0, 0.5), 2.0 / 3.0);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(Metrics, HandComputedThreeSampleExample) {
  std::vector<int> truths{0, 0, 1}, preds{0, 1, 1};
  auto r = metrics(confusion(preds, truths, 2));
  EXPECT_EQ(r.per_class[0].precision, 1.0);
  EXPECT_EQ(r.per_class[0].recall, 0.5);
  EXPECT_EQ(r.per_class[0].f1, 2.0 / 3.0);
  EXPECT_EQ(r.per_class[1].precision, 0.5);
  EXPECT_EQ(r.per_class[1].recall, 1.0);
  EXPECT_EQ(r.per_class[1].f1, 2.0 / 3.0);
  EXPECT_EQ(r.accuracy, 2.0 / 3.0);
}

TEST(Metrics, ZeroDivisionIsFlagged) {
  std::vector<int> truths{0, 0, 1}, preds{0, 0, 0};
  auto r = metrics(confusion(preds, truths, 3));
  EXPECT_TRUE(r.per_class[1].precision_undefined);
  EXPECT_FALSE(r.per_class[1].recall_undefined);
  EXPECT_TRUE(r.per_class[2].precision_undefined);
  EXPECT_TRUE(r.per_class[2].recall_undefined);
  EXPECT_EQ(r.per_class[2].f1, 0.0);
}

TEST(Metrics, AgreeExactlyWithBruteForceLoop) {
  std::mt19937_64 g(21);
  for (int t = 0; t < 100; ++t) {
    int C = 2 + t % 7;
    std::size_t n = 1 + g() % 300;
    std::vector<int> preds(n), truths(n);
    for (std::size_t i = 0; i < n; ++i) {
      truths[i] = static_cast<int>(g() % static_cast<unsigned>(C));
      preds[i] = g() % 3 == 0 ? static_cast<int>(g() % static_cast<unsigned>(C)) : truths[i];
    }
    auto r = metrics(confusion(preds, truths, static_cast<std::size_t>(C)));
    auto b = oracle::brute_metrics(preds, truths, C);
    EXPECT_EQ(r.samples, n);
    EXPECT_EQ(r.accuracy, b.accuracy);
    for (int c = 0; c < C; ++c) {
      EXPECT_EQ(r.per_class[c].precision, b.precision[c]);
      EXPECT_EQ(r.per_class[c].recall, b.recall[c]);
      EXPECT_EQ(r.per_class[c].f1, b.f1[c]);
      const auto& m = r.per_class[c];
      if (m.precision + m.recall > 0)
        EXPECT_EQ(m.f1, 2 * m.precision * m.recall / (m.precision + m.recall));
    }
    EXPECT_EQ(r.macro_precision, b.macro_p);
    EXPECT_EQ(r.macro_recall, b.macro_r);
    EXPECT_EQ(r.macro_f1, b.macro_f1);
    EXPECT_LE(r.macro_f1, 1.0);
  }
}

TEST(Metrics, FoldMeanIsUnweighted) {
  std::vector<int> a_t{0, 1, 1, 0}, a_p{0, 1, 0, 0};
  std::vector<int> b_t{0, 1}, b_p{1, 1};
  auto fa = metrics(confusion(a_p, a_t, 2));
  auto fb = metrics(confusion(b_p, b_t, 2));
  auto r = mean_over_folds({fa, fb}, {"subject 1", "subject 2"});
  EXPECT_EQ(r.accuracy, (0.75 + 0.5) / 2);
  EXPECT_EQ(r.macro_f1, (fa.macro_f1 + fb.macro_f1) / 2);
  EXPECT_EQ(r.samples, 6u);
  ASSERT_EQ(r.folds.size(), 2u);
  EXPECT_EQ(r.fold_names[1], "subject 2");
}

TEST(HalfHalf, SplitSizesFollowCeilingRule) {
  auto s100 = split_half_half(toy_dataset(100, {1, 2}), 7);
  EXPECT_EQ(s100.train.size(), 50u);
  EXPECT_EQ(s100.test.size(), 50u);
  auto s101 = split_half_half(toy_dataset(101, {1, 2}), 7);
  EXPECT_EQ(s101.train.size(), 51u);
  EXPECT_EQ(s101.test.size(), 50u);
}

TEST(HalfHalf, DeterministicPartition) {
  auto ds = toy_dataset(77, {1, 2, 3});
  auto a = split_half_half(ds, 3), b = split_half_half(ds, 3), c = split_half_half(ds, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
  expect_partition(a, 77);
}

TEST(HalfHalf, StratifiedKeepsClassBalance) {
  auto ds = toy_dataset(120, {1, 2}, 3);
  auto s = split_half_half(ds, 9, true);
  expect_partition(s, 120);
  std::vector<int> per_class(3, 0);
  for (auto i : s.train) ++per_class[static_cast<std::size_t>(ds.windows[i].label)];
  for (int n : per_class) EXPECT_EQ(n, 20);
}

TEST(HalfHalf, RejectsTinyDatasets) {
  EXPECT_THROW(split_half_half(toy_dataset(1, {1}), 1), Error);
}

TEST(LeaveOneOut, OneFoldPerSubject) {
  auto ds = toy_dataset(160, {1, 2, 3, 4, 5, 6, 7, 8});
  auto folds = split_leave_one_out(ds);
  ASSERT_EQ(folds.size(), 8u);
  std::set<std::size_t> tested;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    expect_partition(folds[f], ds.windows.size());
    int subject = ds.windows[folds[f].test.front()].subject;
    EXPECT_EQ(folds[f].name, "subject " + std::to_string(subject));
    for (auto i : folds[f].test) {
      EXPECT_EQ(ds.windows[i].subject, subject);
      EXPECT_TRUE(tested.insert(i).second);
    }
    for (auto i : folds[f].train) EXPECT_NE(ds.windows[i].subject, subject);
  }
  EXPECT_EQ(tested.size(), ds.windows.size());
}

TEST(LeaveOneOut, TwoSubjectsGiveTwoFolds) {
  auto folds = split_leave_one_out(toy_dataset(10, {4, 9}));
  ASSERT_EQ(folds.size(), 2u);
  EXPECT_EQ(folds[0].test.size(), 5u);
  EXPECT_THROW(split_leave_one_out(toy_dataset(10, {4})), Error);
}
