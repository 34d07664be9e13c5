#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmhar {

/// Per-modality class distributions for one sample.
struct FusionInput {
  std::vector<std::vector<double>> dists;
  std::vector<std::string> modalities;

  std::size_t num_classes() const { return dists.empty() ? 0 : dists.front().size(); }
  void validate() const;
};

enum class FusionMethod { Max, Avg, WeightedMax, WeightedAvg };

FusionMethod fusion_method_from_string(std::string_view s);
std::string_view to_string(FusionMethod m);

inline constexpr double kProbTolerance = 1e-9;

/// Throws unless p is non-negative, finite and sums to 1 within tol.
void validate_prob_dist(std::span<const double> p, double tol = kProbTolerance);

/// S_c = max_m p_c^m
std::vector<double> fuse_max(const FusionInput& fi);
/// S_c = mean_m p_c^m
std::vector<double> fuse_avg(const FusionInput& fi);

enum class LogBase { Natural, Decimal };

/// Entropy-based confidence in [0,1] over the top-K probabilities
/// (renormalized to sum 1): Σ p log p / log K + 1, with 0·log 0 = 0.
/// k == 0 means K = C.
double informativity(std::span<const double> p, std::size_t k = 0,
                     LogBase base = LogBase::Natural);

/// γ-weighted max (weighted_max == true) or mean of the modality
/// distributions. Scores are not renormalized.
std::vector<double> fuse_weighted(const FusionInput& fi, bool weighted_max, std::size_t k = 0);

std::vector<double> fuse(const FusionInput& fi, FusionMethod method, std::size_t k = 0);

struct Decision {
  std::size_t label = 0;
  bool tie = false;
};

/// Arg-max with the lowest index winning ties.
Decision decide(std::span<const double> scores);

// ---------------------------------------------------------------------------
// Probability files: optional "# key=value" header lines, then one line per
// sample: id followed by C probabilities (whitespace or comma separated).

struct ProbFile {
  std::map<std::string, std::string> tags;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> probs;
};

void write_prob_file(std::ostream& out, const ProbFile& pf);
ProbFile read_prob_file(std::istream& in, double tol = kProbTolerance);
void save_prob_file(const std::string& path, const ProbFile& pf);
ProbFile load_prob_file(const std::string& path, double tol = kProbTolerance);

}  // namespace mmhar
