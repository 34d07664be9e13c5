#include "mmhar/fusion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "mmhar/common.hpp"

namespace mmhar {

void FusionInput::validate() const {
  if (dists.empty()) fail(ErrorKind::Data, "fusion needs at least one modality");
  std::size_t c = dists.front().size();
  for (const auto& d : dists) {
    if (d.size() != c) fail(ErrorKind::Data, "fusion inputs disagree on the class count");
    validate_prob_dist(d);
  }
}

FusionMethod fusion_method_from_string(std::string_view s) {
  if (s == "max") return FusionMethod::Max;
  if (s == "avg") return FusionMethod::Avg;
  if (s == "wmax") return FusionMethod::WeightedMax;
  if (s == "wavg") return FusionMethod::WeightedAvg;
  fail(ErrorKind::Config, "unknown fusion method '" + std::string(s) +
                              "' (expected max|avg|wmax|wavg)");
}

std::string_view to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::Max: return "max";
    case FusionMethod::Avg: return "avg";
    case FusionMethod::WeightedMax: return "wmax";
    case FusionMethod::WeightedAvg: return "wavg";
  }
  return "avg";
}

void validate_prob_dist(std::span<const double> p, double tol) {
  if (p.empty()) fail(ErrorKind::Data, "empty probability distribution");
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) {
      fail(ErrorKind::Data, "probability entries must be finite and non-negative");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    fail(ErrorKind::Data, "probabilities sum to " + format_double(sum) + ", not 1");
  }
}

std::vector<double> fuse_max(const FusionInput& fi) {
  fi.validate();
  std::vector<double> s = fi.dists.front();
  for (std::size_t m = 1; m < fi.dists.size(); ++m)
    for (std::size_t c = 0; c < s.size(); ++c) s[c] = std::max(s[c], fi.dists[m][c]);
  return s;
}

std::vector<double> fuse_avg(const FusionInput& fi) {
  fi.validate();
  std::vector<double> s(fi.num_classes(), 0.0);
  for (const auto& d : fi.dists)
    for (std::size_t c = 0; c < s.size(); ++c) s[c] += d[c];
  const double M = static_cast<double>(fi.dists.size());
  for (auto& v : s) v /= M;
  return s;
}

double informativity(std::span<const double> p, std::size_t k, LogBase base) {
  const std::size_t K = k == 0 ? p.size() : k;
  if (K < 2) fail(ErrorKind::Config, "informativity needs K >= 2");
  if (K > p.size()) fail(ErrorKind::Config, "informativity K exceeds the class count");
  std::vector<double> top(p.begin(), p.end());
  std::partial_sort(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(K), top.end(),
                    std::greater<>());
  top.resize(K);
  double sum = 0.0;
  for (double v : top) sum += v;
  if (!(sum > 0.0)) fail(ErrorKind::Data, "top-K probabilities sum to zero");
  if (top.front() == top.back()) return 0.0;
  auto lg = [base](double x) { return base == LogBase::Natural ? std::log(x) : std::log10(x); };
  double acc = 0.0;
  for (double v : top) {
    double q = v / sum;
    if (q > 0.0) acc += q * lg(q);
  }
  double gamma = acc / lg(static_cast<double>(K)) + 1.0;
  return std::clamp(gamma, 0.0, 1.0);
}

std::vector<double> fuse_weighted(const FusionInput& fi, bool weighted_max, std::size_t k) {
  fi.validate();
  const std::size_t C = fi.num_classes();
  std::vector<double> s(C, weighted_max ? -1.0 : 0.0);
  for (const auto& d : fi.dists) {
    double g = informativity(d, k);
    for (std::size_t c = 0; c < C; ++c) {
      double v = g * d[c];
      s[c] = weighted_max ? std::max(s[c], v) : s[c] + v;
    }
  }
  if (!weighted_max) {
    for (auto& v : s) v /= static_cast<double>(fi.dists.size());
  }
  return s;
}

std::vector<double> fuse(const FusionInput& fi, FusionMethod method, std::size_t k) {
  switch (method) {
    case FusionMethod::Max: return fuse_max(fi);
    case FusionMethod::Avg: return fuse_avg(fi);
    case FusionMethod::WeightedMax: return fuse_weighted(fi, true, k);
    case FusionMethod::WeightedAvg: return fuse_weighted(fi, false, k);
  }
  return fuse_avg(fi);
}

Decision decide(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorKind::Data, "cannot decide on an empty score vector");
  Decision d;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (!std::isfinite(scores[c])) fail(ErrorKind::Data, "non-finite fusion score");
    if (scores[c] > scores[d.label]) d.label = c;
  }
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (c != d.label && scores[c] == scores[d.label]) d.tie = true;
  }
  return d;
}

// ---------------------------------------------------------------------------

void write_prob_file(std::ostream& out, const ProbFile& pf) {
  for (const auto& [k, v] : pf.tags) out << "# " << k << '=' << v << '\n';
  for (std::size_t i = 0; i < pf.ids.size(); ++i) {
    out << pf.ids[i];
    for (double p : pf.probs[i]) out << '\t' << format_double(p);
    out << '\n';
  }
}

ProbFile read_prob_file(std::istream& in, double tol) {
  ProbFile pf;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq != std::string::npos) {
        auto key = line.substr(1, eq - 1);
        key.erase(0, key.find_first_not_of(' '));
        pf.tags[key] = line.substr(eq + 1);
      }
      continue;
    }
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string id;
    ls >> id;
    std::vector<double> p;
    for (std::string tok; ls >> tok;) {
      double v = 0.0;
      auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
        fail(ErrorKind::Data, "probability file line " + std::to_string(line_no) +
                                  ": cannot parse '" + tok + "'");
      }
      p.push_back(v);
    }
    if (!pf.probs.empty() && p.size() != pf.probs.front().size()) {
      fail(ErrorKind::Data, "probability file line " + std::to_string(line_no) +
                                " has a different class count");
    }
    try {
      validate_prob_dist(p, tol);
    } catch (const Error& e) {
      fail(ErrorKind::Data, "probability file line " + std::to_string(line_no) + ": " + e.what());
    }
    pf.ids.push_back(std::move(id));
    pf.probs.push_back(std::move(p));
  }
  return pf;
}

void save_prob_file(const std::string& path, const ProbFile& pf) {
  std::ostringstream os;
  write_prob_file(os, pf);
  write_text_file(path, os.str());
}

ProbFile load_prob_file(const std::string& path, double tol) {
  std::istringstream in(read_text_file(path));
  return read_prob_file(in, tol);
}

}  // namespace mmhar
