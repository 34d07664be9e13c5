#include "mmhar/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mmhar/common.hpp"

namespace mmhar {

std::string_view to_string(FeatureKind k) { return k == FeatureKind::Freq ? "freq" : "och"; }

FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "freq") return FeatureKind::Freq;
  if (s == "och") return FeatureKind::Och;
  fail(ErrorKind::Config, "unknown feature kind '" + std::string(s) + "' (expected freq|och)");
}

Matrix stack_channels(const ImuWindow& w) {
  Matrix m(kNumChannels, w.length);
  std::copy(w.data.begin(), w.data.end(), m.data.begin());
  return m;
}

// ---------------------------------------------------------------------------
// Row expansion

RowExpansionPlan build_expansion_plan(std::size_t n, std::uint64_t seed) {
  if (n < 2) fail(ErrorKind::Config, "expansion plan needs at least two channels");
  std::vector<std::vector<int>> mult(n, std::vector<int>(n, 1));
  for (std::size_t i = 0; i < n; ++i) mult[i][i] = 0;
  if (n % 2 == 0) {
    for (std::size_t k = 0; k + 1 < n; k += 2) {
      ++mult[k][k + 1];
      ++mult[k + 1][k];
    }
  }
  std::vector<std::size_t> stack{0};
  std::vector<std::size_t> circuit;
  while (!stack.empty()) {
    std::size_t v = stack.back();
    std::size_t u = 0;
    while (u < n && mult[v][u] == 0) ++u;
    if (u < n) {
      --mult[v][u];
      --mult[u][v];
      stack.push_back(u);
    } else {
      circuit.push_back(v);
      stack.pop_back();
    }
  }
  std::reverse(circuit.begin(), circuit.end());
  circuit.pop_back();  // closing vertex; adjacency wraps instead

  if (seed != 0) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(seed);
    rng.shuffle(perm);
    for (auto& c : circuit) c = perm[c];
  }
  return {std::move(circuit), true};
}

std::vector<std::pair<std::size_t, std::size_t>> uncovered_pairs(const RowExpansionPlan& plan,
                                                                 std::size_t n) {
  std::vector<std::vector<bool>> seen(n, std::vector<bool>(n, false));
  const auto& s = plan.sequence;
  auto mark = [&](std::size_t a, std::size_t b) {
    if (a < n && b < n) seen[a][b] = seen[b][a] = true;
  };
  for (std::size_t i = 0; i + 1 < s.size(); ++i) mark(s[i], s[i + 1]);
  if (plan.circular && s.size() > 2) mark(s.back(), s.front());
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (!seen[i][j]) out.emplace_back(i, j);
  return out;
}

bool covers_all_pairs(const RowExpansionPlan& plan, std::size_t n) {
  return uncovered_pairs(plan, n).empty();
}

RowExpansionPlan reference_plan_42() {
  auto full = build_expansion_plan(kNumChannels);
  full.sequence.resize(42);
  full.circular = false;
  return full;
}

Matrix expand_rows(const Matrix& stacked, const RowExpansionPlan& plan) {
  Matrix out(plan.sequence.size(), stacked.cols);
  for (std::size_t i = 0; i < plan.sequence.size(); ++i) {
    std::size_t src = plan.sequence[i];
    if (src >= stacked.rows) {
      fail(ErrorKind::Config, "expansion plan references row " + std::to_string(src) +
                                  " of a " + std::to_string(stacked.rows) + "-row image");
    }
    auto r = stacked.row(src);
    std::copy(r.begin(), r.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * out.cols));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frequency transform

namespace {

using cd = std::complex<double>;

std::vector<cd> twiddles(std::size_t n) {
  std::vector<cd> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    w[k] = {std::cos(a), std::sin(a)};
  }
  return w;
}

/// Separable DFT returning F(u, v) for all u and v < kept_cols, R × kept_cols.
std::vector<cd> partial_spectrum(const Matrix& x, std::size_t kept_cols) {
  const std::size_t R = x.rows, T = x.cols;
  for (double v : x.data) {
    if (!std::isfinite(v)) fail(ErrorKind::Data, "non-finite value in signal image");
  }
  auto wt = twiddles(T);
  auto wr = twiddles(R);
  std::vector<cd> rows(R * kept_cols);
  for (std::size_t r = 0; r < R; ++r) {
    const double* src = x.data.data() + r * T;
    for (std::size_t v = 0; v < kept_cols; ++v) {
      cd acc = 0.0;
      std::size_t idx = 0;
      for (std::size_t t = 0; t < T; ++t) {
        acc += src[t] * wt[idx];
        idx += v;
        if (idx >= T) idx -= T;
      }
      rows[r * kept_cols + v] = acc;
    }
  }
  std::vector<cd> out(R * kept_cols);
  for (std::size_t u = 0; u < R; ++u) {
    for (std::size_t v = 0; v < kept_cols; ++v) {
      cd acc = 0.0;
      std::size_t idx = 0;
      for (std::size_t r = 0; r < R; ++r) {
        acc += rows[r * kept_cols + v] * wr[idx];
        idx += u;
        if (idx >= R) idx -= R;
      }
      out[u * kept_cols + v] = acc;
    }
  }
  return out;
}

template <typename Fn>
Matrix centred_half(const Matrix& expanded, Fn&& map) {
  const std::size_t R = expanded.rows, T = expanded.cols;
  if (R < 2 || T < 2 || T % 2 != 0) {
    fail(ErrorKind::Config, "frequency transform needs R,T >= 2 and even T");
  }
  const std::size_t half = T / 2;
  auto F = partial_spectrum(expanded, half);
  Matrix out(R, half);
  for (std::size_t i = 0; i < R; ++i) {
    std::size_t u = (i + R - R / 2) % R;  // centred row i holds frequency u
    for (std::size_t j = 0; j < half; ++j) out(i, j) = map(std::abs(F[u * half + j]));
  }
  return out;
}

}  // namespace

std::vector<std::complex<double>> dft2d(const Matrix& image) {
  return partial_spectrum(image, image.cols);
}

Matrix freq_log_magnitude(const Matrix& expanded) {
  return centred_half(expanded, [](double m) { return std::log1p(m); });
}

Matrix freq_magnitude(const Matrix& expanded) {
  return centred_half(expanded, [](double m) { return m; });
}

void minmax_normalize(std::span<float> pixels) {
  if (pixels.empty()) return;
  auto [lo_it, hi_it] = std::minmax_element(pixels.begin(), pixels.end());
  float lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(pixels.begin(), pixels.end(), 0.0f);
    return;
  }
  double scale = 1.0 / (static_cast<double>(hi) - lo);
  for (auto& p : pixels) {
    p = static_cast<float>(std::clamp((static_cast<double>(p) - lo) * scale, 0.0, 1.0));
  }
}

FeatureImage freq_transform(const Matrix& expanded) {
  Matrix lm = freq_log_magnitude(expanded);
  FeatureImage img;
  img.kind = FeatureKind::Freq;
  img.height = lm.rows;
  img.width = lm.cols;
  img.depth = 1;
  img.pixels.resize(lm.data.size());
  // Normalize in double, then narrow.
  auto [lo_it, hi_it] = std::minmax_element(lm.data.begin(), lm.data.end());
  double lo = *lo_it, hi = *hi_it;
  for (std::size_t i = 0; i < lm.data.size(); ++i) {
    img.pixels[i] = hi > lo ? static_cast<float>((lm.data[i] - lo) / (hi - lo)) : 0.0f;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Orientation-history transform

std::pair<int, int> och_pixel(double u, double v, std::size_t size) {
  double span = static_cast<double>(size - 1);
  auto col = std::lround((u + 1.0) / 2.0 * span);
  auto row = std::lround((1.0 - (v + 1.0) / 2.0) * span);
  int hi = static_cast<int>(size) - 1;
  return {std::clamp(static_cast<int>(col), 0, hi), std::clamp(static_cast<int>(row), 0, hi)};
}

namespace {
void draw_line(FeatureImage& img, std::size_t ch, std::pair<int, int> a, std::pair<int, int> b) {
  auto [x0, y0] = a;
  auto [x1, y1] = b;
  int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    img.at(static_cast<std::size_t>(y0), static_cast<std::size_t>(x0), ch) = 1.0f;
    if (x0 == x1 && y0 == y1) break;
    int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}
}  // namespace

FeatureImage och_transform(const ImuWindow& w, std::size_t size) {
  if (size < 8) fail(ErrorKind::Config, "och image size must be at least 8");
  FeatureImage img;
  img.kind = FeatureKind::Och;
  img.height = img.width = size;
  img.depth = 3;
  img.pixels.assign(size * size * 3, 0.0f);
  std::array<std::pair<int, int>, 3> prev{};
  for (std::size_t t = 0; t < w.length; ++t) {
    Quaternion q = w.orientation(t);
    double n = norm(q);
    if (!std::isfinite(n) || n == 0.0) {
      fail(ErrorKind::Data, "zero-norm orientation at sample " + std::to_string(t) +
                                " of window " + w.id);
    }
    Vec3 v = rotate_vec(normalized(q), {0.0, 0.0, 1.0});
    std::array<std::pair<int, int>, 3> px = {och_pixel(v.x, v.y, size), och_pixel(v.y, v.z, size),
                                             och_pixel(v.x, v.z, size)};
    for (std::size_t c = 0; c < 3; ++c) draw_line(img, c, t == 0 ? px[c] : prev[c], px[c]);
    prev = px;
  }
  return img;
}

FeatureImage transform_window(const ImuWindow& w, FeatureKind kind, const TransformConfig& cfg) {
  FeatureImage img = kind == FeatureKind::Freq
                         ? freq_transform(expand_rows(stack_channels(w), cfg.plan))
                         : och_transform(w, cfg.och_size);
  img.window_id = w.id;
  img.label = w.label;
  img.subject = w.subject;
  img.provenance = w.id;
  return img;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr char kImageMagic[4] = {'H', 'A', 'R', 'I'};
constexpr std::uint8_t kImageVersion = 1;

std::size_t depth_for(FeatureKind k) { return k == FeatureKind::Freq ? 1 : 3; }
}  // namespace

void write_feature_image(std::ostream& out, const FeatureImage& img) {
  if (img.depth != depth_for(img.kind) || img.pixels.size() != img.height * img.width * img.depth) {
    fail(ErrorKind::Data, "feature image shape is inconsistent with its kind");
  }
  out.write(kImageMagic, 4);
  write_le<std::uint8_t>(out, kImageVersion);
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(img.kind));
  write_le<std::uint16_t>(out, 0);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.height));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.width));
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
}

FeatureImage read_feature_image(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kImageMagic, 4)) {
    fail(ErrorKind::Data, "not a feature image (bad magic)");
  }
  if (read_le<std::uint8_t>(in, "version") != kImageVersion) {
    fail(ErrorKind::Data, "unsupported feature image version");
  }
  auto kind = read_le<std::uint8_t>(in, "kind");
  if (kind != 1 && kind != 2) fail(ErrorKind::Data, "unknown feature image kind");
  read_le<std::uint16_t>(in, "reserved");
  FeatureImage img;
  img.kind = static_cast<FeatureKind>(kind);
  img.height = read_le<std::uint32_t>(in, "height");
  img.width = read_le<std::uint32_t>(in, "width");
  img.depth = depth_for(img.kind);
  if (img.height * img.width > (1u << 24)) fail(ErrorKind::Data, "implausible image size");
  img.pixels.resize(img.height * img.width * img.depth);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size() * sizeof(float)))) {
    fail(ErrorKind::Data, "truncated feature image");
  }
  return img;
}

std::string feature_sidecar_path(const std::string& path) { return path + ".tsv"; }

void save_feature_set(const std::string& path, std::span<const FeatureImage> images) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  std::ostringstream meta;
  meta << "index\twindow_id\tlabel\tsubject\tprovenance\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_feature_image(out, images[i]);
    meta << i << '\t' << images[i].window_id << '\t' << images[i].label << '\t'
         << images[i].subject << '\t' << images[i].provenance << '\n';
  }
  write_text_file(feature_sidecar_path(path), meta.str());
}

std::vector<FeatureImage> load_feature_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::vector<FeatureImage> images;
  while (in.peek() != std::char_traits<char>::eof()) images.push_back(read_feature_image(in));

  std::istringstream meta(read_text_file(feature_sidecar_path(path)));
  std::string line;
  std::getline(meta, line);  // header
  std::size_t i = 0;
  while (std::getline(meta, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (i >= images.size()) fail(ErrorKind::Data, "feature sidecar has more rows than images");
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string field; std::getline(ls, field, '\t');) f.push_back(field);
    if (f.size() < 5) fail(ErrorKind::Data, "malformed feature sidecar row: " + line);
    auto& img = images[i];
    img.window_id = f[1];
    img.label = std::stoi(f[2]);
    img.subject = std::stoi(f[3]);
    img.provenance = f[4];
    ++i;
  }
  if (i != images.size()) fail(ErrorKind::Data, "feature sidecar row count mismatch");
  return images;
}

void write_preview(const std::string& path, const FeatureImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << (img.depth == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < std::min<std::size_t>(img.depth, 3); ++c) {
        double v = std::clamp(static_cast<double>(img.at(y, x, c)), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
}

}  // namespace mmhar
