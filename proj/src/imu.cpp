#include "mmhar/imu.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mmhar/common.hpp"

namespace mmhar {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split(std::string_view line, Delimiter d) {
  std::vector<std::string_view> out;
  if (d == Delimiter::Whitespace) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      if (j > i) out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  char sep = d == Delimiter::Comma ? ',' : '\t';
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool is_blank(std::string_view line) { return trim(line).empty(); }

}  // namespace

void Dataset::validate() const {
  if (class_names.size() < 2) {
    fail(ErrorKind::Data, "dataset needs at least two classes");
  }
  for (const auto& w : windows) {
    if (w.label < 0 || static_cast<std::size_t>(w.label) >= class_names.size()) {
      fail(ErrorKind::Data, "window " + w.id + " has a label outside the class catalog");
    }
    if (std::find(subjects.begin(), subjects.end(), w.subject) == subjects.end()) {
      fail(ErrorKind::Data, "window " + w.id + " has a subject outside the catalog");
    }
    if (w.data.size() != kNumChannels * w.length) {
      fail(ErrorKind::Data, "window " + w.id + " has inconsistent shape");
    }
  }
}

// ---------------------------------------------------------------------------

ColumnMap ColumnMap::standard() {
  ColumnMap m;
  for (std::size_t i = 0; i < kFields.size(); ++i) m.sources[i] = std::string(kFields[i]);
  return m;
}

ColumnMap ColumnMap::pamap2_hand() {
  ColumnMap m;
  m.delimiter = Delimiter::Whitespace;
  m.header = false;
  m.time_scale = 1000.0;
  // timestamp, then hand IMU block starting at column 3 (temperature).
  m.sources = {"#0",  "#4",  "#5",  "#6",  "#10", "#11",
               "#12", "#17", "#18", "#19", "#16"};
  return m;
}

ColumnMap ColumnMap::preset(std::string_view name) {
  if (name == "standard") return standard();
  if (name == "pamap2_hand") return pamap2_hand();
  fail(ErrorKind::Config, "unknown column map preset '" + std::string(name) + "'");
}

IngestResult ingest_recording(const std::string& path, const ColumnMap& map,
                              int subject, double rate_hz) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open recording " + path);
  return ingest_recording(in, map, subject, rate_hz);
}

IngestResult ingest_recording(std::istream& in, const ColumnMap& map, int subject,
                              double rate_hz) {
  if (!(rate_hz > 0.0)) fail(ErrorKind::Config, "rate_hz must be positive");
  std::string line;
  std::size_t line_no = 0;
  std::array<std::size_t, 11> col{};

  // Resolve the column binding.
  std::vector<std::string> header;
  if (map.header) {
    bool got = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank(line)) continue;
      for (auto f : split(line, map.delimiter)) header.emplace_back(f);
      got = true;
      break;
    }
    if (!got) fail(ErrorKind::Data, "recording file is empty");
  }
  for (std::size_t i = 0; i < col.size(); ++i) {
    const std::string& src = map.sources[i];
    if (src.empty()) {
      fail(ErrorKind::Config,
           "column map does not bind field '" + std::string(ColumnMap::kFields[i]) + "'");
    }
    if (src[0] == '#') {
      std::size_t idx = 0;
      auto r = std::from_chars(src.data() + 1, src.data() + src.size(), idx);
      if (r.ec != std::errc() || r.ptr != src.data() + src.size()) {
        fail(ErrorKind::Config, "bad column index '" + src + "'");
      }
      col[i] = idx;
    } else {
      if (!map.header) {
        fail(ErrorKind::Config, "column '" + src + "' is named but the file has no header");
      }
      auto it = std::find(header.begin(), header.end(), src);
      if (it == header.end()) {
        fail(ErrorKind::Config, "column '" + src + "' (field '" +
                                    std::string(ColumnMap::kFields[i]) +
                                    "') not found in header");
      }
      col[i] = static_cast<std::size_t>(it - header.begin());
    }
  }
  std::size_t needed = *std::max_element(col.begin(), col.end()) + 1;

  IngestResult result;
  result.recording.subject = subject;
  result.recording.rate_hz = rate_hz;
  std::vector<std::size_t> source_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    auto fields = split(line, map.delimiter);
    if (fields.size() < needed) {
      fail(ErrorKind::Data, "line " + std::to_string(line_no) + " has " +
                                std::to_string(fields.size()) + " fields, expected at least " +
                                std::to_string(needed));
    }
    std::array<double, 11> v{};
    bool finite = true;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!parse_double(fields[col[i]], v[i])) {
        fail(ErrorKind::Data, "line " + std::to_string(line_no) + ": cannot parse '" +
                                  std::string(fields[col[i]]) + "'");
      }
      finite = finite && std::isfinite(v[i]);
    }
    if (!finite) {
      ++result.dropped_rows;
      continue;
    }
    ImuRecord r;
    r.t_ms = static_cast<std::int64_t>(std::llround(v[0] * map.time_scale));
    r.accel = {v[1], v[2], v[3]};
    r.gyro = {v[4], v[5], v[6]};
    r.orientation = {v[7], v[8], v[9], v[10]};
    result.recording.records.push_back(r);
    source_lines.push_back(line_no);
  }
  auto& recs = result.recording.records;
  if (recs.empty()) {
    fail(ErrorKind::Data, result.dropped_rows > 0
                              ? "recording has no finite rows"
                              : "recording file has no data rows");
  }
  for (std::size_t i = 1; i < recs.size(); ++i) {
    if (recs[i].t_ms <= recs[i - 1].t_ms) {
      fail(ErrorKind::Data, "non-monotonic timestamps at record index " + std::to_string(i) +
                                " (line " + std::to_string(source_lines[i]) + ": " +
                                std::to_string(recs[i].t_ms) + " ms after " +
                                std::to_string(recs[i - 1].t_ms) + " ms)");
    }
  }
  if (recs.size() > 1) {
    std::vector<double> dt;
    dt.reserve(recs.size() - 1);
    for (std::size_t i = 1; i < recs.size(); ++i) {
      dt.push_back(static_cast<double>(recs[i].t_ms - recs[i - 1].t_ms));
    }
    std::nth_element(dt.begin(), dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2), dt.end());
    result.median_interval_ms = dt[dt.size() / 2];
    double nominal = 1000.0 / rate_hz;
    result.rate_mismatch = std::abs(result.median_interval_ms - nominal) > 0.1 * nominal;
  }
  return result;
}

std::vector<Annotation> read_annotations(const std::string& path,
                                         std::span<const std::string> class_names) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open annotations " + path);
  return read_annotations(in, class_names);
}

std::vector<Annotation> read_annotations(std::istream& in,
                                         std::span<const std::string> class_names) {
  std::string line;
  std::size_t line_no = 0;
  std::array<std::size_t, 4> col{0, 1, 2, 3};
  bool header_seen = false;
  std::vector<Annotation> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line) || trim(line).front() == '#') continue;
    Delimiter d = line.find(',') != std::string::npos ? Delimiter::Comma : Delimiter::Whitespace;
    auto f = split(line, d);
    if (!header_seen) {
      header_seen = true;
      static constexpr std::array<std::string_view, 4> names = {"subject", "label", "start_ms",
                                                                "end_ms"};
      if (std::find(f.begin(), f.end(), names[0]) != f.end()) {
        for (std::size_t i = 0; i < names.size(); ++i) {
          auto it = std::find(f.begin(), f.end(), names[i]);
          if (it == f.end()) {
            fail(ErrorKind::Data, "annotation header lacks column '" + std::string(names[i]) + "'");
          }
          col[i] = static_cast<std::size_t>(it - f.begin());
        }
        continue;
      }
    }
    std::size_t need = *std::max_element(col.begin(), col.end()) + 1;
    if (f.size() < need) {
      fail(ErrorKind::Data, "annotation line " + std::to_string(line_no) + " is short");
    }
    Annotation a;
    double subj = 0, start = 0, end = 0;
    if (!parse_double(f[col[0]], subj) || !parse_double(f[col[2]], start) ||
        !parse_double(f[col[3]], end)) {
      fail(ErrorKind::Data, "annotation line " + std::to_string(line_no) + " is malformed");
    }
    a.subject = static_cast<int>(subj);
    a.start_ms = static_cast<std::int64_t>(std::llround(start));
    a.end_ms = static_cast<std::int64_t>(std::llround(end));
    std::string_view lab = f[col[1]];
    auto it = std::find(class_names.begin(), class_names.end(), lab);
    if (it != class_names.end()) {
      a.label = static_cast<int>(it - class_names.begin());
    } else {
      double idx = 0;
      if (!parse_double(lab, idx) || idx < 0 || idx >= static_cast<double>(class_names.size()) ||
          idx != std::floor(idx)) {
        fail(ErrorKind::Data, "annotation line " + std::to_string(line_no) + ": unknown label '" +
                                  std::string(lab) + "'");
      }
      a.label = static_cast<int>(idx);
    }
    if (a.start_ms >= a.end_ms) {
      fail(ErrorKind::Data, "annotation line " + std::to_string(line_no) +
                                ": start_ms must be before end_ms");
    }
    out.push_back(a);
  }
  return out;
}

void write_recording_csv(std::ostream& out, const Recording& rec) {
  out << "t";
  for (auto n : kChannelNames) out << ',' << n;
  out << '\n';
  for (const auto& r : rec.records) {
    out << r.t_ms;
    for (double v : r.channels()) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_annotations_csv(std::ostream& out, std::span<const Annotation> anns,
                           std::span<const std::string> class_names) {
  out << "subject,label,start_ms,end_ms\n";
  for (const auto& a : anns) {
    out << a.subject << ',' << class_names[static_cast<std::size_t>(a.label)] << ','
        << a.start_ms << ',' << a.end_ms << '\n';
  }
}

// ---------------------------------------------------------------------------

SegmentationResult segment(const Recording& rec, std::span<const Annotation> anns,
                           std::size_t min_length) {
  for (std::size_t i = 0; i < anns.size(); ++i) {
    if (anns[i].subject != rec.subject) {
      fail(ErrorKind::Data, "annotation " + std::to_string(i) + " belongs to subject " +
                                std::to_string(anns[i].subject) + ", recording is subject " +
                                std::to_string(rec.subject));
    }
    if (anns[i].start_ms >= anns[i].end_ms) {
      fail(ErrorKind::Data, "annotation " + std::to_string(i) + " has start_ms >= end_ms");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (anns[i].start_ms < anns[j].end_ms && anns[j].start_ms < anns[i].end_ms) {
        fail(ErrorKind::Data, "annotations " + std::to_string(j) + " and " + std::to_string(i) +
                                  " overlap");
      }
    }
  }
  SegmentationResult result;
  const auto& recs = rec.records;
  auto by_time = [](const ImuRecord& r, std::int64_t t) { return r.t_ms < t; };
  for (std::size_t i = 0; i < anns.size(); ++i) {
    auto lo = std::lower_bound(recs.begin(), recs.end(), anns[i].start_ms, by_time);
    auto hi = std::lower_bound(lo, recs.end(), anns[i].end_ms, by_time);
    Segment s;
    s.label = anns[i].label;
    s.annotation_index = i;
    s.first_record = static_cast<std::size_t>(lo - recs.begin());
    s.records = std::span<const ImuRecord>(recs.data() + s.first_record,
                                           static_cast<std::size_t>(hi - lo));
    if (s.records.size() < min_length) result.short_segments.push_back(result.segments.size());
    result.segments.push_back(s);
  }
  return result;
}

std::size_t window_stride(std::size_t length, double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) {
    fail(ErrorKind::Config, "overlap must lie in [0, 1)");
  }
  double s = std::round(static_cast<double>(length) * (1.0 - overlap));
  if (s < 1.0) fail(ErrorKind::Config, "window stride rounds to zero");
  return static_cast<std::size_t>(s);
}

std::vector<ImuWindow> sliding_windows(std::span<const ImuRecord> slice, std::size_t length,
                                       double overlap, int subject, int label) {
  if (length == 0) fail(ErrorKind::Config, "window length must be positive");
  std::size_t stride = window_stride(length, overlap);
  std::vector<ImuWindow> out;
  if (slice.size() < length) return out;
  std::size_t count = (slice.size() - length) / stride + 1;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t off = k * stride;
    ImuWindow w;
    w.subject = subject;
    w.label = label;
    w.t0 = slice[off].t_ms;
    w.length = length;
    w.data.resize(kNumChannels * length);
    for (std::size_t t = 0; t < length; ++t) {
      auto ch = slice[off + t].channels();
      for (std::size_t c = 0; c < kNumChannels; ++c) w.data[c * length + t] = ch[c];
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::size_t SummaryTable::total() const {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (auto c : row) n += c;
  return n;
}

std::string SummaryTable::render() const {
  std::ostringstream os;
  os << "subject";
  for (const auto& c : classes) os << '\t' << c;
  os << "\ttotal\n";
  std::vector<std::size_t> col_tot(classes.size(), 0);
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    os << subjects[s];
    std::size_t row_tot = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      os << '\t' << counts[s][c];
      row_tot += counts[s][c];
      col_tot[c] += counts[s][c];
    }
    os << '\t' << row_tot << '\n';
  }
  os << "total";
  for (auto c : col_tot) os << '\t' << c;
  os << '\t' << total() << '\n';
  return os.str();
}

SummaryTable dataset_summary(const Dataset& ds) {
  SummaryTable t;
  t.subjects = ds.subjects;
  std::sort(t.subjects.begin(), t.subjects.end());
  t.classes = ds.class_names;
  t.counts.assign(t.subjects.size(), std::vector<std::size_t>(t.classes.size(), 0));
  for (const auto& w : ds.windows) {
    auto it = std::lower_bound(t.subjects.begin(), t.subjects.end(), w.subject);
    if (it == t.subjects.end() || *it != w.subject || w.label < 0 ||
        static_cast<std::size_t>(w.label) >= t.classes.size()) {
      fail(ErrorKind::Data, "window " + w.id + " is outside the dataset catalogs");
    }
    ++t.counts[static_cast<std::size_t>(it - t.subjects.begin())][static_cast<std::size_t>(w.label)];
  }
  return t;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[4] = {'H', 'A', 'R', 'D'};
constexpr std::uint16_t kDatasetVersion = 1;

void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  auto n = read_le<std::uint32_t>(in, "string length");
  if (n > (1u << 20)) fail(ErrorKind::Data, "implausible string length in dataset file");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) fail(ErrorKind::Data, "truncated file while reading string");
  return s;
}
}  // namespace

void write_dataset(std::ostream& out, const Dataset& ds) {
  out.write(kDatasetMagic, 4);
  write_le<std::uint16_t>(out, kDatasetVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.class_names.size()));
  for (const auto& c : ds.class_names) write_string(out, c);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.subjects.size()));
  for (int s : ds.subjects) write_le<std::int32_t>(out, s);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.windows.size()));
  for (const auto& w : ds.windows) {
    write_string(out, w.id);
    write_le<std::int32_t>(out, w.subject);
    write_le<std::int32_t>(out, w.label);
    write_le<std::int64_t>(out, w.t0);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.length));
    for (double v : w.data) write_le<double>(out, v);
  }
}

Dataset read_dataset(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kDatasetMagic, 4)) {
    fail(ErrorKind::Data, "not a window dataset file (bad magic)");
  }
  if (read_le<std::uint16_t>(in, "version") != kDatasetVersion) {
    fail(ErrorKind::Data, "unsupported window dataset version");
  }
  Dataset ds;
  auto nc = read_le<std::uint32_t>(in, "class count");
  for (std::uint32_t i = 0; i < nc; ++i) ds.class_names.push_back(read_string(in));
  auto ns = read_le<std::uint32_t>(in, "subject count");
  for (std::uint32_t i = 0; i < ns; ++i) ds.subjects.push_back(read_le<std::int32_t>(in, "subject"));
  auto nw = read_le<std::uint32_t>(in, "window count");
  ds.windows.reserve(nw);
  for (std::uint32_t i = 0; i < nw; ++i) {
    ImuWindow w;
    w.id = read_string(in);
    w.subject = read_le<std::int32_t>(in, "subject");
    w.label = read_le<std::int32_t>(in, "label");
    w.t0 = read_le<std::int64_t>(in, "t0");
    w.length = read_le<std::uint32_t>(in, "length");
    if (w.length > (1u << 20)) fail(ErrorKind::Data, "implausible window length");
    w.data.resize(kNumChannels * w.length);
    for (auto& v : w.data) v = read_le<double>(in, "window data");
    ds.windows.push_back(std::move(w));
  }
  ds.validate();
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  write_dataset(out, ds);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return read_dataset(in);
}

}  // namespace mmhar
