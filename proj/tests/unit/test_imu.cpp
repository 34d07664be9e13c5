#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mmhar/common.hpp"
#include "mmhar/imu.hpp"

using namespace mmhar;

namespace {

const char* kHeader = "t,ax,ay,az,gx,gy,gz,qx,qy,qz,qw\n";

Recording regular_recording(std::size_t n, std::int64_t dt = 20, int subject = 1) {
  Recording rec;
  rec.subject = subject;
  for (std::size_t i = 0; i < n; ++i) {
    ImuRecord r;
    r.t_ms = static_cast<std::int64_t>(i) * dt;
    double v = static_cast<double>(i);
    r.accel = {v, v + 0.1, v + 0.2};
    r.gyro = {-v, 0.5, 0.25};
    r.orientation = {0, 0, 0, 1};
    rec.records.push_back(r);
  }
  return rec;
}

std::vector<ImuRecord> ramp(std::size_t n) { return regular_recording(n).records; }

}  // namespace

TEST(Ingest, ParsesWellFormedRows) {
  std::istringstream in(std::string(kHeader) +
                        "0,1,2,3,4,5,6,0,0,0,1\n"
                        "20,1,2,3,4,5,6,0,0,0,1\n"
                        "40,1,2,3,4,5,6,0,0,0,1\n");
  auto r = ingest_recording(in, ColumnMap::standard(), 3);
  EXPECT_EQ(r.recording.records.size(), 3u);
  EXPECT_EQ(r.recording.subject, 3);
  EXPECT_EQ(r.dropped_rows, 0u);
  EXPECT_FALSE(r.rate_mismatch);
}

TEST(Ingest, DropsNonFiniteRows) {
  std::istringstream in(std::string(kHeader) +
                        "0,1,2,3,4,5,6,0,0,0,1\n"
                        "20,nan,2,3,4,5,6,0,0,0,1\n"
                        "40,1,2,3,4,5,6,0,0,0,1\n");
  auto r = ingest_recording(in, ColumnMap::standard(), 1);
  EXPECT_EQ(r.recording.records.size(), 2u);
  EXPECT_EQ(r.dropped_rows, 1u);
  EXPECT_EQ(r.recording.records[1].t_ms, 40);
}

TEST(Ingest, RejectsNonMonotonicTimestamps) {
  std::istringstream in(std::string(kHeader) +
                        "20,1,2,3,4,5,6,0,0,0,1\n"
                        "0,1,2,3,4,5,6,0,0,0,1\n"
                        "40,1,2,3,4,5,6,0,0,0,1\n");
  try {
    ingest_recording(in, ColumnMap::standard(), 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
    EXPECT_NE(std::string(e.what()).find("non-monotonic"), std::string::npos);
  }
}

TEST(Ingest, ColumnOrderFollowsHeaderNames) {
  std::istringstream in(
      "qw,qz,qy,qx,gz,gy,gx,az,ay,ax,t\n"
      "1,0.3,0.2,0.1,6,5,4,3,2,1,0\n"
      "1,0.3,0.2,0.1,6,5,4,3,2,1,20\n");
  auto r = ingest_recording(in, ColumnMap::standard(), 1);
  auto ch = r.recording.records[0].channels();
  std::array<double, 10> want{1, 2, 3, 4, 5, 6, 0.1, 0.2, 0.3, 1};
  for (std::size_t i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(ch[i], want[i]) << kChannelNames[i];
}

TEST(Ingest, RoundTripsThroughCsvWriter) {
  Recording rec = regular_recording(25);
  rec.records[3].orientation = {0.1, -0.2, 0.3, 0.9};
  std::ostringstream out;
  write_recording_csv(out, rec);
  std::istringstream in(out.str());
  auto back = ingest_recording(in, ColumnMap::standard(), 1);
  ASSERT_EQ(back.recording.records.size(), rec.records.size());
  for (std::size_t i = 0; i < rec.records.size(); ++i) {
    EXPECT_EQ(back.recording.records[i].t_ms, rec.records[i].t_ms);
    EXPECT_EQ(back.recording.records[i].channels(), rec.records[i].channels());
  }
}

TEST(Ingest, Pamap2PresetReadsHandBlock) {
  std::ostringstream line;
  // 54 whitespace-separated fields; hand IMU occupies columns 3..19.
  auto emit = [&](double t) {
    line << t;
    for (int c = 1; c < 54; ++c) {
      double v = c;
      if (c == 16) v = 1.0;                 // qw
      if (c >= 17 && c <= 19) v = 0.0;     // qx qy qz
      line << ' ' << v;
    }
    line << '\n';
  };
  emit(5.00);
  emit(5.01);
  std::istringstream in(line.str());
  auto r = ingest_recording(in, ColumnMap::preset("pamap2_hand"), 2, 100.0);
  ASSERT_EQ(r.recording.records.size(), 2u);
  const auto& rec = r.recording.records[1];
  EXPECT_EQ(rec.t_ms, 5010);
  EXPECT_EQ(rec.accel, (Vec3{4, 5, 6}));
  EXPECT_EQ(rec.gyro, (Vec3{10, 11, 12}));
  EXPECT_EQ(rec.orientation, (Quaternion{0, 0, 0, 1}));
}

TEST(Ingest, FlagsRateMismatchWithoutResampling) {
  std::istringstream in(std::string(kHeader) +
                        "0,1,2,3,4,5,6,0,0,0,1\n"
                        "10,1,2,3,4,5,6,0,0,0,1\n"
                        "20,1,2,3,4,5,6,0,0,0,1\n");
  auto r = ingest_recording(in, ColumnMap::standard(), 1, 50.0);
  EXPECT_TRUE(r.rate_mismatch);
  EXPECT_EQ(r.recording.records.size(), 3u);
}

TEST(Ingest, UnknownPresetIsConfigError) {
  try {
    ColumnMap::preset("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Annotations, AcceptNamesOrIndices) {
  std::vector<std::string> names{"GT", "HN", "UP"};
  std::istringstream in("subject,label,start_ms,end_ms\n1,HN,0,100\n1,2,100,200\n");
  auto a = read_annotations(in, names);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].label, 1);
  EXPECT_EQ(a[1].label, 2);
  EXPECT_EQ(a[1].start_ms, 100);
  std::istringstream bad("subject,label,start_ms,end_ms\n1,XX,0,100\n");
  EXPECT_THROW(read_annotations(bad, names), Error);
}

TEST(Segment, SelectsRecordsInsideAnnotation) {
  Recording rec = regular_recording(500);  // [0, 10000) ms at 50 Hz
  std::vector<Annotation> anns{{1, 2, 2000, 4000}};
  auto seg = segment(rec, anns);
  ASSERT_EQ(seg.segments.size(), 1u);
  EXPECT_EQ(seg.segments[0].records.size(), 100u);
  EXPECT_EQ(seg.segments[0].records.front().t_ms, 2000);
  EXPECT_EQ(seg.segments[0].label, 2);
}

TEST(Segment, AnnotationOutsideRecordingIsEmpty) {
  Recording rec = regular_recording(500);
  std::vector<Annotation> anns{{1, 0, 20000, 30000}};
  auto seg = segment(rec, anns);
  ASSERT_EQ(seg.segments.size(), 1u);
  EXPECT_TRUE(seg.segments[0].records.empty());
  ASSERT_EQ(seg.short_segments.size(), 1u);
}

TEST(Segment, PreservesAnnotationOrder) {
  Recording rec = regular_recording(500);
  std::vector<Annotation> anns{{1, 1, 6000, 8000}, {1, 0, 1000, 3000}};
  auto seg = segment(rec, anns);
  ASSERT_EQ(seg.segments.size(), 2u);
  EXPECT_EQ(seg.segments[0].label, 1);
  EXPECT_EQ(seg.segments[1].label, 0);
  EXPECT_EQ(seg.segments[1].records.front().t_ms, 1000);
}

TEST(Segment, RejectsOverlapsAndForeignSubjects) {
  Recording rec = regular_recording(100);
  std::vector<Annotation> overlap{{1, 0, 0, 100}, {1, 1, 50, 150}};
  EXPECT_THROW(segment(rec, overlap), Error);
  std::vector<Annotation> foreign{{2, 0, 0, 100}};
  EXPECT_THROW(segment(rec, foreign), Error);
}

TEST(Segment, SlicesAreContentPreservingSubsequence) {
  std::mt19937_64 g(11);
  Recording rec = regular_recording(1000);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Annotation> anns;
    std::int64_t t = std::uniform_int_distribution<std::int64_t>(0, 500)(g);
    while (t < 21000) {
      std::int64_t len = std::uniform_int_distribution<std::int64_t>(1, 3000)(g);
      anns.push_back({1, 0, t, t + len});
      t += len + std::uniform_int_distribution<std::int64_t>(0, 1000)(g);
    }
    auto seg = segment(rec, anns, 0);
    std::size_t cursor = 0;
    for (const auto& s : seg.segments) {
      for (const auto& r : s.records) {
        while (cursor < rec.records.size() && rec.records[cursor].t_ms != r.t_ms) ++cursor;
        ASSERT_LT(cursor, rec.records.size());
        EXPECT_EQ(rec.records[cursor].channels(), r.channels());
        ++cursor;
      }
    }
  }
}

TEST(SlidingWindows, ExactFitGivesOneWindow) {
  auto recs = ramp(64);
  EXPECT_EQ(sliding_windows(recs, 64, 0.75).size(), 1u);
}

TEST(SlidingWindows, OffsetsFollowStride) {
  auto recs = ramp(112);
  auto w = sliding_windows(recs, 64, 0.75);
  ASSERT_EQ(w.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(w[k].t0, static_cast<std::int64_t>(16 * k) * 20);
}

TEST(SlidingWindows, ShortSliceGivesNothing) {
  auto recs = ramp(63);
  EXPECT_TRUE(sliding_windows(recs, 64, 0.75).empty());
}

TEST(SlidingWindows, CountMatchesEnumeration) {
  auto recs = ramp(200);
  for (std::size_t L = 0; L <= 200; L += 7) {
    for (std::size_t T : {1u, 5u, 16u, 64u}) {
      for (double ov : {0.0, 0.25, 0.5, 0.75, 0.9}) {
        if (std::round(static_cast<double>(T) * (1.0 - ov)) < 1.0) {
          EXPECT_THROW(window_stride(T, ov), Error);
          continue;
        }
        std::size_t stride = window_stride(T, ov);
        std::size_t brute = 0;
        for (std::size_t off = 0; off + T <= L; ++off)
          if (off % stride == 0) ++brute;
        auto w = sliding_windows(std::span<const ImuRecord>(recs.data(), L), T, ov);
        EXPECT_EQ(w.size(), brute) << "L=" << L << " T=" << T << " overlap=" << ov;
      }
    }
  }
}

TEST(SlidingWindows, ChannelLayoutFollowsCanonicalOrder) {
  auto recs = ramp(64);
  auto w = sliding_windows(recs, 64, 0.75, 4, 2).front();
  EXPECT_EQ(w.subject, 4);
  EXPECT_EQ(w.label, 2);
  ASSERT_EQ(w.data.size(), 640u);
  for (std::size_t t = 0; t < 64; ++t) {
    auto ch = recs[t].channels();
    for (std::size_t c = 0; c < kNumChannels; ++c) EXPECT_EQ(w.channel(c)[t], ch[c]);
  }
}

TEST(SlidingWindows, StrideRoundsAndRejectsZero) {
  EXPECT_EQ(window_stride(64, 0.75), 16u);
  EXPECT_EQ(window_stride(10, 0.33), 7u);
  EXPECT_THROW(window_stride(4, 0.9), Error);
  EXPECT_THROW(window_stride(64, 1.0), Error);
}

TEST(Summary, EmptyDatasetIsAllZero) {
  Dataset ds;
  ds.class_names = {"a", "b"};
  ds.subjects = {1, 2};
  auto t = dataset_summary(ds);
  EXPECT_EQ(t.total(), 0u);
  for (const auto& row : t.counts)
    for (auto c : row) EXPECT_EQ(c, 0u);
}

TEST(Summary, CountsEveryCell) {
  Dataset ds;
  ds.class_names = {"a", "b", "c", "d", "e", "f"};
  ds.subjects = {1, 2};
  for (int s : {1, 2})
    for (int c = 0; c < 6; ++c)
      for (int k = 0; k < 10; ++k) {
        ImuWindow w;
        w.subject = s;
        w.label = c;
        w.length = 1;
        w.data.assign(10, 0.0);
        ds.windows.push_back(w);
      }
  auto t = dataset_summary(ds);
  EXPECT_EQ(t.total(), 120u);
  for (const auto& row : t.counts)
    for (auto c : row) EXPECT_EQ(c, 10u);
  EXPECT_NE(t.render().find("total"), std::string::npos);
}

TEST(DatasetFile, RoundTripIsExact) {
  Dataset ds;
  ds.class_names = {"a", "b"};
  ds.subjects = {3, 7};
  auto wins = sliding_windows(ramp(100), 64, 0.75, 7, 1);
  for (std::size_t i = 0; i < wins.size(); ++i) {
    wins[i].id = "w" + std::to_string(i);
    ds.windows.push_back(wins[i]);
  }
  ds.validate();
  std::stringstream io;
  write_dataset(io, ds);
  Dataset back = read_dataset(io);
  EXPECT_EQ(back.class_names, ds.class_names);
  EXPECT_EQ(back.subjects, ds.subjects);
  ASSERT_EQ(back.windows.size(), ds.windows.size());
  for (std::size_t i = 0; i < ds.windows.size(); ++i) {
    EXPECT_EQ(back.windows[i].id, ds.windows[i].id);
    EXPECT_EQ(back.windows[i].t0, ds.windows[i].t0);
    EXPECT_EQ(back.windows[i].data, ds.windows[i].data);
  }
}

TEST(DatasetFile, ValidateRejectsCatalogMisses) {
  Dataset ds;
  ds.class_names = {"a", "b"};
  ds.subjects = {1};
  ImuWindow w;
  w.subject = 2;
  w.length = 1;
  w.data.assign(10, 0.0);
  ds.windows.push_back(w);
  EXPECT_THROW(ds.validate(), Error);
  ds.class_names = {"a"};
  ds.windows.clear();
  EXPECT_THROW(ds.validate(), Error);
}
