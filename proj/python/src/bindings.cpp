#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstring>

#include "mmhar/common.hpp"
#include "mmhar/evaluation.hpp"
#include "mmhar/features.hpp"
#include "mmhar/fusion.hpp"
#include "mmhar/pipeline.hpp"
#include "mmhar/quat.hpp"
#include "mmhar/synth.hpp"

namespace py = pybind11;
using namespace mmhar;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Quaternion to_quat(const std::array<double, 4>& q) { return {q[0], q[1], q[2], q[3]}; }
std::array<double, 4> from_quat(const Quaternion& q) { return {q.x, q.y, q.z, q.w}; }
Vec3 to_vec(const std::array<double, 3>& v) { return {v[0], v[1], v[2]}; }
std::array<double, 3> from_vec(Vec3 v) { return {v.x, v.y, v.z}; }

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::memcpy(m.data.data(), a.data(), m.data.size() * sizeof(double));
  return m;
}

ImuWindow to_window(const Array& a) {
  if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != kNumChannels)
    throw py::value_error("expected a window of shape (10, T)");
  ImuWindow w;
  w.length = static_cast<std::size_t>(a.shape(1));
  w.data.assign(a.data(), a.data() + kNumChannels * w.length);
  return w;
}

py::array_t<float> image_array(const FeatureImage& img) {
  py::array_t<float> out({img.height, img.width, img.depth});
  std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size() * sizeof(float));
  return out;
}

RowExpansionPlan plan_named(const std::string& name) {
  if (name == "euler") return build_expansion_plan(kNumChannels);
  if (name == "reference42") return reference_plan_42();
  throw Error(ErrorKind::Config, "unknown expansion plan '" + name + "'");
}

py::dict dataset_dict(const Dataset& ds) {
  const std::size_t N = ds.windows.size();
  const std::size_t T = N ? ds.windows.front().length : 0;
  py::array_t<double> windows({N, kNumChannels, T});
  std::vector<int> labels, subjects;
  std::vector<std::string> ids;
  double* dst = windows.mutable_data();
  for (const auto& w : ds.windows) {
    std::memcpy(dst, w.data.data(), w.data.size() * sizeof(double));
    dst += w.data.size();
    labels.push_back(w.label);
    subjects.push_back(w.subject);
    ids.push_back(w.id);
  }
  py::dict d;
  d["windows"] = windows;
  d["labels"] = labels;
  d["subjects"] = subjects;
  d["ids"] = ids;
  d["class_names"] = ds.class_names;
  return d;
}

PipelineConfig parse_config(const std::string& json, const std::string& preset) {
  return config_from_json(json.empty() ? Json::object() : Json::parse(json), preset_config(preset));
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["samples"] = r.samples;
  d["accuracy"] = r.accuracy;
  d["macro_precision"] = r.macro_precision;
  d["macro_recall"] = r.macro_recall;
  d["macro_f1"] = r.macro_f1;
  py::list per_class;
  for (const auto& c : r.per_class) {
    py::dict m;
    m["precision"] = c.precision;
    m["recall"] = c.recall;
    m["f1"] = c.f1;
    m["precision_undefined"] = c.precision_undefined;
    m["recall_undefined"] = c.recall_undefined;
    per_class.append(m);
  }
  d["per_class"] = per_class;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mmhar, m) {
  m.doc() = "Multimodal IMU activity recognition core";

  static py::exception<Error> error(m, "Error", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def("qmul", [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
    return from_quat(qmul(to_quat(a), to_quat(b)));
  });
  m.def("qconj", [](const std::array<double, 4>& q) { return from_quat(qconj(to_quat(q))); });
  m.def("rotate_vec", [](const std::array<double, 4>& q, const std::array<double, 3>& v) {
    return from_vec(rotate_vec(to_quat(q), to_vec(v)));
  });
  m.def("axis_angle_quat", [](const std::array<double, 3>& axis, double theta) {
    return from_quat(axis_angle_quat(to_vec(axis), theta));
  });
  m.def("mirror_vec", [](const std::array<double, 3>& v, const std::array<double, 3>& n) {
    return from_vec(mirror_vec(to_vec(v), to_vec(n)));
  });
  m.def("transition_quat", [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return from_quat(transition_quat(to_vec(a), to_vec(b)));
  });

  m.def("expansion_plan", [](const std::string& name) { return plan_named(name).sequence; },
        py::arg("name") = "euler");
  m.def("dft2d", [](const Array& a) {
    Matrix mat = to_matrix(a);
    auto F = dft2d(mat);
    py::array_t<std::complex<double>> out({mat.rows, mat.cols});
    std::memcpy(out.mutable_data(), F.data(), F.size() * sizeof(std::complex<double>));
    return out;
  });
  m.def(
      "freq_image",
      [](const Array& window, const std::string& plan) {
        return image_array(freq_transform(expand_rows(stack_channels(to_window(window)), plan_named(plan))));
      },
      py::arg("window"), py::arg("plan") = "euler");
  m.def(
      "och_image",
      [](const Array& window, std::size_t size) { return image_array(och_transform(to_window(window), size)); },
      py::arg("window"), py::arg("size") = kDefaultOchSize);

  m.def(
      "informativity", [](const std::vector<double>& p, std::size_t k) { return informativity(p, k); },
      py::arg("p"), py::arg("k") = 0);
  m.def(
      "fuse",
      [](const std::vector<std::vector<double>>& dists, const std::string& method, std::size_t k) {
        return fuse(FusionInput{dists, {}}, fusion_method_from_string(method), k);
      },
      py::arg("dists"), py::arg("method") = "avg", py::arg("k") = 0);
  m.def("decide", [](const std::vector<double>& s) {
    auto d = decide(s);
    return py::make_tuple(d.label, d.tie);
  });

  m.def("confusion", [](const std::vector<int>& preds, const std::vector<int>& truths, std::size_t C) {
    auto cm = confusion(preds, truths, C);
    py::array_t<std::uint64_t> out({C, C});
    std::memcpy(out.mutable_data(), cm.counts.data(), cm.counts.size() * sizeof(std::uint64_t));
    return out;
  });
  m.def("metrics", [](const std::vector<int>& preds, const std::vector<int>& truths, std::size_t C) {
    return report_dict(metrics(confusion(preds, truths, C)));
  });
  m.def("f1_score", &f1_score);

  m.def(
      "config_json",
      [](const std::string& json, const std::string& preset) {
        return config_to_json(parse_config(json, preset)).dump();
      },
      py::arg("json") = "", py::arg("preset") = "default");
  m.def(
      "config_hash",
      [](const std::string& json, const std::string& preset) { return config_hash(parse_config(json, preset)); },
      py::arg("json") = "", py::arg("preset") = "default");
  m.def(
      "synth_dataset",
      [](const std::string& json, const std::string& preset) {
        auto cfg = parse_config(json, preset);
        return dataset_dict(dataset_from_synth(generate(synth_config(cfg)), cfg));
      },
      py::arg("json") = "", py::arg("preset") = "default");
  m.def("load_dataset", [](const std::string& path) { return dataset_dict(load_dataset(path)); });
  m.def("load_feature_set", [](const std::string& path) {
    auto images = load_feature_set(path);
    py::list out;
    for (const auto& img : images) {
      py::dict d;
      d["image"] = image_array(img);
      d["window_id"] = img.window_id;
      d["label"] = img.label;
      d["subject"] = img.subject;
      d["provenance"] = img.provenance;
      out.append(d);
    }
    return out;
  });
}
