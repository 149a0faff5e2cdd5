#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mrnet/data.hpp"
#include "mrnet/gradcheck.hpp"
#include "mrnet/metrics.hpp"
#include "mrnet/model.hpp"
#include "mrnet/ops.hpp"
#include "mrnet/pds4.hpp"
#include "mrnet/train.hpp"

namespace py = pybind11;
using namespace mrnet;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(arr.shape(i));
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::dict report_to_dict(const ClassificationReport& rep) {
  py::dict d;
  d["accuracy"] = rep.accuracy;
  d["weighted_precision"] = rep.weighted_precision;
  d["weighted_recall"] = rep.weighted_recall;
  d["weighted_f_score"] = rep.weighted_f_score;
  py::list per_class;
  for (const auto& m : rep.per_class) {
    py::dict c;
    c["precision"] = m.precision;
    c["recall"] = m.recall;
    c["f_score"] = m.f_score;
    c["support"] = m.support;
    c["degenerate"] = m.degenerate;
    per_class.append(c);
  }
  d["per_class"] = per_class;
  d["has_degenerate"] = rep.has_degenerate;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "lunar rock image classifier: tensor ops, models, training, metrics, data tools";

  // --- tensor ops (forward evaluation) ---
  m.def(
      "conv2d",
      [](const Arr& input, const Arr& kernel, const Arr& bias, std::int64_t stride, std::int64_t padding,
         std::int64_t dilation, std::int64_t groups) {
        return to_array(
            conv2d(to_tensor(input), to_tensor(kernel), to_tensor(bias), {stride, padding, dilation, groups}));
      },
      py::arg("input"), py::arg("kernel"), py::arg("bias"), py::arg("stride") = 1, py::arg("padding") = 0,
      py::arg("dilation") = 1, py::arg("groups") = 1);
  m.def("maxpool2d", [](const Arr& x) { return to_array(maxpool2d(to_tensor(x))); });
  m.def("upconv2x", [](const Arr& x, const Arr& k) { return to_array(upconv2x(to_tensor(x), to_tensor(k))); });
  m.def("relu", [](const Arr& x) { return to_array(relu(to_tensor(x))); });
  m.def("dense",
        [](const Arr& x, const Arr& w, const Arr& b) { return to_array(dense(to_tensor(x), to_tensor(w), to_tensor(b))); });
  m.def("softmax", [](const Arr& x) { return to_array(softmax(to_tensor(x))); });
  m.def("concat_channels",
        [](const Arr& a, const Arr& b) { return to_array(concat_channels(to_tensor(a), to_tensor(b))); });
  m.def("global_avg_pool", [](const Arr& x) { return to_array(global_avg_pool(to_tensor(x))); });
  m.def(
      "cross_entropy_loss",
      [](const Arr& probs, const std::vector<std::int64_t>& labels) {
        return cross_entropy_loss(to_tensor(probs), labels)[0];
      },
      py::arg("probs"), py::arg("labels"));

  // --- models ---
  py::class_<ModelInstance>(m, "Model")
      .def_property_readonly("name", [](const ModelInstance& mi) { return mi.spec.name; })
      .def_property_readonly("classes", [](const ModelInstance& mi) { return mi.spec.classes; })
      .def_property_readonly("input_resolution", [](const ModelInstance& mi) { return mi.spec.input_resolution; })
      .def("param_count", [](const ModelInstance& mi) { return param_count(mi); })
      .def("forward", [](const ModelInstance& mi, const Arr& batch) { return to_array(forward(mi, to_tensor(batch))); })
      .def("save", [](const ModelInstance& mi, const std::filesystem::path& path) { save_checkpoint(mi, path); })
      .def("summary", [](const ModelInstance& mi) { return summarize(mi.spec); });

  m.def(
      "build_model",
      [](const std::string& arch, std::int64_t classes, std::int64_t resolution, double width_scale,
         std::uint64_t seed) { return materialize(build_architecture(arch, classes, resolution, width_scale), seed); },
      py::arg("arch"), py::arg("classes") = 3, py::arg("resolution") = 64, py::arg("width_scale") = 0.125,
      py::arg("seed") = 0);
  m.def("load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); });
  m.def(
      "param_count",
      [](const std::string& arch, std::int64_t classes, std::int64_t resolution, double width_scale) {
        return param_count(build_architecture(arch, classes, resolution, width_scale));
      },
      py::arg("arch"), py::arg("classes") = 3, py::arg("resolution") = 64, py::arg("width_scale") = 0.125);
  m.def(
      "summary",
      [](const std::string& arch, std::int64_t classes, std::int64_t resolution, double width_scale) {
        return summarize(build_architecture(arch, classes, resolution, width_scale));
      },
      py::arg("arch"), py::arg("classes") = 3, py::arg("resolution") = 64, py::arg("width_scale") = 0.125);

  // --- training ---
  m.def(
      "train",
      [](const std::string& arch, std::int64_t classes, std::int64_t resolution, double width_scale,
         const std::filesystem::path& manifest_path, std::int64_t epochs, std::int64_t batch_size, double lr,
         double reduced_lr, std::int64_t lr_drop_epoch, std::uint64_t seed) {
        const DatasetManifest manifest = read_manifest(manifest_path);
        TrainConfig config;
        config.epochs = epochs;
        config.batch_size = batch_size;
        config.initial_lr = lr;
        config.reduced_lr = reduced_lr;
        config.lr_drop_epoch = std::min(lr_drop_epoch, epochs);
        config.seed = seed;
        TrainResult result = train(build_architecture(arch, classes, resolution, width_scale), manifest, config);
        py::list reports;
        for (const auto& r : result.reports) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["train_loss"] = r.train_loss;
          d["val_accuracy"] = r.val_accuracy;
          d["seconds"] = r.seconds;
          reports.append(d);
        }
        return py::make_tuple(result.model, reports);
      },
      py::arg("arch"), py::arg("classes"), py::arg("resolution"), py::arg("width_scale"), py::arg("manifest"),
      py::arg("epochs") = 10, py::arg("batch_size") = 16, py::arg("lr") = 1e-4, py::arg("reduced_lr") = 1e-5,
      py::arg("lr_drop_epoch") = 5, py::arg("seed") = 0);
  m.def(
      "evaluate",
      [](const ModelInstance& model, const std::filesystem::path& manifest_path, const std::string& split) {
        const DatasetManifest manifest = read_manifest(manifest_path);
        const SplitData data = load_split_data(manifest, split_from_name(split), model.spec.input_resolution);
        const Tensor probs = predict(model, data.x);
        py::dict out;
        out["accuracy"] = accuracy_of(probs, data.labels);
        out["probs"] = to_array(probs);
        out["labels"] = data.labels;
        return out;
      },
      py::arg("model"), py::arg("manifest"), py::arg("split") = "test");

  // --- metrics ---
  m.def(
      "classification_report",
      [](const std::vector<std::int64_t>& predictions, const std::vector<std::int64_t>& labels, std::int64_t n) {
        return report_to_dict(report(confusion(predictions, labels, n)));
      },
      py::arg("predictions"), py::arg("labels"), py::arg("classes"));
  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return roc_points(scores, labels).auc; },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "multiclass_auc",
      [](const Arr& probs, const std::vector<std::int64_t>& labels) {
        const MulticlassAuc r = multiclass_auc(to_tensor(probs), labels);
        py::dict out;
        py::list per_class;
        for (const auto& a : r.per_class) {
          if (a)
            per_class.append(*a);
          else
            per_class.append(py::none());
        }
        out["per_class"] = per_class;
        out["micro"] = r.micro;
        out["macro"] = r.macro ? py::object(py::float_(*r.macro)) : py::object(py::none());
        out["missing_class"] = r.missing_class;
        return out;
      },
      py::arg("probs"), py::arg("labels"));

  // --- data pipeline ---
  m.def(
      "generate_synthetic",
      [](std::int64_t classes, std::int64_t per_class, std::int64_t resolution, std::uint64_t seed,
         const std::filesystem::path& out_dir, double train_ratio, double val_ratio, double test_ratio) {
        SyntheticSpec spec;
        spec.classes = classes;
        spec.per_class = per_class;
        spec.resolution = resolution;
        spec.seed = seed;
        generate_synthetic(spec, out_dir, {train_ratio, val_ratio, test_ratio});
        return out_dir / "manifest.csv";
      },
      py::arg("classes") = 3, py::arg("per_class") = 100, py::arg("resolution") = 64, py::arg("seed") = 0,
      py::arg("out_dir"), py::arg("train_ratio") = 0.7, py::arg("val_ratio") = 0.15, py::arg("test_ratio") = 0.15);
  m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); });
  m.def("save_image", [](const Arr& img, const std::filesystem::path& p) { save_image(to_tensor(img), p); });
  m.def("resize", [](const Arr& img, std::int64_t target) { return to_array(resize(to_tensor(img), target)); });

  // --- PDS4-lite ---
  m.def("pds4_parse", [](const std::filesystem::path& label) {
    const Pds4LiteLabel l = pds4lite_parse(label);
    py::dict d;
    d["bands"] = l.bands;
    d["lines"] = l.lines;
    d["samples"] = l.samples;
    d["element_type"] = l.element_type;
    d["data_file"] = l.data_file;
    d["offset"] = l.offset;
    d["storage_order"] = l.storage_order;
    return d;
  });
  m.def("pds4_convert",
        [](const std::filesystem::path& label, const std::filesystem::path& raw, const std::filesystem::path& out) {
          pds4lite_convert(pds4lite_parse(label), raw, out);
        });

  // --- verification ---
  m.def(
      "gradient_checks",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& item : run_gradient_checks(seed)) out.append(py::make_tuple(item.name, item.max_rel_err));
        return out;
      },
      py::arg("seed") = 1);

  m.attr("__version__") = "0.1.0";
}
