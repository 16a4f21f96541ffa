#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "clam/cae.hpp"
#include "clam/checkpoint.hpp"
#include "clam/errors.hpp"
#include "clam/clammap.hpp"
#include "clam/cluster.hpp"
#include "clam/config.hpp"
#include "clam/kselect.hpp"
#include "clam/pipeline.hpp"
#include "clam/simgen.hpp"
#include "clam/tensor.hpp"

namespace py = pybind11;
using namespace clam;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DoubleArray& arr) {
  Shape shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy_n(t.data(), t.numel(), out.mutable_data());
  return out;
}

// Accepts (N,H,W) or (N,1,H,W) image stacks.
Tensor images_from_array(const DoubleArray& arr) {
  Tensor t = tensor_from_array(arr);
  if (t.ndim() == 3) return reshape(t, {t.dim(0), 1, t.dim(1), t.dim(2)});
  if (t.ndim() == 4) return t;
  throw ShapeError("expected images of shape (N,H,W) or (N,1,H,W)");
}

Tensor image_from_array(const DoubleArray& arr) {
  Tensor t = tensor_from_array(arr);
  if (t.ndim() == 2) return reshape(t, {1, 1, t.dim(0), t.dim(1)});
  if (t.ndim() == 3 || t.ndim() == 4) return t;
  throw ShapeError("expected one image of shape (H,W)");
}

py::list trace_to_list(const LossTrace& trace) {
  py::list rows;
  for (const auto& r : trace.rows) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["l_r"] = r.l_r;
    d["l_r_per_pixel"] = r.l_r_per_pixel;
    d["l_c"] = r.l_c;
    d["l"] = r.l;
    d["gamma"] = r.gamma;
    d["max_q_row_dev"] = r.max_q_row_dev;
    d["max_p_row_dev"] = r.max_p_row_dev;
    rows.append(d);
  }
  return rows;
}

// CAE + optional cluster head, exposing the training phases and CLAM.
// Images are taken in HU and normalized internally.
struct PyDeepCluster {
  CaeModel model;
  std::optional<ClusterHead> head;

  PyDeepCluster(int latent_dim, uint64_t seed) : model(CaeModel::build(latent_dim, seed)) {}

  py::list pretrain_images(const DoubleArray& images, int epochs, int batch_size, uint64_t seed) {
    Tensor x = normalize_hu(images_from_array(images));
    PretrainOptions opts;
    opts.epochs = epochs;
    opts.batch_size = batch_size;
    opts.seed = seed;
    LossTrace trace;
    {
      py::gil_scoped_release release;
      trace = pretrain(model, x, opts);
    }
    return trace_to_list(trace);
  }

  py::array_t<double> encode_images(const DoubleArray& images) {
    Tensor x = normalize_hu(images_from_array(images));
    Tensor z;
    {
      py::gil_scoped_release release;
      z = encode_dataset(model, x);
    }
    return array_from_tensor(z);
  }

  py::array_t<double> decode_latents(const DoubleArray& latents) {
    Tensor z = tensor_from_array(latents);
    NoGradGuard ng;
    return array_from_tensor(denormalize_hu(model.decode(z)));
  }

  void init_clusters(const DoubleArray& images, int k, uint64_t seed) {
    Tensor x = normalize_hu(images_from_array(images));
    Tensor z;
    {
      py::gil_scoped_release release;
      z = encode_dataset(model, x);
    }
    KMeansResult km = kmeans(z, k, seed);
    head = ClusterHead{km.centroids};
  }

  py::list fit_clusters(const DoubleArray& images, int epochs, double gamma, int batch_size,
                        uint64_t seed) {
    if (!head) throw DataError("call init_clusters first");
    Tensor x = normalize_hu(images_from_array(images));
    JointTrainOptions opts;
    opts.epochs = epochs;
    opts.gamma = gamma;
    opts.batch_size = batch_size;
    opts.seed = seed;
    LossTrace trace;
    {
      py::gil_scoped_release release;
      trace = joint_train(model, *head, x, opts);
    }
    return trace_to_list(trace);
  }

  py::array_t<double> soft_assign_images(const DoubleArray& images) {
    if (!head) throw DataError("no cluster head; call init_clusters/fit_clusters first");
    Tensor x = normalize_hu(images_from_array(images));
    SoftAssign q = assign_dataset(model, *head, x);
    return array_from_tensor(q.q);
  }

  std::vector<int> predict(const DoubleArray& images) {
    if (!head) throw DataError("no cluster head; call init_clusters/fit_clusters first");
    Tensor x = normalize_hu(images_from_array(images));
    return hard_assign(assign_dataset(model, *head, x));
  }

  py::dict clam_map(const DoubleArray& image, int conv_layer) {
    if (!head) throw DataError("no cluster head; call init_clusters/fit_clusters first");
    Tensor x = normalize_hu(image_from_array(image));
    ClamMap m;
    {
      py::gil_scoped_release release;
      m = compute_clam(model, *head, x, conv_layer);
    }
    py::dict out;
    out["cluster"] = m.cluster;
    out["map"] = array_from_tensor(m.map);
    out["weights"] = py::array_t<double>(static_cast<py::ssize_t>(m.weights.size()),
                                         m.weights.data());
    return out;
  }

  void save(const std::string& path) const {
    save_checkpoint(model, head ? &*head : nullptr, path);
  }

  int k() const { return head ? static_cast<int>(head->k()) : 0; }
  int latent_dim() const { return static_cast<int>(model.latent_dim); }
};

PyDeepCluster load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  PyDeepCluster out(static_cast<int>(ck.model.latent_dim), 0);
  out.model = std::move(ck.model);
  if (ck.head) out.head = std::move(*ck.head);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deep clustering with cluster activation maps";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "simulate",
      [](const std::string& scenario, int true_k, int n_images, uint64_t seed) {
        ScenarioSpec spec = make_scenario(varied_from_name(scenario), true_k, n_images, seed);
        LabeledDataset ds = simulate_scenario(spec);
        Tensor flat = reshape(ds.images, {ds.images.dim(0), ds.images.dim(2), ds.images.dim(3)});
        return py::make_tuple(array_from_tensor(flat), ds.labels);
      },
      py::arg("scenario"), py::arg("true_k"), py::arg("n_images") = 300, py::arg("seed") = 0,
      "Simulate a lung-slice scenario; returns (images_hu, labels)");

  m.def(
      "lung_mask", [](int size) { return array_from_tensor(make_lung_mask(size)); },
      py::arg("size") = 64);

  m.def(
      "kmeans",
      [](const DoubleArray& z, int k, uint64_t seed) {
        KMeansResult km = kmeans(tensor_from_array(z), k, seed);
        return py::make_tuple(array_from_tensor(km.centroids), km.labels, km.sse);
      },
      py::arg("z"), py::arg("k"), py::arg("seed") = 0,
      "k-means++ with 20 restarts; returns (centroids, labels, sse)");

  m.def(
      "silhouette_score",
      [](const DoubleArray& z, const std::vector<int>& labels) {
        return silhouette_score(tensor_from_array(z), labels);
      },
      py::arg("z"), py::arg("labels"));

  m.def(
      "estimate_k",
      [](const DoubleArray& z, int k_min, int k_max, uint64_t seed) {
        KEstimate est = estimate_k(tensor_from_array(z), k_min, k_max, seed);
        py::list table;
        for (size_t i = 0; i < est.candidates.size(); ++i)
          table.append(py::make_tuple(est.candidates[i], est.scores[i]));
        return py::make_tuple(est.chosen_k, table);
      },
      py::arg("z"), py::arg("k_min") = 2, py::arg("k_max") = 8, py::arg("seed") = 0);

  m.def(
      "soft_assign",
      [](const DoubleArray& z, const DoubleArray& centroids) {
        ClusterHead head{tensor_from_array(centroids)};
        return array_from_tensor(soft_assign(tensor_from_array(z), head).q);
      },
      py::arg("z"), py::arg("centroids"));

  m.def(
      "target_distribution",
      [](const DoubleArray& q) {
        return array_from_tensor(target_distribution(SoftAssign{tensor_from_array(q)}).p);
      },
      py::arg("q"));

  m.def(
      "kl_divergence",
      [](const DoubleArray& p, const DoubleArray& q) {
        return kl_divergence(TargetDist{tensor_from_array(p)}, SoftAssign{tensor_from_array(q)});
      },
      py::arg("p"), py::arg("q"));

  m.def(
      "hard_assign",
      [](const DoubleArray& q) { return hard_assign(SoftAssign{tensor_from_array(q)}); },
      py::arg("q"));

  m.def("matched_accuracy", &matched_accuracy, py::arg("pred"), py::arg("truth"));

  m.def(
      "run_experiment",
      [](const std::string& config_path) { return run_experiment(load_config(config_path)); },
      py::arg("config_path"), "Run every pipeline stage for a config file; returns the run dir");

  py::class_<PyDeepCluster>(m, "DeepCluster")
      .def(py::init<int, uint64_t>(), py::arg("latent_dim") = 60, py::arg("seed") = 0)
      .def("pretrain", &PyDeepCluster::pretrain_images, py::arg("images"), py::arg("epochs"),
           py::arg("batch_size") = 32, py::arg("seed") = 0)
      .def("encode", &PyDeepCluster::encode_images, py::arg("images"))
      .def("decode", &PyDeepCluster::decode_latents, py::arg("latents"))
      .def("init_clusters", &PyDeepCluster::init_clusters, py::arg("images"), py::arg("k"),
           py::arg("seed") = 0)
      .def("fit_clusters", &PyDeepCluster::fit_clusters, py::arg("images"), py::arg("epochs"),
           py::arg("gamma") = 0.1, py::arg("batch_size") = 32, py::arg("seed") = 0)
      .def("soft_assign", &PyDeepCluster::soft_assign_images, py::arg("images"))
      .def("predict", &PyDeepCluster::predict, py::arg("images"))
      .def("clam", &PyDeepCluster::clam_map, py::arg("image"), py::arg("conv_layer") = -1)
      .def("save", &PyDeepCluster::save, py::arg("path"))
      .def_property_readonly("k", &PyDeepCluster::k)
      .def_property_readonly("latent_dim", &PyDeepCluster::latent_dim);

  m.def("load", &load_model, py::arg("path"), "Load a checkpoint saved by DeepCluster.save");
}
