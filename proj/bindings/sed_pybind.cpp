#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sed/augment.hpp"
#include "sed/checkpoint.hpp"
#include "sed/detector.hpp"
#include "sed/ema.hpp"
#include "sed/eval.hpp"
#include "sed/losses.hpp"
#include "sed/matcher.hpp"
#include "sed/rng.hpp"
#include "sed/synthdata.hpp"

namespace py = pybind11;
using namespace sed;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image image_from_array(const DArray& arr) {
  if (arr.ndim() != 3 || arr.shape(2) != 3) throw std::invalid_argument("image must be HxWx3");
  Image img(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), img.data.begin());
  return img;
}

py::array_t<double> array_from_image(const Image& img) {
  py::array_t<double> out({img.h, img.w, 3});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Box box_from_seq(const std::vector<double>& v) {
  if (v.size() != 4) throw std::invalid_argument("box must have 4 coordinates");
  return Box(v[0], v[1], v[2], v[3]);
}

py::array_t<double> detections_to_array(const std::vector<Detection>& dets) {
  py::array_t<double> out({static_cast<py::ssize_t>(dets.size()), static_cast<py::ssize_t>(6)});
  auto r = out.mutable_unchecked<2>();
  for (py::ssize_t i = 0; i < static_cast<py::ssize_t>(dets.size()); ++i) {
    const Detection& d = dets[static_cast<size_t>(i)];
    r(i, 0) = d.box.x1;
    r(i, 1) = d.box.y1;
    r(i, 2) = d.box.x2;
    r(i, 3) = d.box.y2;
    r(i, 4) = d.class_id;
    r(i, 5) = d.score;
  }
  return out;
}

std::vector<Detection> detections_from_array(const DArray& arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 6)
    throw std::invalid_argument("detections must be Nx6 (x1,y1,x2,y2,class,score)");
  std::vector<Detection> out;
  auto r = arr.unchecked<2>();
  for (py::ssize_t i = 0; i < arr.shape(0); ++i)
    out.push_back({Box(r(i, 0), r(i, 1), r(i, 2), r(i, 3)), static_cast<int>(r(i, 4)), r(i, 5)});
  return out;
}

std::vector<LabeledBox> labeled_from_array(const DArray& arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 5)
    throw std::invalid_argument("ground truth must be Nx5 (x1,y1,x2,y2,class)");
  std::vector<LabeledBox> out;
  auto r = arr.unchecked<2>();
  for (py::ssize_t i = 0; i < arr.shape(0); ++i)
    out.push_back({Box(r(i, 0), r(i, 1), r(i, 2), r(i, 3)), static_cast<int>(r(i, 4))});
  return out;
}

// Thin stateful wrapper: arch + parameters (+ optional teacher for distill).
struct Model {
  ArchConfig arch;
  ad::ParamVector params;

  static Model init(int stem1, int stem2, int head, int levels, double anchor_base, uint64_t seed) {
    Model m;
    m.arch = ArchConfig{stem1, stem2, head, levels, kNumClasses, anchor_base};
    m.params = init_params(m.arch, seed);
    return m;
  }

  static Model from_checkpoint(const std::string& path, bool teacher) {
    const Checkpoint ck = Checkpoint::load(path);
    Model m;
    m.arch = ck.arch;
    if (teacher) {
      if (!ck.teacher) throw std::runtime_error("checkpoint has no teacher parameters");
      m.params = *ck.teacher;
    } else {
      m.params = ck.student;
    }
    return m;
  }

  void save(const std::string& path) const {
    Checkpoint ck;
    ck.arch = arch;
    ck.student = params;
    ck.save(path);
  }

  py::list forward_py(const DArray& image) const {
    const PyramidOutput out = forward(params, image_from_array(image), arch);
    py::list levels;
    for (const LevelOutput& lv : out.levels) {
      py::dict d;
      d["f"] = lv.f;
      d["grid_h"] = lv.grid_h;
      d["grid_w"] = lv.grid_w;
      py::array_t<double> probs({lv.probs.dim(0), lv.probs.dim(1)});
      std::copy(lv.probs.v.begin(), lv.probs.v.end(), probs.mutable_data());
      py::array_t<double> reg({lv.reg.dim(0), lv.reg.dim(1)});
      std::copy(lv.reg.v.begin(), lv.reg.v.end(), reg.mutable_data());
      d["probs"] = probs;
      d["reg"] = reg;
      levels.append(d);
    }
    return levels;
  }

  py::array_t<double> predict_py(const DArray& image, double score_thr, double nms_thr) const {
    return detections_to_array(predict_detections(params, image_from_array(image), arch, score_thr, nms_thr));
  }

  std::pair<double, double> scale_consistency(const DArray& image, int s, bool reweight, int bins) const {
    const Image img = image_from_array(image);
    const PyramidOutput full = forward(params, img, arch);
    const PyramidOutput down = forward(params, downsample(img, s), arch);
    return scale_consistency_loss(full, down, s, reweight, bins);
  }

  std::pair<double, double> self_distill(const Model& teacher, const DArray& image,
                                         const std::string& mode, double tau, double tau_bg,
                                         bool reweight, int bins) const {
    const Image img = image_from_array(image);
    const PyramidOutput t = forward(teacher.params, img, teacher.arch);
    const PyramidOutput s = forward(params, img, arch);
    return self_distill_loss(t, s, mode == "hard" ? DistillMode::kHard : DistillMode::kSoft, tau,
                             tau_bg, reweight, bins);
  }

  void ema_from(const Model& student, double alpha) {
    for (auto& [name, t] : params) {
      const Tensor& s = student.params.at(name);
      for (int64_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
    }
  }

  int64_t num_params() const { return ad::param_count(params); }
};

}  // namespace

PYBIND11_MODULE(_sedcore, m) {
  m.doc() = "core operations: box geometry, divergences, re-weighting, matching, "
            "synthetic scenes, detector inference, COCO-style AP";

  // geometry
  m.def("iou", [](const std::vector<double>& a, const std::vector<double>& b) {
    return iou(box_from_seq(a), box_from_seq(b));
  });
  m.def("giou", [](const std::vector<double>& a, const std::vector<double>& b) {
    return giou(box_from_seq(a), box_from_seq(b));
  });
  m.def("rescale_box", [](const std::vector<double>& b, double f) {
    const Box r = rescale_box(box_from_seq(b), f);
    return std::vector<double>{r.x1, r.y1, r.x2, r.y2};
  });
  m.def("encode_box", [](const std::vector<double>& gt, const std::vector<double>& anchor) {
    const BoxDelta d = encode_box(box_from_seq(gt), box_from_seq(anchor));
    return std::vector<double>(d.begin(), d.end());
  });
  m.def("decode_box", [](const std::vector<double>& delta, const std::vector<double>& anchor) {
    if (delta.size() != 4) throw std::invalid_argument("delta must have 4 entries");
    const Box r = decode_box({delta[0], delta[1], delta[2], delta[3]}, box_from_seq(anchor));
    return std::vector<double>{r.x1, r.y1, r.x2, r.y2};
  });
  m.def("nms", [](const DArray& dets, double thr) {
    return detections_to_array(nms(detections_from_array(dets), thr));
  }, py::arg("detections"), py::arg("iou_threshold"));

  // divergences and re-weighting
  m.def("kl_div", [](const std::vector<double>& t, const std::vector<double>& p) {
    return kl_div(t, p);
  });
  m.def("js_div", [](const std::vector<double>& p, const std::vector<double>& q) {
    return js_div(p, q);
  });
  m.def("grad_norm", [](const std::vector<double>& p, const std::vector<double>& t) {
    return grad_norm(p, t);
  });
  m.def("reweighted_mean", [](const std::vector<double>& kls, const std::vector<double>& gs, int bins) {
    const ReweightedMeanResult r = reweighted_mean(kls, gs, bins);
    return py::make_tuple(r.value, r.hist.counts, r.empty_input);
  }, py::arg("per_sample_kl"), py::arg("per_sample_g"), py::arg("bins") = 10);
  m.def("total_loss", [](double sup_cls, double sup_reg, double scale_cls, double scale_reg,
                         double distill_cls, double distill_reg, int n_u, int n_s,
                         double lambda_scale, double lambda_distill) {
    const LossReport r = total_loss(sup_cls, sup_reg, scale_cls, scale_reg, distill_cls,
                                    distill_reg, n_u, n_s, lambda_scale, lambda_distill);
    py::dict d;
    d["total"] = r.total;
    d["supervised_cls"] = r.supervised_cls;
    d["supervised_reg"] = r.supervised_reg;
    d["scale_cls"] = r.scale_cls;
    d["scale_reg"] = r.scale_reg;
    d["distill_cls"] = r.distill_cls;
    d["distill_reg"] = r.distill_reg;
    d["multiplier"] = r.multiplier;
    return d;
  }, py::arg("sup_cls"), py::arg("sup_reg"), py::arg("scale_cls"), py::arg("scale_reg"),
     py::arg("distill_cls"), py::arg("distill_reg"), py::arg("n_u"), py::arg("n_s"),
     py::arg("lambda_scale") = 0.5, py::arg("lambda_distill") = 1.0);

  // EMA schedule
  m.def("current_alpha", [](const std::string& policy, double start, double end,
                            int64_t milestone, int64_t total, int64_t iter) {
    return current_alpha({ema_policy_from_string(policy), start, end, milestone, total}, iter);
  }, py::arg("policy"), py::arg("alpha_start"), py::arg("alpha_end"), py::arg("milestone"),
     py::arg("total"), py::arg("iter"));

  // matching
  auto preds_from = [](const DArray& probs, const DArray& boxes) {
    if (probs.ndim() != 2 || boxes.ndim() != 2 || boxes.shape(1) != 4 ||
        probs.shape(0) != boxes.shape(0))
      throw std::invalid_argument("expected probs [N,C] and boxes [N,4]");
    std::vector<PredItem> out;
    auto pr = probs.unchecked<2>();
    auto br = boxes.unchecked<2>();
    for (py::ssize_t i = 0; i < probs.shape(0); ++i) {
      PredItem p;
      for (py::ssize_t k = 0; k < probs.shape(1); ++k) p.probs.push_back(pr(i, k));
      p.box = Box(br(i, 0), br(i, 1), br(i, 2), br(i, 3));
      out.push_back(std::move(p));
    }
    return out;
  };
  m.def("pairwise_cost", [preds_from](const DArray& probs1, const DArray& boxes1,
                                      const DArray& probs2, const DArray& boxes2, double lam) {
    const CostMatrix c = pairwise_cost(preds_from(probs1, boxes1), preds_from(probs2, boxes2), lam);
    py::array_t<double> out({c.rows, c.cols});
    std::copy(c.c.begin(), c.c.end(), out.mutable_data());
    return out;
  }, py::arg("probs1"), py::arg("boxes1"), py::arg("probs2"), py::arg("boxes2"),
     py::arg("lambda_iou") = 1.0);
  m.def("solve_assignment", [](const DArray& cost) {
    CostMatrix c;
    if (cost.ndim() != 2) throw std::invalid_argument("cost must be 2-D");
    c.rows = static_cast<int>(cost.shape(0));
    c.cols = static_cast<int>(cost.shape(1));
    c.c.assign(cost.data(), cost.data() + cost.size());
    return solve_assignment(c);
  });
  m.def("match_predictions", [preds_from](const DArray& probs1, const DArray& boxes1,
                                          const DArray& probs2, const DArray& boxes2, double lam) {
    return match_predictions(preds_from(probs1, boxes1), preds_from(probs2, boxes2), lam);
  }, py::arg("probs1"), py::arg("boxes1"), py::arg("probs2"), py::arg("boxes2"),
     py::arg("lambda_iou") = 1.0);

  // synthetic data
  py::class_<DatasetConfig>(m, "DatasetConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &DatasetConfig::image_size)
      .def_readwrite("num_train_scenes", &DatasetConfig::num_train_scenes)
      .def_readwrite("num_test_scenes", &DatasetConfig::num_test_scenes)
      .def_readwrite("labeled_fraction", &DatasetConfig::labeled_fraction)
      .def_readwrite("max_objects", &DatasetConfig::max_objects)
      .def_readwrite("min_object_size", &DatasetConfig::min_object_size)
      .def_readwrite("max_object_size", &DatasetConfig::max_object_size)
      .def_readwrite("max_clutter", &DatasetConfig::max_clutter)
      .def_readwrite("noise_amplitude", &DatasetConfig::noise_amplitude)
      .def_readwrite("master_seed", &DatasetConfig::master_seed);
  m.def("generate_scene", [](uint64_t seed, const DatasetConfig& cfg) {
    const Scene s = generate_scene(seed, cfg);
    py::array_t<double> boxes({static_cast<py::ssize_t>(s.boxes.size()), static_cast<py::ssize_t>(5)});
    auto r = boxes.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < static_cast<py::ssize_t>(s.boxes.size()); ++i) {
      const LabeledBox& b = s.boxes[static_cast<size_t>(i)];
      r(i, 0) = b.box.x1;
      r(i, 1) = b.box.y1;
      r(i, 2) = b.box.x2;
      r(i, 3) = b.box.y2;
      r(i, 4) = b.class_id;
    }
    return py::make_tuple(array_from_image(s.image), boxes);
  }, py::arg("seed"), py::arg("config"));

  // augmentation
  m.def("downsample", [](const DArray& img, int s) {
    return array_from_image(downsample(image_from_array(img), s));
  }, py::arg("image"), py::arg("s"));
  m.def("strong_augment", [](const DArray& img, uint64_t seed) {
    AugmentConfig cfg;
    cfg.cutout_fill = 0.5;
    Rng rng(seed);
    return array_from_image(strong_augment(image_from_array(img), rng, cfg));
  }, py::arg("image"), py::arg("seed"));
  m.def("weak_augment", [](const DArray& img, uint64_t seed) {
    AugmentConfig cfg;
    Rng rng(seed);
    auto [out, rec] = weak_augment_image(image_from_array(img), rng, cfg);
    py::dict record;
    record["flip"] = rec.flip;
    record["resize_factor"] = rec.resize_factor;
    return py::make_tuple(array_from_image(out), record);
  }, py::arg("image"), py::arg("seed"));

  // detector
  py::class_<Model>(m, "Model")
      .def_static("init", &Model::init, py::arg("stem_channels1") = 8, py::arg("stem_channels2") = 16,
                  py::arg("head_channels") = 16, py::arg("num_levels") = 3,
                  py::arg("anchor_base") = 4.0, py::arg("seed") = 0)
      .def_static("load", &Model::from_checkpoint, py::arg("path"), py::arg("teacher") = false)
      .def("save", &Model::save, py::arg("path"))
      .def("forward", &Model::forward_py, py::arg("image"))
      .def("predict", &Model::predict_py, py::arg("image"), py::arg("score_threshold") = 0.05,
           py::arg("nms_threshold") = 0.5)
      .def("scale_consistency", &Model::scale_consistency, py::arg("image"), py::arg("s") = 1,
           py::arg("reweight") = true, py::arg("bins") = 10)
      .def("self_distill", &Model::self_distill, py::arg("teacher"), py::arg("image"),
           py::arg("mode") = "soft", py::arg("tau") = 0.7, py::arg("tau_bg") = 0.3,
           py::arg("reweight") = true, py::arg("bins") = 10)
      .def("ema_from", &Model::ema_from, py::arg("student"), py::arg("alpha"))
      .def("num_params", &Model::num_params);

  // evaluation
  m.def("compute_ap", [](const std::vector<DArray>& dets, const std::vector<DArray>& gts) {
    std::vector<std::vector<Detection>> d;
    std::vector<std::vector<LabeledBox>> g;
    for (const auto& a : dets) d.push_back(detections_from_array(a));
    for (const auto& a : gts) g.push_back(labeled_from_array(a));
    const APReport r = compute_ap(d, g);
    py::dict out;
    out["ap50"] = r.ap50;
    out["ap75"] = r.ap75;
    out["map"] = r.map5095;
    out["ar50"] = r.ar50;
    out["ar90"] = r.ar90;
    out["per_class_ap50"] = r.per_class_ap50;
    out["undefined_class_flag"] = r.undefined_class_flag;
    return out;
  }, py::arg("detections_per_scene"), py::arg("ground_truth_per_scene"));
}
