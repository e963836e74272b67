#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bsnet/cli.hpp"
#include "bsnet/explain.hpp"
#include "bsnet/loss.hpp"
#include "bsnet/model.hpp"
#include "bsnet/preprocess.hpp"
#include "bsnet/score.hpp"
#include "bsnet/synthcxr.hpp"
#include "bsnet/train.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace bsnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

GrayImage image_of(const FloatArray& a) {
  contract(a.ndim() == 2, "image must be a 2-D float array");
  GrayImage img = GrayImage::create(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::array_t<float> array_of(const GrayImage& img) {
  py::array_t<float> a({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

py::array_t<float> array_of(const ScoreDistribution& d) {
  py::array_t<float> a({3, 2, 4});
  std::copy(d.p.begin(), d.p.end(), a.mutable_data());
  return a;
}

BrixiaScore score_of(const std::array<int, 6>& v) {
  BrixiaScore s;
  s.v = v;
  contract(s.valid(), "score values must lie in 0..3");
  return s;
}

std::vector<BrixiaScore> scores_of(const std::vector<std::array<int, 6>>& vs) {
  std::vector<BrixiaScore> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(score_of(v));
  return out;
}

StatScope scope_of(const std::string& name) {
  if (name == "region") return StatScope::kPerRegion;
  if (name == "average") return StatScope::kRegionAverage;
  contract(name == "global", "scope must be region, average, or global");
  return StatScope::kGlobalScore;
}

py::dict forward_dict(const Model<float>& m, const FloatArray& image, const std::string& mode) {
  const GrayImage img = image_of(image);
  contract(img.height == m.config().input_size && img.width == m.config().input_size,
           "image does not match the model input size");
  Tape<float> tape(false);
  const ForwardResult<float> r = m.forward_full(tape, to_tensor(img), parse_attention(mode));
  const ScoreDistribution dist = dist_from_tensor(r.dist, 0);
  const BrixiaScore score = predict_score(dist);

  py::array_t<float> mask({img.height, img.width});
  std::copy(r.mask.data().begin(), r.mask.data().end(), mask.mutable_data());
  py::array_t<float> theta(6);
  std::copy(r.theta.data().begin(), r.theta.data().end(), theta.mutable_data());
  return py::dict("score"_a = score.v, "global"_a = global_score(score), "dist"_a = array_of(dist),
                  "mask"_a = mask, "theta"_a = theta,
                  "theta_fallback"_a = static_cast<bool>(r.theta_fallback[0]));
}

}  // namespace

PYBIND11_MODULE(_bsnet, m) {
  m.doc() = "Multi-region severity scoring on phantom chest radiographs";

  py::class_<Model<float>>(m, "Model")
      .def_property_readonly("input_size",
                             [](const Model<float>& mm) { return mm.config().input_size; })
      .def_property_readonly("scalar_count",
                             [](const Model<float>& mm) { return mm.scalar_count(); })
      .def_property_readonly("param_names",
                             [](const Model<float>& mm) { return mm.param_names(); })
      .def("predict", &forward_dict, "image"_a, "mode"_a = "ha")
      .def("predict_mask", [](const Model<float>& mm, const FloatArray& image) {
        const GrayImage img = image_of(image);
        Tape<float> tape(false);
        const Tensor<float> mask = mm.predict_mask(tape, to_tensor(img));
        py::array_t<float> out({img.height, img.width});
        std::copy(mask.data().begin(), mask.data().end(), out.mutable_data());
        return out;
      });

  m.def("load_model", [](const std::string& dir) { return load_model(dir); }, "checkpoint_dir"_a);

  m.def(
      "gen_phantom",
      [](uint64_t seed, const std::array<int, 6>& severity, int height, int width) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.severity = severity;
        spec.height = height;
        spec.width = width;
        const SampleRecord s = gen_phantom(spec);
        return py::dict("image"_a = array_of(s.image), "mask"_a = array_of(s.lung_mask),
                        "score"_a = s.score.v, "id"_a = s.id);
      },
      "seed"_a, "severity"_a, "height"_a = 128, "width"_a = 128);

  m.def(
      "gen_dataset",
      [](int n, uint64_t seed, const std::string& out_dir, int height, int width) {
        gen_dataset(n, seed, out_dir, SplitFractions{}, height, width);
      },
      "n"_a, "seed"_a, "out_dir"_a, "height"_a = 128, "width"_a = 128);

  m.def("normalize_cxr",
        [](const FloatArray& image) { return array_of(normalize_cxr(image_of(image))); },
        "image"_a);

  m.def(
      "explanation_map",
      [](const Model<float>& model, const FloatArray& image, int n_superpixels,
         const std::string& mode) {
        const ExplanationMap e =
            explanation_map(model, image_of(image), n_superpixels, parse_attention(mode));
        py::array_t<float> values({e.height, e.width, 3, 2, 4});
        std::copy(e.values.begin(), e.values.end(), values.mutable_data());
        py::array_t<int> labels({e.height, e.width});
        std::copy(e.superpixels.labels.begin(), e.superpixels.labels.end(),
                  labels.mutable_data());
        return py::dict("values"_a = values, "labels"_a = labels,
                        "count"_a = e.superpixels.count, "baseline"_a = array_of(e.baseline),
                        "forward_passes"_a = e.forward_passes);
      },
      "model"_a, "image"_a, "n_superpixels"_a, "mode"_a = "ha");

  m.def("global_score", [](const std::array<int, 6>& v) { return global_score(score_of(v)); },
        "score"_a);
  m.def("flip_score", [](const std::array<int, 6>& v) { return flip_score(score_of(v)).v; },
        "score"_a);
  m.def("to_t_score", [](const std::array<int, 6>& v) {
    const TScore t = to_t_score(score_of(v));
    return py::dict("indicator"_a = t.indicator, "global"_a = t.global);
  });
  m.def("fit_lo", [](const std::vector<std::pair<double, double>>& pairs) {
    const LoRegression r = fit_lo(pairs);
    return py::make_tuple(r.coef, r.intercept);
  });
  m.def(
      "apply_lo",
      [](int g, double coef, double intercept) {
        LoRegression r;
        r.coef = coef;
        r.intercept = intercept;
        return apply_lo(g, r);
      },
      "g"_a, "coef"_a, "intercept"_a);

  m.def("consensus",
        [](const std::vector<std::tuple<std::string, int, std::array<int, 6>>>& panel) {
          RaterPanel rp;
          for (const auto& [rater, seniority, score] : panel)
            rp.push_back({rater, seniority, score_of(score)});
          return consensus(rp).v;
        },
        "panel"_a);
  m.def("cohen_kappa", &cohen_kappa, "r1"_a, "r2"_a);
  m.def("fleiss_kappa", &fleiss_kappa, "items"_a);

  m.def(
      "error_stats",
      [](const std::vector<std::array<int, 6>>& preds, const std::vector<std::array<int, 6>>& refs,
         const std::string& scope, int region) {
        const ErrorStats st = error_stats(scores_of(preds), scores_of(refs), scope_of(scope),
                                          region);
        return py::dict("mer"_a = st.mer, "mae"_a = st.mae, "sd"_a = st.sd, "cc"_a = st.cc);
      },
      "preds"_a, "refs"_a, "scope"_a = "average", "region"_a = -1);

  m.def(
      "overlap",
      [](const FloatArray& pred, const FloatArray& target) {
        const OverlapMetrics om =
            overlap_metrics(to_tensor(image_of(pred)), to_tensor(image_of(target)));
        return py::dict("dice"_a = om.dice, "iou"_a = om.iou);
      },
      "pred"_a, "target"_a);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"bsnet"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  });
}
