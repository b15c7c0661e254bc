#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "keyflow/baselines.hpp"
#include "keyflow/cfm.hpp"
#include "keyflow/error.hpp"
#include "keyflow/metrics.hpp"
#include "keyflow/motion.hpp"
#include "keyflow/rotmath.hpp"
#include "keyflow/segment.hpp"
#include "keyflow/synth.hpp"

namespace py = pybind11;
using namespace keyflow;

namespace {

MotionSequence make_seq(const FrameMatrix& frames, float fps) {
  MotionSequence seq;
  seq.frames = frames;
  seq.fps = fps;
  return seq;
}

py::dict item_dict(const CorpusItem& item) {
  py::dict d;
  d["frames"] = item.seq.frames;
  d["fps"] = item.seq.fps;
  d["bio"] = item.labels.bio;
  d["mask"] = item.labels.mask;
  d["gloss"] = item.labels.gloss_tokens;
  d["lang"] = item.labels.lang_token;
  d["anchor_frames"] = item.anchor_frames;
  return d;
}

py::dict pair_dict(const BodyHandError& p) {
  py::dict d;
  d["body"] = p.body;
  d["hand"] = p.hand;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "keyflow core bindings";

  static PyObject* error_type = py::exception<Error>(m, "KeyflowError", PyExc_ValueError).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(error_type)(e.detail());
      err.attr("code") = to_string(e.code());
      PyErr_SetObject(error_type, err.ptr());
    }
  });

  m.attr("POSE_DIM") = kPoseDim;
  m.attr("NUM_JOINTS") = kNumJoints;

  m.def("rot6d_to_matrix", &rot6d_to_matrix, py::arg("r"));
  m.def("matrix_to_rot6d", &matrix_to_rot6d, py::arg("m"));
  m.def("slerp_rot6d", &slerp_rot6d, py::arg("a"), py::arg("b"), py::arg("t"));

  m.def(
      "load_sprk",
      [](const std::filesystem::path& path) {
        const MotionSequence seq = load_sprk(path);
        return py::make_tuple(seq.frames, seq.fps);
      },
      py::arg("path"), "Returns (frames float32 T x 246, fps).");
  m.def(
      "save_sprk",
      [](const std::filesystem::path& path, const FrameMatrix& frames, float fps) {
        save_sprk(make_seq(frames, fps), path);
      },
      py::arg("path"), py::arg("frames"), py::arg("fps") = 25.0f);
  m.def(
      "encode_sprk", [](const FrameMatrix& frames, float fps) { return py::bytes(encode_sprk(make_seq(frames, fps))); },
      py::arg("frames"), py::arg("fps") = 25.0f);
  m.def(
      "decode_sprk",
      [](const py::bytes& data) {
        const MotionSequence seq = decode_sprk(std::string(data));
        return py::make_tuple(seq.frames, seq.fps);
      },
      py::arg("data"));

  m.def(
      "synth_items",
      [](int items, std::uint64_t seed, double arc_deg) {
        SynthConfig cfg;
        cfg.num_items = items;
        cfg.seed = seed;
        cfg.arc_deg = arc_deg;
        validate(cfg);
        py::list out;
        for (const auto& item : synth_generate(cfg).items) out.append(item_dict(item));
        return out;
      },
      py::arg("items") = 10, py::arg("seed") = 1, py::arg("arc_deg") = 0.0);

  m.def("repair_bio", &seg::repair_bio, py::arg("labels"));
  m.def(
      "segments",
      [](const std::vector<int>& labels) {
        std::vector<std::pair<int, int>> out;
        for (const auto& s : seg::segments_from_labels(labels)) out.emplace_back(s.start, s.end);
        return out;
      },
      py::arg("labels"));
  m.def(
      "select_keyframes",
      [](const std::vector<int>& bio) {
        return seg::select_keyframes(seg::segments_from_labels(seg::repair_bio(bio)), static_cast<int>(bio.size()));
      },
      py::arg("bio"));

  m.def(
      "slerp_inbetween",
      [](const KeyframeMask& mask, const FrameMatrix& anchors) {
        return slerp_inbetween(mask, make_seq(anchors, 25.0f)).frames;
      },
      py::arg("mask"), py::arg("anchors"));
  m.def(
      "dtw_jpe",
      [](const FrameMatrix& pred, const FrameMatrix& gt) {
        const DtwJpe s = dtw_jpe(make_seq(pred, 25.0f), make_seq(gt, 25.0f), default_skeleton());
        py::dict d;
        d["dtw_jpe"] = pair_dict(s.unaligned);
        d["dtw_pa_jpe"] = pair_dict(s.aligned);
        return d;
      },
      py::arg("pred"), py::arg("gt"));

  py::class_<cfm::FlowModel>(m, "FlowModel")
      .def_static(
          "create",
          [](int hidden, std::uint64_t seed) {
            cfm::ModelConfig mc;
            mc.hidden = hidden;
            mc.seed = seed;
            return cfm::FlowModel::create(mc);
          },
          py::arg("hidden") = 64, py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& dir) { return cfm::load_model(dir); }, py::arg("path"))
      .def_property_readonly("param_count", &cfm::FlowModel::param_count)
      .def(
          "sample",
          [](const cfm::FlowModel& model, const KeyframeMask& mask, std::optional<FrameMatrix> anchors,
             std::optional<std::vector<int>> gloss, int lang, int steps, double gamma, const std::string& integrator,
             std::uint64_t seed) {
            cfm::SampleRequest req;
            req.mask = mask;
            if (anchors) {
              req.anchors = anchors->cast<double>();
            } else {
              req.anchors = cfm::Mat::Zero(static_cast<Eigen::Index>(mask.size()), kPoseDim);
            }
            if (gloss) req.text = cfm::TextCondition{*gloss, lang};
            req.steps = steps;
            req.gamma = gamma;
            req.integrator = cfm::integrator_from_string(integrator);
            req.seed = seed;
            py::gil_scoped_release release;
            return cfm::sample_sequence(model, req, 25.0f).frames;
          },
          py::arg("mask"), py::arg("anchors") = py::none(), py::arg("gloss") = py::none(), py::arg("lang") = 0,
          py::arg("steps") = 10, py::arg("gamma") = 2.0, py::arg("integrator") = "euler", py::arg("seed") = 0);
}
