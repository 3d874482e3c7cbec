// Python bindings for the main dlens operations: divergences, the per-class
// landscape functions, layer mapping, Rouge-L, and the logit lens on raw
// arrays. Heavy training stays behind the CLI.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <vector>

#include "dlens/distill.hpp"
#include "dlens/divergence.hpp"
#include "dlens/eval_metrics.hpp"
#include "dlens/lens.hpp"
#include "dlens/tensor.hpp"

namespace py = pybind11;

namespace {

std::vector<double> to_vector(const py::array_t<double, py::array::c_style |
                                                            py::array::forcecast>& arr) {
    const auto buf = arr.request();
    const double* p = static_cast<const double*>(buf.ptr);
    return {p, p + buf.size};
}

dlens::Distribution to_distribution(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    return dlens::Distribution(to_vector(arr));
}

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "dlens core operations: divergences, logit lens, layer mapping, Rouge-L";
    m.attr("__version__") = "1.0.0";

    m.def(
        "forward_kl",
        [](const DoubleArray& p, const DoubleArray& q) {
            return dlens::forward_kl(to_distribution(p), to_distribution(q));
        },
        py::arg("p"), py::arg("q"), "KL(p || q) with the 1e-12 probability floor");
    m.def(
        "reverse_kl",
        [](const DoubleArray& p, const DoubleArray& q) {
            return dlens::reverse_kl(to_distribution(p), to_distribution(q));
        },
        py::arg("p"), py::arg("q"), "KL(q || p)");
    m.def(
        "jsd",
        [](const DoubleArray& p, const DoubleArray& q) {
            return dlens::jsd(to_distribution(p), to_distribution(q));
        },
        py::arg("p"), py::arg("q"), "Jensen-Shannon divergence (natural log, <= ln 2)");
    m.def(
        "jeffreys",
        [](const DoubleArray& p, const DoubleArray& q) {
            return dlens::jeffreys(to_distribution(p), to_distribution(q));
        },
        py::arg("p"), py::arg("q"), "Jeffreys divergence KL(p||q) + KL(q||p)");
    m.def(
        "mixture",
        [](const DoubleArray& p, const DoubleArray& q) {
            return dlens::mixture(to_distribution(p), to_distribution(q)).probs;
        },
        py::arg("p"), py::arg("q"), "Even mixture (p + q) / 2");
    m.def(
        "confidence",
        [](const DoubleArray& p, const DoubleArray& q, double floor) {
            return dlens::confidence(to_distribution(p), to_distribution(q), floor).c;
        },
        py::arg("p"), py::arg("q"), py::arg("floor") = dlens::kProbFloor,
        "Per-token confidence scores q_i / max(p_i, floor)");
    m.def("jsd_perclass_g", &dlens::jsd_perclass_g, py::arg("c"),
          "Per-class JSD landscape g(c) = c ln c - (1+c) ln((1+c)/2)");
    m.def("jd_perclass_g", &dlens::jd_perclass_g, py::arg("c"),
          "Per-class Jeffreys landscape g(c) = (c-1) ln c");

    m.def(
        "softmax",
        [](const DoubleArray& logits) {
            const auto data = to_vector(logits);
            dlens::Tensor t = dlens::Tensor::from_data(
                {static_cast<int64_t>(data.size())}, data);
            dlens::Tensor result = dlens::softmax(t);
            const auto out = result.data();
            return std::vector<double>(out.begin(), out.end());
        },
        py::arg("logits"), "Numerically stable softmax of a 1-D array");

    m.def(
        "logit_lens",
        [](const DoubleArray& h, const DoubleArray& w_u, double temperature) {
            const auto hbuf = h.request();
            const auto wbuf = w_u.request();
            if (wbuf.ndim != 2) throw std::invalid_argument("logit_lens: W_U must be 2-D");
            if (hbuf.ndim != 1 || hbuf.shape[0] != wbuf.shape[1])
                throw std::invalid_argument("logit_lens: h width must match W_U columns");
            dlens::Tensor ht = dlens::Tensor::from_data(
                {static_cast<int64_t>(hbuf.shape[0])}, to_vector(h));
            dlens::Tensor wt = dlens::Tensor::from_data(
                {static_cast<int64_t>(wbuf.shape[0]), static_cast<int64_t>(wbuf.shape[1])},
                to_vector(w_u));
            dlens::LensConfig cfg;
            cfg.temperature = temperature;
            dlens::Tensor result = dlens::logit_lens(ht, wt, cfg);
            const auto out = result.data();
            return std::vector<double>(out.begin(), out.end());
        },
        py::arg("h"), py::arg("w_u"), py::arg("temperature") = 1.0,
        "softmax(W_U h / temperature) for a single hidden state");

    m.def(
        "lcs_length",
        [](const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
            return dlens::lcs_length(a, b);
        },
        py::arg("a"), py::arg("b"), "Longest common subsequence length");
    m.def(
        "rouge_l",
        [](const std::vector<int32_t>& candidate, const std::vector<int32_t>& reference) {
            const auto s = dlens::rouge_l(candidate, reference);
            return py::make_tuple(s.precision, s.recall, s.f_measure);
        },
        py::arg("candidate"), py::arg("reference"),
        "Rouge-L (precision, recall, f_measure) over token sequences");

    m.def("select_student_layers", &dlens::select_student_layers, py::arg("l_s"), py::arg("k"),
          "K equally spaced intermediate layers (final layer excluded)");
    m.def(
        "uniform_map",
        [](const std::vector<int>& student_layers, int l_s, int l_t) {
            return dlens::uniform_map(student_layers, l_s, l_t).pairs;
        },
        py::arg("student_layers"), py::arg("l_s"), py::arg("l_t"),
        "Proportional-depth layer mapping l' = round(l * L_T / L_S)");
}
