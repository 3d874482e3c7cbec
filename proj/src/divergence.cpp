#include "dlens/divergence.hpp"

#include <cmath>
#include <stdexcept>

#include "dlens/errors.hpp"

namespace dlens {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

double floored_log(double x) { return std::log(x > kProbFloor ? x : kProbFloor); }

void check_same_size(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("divergence: shape mismatch");
}

}  // namespace

Distribution::Distribution(std::vector<double> p) : probs(std::move(p)) {
    double total = 0.0;
    for (double v : probs) {
        if (v < 0.0) throw std::invalid_argument("Distribution: negative entry");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("Distribution: entries must sum to 1 within 1e-9");
}

std::string to_string(DivergenceKind kind) {
    switch (kind) {
        case DivergenceKind::FKL: return "fkl";
        case DivergenceKind::RKL: return "rkl";
        case DivergenceKind::JSD: return "jsd";
        case DivergenceKind::JEFFREYS: return "jeffreys";
    }
    return "?";
}

DivergenceKind divergence_kind_from_string(const std::string& name) {
    if (name == "fkl") return DivergenceKind::FKL;
    if (name == "rkl") return DivergenceKind::RKL;
    if (name == "jsd") return DivergenceKind::JSD;
    if (name == "jeffreys" || name == "jd") return DivergenceKind::JEFFREYS;
    throw ConfigError("unknown divergence kind: " + name);
}

// ---------------------------------------------------------------------------
// Scalar API

double forward_kl(std::span<const double> p, std::span<const double> q) {
    check_same_size(p, q);
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
        s += p[i] * (floored_log(p[i]) - floored_log(q[i]));
    return s;
}

double reverse_kl(std::span<const double> p, std::span<const double> q) {
    return forward_kl(q, p);
}

double jsd(std::span<const double> p, std::span<const double> q) {
    check_same_size(p, q);
    double kl_pm = 0.0, kl_qm = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        const double log_m = floored_log(m);
        kl_pm += p[i] * (floored_log(p[i]) - log_m);
        kl_qm += q[i] * (floored_log(q[i]) - log_m);
    }
    return 0.5 * (kl_pm + kl_qm);
}

double jeffreys(std::span<const double> p, std::span<const double> q) {
    return forward_kl(p, q) + forward_kl(q, p);
}

double divergence(DivergenceKind kind, std::span<const double> p, std::span<const double> q) {
    switch (kind) {
        case DivergenceKind::FKL: return forward_kl(p, q);
        case DivergenceKind::RKL: return reverse_kl(p, q);
        case DivergenceKind::JSD: return jsd(p, q);
        case DivergenceKind::JEFFREYS: return jeffreys(p, q);
    }
    throw std::logic_error("divergence: unreachable");
}

double forward_kl(const Distribution& p, const Distribution& q) {
    return forward_kl(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

double reverse_kl(const Distribution& p, const Distribution& q) {
    return reverse_kl(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

Distribution mixture(const Distribution& p, const Distribution& q) {
    check_same_size(p.probs, q.probs);
    std::vector<double> m(p.size());
    for (size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (p.probs[i] + q.probs[i]);
    return Distribution(std::move(m));
}

double jsd(const Distribution& p, const Distribution& q) {
    return jsd(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

double jeffreys(const Distribution& p, const Distribution& q) {
    return jeffreys(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

double divergence(DivergenceKind kind, const Distribution& p, const Distribution& q) {
    return divergence(kind, std::span<const double>(p.probs),
                      std::span<const double>(q.probs));
}

// ---------------------------------------------------------------------------
// Per-class landscapes

double jsd_perclass_g(double c) {
    if (c < 0.0) throw std::invalid_argument("jsd_perclass_g: c must be nonnegative");
    if (c == 0.0) return kLn2;  // limit: c log c -> 0
    return c * std::log(c) - (1.0 + c) * std::log(0.5 * (1.0 + c));
}

double jd_perclass_g(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("jd_perclass_g: c must be positive");
    return (c - 1.0) * std::log(c);
}

ConfidenceVector confidence(const Distribution& p, const Distribution& q, double floor) {
    check_same_size(p.probs, q.probs);
    ConfidenceVector out;
    out.c.resize(p.size());
    for (size_t i = 0; i < p.size(); ++i)
        out.c[i] = q.probs[i] / std::max(p.probs[i], floor);
    return out;
}

// ---------------------------------------------------------------------------
// Graph API. Built from engine primitives so every loss inherits exact
// gradients; the scalar API above stays an independent evaluation route.

namespace {

// sum_i w_i * sum_v a[i,v] * (log a_hat - log b_hat), normalized by sum w.
Tensor kl_rows(const Tensor& a, const Tensor& b, const Tensor& row_weights,
               double inv_weight_total) {
    Tensor log_a = dlens::log(clamp_min(a, kProbFloor));
    Tensor log_b = dlens::log(clamp_min(b, kProbFloor));
    Tensor terms = mul(a, sub(log_a, log_b));
    return scale(sum(scale_rows(terms, row_weights)), inv_weight_total);
}

double weight_total(const Tensor& w) {
    double s = 0.0;
    for (double v : w.data()) s += v;
    if (!(s > 0.0)) throw std::invalid_argument("divergence_loss: total weight must be positive");
    return s;
}

}  // namespace

Tensor divergence_loss(DivergenceKind kind, const Tensor& p, const Tensor& q,
                       const Tensor& row_weights) {
    if (p.shape() != q.shape())
        throw std::invalid_argument("divergence_loss: shape mismatch");
    const double inv_w = 1.0 / weight_total(row_weights);
    switch (kind) {
        case DivergenceKind::FKL:
            return kl_rows(p, q, row_weights, inv_w);
        case DivergenceKind::RKL:
            return kl_rows(q, p, row_weights, inv_w);
        case DivergenceKind::JSD: {
            Tensor m = scale(add(p, q), 0.5);
            return scale(add(kl_rows(p, m, row_weights, inv_w), kl_rows(q, m, row_weights, inv_w)),
                         0.5);
        }
        case DivergenceKind::JEFFREYS:
            return add(kl_rows(p, q, row_weights, inv_w), kl_rows(q, p, row_weights, inv_w));
    }
    throw std::logic_error("divergence_loss: unreachable");
}

Tensor mse_feature_loss(const Tensor& h_p, const Tensor& h_q, const Tensor& w_s) {
    if (w_s.rank() != 2 || h_p.dim(-1) != w_s.dim(1) || h_q.dim(-1) != w_s.dim(0))
        throw std::invalid_argument("mse_feature_loss: shape mismatch");
    if (h_p.numel() / h_p.dim(-1) != h_q.numel() / h_q.dim(-1))
        throw std::invalid_argument("mse_feature_loss: row count mismatch");
    Tensor projected = matmul_nt(h_p, w_s);
    Tensor diff = sub(projected, h_q);
    const double rows = static_cast<double>(h_q.numel() / h_q.dim(-1));
    return scale(sum(mul(diff, diff)), 1.0 / rows);
}

}  // namespace dlens
