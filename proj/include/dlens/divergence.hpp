#pragma once

#include <span>
#include <string>
#include <vector>

#include "dlens/tensor.hpp"

namespace dlens {

// Probability floor applied inside logs and in the confidence denominator.
inline constexpr double kProbFloor = 1e-12;

// Probability vector over the vocabulary. Validated on construction:
// nonnegative entries summing to 1 within 1e-9.
struct Distribution {
    std::vector<double> probs;

    Distribution() = default;
    explicit Distribution(std::vector<double> p);
    size_t size() const { return probs.size(); }
};

// Per-token ratio q_i / max(p_i, floor); c = 1 is perfect alignment.
struct ConfidenceVector {
    std::vector<double> c;
};

enum class DivergenceKind { FKL, RKL, JSD, JEFFREYS };

std::string to_string(DivergenceKind kind);
DivergenceKind divergence_kind_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Scalar (evaluation) API over probability vectors. Natural log throughout.

double forward_kl(const Distribution& p, const Distribution& q);
double reverse_kl(const Distribution& p, const Distribution& q);
Distribution mixture(const Distribution& p, const Distribution& q);
double jsd(const Distribution& p, const Distribution& q);
double jeffreys(const Distribution& p, const Distribution& q);
double divergence(DivergenceKind kind, const Distribution& p, const Distribution& q);

// Raw-span variants used by batched evaluation paths (no re-validation).
double forward_kl(std::span<const double> p, std::span<const double> q);
double reverse_kl(std::span<const double> p, std::span<const double> q);
double jsd(std::span<const double> p, std::span<const double> q);
double jeffreys(std::span<const double> p, std::span<const double> q);
double divergence(DivergenceKind kind, std::span<const double> p, std::span<const double> q);

// Per-class loss landscapes in terms of the confidence score c.
// g_JSD(c) = c ln c - (1+c) ln((1+c)/2); c -> 0 limit is ln 2.
double jsd_perclass_g(double c);
// g_JD(c) = (c-1) ln c; strictly positive away from c = 1, unbounded at both ends.
double jd_perclass_g(double c);

ConfidenceVector confidence(const Distribution& p, const Distribution& q,
                            double floor = kProbFloor);

// ---------------------------------------------------------------------------
// Graph (training) API. p and q are probability tensors [.., V] (rows = token
// positions); row_weights [R] select and weight positions. Each loss is the
// weighted token mean and differentiates through q (and p when tracked).

Tensor divergence_loss(DivergenceKind kind, const Tensor& p, const Tensor& q,
                       const Tensor& row_weights);

// ||W_s h_p - h_q||^2 summed over the feature axis, averaged over rows.
// W_s: [d_student, d_teacher], h_p: [.., d_teacher], h_q: [.., d_student].
Tensor mse_feature_loss(const Tensor& h_p, const Tensor& h_q, const Tensor& w_s);

}  // namespace dlens
