#include "dlens/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dlens/errors.hpp"
#include "dlens/rng.hpp"

namespace dlens {

// ---------------------------------------------------------------------------
// Rouge-L

int64_t lcs_length(std::span<const int32_t> a, std::span<const int32_t> b) {
    if (a.empty() || b.empty()) return 0;
    // O(|a|*|b|) time, two-row table
    std::vector<int64_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeLScore rouge_l(std::span<const int32_t> candidate, std::span<const int32_t> reference) {
    RougeLScore score;
    if (candidate.empty() || reference.empty()) return score;
    const double lcs = static_cast<double>(lcs_length(candidate, reference));
    score.precision = lcs / static_cast<double>(candidate.size());
    score.recall = lcs / static_cast<double>(reference.size());
    if (score.precision + score.recall > 0.0)
        score.f_measure =
            2.0 * score.precision * score.recall / (score.precision + score.recall);
    return score;
}

// ---------------------------------------------------------------------------
// Exposure bias

namespace {

// Forward a batch of equal-length prefixes and return the final-position
// distribution of each row.
std::vector<std::vector<double>> last_position_dists(const ModelCheckpoint& ckpt,
                                                     const std::vector<std::vector<int32_t>>& rows) {
    const int64_t b = static_cast<int64_t>(rows.size());
    const int64_t t = static_cast<int64_t>(rows[0].size());
    TokenBatch batch;
    batch.batch = b;
    batch.seq = t;
    batch.ids.resize(b * t);
    for (int64_t r = 0; r < b; ++r)
        std::copy(rows[r].begin(), rows[r].end(), batch.ids.begin() + r * t);
    ForwardTrace trace = forward_with_states(ckpt, batch);
    Tensor probs = softmax(trace.logits, -1);
    const int64_t v = ckpt.config.vocab_size;
    std::vector<std::vector<double>> out(b);
    for (int64_t r = 0; r < b; ++r) {
        auto row = probs.data().subspan((r * t + t - 1) * v, v);
        out[r].assign(row.begin(), row.end());
    }
    return out;
}

struct PrefixKlSums {
    // per-sample accumulated KL at each horizon of interest
    std::vector<std::vector<double>> at_horizon;  // [n_horizons][n_samples]
};

// Shared driver: prefixes grown by sampling from `prefix_source`; per-step
// exact forward KL teacher->student accumulated per sample.
PrefixKlSums run_prefix_rollout(const ModelCheckpoint& teacher, const ModelCheckpoint& student,
                                std::span<const int32_t> prompt,
                                const std::vector<int>& horizons, int n_samples,
                                const ModelCheckpoint& prefix_source, Rng& rng) {
    const int max_h = *std::max_element(horizons.begin(), horizons.end());
    if (prompt.empty()) throw std::invalid_argument("exposure: empty prompt");
    if (static_cast<int>(prompt.size()) + max_h > teacher.config.max_seq_len ||
        static_cast<int>(prompt.size()) + max_h > student.config.max_seq_len)
        throw std::invalid_argument("exposure: horizon exceeds max_seq_len");
    NoGradGuard no_grad;
    std::vector<std::vector<int32_t>> prefixes(n_samples,
                                               std::vector<int32_t>(prompt.begin(), prompt.end()));
    PrefixKlSums sums;
    sums.at_horizon.assign(horizons.size(), std::vector<double>(n_samples, 0.0));
    std::vector<double> acc(n_samples, 0.0);
    for (int t = 1; t <= max_h; ++t) {
        const auto p_dists = last_position_dists(teacher, prefixes);
        const auto q_dists = last_position_dists(student, prefixes);
        const auto src_dists = &prefix_source == &teacher
                                   ? p_dists
                                   : (&prefix_source == &student
                                          ? q_dists
                                          : last_position_dists(prefix_source, prefixes));
        for (int s = 0; s < n_samples; ++s)
            acc[s] += forward_kl(std::span<const double>(p_dists[s]),
                                 std::span<const double>(q_dists[s]));
        for (size_t h = 0; h < horizons.size(); ++h)
            if (horizons[h] == t)
                sums.at_horizon[h] = acc;
        if (t < max_h)
            for (int s = 0; s < n_samples; ++s)
                prefixes[s].push_back(rng.categorical(
                    {src_dists[s].data(), src_dists[s].size()}));
    }
    return sums;
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_and_se(std::span<const double> xs) {
    MeanSe out;
    const double n = static_cast<double>(xs.size());
    for (double x : xs) out.mean += x;
    out.mean /= n;
    if (xs.size() > 1) {
        double var = 0.0;
        for (double x : xs) var += (x - out.mean) * (x - out.mean);
        var /= (n - 1.0);
        out.se = std::sqrt(var / n);
    }
    return out;
}

}  // namespace

double accumulated_regret(const ModelCheckpoint& teacher, const ModelCheckpoint& student,
                          std::span<const int32_t> prompt, int horizon, int n_prefix_samples,
                          uint64_t seed) {
    if (horizon < 1) throw std::invalid_argument("accumulated_regret: horizon must be >= 1");
    Rng rng(subseed(seed, "regret-prefix"));
    const auto sums = run_prefix_rollout(teacher, student, prompt, {horizon}, n_prefix_samples,
                                         student, rng);
    return mean_and_se(sums.at_horizon[0]).mean;
}

double oracle_error_rate(const ModelCheckpoint& teacher, const ModelCheckpoint& student,
                         std::span<const int32_t> prompt, int horizon, int n_prefix_samples,
                         uint64_t seed) {
    if (horizon < 1) throw std::invalid_argument("oracle_error_rate: horizon must be >= 1");
    Rng rng(subseed(seed, "oracle-prefix"));
    const auto sums = run_prefix_rollout(teacher, student, prompt, {horizon}, n_prefix_samples,
                                         teacher, rng);
    return mean_and_se(sums.at_horizon[0]).mean / static_cast<double>(horizon);
}

std::vector<ExposureBiasReport> exaccerr(const ModelCheckpoint& teacher,
                                         const ModelCheckpoint& student,
                                         const std::vector<std::vector<int32_t>>& prompts,
                                         const std::vector<int>& horizons, int n_prefix_samples,
                                         uint64_t seed) {
    if (prompts.empty()) throw std::invalid_argument("exaccerr: empty prompt set");
    if (horizons.empty()) throw std::invalid_argument("exaccerr: no horizons");
    if (n_prefix_samples < 1) throw std::invalid_argument("exaccerr: need >= 1 prefix sample");
    if (teacher.config.vocab_size != student.config.vocab_size)
        throw ConfigError("exaccerr: teacher/student vocab mismatch");

    const size_t n_h = horizons.size();
    // per-sample values averaged over prompts (samples stay independent)
    std::vector<std::vector<double>> regret_samples(n_h,
                                                    std::vector<double>(n_prefix_samples, 0.0));
    std::vector<std::vector<double>> oracle_samples(n_h,
                                                    std::vector<double>(n_prefix_samples, 0.0));
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        Rng rng_r(subseed(seed, "regret-prefix", pi));
        const auto r = run_prefix_rollout(teacher, student, prompts[pi], horizons,
                                          n_prefix_samples, student, rng_r);
        Rng rng_o(subseed(seed, "oracle-prefix", pi));
        const auto o = run_prefix_rollout(teacher, student, prompts[pi], horizons,
                                          n_prefix_samples, teacher, rng_o);
        for (size_t h = 0; h < n_h; ++h)
            for (int s = 0; s < n_prefix_samples; ++s) {
                regret_samples[h][s] += r.at_horizon[h][s] / prompts.size();
                oracle_samples[h][s] += o.at_horizon[h][s] / prompts.size();
            }
    }

    constexpr double kGuard = 1e-9;
    std::vector<ExposureBiasReport> reports;
    for (size_t h = 0; h < n_h; ++h) {
        ExposureBiasReport rep;
        rep.horizon = horizons[h];
        const auto r = mean_and_se(regret_samples[h]);
        auto o = mean_and_se(oracle_samples[h]);
        o.mean /= rep.horizon;  // eps(l) carries the 1/l
        o.se /= rep.horizon;
        rep.regret = r.mean;
        rep.regret_se = r.se;
        rep.oracle_rate = o.mean;
        rep.oracle_rate_se = o.se;
        const double denom = rep.horizon * rep.oracle_rate;
        if (denom <= kGuard) {
            if (rep.regret <= kGuard) {
                rep.exaccerr_pct = 0.0;  // both negligible: defined as 0
            } else {
                rep.exaccerr_pct = std::numeric_limits<double>::infinity();
            }
            rep.exaccerr_se = 0.0;
        } else {
            rep.exaccerr_pct = (rep.regret - denom) / denom * 100.0;
            const double d_dr = 100.0 / denom;
            const double d_de = -100.0 * rep.regret / (rep.horizon * rep.oracle_rate *
                                                       rep.oracle_rate);
            rep.exaccerr_se = std::sqrt(d_dr * d_dr * rep.regret_se * rep.regret_se +
                                        d_de * d_de * rep.oracle_rate_se * rep.oracle_rate_se);
        }
        reports.push_back(rep);
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Layer divergence profile

double LayerDivergenceProfile::mean_intermediate() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : records)
        if (!r.is_final) {
            sum += r.mean_divergence;
            ++n;
        }
    if (n == 0) throw std::logic_error("profile: no intermediate records");
    return sum / n;
}

double LayerDivergenceProfile::final_divergence() const {
    for (const auto& r : records)
        if (r.is_final) return r.mean_divergence;
    throw std::logic_error("profile: no final record");
}

LayerDivergenceProfile layer_kl_profile(const ModelCheckpoint& teacher,
                                        const ModelCheckpoint& student,
                                        const std::vector<Example>& examples,
                                        const LayerMapping& mapping, DivergenceKind kind,
                                        const LensConfig& lens_cfg, MaskMode mask_mode,
                                        int batch_size) {
    if (examples.empty()) throw std::invalid_argument("layer_kl_profile: empty dataset");
    if (teacher.config.vocab_size != student.config.vocab_size)
        throw ConfigError("layer_kl_profile: teacher/student vocab mismatch");
    mapping.validate(student.config.n_layers, teacher.config.n_layers);
    NoGradGuard no_grad;
    const int64_t v = teacher.config.vocab_size;
    const size_t n_pairs = mapping.pairs.size();
    std::vector<double> sums(n_pairs + 1, 0.0);
    double weight_total = 0.0;

    const Tensor& t_gain = teacher.param("final_norm.gain");
    const Tensor& t_bias = teacher.param("final_norm.bias");
    const Tensor& s_gain = student.param("final_norm.gain");
    const Tensor& s_bias = student.param("final_norm.bias");

    for (size_t start = 0; start < examples.size(); start += batch_size) {
        std::vector<const Example*> chunk;
        for (size_t i = start; i < std::min(examples.size(), start + batch_size); ++i)
            chunk.push_back(&examples[i]);
        const int max_seq =
            std::min(teacher.config.max_seq_len, student.config.max_seq_len);
        const PackedBatch batch = pack_examples(chunk, mask_mode, max_seq);
        ForwardTrace tt = forward_with_states(teacher, batch.inputs);
        ForwardTrace st = forward_with_states(student, batch.inputs);
        const int64_t rows = batch.inputs.batch * batch.inputs.seq;

        auto accumulate = [&](const Tensor& p, const Tensor& q, double& sum) {
            for (int64_t r = 0; r < rows; ++r) {
                const double w = batch.weights[r];
                if (w == 0.0) continue;
                sum += w * divergence(kind, p.data().subspan(r * v, v),
                                      q.data().subspan(r * v, v));
            }
        };

        for (size_t pi = 0; pi < n_pairs; ++pi) {
            const auto [l, lp] = mapping.pairs[pi];
            Tensor p = logit_lens(tt.hidden_states[lp], teacher.unembedding(), lens_cfg,
                                  &t_gain, &t_bias);
            Tensor q = logit_lens(st.hidden_states[l], student.unembedding(), lens_cfg,
                                  &s_gain, &s_bias);
            accumulate(p, q, sums[pi]);
        }
        // Final layer: the models' actual output distributions.
        accumulate(softmax(tt.logits, -1), softmax(st.logits, -1), sums[n_pairs]);
        for (int64_t r = 0; r < rows; ++r) weight_total += batch.weights[r];
    }

    LayerDivergenceProfile profile;
    profile.kind = kind;
    for (size_t pi = 0; pi < n_pairs; ++pi)
        profile.records.push_back({mapping.pairs[pi].first, mapping.pairs[pi].second,
                                   sums[pi] / weight_total, false});
    profile.records.push_back({student.config.n_layers, teacher.config.n_layers,
                               sums[n_pairs] / weight_total, true});
    return profile;
}

}  // namespace dlens
