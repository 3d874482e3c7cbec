#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dlens/distill.hpp"
#include "dlens/divergence.hpp"
#include "dlens/lens.hpp"
#include "dlens/model.hpp"
#include "dlens/synth_data.hpp"

namespace dlens {

struct RougeLScore {
    double precision = 0.0;
    double recall = 0.0;
    double f_measure = 0.0;  // harmonic mean; 0 when LCS is 0
};

int64_t lcs_length(std::span<const int32_t> a, std::span<const int32_t> b);
RougeLScore rouge_l(std::span<const int32_t> candidate, std::span<const int32_t> reference);

struct ExposureBiasReport {
    int horizon = 0;          // l
    double regret = 0.0;      // R(l)
    double regret_se = 0.0;   // Monte-Carlo standard error over prefix samples
    double oracle_rate = 0.0; // eps(l)
    double oracle_rate_se = 0.0;
    double exaccerr_pct = 0.0;  // (R - l*eps) / (l*eps) * 100; +inf sentinel possible
    double exaccerr_se = 0.0;   // first-order propagated
};

// R(l): per-step forward KL of the student from the teacher under
// student-sampled prefixes, summed over steps. The inner expectation over the
// next token is marginalized exactly over the vocabulary.
double accumulated_regret(const ModelCheckpoint& teacher, const ModelCheckpoint& student,
                          std::span<const int32_t> prompt, int horizon, int n_prefix_samples,
                          uint64_t seed);

// eps(l): same per-step KL under teacher-sampled prefixes, averaged over steps.
double oracle_error_rate(const ModelCheckpoint& teacher, const ModelCheckpoint& student,
                         std::span<const int32_t> prompt, int horizon, int n_prefix_samples,
                         uint64_t seed);

// ExAccErr over a prompt set at each horizon (one incremental pass to the
// largest horizon). Deterministic for a fixed seed.
std::vector<ExposureBiasReport> exaccerr(const ModelCheckpoint& teacher,
                                         const ModelCheckpoint& student,
                                         const std::vector<std::vector<int32_t>>& prompts,
                                         const std::vector<int>& horizons, int n_prefix_samples,
                                         uint64_t seed);

struct LayerDivergenceRecord {
    int student_layer = 0;
    int teacher_layer = 0;
    double mean_divergence = 0.0;
    bool is_final = false;
};

struct LayerDivergenceProfile {
    DivergenceKind kind = DivergenceKind::FKL;
    std::vector<LayerDivergenceRecord> records;  // mapped pairs, then the final layer

    double mean_intermediate() const;
    double final_divergence() const;
};

// Mean divergence between lensed teacher/student distributions per mapped
// pair plus the models' output distributions at the final layer, averaged
// over supervised token positions of the dataset.
LayerDivergenceProfile layer_kl_profile(const ModelCheckpoint& teacher,
                                        const ModelCheckpoint& student,
                                        const std::vector<Example>& examples,
                                        const LayerMapping& mapping, DivergenceKind kind,
                                        const LensConfig& lens_cfg,
                                        MaskMode mask_mode = MaskMode::ResponseOnly,
                                        int batch_size = 32);

}  // namespace dlens
