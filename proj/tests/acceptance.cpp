// Acceptance suite: runs every criterion end to end and prints one PASS/FAIL
// line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dlens/distill.hpp"
#include "dlens/divergence.hpp"
#include "dlens/errors.hpp"
#include "dlens/eval_metrics.hpp"
#include "dlens/lens.hpp"
#include "dlens/model.hpp"
#include "dlens/rng.hpp"
#include "dlens/synth_data.hpp"
#include "dlens/tensor.hpp"

using namespace dlens;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

int g_failures = 0;

void report(int id, bool pass, const std::string& desc, const std::string& note = "") {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", id, desc.c_str(),
                note.empty() ? "" : " -- ", note.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

Distribution random_distribution(int v, Rng& rng, double lo) {
    std::vector<double> p(v);
    double total = 0.0;
    for (auto& x : p) {
        x = lo + (1.0 - lo) * rng.uniform();
        total += x;
    }
    for (auto& x : p) x /= total;
    return Distribution(std::move(p));
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criteria 1-2: decomposition identities

void criterion_identities() {
    const auto t0 = Clock::now();
    Rng rng(1001);
    double worst_jsd = 0.0, worst_jd = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        Distribution p = random_distribution(100, rng, 1e-3);  // entries >= 1e-5 > 1e-6
        Distribution q = random_distribution(100, rng, 1e-3);
        ConfidenceVector c = confidence(p, q);
        double jsd_sum = 0.0, jd_sum = 0.0;
        for (int i = 0; i < 100; ++i) {
            jsd_sum += p.probs[i] * jsd_perclass_g(c.c[i]);
            jd_sum += p.probs[i] * jd_perclass_g(c.c[i]);
        }
        worst_jsd = std::max(worst_jsd, std::abs(jsd(p, q) - 0.5 * jsd_sum));
        worst_jd = std::max(worst_jd, std::abs(jeffreys(p, q) - jd_sum));
    }
    const double elapsed = seconds_since(t0);
    std::ostringstream n1;
    n1 << "max |jsd - 0.5 sum p g(c)| = " << worst_jsd << ", " << elapsed << " s";
    report(1, worst_jsd <= 1e-9 && elapsed < 5.0,
           "JSD decomposition identity over 1000 random pairs (V=100, tol 1e-9, < 5 s)",
           n1.str());
    std::ostringstream n2;
    n2 << "max |jeffreys - sum p g(c)| = " << worst_jd;
    report(2, worst_jd <= 1e-9,
           "Jeffreys decomposition identity over 1000 random pairs (tol 1e-9)", n2.str());
}

// ---------------------------------------------------------------------------
// Criterion 3: landscape limits

void criterion_landscape() {
    const bool a = std::abs(jsd_perclass_g(1e-8) - kLn2) <= 1e-6;
    const bool b = std::abs(jsd_perclass_g(1e6) / 1e6 - kLn2) / kLn2 <= 1e-3;
    const bool c = jsd_perclass_g(1.0) == 0.0 && jd_perclass_g(1.0) == 0.0;
    const bool d = jd_perclass_g(1e-8) > jd_perclass_g(1e-4) &&
                   jd_perclass_g(1e-4) > jd_perclass_g(1e-2) && jd_perclass_g(1e-2) > 0.0;
    std::ostringstream note;
    note << "g_jsd(1e-8)=" << jsd_perclass_g(1e-8) << ", g_jsd(1e6)/1e6="
         << jsd_perclass_g(1e6) / 1e6 << ", g_jd(1e-8)=" << jd_perclass_g(1e-8);
    report(3, a && b && c && d,
           "landscape limits: bounded missed-recall, linear hallucination, exact zeros at c=1",
           note.str());
}

// ---------------------------------------------------------------------------
// Criterion 4: divergence contracts

void criterion_contracts() {
    Rng rng(1004);
    bool ok = true;
    std::string why;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        Distribution p = random_distribution(50, rng, 1e-6);
        Distribution q = random_distribution(50, rng, 1e-6);
        const double j = jsd(p, q);
        if (std::abs(j - jsd(q, p)) > 1e-12) { ok = false; why = "jsd symmetry"; }
        if (j < 0.0 || j > kLn2 + 1e-12) { ok = false; why = "jsd bounds"; }
        if (std::abs(jeffreys(p, q) - jeffreys(q, p)) > 1e-12) { ok = false; why = "jd symmetry"; }
    }
    // disjoint deltas reach the ln 2 bound
    {
        std::vector<double> d1(8, 0.0), d2(8, 0.0);
        d1[2] = 1.0;
        d2[5] = 1.0;
        Distribution a(d1), b(d2);
        if (std::abs(jsd(a, b) - kLn2) > 1e-12) { ok = false; why = "jsd(delta_i, delta_j)"; }
    }
    // all four divergences vanish at p == q
    {
        Distribution p = random_distribution(50, rng, 1e-6);
        for (DivergenceKind kind : {DivergenceKind::FKL, DivergenceKind::RKL,
                                    DivergenceKind::JSD, DivergenceKind::JEFFREYS})
            if (std::abs(divergence(kind, p, p)) > 1e-12) { ok = false; why = "zero at p==q"; }
    }
    report(4, ok, "divergence contracts: symmetry 1e-12, bounds, ln 2 at disjoint deltas, zeros",
           why);
}

// ---------------------------------------------------------------------------
// Criterion 5: gradient correctness vs finite differences

double rel_err(std::span<const double> ad, const std::vector<double>& fd) {
    double worst = 0.0;
    for (size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, std::abs(ad[i] - fd[i]) / std::max(std::abs(fd[i]), 1e-5));
    return worst;
}

void criterion_gradients() {
    const auto t0 = Clock::now();
    Rng rng(1005);
    const int v = 12;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        // single-position divergences through softmax
        for (DivergenceKind kind : {DivergenceKind::FKL, DivergenceKind::RKL,
                                    DivergenceKind::JSD, DivergenceKind::JEFFREYS}) {
            Distribution pfix = random_distribution(v, rng, 1e-3);
            Tensor p = Tensor::from_data({1, v}, pfix.probs);
            std::vector<double> z0(v);
            for (auto& z : z0) z = -3.0 + 6.0 * rng.uniform();
            Tensor logits = Tensor::from_data({1, v}, z0, true);
            Tensor w = Tensor::full({1}, 1.0);
            divergence_loss(kind, p, softmax(logits, -1), w).backward();
            auto fd = finite_difference_grad(
                [&](const Tensor& z) {
                    return divergence_loss(kind, p, softmax(z, -1), w).item();
                },
                logits, 1e-5);
            worst = std::max(worst, rel_err(logits.grad(), fd));
        }
        // L_inter: mean JSD over two mapped layers w.r.t. per-layer student logits
        {
            const int rows = 3;
            std::vector<Tensor> teacher_probs, student_logits;
            for (int layer = 0; layer < 2; ++layer) {
                std::vector<double> probs, logits;
                for (int r = 0; r < rows; ++r) {
                    Distribution pr = random_distribution(v, rng, 1e-3);
                    probs.insert(probs.end(), pr.probs.begin(), pr.probs.end());
                    for (int i = 0; i < v; ++i) logits.push_back(-3.0 + 6.0 * rng.uniform());
                }
                teacher_probs.push_back(Tensor::from_data({rows, v}, probs));
                student_logits.push_back(Tensor::from_data({rows, v}, logits, true));
            }
            Tensor w = Tensor::full({rows}, 1.0);
            auto build = [&](const std::vector<Tensor>& zs) {
                Tensor acc;
                for (int layer = 0; layer < 2; ++layer) {
                    Tensor pair = divergence_loss(DivergenceKind::JSD, teacher_probs[layer],
                                                  softmax(zs[layer], -1), w);
                    acc = acc.defined() ? add(acc, pair) : pair;
                }
                return scale(acc, 0.5);
            };
            build(student_logits).backward();
            for (int layer = 0; layer < 2; ++layer) {
                auto fd = finite_difference_grad(
                    [&](const Tensor& z) {
                        std::vector<Tensor> zs = student_logits;
                        zs[layer] = z;
                        return build(zs).item();
                    },
                    student_logits[layer], 1e-5);
                worst = std::max(worst, rel_err(student_logits[layer].grad(), fd));
            }
        }
    }
    const double elapsed = seconds_since(t0);
    std::ostringstream note;
    note << "max rel err = " << worst << ", " << elapsed << " s";
    report(5, worst <= 1e-4 && elapsed < 30.0,
           "autodiff vs central differences for FKL/RKL/JSD/Jeffreys and L_inter (50 cases)",
           note.str());
}

// ---------------------------------------------------------------------------
// Criterion 6: layer-mapping reproduction

void criterion_mapping() {
    bool ok = true;
    std::string why;
    auto expect = [&](bool cond, const char* what) {
        if (!cond && ok) { ok = false; why = what; }
    };
    expect(select_student_layers(12, 5) == std::vector<int>({2, 4, 6, 8, 10}), "L_S=12");
    expect(select_student_layers(24, 5) == std::vector<int>({4, 8, 12, 16, 20}), "L_S=24");
    expect(select_student_layers(22, 5) == std::vector<int>({4, 7, 11, 15, 18}), "L_S=22");
    auto m12 = uniform_map({2, 4, 6, 8, 10}, 12, 48);
    expect(m12.pairs == std::vector<std::pair<int, int>>(
                            {{2, 8}, {4, 16}, {6, 24}, {8, 32}, {10, 40}}),
           "12->48 mapping");
    auto m24 = uniform_map({4, 8, 12, 16, 20}, 24, 48);
    std::vector<int> t24;
    for (auto& [l, lp] : m24.pairs) t24.push_back(lp);
    expect(t24 == std::vector<int>({8, 16, 24, 32, 40}), "24->48 mapping");
    // the published 22-layer teacher set does NOT satisfy the formula
    auto m22 = uniform_map({4, 7, 11, 15, 18}, 22, 32);
    std::vector<int> t22;
    for (auto& [l, lp] : m22.pairs) t22.push_back(lp);
    expect(t22 != std::vector<int>({5, 10, 16, 21, 26}), "documented inconsistency");
    report(6, ok, "layer-mapping reproduction incl. the documented 22-layer inconsistency", why);
}

// ---------------------------------------------------------------------------
// Criterion 7: Rouge-L oracle

int64_t lcs_memo(std::span<const int32_t> a, std::span<const int32_t> b,
                 std::map<std::pair<size_t, size_t>, int64_t>& memo, size_t i, size_t j) {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::make_pair(i, j);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    int64_t r = a[i] == b[j] ? 1 + lcs_memo(a, b, memo, i + 1, j + 1)
                             : std::max(lcs_memo(a, b, memo, i + 1, j),
                                        lcs_memo(a, b, memo, i, j + 1));
    memo[key] = r;
    return r;
}

void criterion_rouge() {
    bool ok = true;
    std::string why;
    const std::vector<int32_t> x = {0, 1, 2, 1, 3, 0, 1};
    const std::vector<int32_t> y = {1, 3, 2, 0, 1, 0};
    if (lcs_length(x, y) != 4) { ok = false; why = "hand LCS"; }
    const std::vector<int32_t> cand = {1, 2, 3}, ref = {1, 2, 3, 4};
    RougeLScore s = rouge_l(cand, ref);
    if (!(s.precision == 1.0 && s.recall == 0.75 &&
          std::abs(s.f_measure - 6.0 / 7.0) <= 1e-12)) {
        ok = false;
        why = "hand rouge";
    }
    Rng rng(1007);
    for (int trial = 0; trial < 200 && ok; ++trial) {
        std::vector<int32_t> a(1 + rng.uniform_int(20)), b(1 + rng.uniform_int(20));
        for (auto& t : a) t = static_cast<int32_t>(rng.uniform_int(6));
        for (auto& t : b) t = static_cast<int32_t>(rng.uniform_int(6));
        std::map<std::pair<size_t, size_t>, int64_t> memo;
        if (lcs_length(a, b) != lcs_memo(a, b, memo, 0, 0)) {
            ok = false;
            why = "random pair " + std::to_string(trial);
        }
    }
    report(7, ok, "Rouge-L: hand cases exact, 200 random pairs vs memoized recursion", why);
}

// ---------------------------------------------------------------------------
// Criteria 8-11: end-to-end desk-scale pipeline

struct SeedResult {
    std::vector<StepMetrics> lens_metrics, base_metrics;
    double lens_ce = 0, base_ce = 0;
    double lens_jsd_inter = 0, base_jsd_inter = 0;
    double lens_fkl_inter = 0, base_fkl_inter = 0;
    double lens_fkl_final = 0, base_fkl_final = 0;
    std::vector<ExposureBiasReport> lens_expo, base_expo;
};

struct Pipeline {
    std::vector<StepMetrics> teacher_metrics;
    std::vector<SeedResult> seeds;
    double train_eval_seconds = 0;  // criterion-8 budget scope
};

Pipeline run_pipeline() {
    const auto t0 = Clock::now();
    Pipeline out;

    CorpusSpec corpus_spec;  // documented defaults, seed 1234
    Corpus corpus = generate_corpus(corpus_spec);

    TeacherTrainConfig teacher_cfg;  // desk defaults: 6x64, N=2000, batch 32
    teacher_cfg.seed = 1;
    TrainRun teacher_run = train_teacher(teacher_cfg, corpus);
    out.teacher_metrics = teacher_run.metrics;
    const ModelCheckpoint& teacher = teacher_run.final_model;

    const LayerMapping mapping = uniform_map(select_student_layers(3, 2), 3, 6);
    const LensConfig lens_cfg;  // paper-literal

    std::vector<std::vector<int32_t>> prompts;
    for (const Example& ex : corpus.test) {
        if (static_cast<int>(prompts.size()) >= 8) break;
        if (static_cast<int>(ex.prompt_ids.size()) + 1 + 24 > teacher.config.max_seq_len)
            continue;
        std::vector<int32_t> p = {kBosId};
        p.insert(p.end(), ex.prompt_ids.begin(), ex.prompt_ids.end());
        prompts.push_back(std::move(p));
    }

    for (uint64_t seed : {10ull, 20ull, 30ull}) {
        SeedResult sr;
        DistillConfig lens_run_cfg;  // desk defaults: RKL task, JSD inter, K=2, N=2000
        lens_run_cfg.seed = seed;
        DistillConfig base_cfg = lens_run_cfg;
        base_cfg.lambda = 0.0;  // RKL-only baseline

        TrainRun lens_run = distill(lens_run_cfg, teacher, corpus);
        TrainRun base_run = distill(base_cfg, teacher, corpus);
        sr.lens_metrics = lens_run.metrics;
        sr.base_metrics = base_run.metrics;

        sr.lens_ce = heldout_ce(lens_run.final_model, corpus.test, MaskMode::ResponseOnly);
        sr.base_ce = heldout_ce(base_run.final_model, corpus.test, MaskMode::ResponseOnly);

        auto profile = [&](const ModelCheckpoint& student, DivergenceKind kind) {
            return layer_kl_profile(teacher, student, corpus.test, mapping, kind, lens_cfg,
                                    MaskMode::ResponseOnly);
        };
        auto lens_jsd = profile(lens_run.final_model, DivergenceKind::JSD);
        auto base_jsd = profile(base_run.final_model, DivergenceKind::JSD);
        sr.lens_jsd_inter = lens_jsd.mean_intermediate();
        sr.base_jsd_inter = base_jsd.mean_intermediate();
        auto lens_fkl = profile(lens_run.final_model, DivergenceKind::FKL);
        auto base_fkl = profile(base_run.final_model, DivergenceKind::FKL);
        sr.lens_fkl_inter = lens_fkl.mean_intermediate();
        sr.base_fkl_inter = base_fkl.mean_intermediate();
        sr.lens_fkl_final = lens_fkl.final_divergence();
        sr.base_fkl_final = base_fkl.final_divergence();

        sr.lens_expo = exaccerr(teacher, lens_run.final_model, prompts, {8, 16, 24}, 16, 99);
        sr.base_expo = exaccerr(teacher, base_run.final_model, prompts, {8, 16, 24}, 16, 99);
        out.seeds.push_back(std::move(sr));
    }
    out.train_eval_seconds = seconds_since(t0);
    return out;
}

bool metrics_equal(const std::vector<StepMetrics>& a, const std::vector<StepMetrics>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].step != b[i].step || a[i].l_task != b[i].l_task ||
            a[i].l_inter != b[i].l_inter || a[i].l_total != b[i].l_total || a[i].lr != b[i].lr)
            return false;
    return true;
}

void criteria_end_to_end() {
    std::printf("-- running the desk-scale pipeline (teacher + 3x2 distillation runs) --\n");
    std::fflush(stdout);
    Pipeline p1 = run_pipeline();

    // criterion 8
    {
        int jsd_wins = 0, ce_ok = 0;
        std::ostringstream note;
        for (size_t s = 0; s < p1.seeds.size(); ++s) {
            const SeedResult& sr = p1.seeds[s];
            if (sr.lens_jsd_inter < sr.base_jsd_inter) ++jsd_wins;
            if (sr.lens_ce <= sr.base_ce * 1.05) ++ce_ok;
            note << "seed" << s << ": mapped-JSD " << sr.lens_jsd_inter << " vs "
                 << sr.base_jsd_inter << ", CE " << sr.lens_ce << " vs " << sr.base_ce << "; ";
        }
        const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
        const double budget = 900.0 * std::max(1.0, 4.0 / hw);
        note << "runtime " << p1.train_eval_seconds << " s (budget " << budget << " s on "
             << hw << " hw threads)";
        report(8, jsd_wins == 3 && ce_ok >= 2 && p1.train_eval_seconds <= budget,
               "end-to-end distillation: lower mapped-layer JSD 3/3 seeds, CE within +5% in "
               ">=2/3, within budget",
               note.str());
    }

    // criterion 9
    {
        CorpusSpec corpus_spec;
        Corpus corpus = generate_corpus(corpus_spec);
        auto ident = ModelCheckpoint::init(desk_student_config(), 4242);
        std::vector<std::vector<int32_t>> prompts;
        for (const Example& ex : corpus.test) {
            if (prompts.size() >= 3) break;
            if (static_cast<int>(ex.prompt_ids.size()) + 1 + 24 > ident.config.max_seq_len)
                continue;
            std::vector<int32_t> pr = {kBosId};
            pr.insert(pr.end(), ex.prompt_ids.begin(), ex.prompt_ids.end());
            prompts.push_back(std::move(pr));
        }
        auto self = exaccerr(ident, ident, prompts, {8, 16, 24}, 4, 7);
        bool self_zero = true;
        for (const auto& r : self)
            if (r.exaccerr_pct != 0.0 || r.regret != 0.0) self_zero = false;

        int seed_wins = 0;
        std::ostringstream note;
        note << "identical pair ExAccErr all zero: " << (self_zero ? "yes" : "NO") << "; ";
        for (size_t s = 0; s < p1.seeds.size(); ++s) {
            int horizon_wins = 0;
            for (size_t h = 0; h < 3; ++h)
                if (p1.seeds[s].lens_expo[h].exaccerr_pct <
                    p1.seeds[s].base_expo[h].exaccerr_pct)
                    ++horizon_wins;
            if (horizon_wins >= 2) ++seed_wins;
            note << "seed" << s << " wins " << horizon_wins << "/3 (";
            for (size_t h = 0; h < 3; ++h)
                note << "l=" << p1.seeds[s].lens_expo[h].horizon << ": "
                     << p1.seeds[s].lens_expo[h].exaccerr_pct << "+/-"
                     << p1.seeds[s].lens_expo[h].exaccerr_se << " vs "
                     << p1.seeds[s].base_expo[h].exaccerr_pct << "+/-"
                     << p1.seeds[s].base_expo[h].exaccerr_se << (h + 1 < 3 ? ", " : "");
            note << "); ";
        }
        report(9, self_zero && seed_wins >= 2,
               "exposure bias: exact zero for identical pair; lower ExAccErr in >=2/3 seeds",
               note.str());
    }

    // criterion 10
    {
        bool final_below = true;
        double lens_mean = 0, base_mean = 0;
        std::ostringstream note;
        for (const SeedResult& sr : p1.seeds) {
            if (!(sr.base_fkl_final < sr.base_fkl_inter)) final_below = false;
            lens_mean += sr.lens_fkl_inter / p1.seeds.size();
            base_mean += sr.base_fkl_inter / p1.seeds.size();
        }
        const double reduction = (base_mean - lens_mean) / base_mean;
        note << "baseline final-vs-intermediate KL holds in all seeds: "
             << (final_below ? "yes" : "NO") << "; mean mapped KL " << lens_mean << " vs "
             << base_mean << " (reduction " << reduction * 100.0 << "%)";
        report(10, final_below && reduction >= 0.20,
               "layer profile shape: final < intermediate for the baseline; >=20% mapped-KL "
               "reduction",
               note.str());
    }

    // criterion 11: bitwise reproduction of criteria 8-10 under identical seeds
    {
        std::printf("-- re-running the pipeline for the determinism criterion --\n");
        std::fflush(stdout);
        Pipeline p2 = run_pipeline();
        bool ok = metrics_equal(p1.teacher_metrics, p2.teacher_metrics);
        std::string why = ok ? "" : "teacher metrics differ";
        for (size_t s = 0; ok && s < p1.seeds.size(); ++s) {
            const SeedResult& a = p1.seeds[s];
            const SeedResult& b = p2.seeds[s];
            if (!metrics_equal(a.lens_metrics, b.lens_metrics) ||
                !metrics_equal(a.base_metrics, b.base_metrics)) {
                ok = false;
                why = "distill metrics differ";
            } else if (a.lens_ce != b.lens_ce || a.base_ce != b.base_ce) {
                ok = false;
                why = "held-out CE differs";
            } else if (a.lens_jsd_inter != b.lens_jsd_inter ||
                       a.base_jsd_inter != b.base_jsd_inter ||
                       a.lens_fkl_inter != b.lens_fkl_inter ||
                       a.base_fkl_inter != b.base_fkl_inter ||
                       a.lens_fkl_final != b.lens_fkl_final ||
                       a.base_fkl_final != b.base_fkl_final) {
                ok = false;
                why = "profiles differ";
            } else {
                for (size_t h = 0; h < 3; ++h)
                    if (a.lens_expo[h].exaccerr_pct != b.lens_expo[h].exaccerr_pct ||
                        a.base_expo[h].exaccerr_pct != b.base_expo[h].exaccerr_pct ||
                        a.lens_expo[h].regret != b.lens_expo[h].regret) {
                        ok = false;
                        why = "exposure reports differ";
                    }
            }
        }
        report(11, ok, "determinism: criteria 8-10 metrics reproduce bitwise under equal seeds",
               why);
    }
}

}  // namespace

int main() {
    init_threads_from_env();
    std::printf("dlens acceptance suite (%d worker threads)\n", num_threads());
    criterion_identities();
    criterion_landscape();
    criterion_contracts();
    criterion_gradients();
    criterion_mapping();
    criterion_rouge();
    criteria_end_to_end();
    if (g_failures == 0) {
        std::printf("all criteria passed\n");
        return 0;
    }
    std::printf("%d criteria FAILED\n", g_failures);
    return 1;
}
