#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "dlens/distill.hpp"
#include "dlens/eval_metrics.hpp"
#include "dlens/rng.hpp"

using namespace dlens;

namespace {

std::vector<int32_t> seq(std::initializer_list<int32_t> xs) { return xs; }

// Independent LCS oracle: memoized recursion.
int64_t lcs_oracle(std::span<const int32_t> a, std::span<const int32_t> b,
                   std::map<std::pair<size_t, size_t>, int64_t>& memo, size_t i, size_t j) {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    int64_t result;
    if (a[i] == b[j])
        result = 1 + lcs_oracle(a, b, memo, i + 1, j + 1);
    else
        result = std::max(lcs_oracle(a, b, memo, i + 1, j),
                          lcs_oracle(a, b, memo, i, j + 1));
    memo[key] = result;
    return result;
}

int64_t lcs_oracle(std::span<const int32_t> a, std::span<const int32_t> b) {
    std::map<std::pair<size_t, size_t>, int64_t> memo;
    return lcs_oracle(a, b, memo, 0, 0);
}

Corpus micro_corpus(uint64_t seed = 31) {
    CorpusSpec spec;
    spec.n_train = 192;
    spec.n_val = 48;
    spec.n_test = 48;
    spec.seed = seed;
    return generate_corpus(spec);
}

}  // namespace

TEST_CASE("lcs basics") {
    auto a = seq({5, 6, 7, 8});
    CHECK(lcs_length(a, a) == 4);
    CHECK(lcs_length(a, seq({9, 10, 11})) == 0);
    // classic textbook pair: ABCBDAB vs BDCABA -> 4
    auto x = seq({0, 1, 2, 1, 3, 0, 1});
    auto y = seq({1, 3, 2, 0, 1, 0});
    CHECK(lcs_length(x, y) == 4);
    CHECK(lcs_length(x, y) == lcs_length(y, x));
    CHECK(lcs_length({}, a) == 0);
}

TEST_CASE("lcs against the memoized recursive oracle on 200 random pairs") {
    Rng rng(61);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int32_t> a(1 + rng.uniform_int(24)), b(1 + rng.uniform_int(24));
        for (auto& t : a) t = static_cast<int32_t>(rng.uniform_int(6));
        for (auto& t : b) t = static_cast<int32_t>(rng.uniform_int(6));
        CHECK(lcs_length(a, b) == lcs_oracle(a, b));
        CHECK(lcs_length(a, b) == lcs_length(b, a));
    }
}

TEST_CASE("rouge-l hand cases") {
    auto ref = seq({1, 2, 3});
    RougeLScore perfect = rouge_l(ref, ref);
    CHECK(perfect.f_measure == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);

    RougeLScore zero = rouge_l(seq({7, 8}), ref);
    CHECK(zero.f_measure == 0.0);

    // candidate "the cat sat" vs reference "the cat sat down"
    RougeLScore partial = rouge_l(seq({1, 2, 3}), seq({1, 2, 3, 4}));
    CHECK(partial.precision == 1.0);
    CHECK(partial.recall == 0.75);
    CHECK(partial.f_measure == doctest::Approx(0.857142857).epsilon(1e-9));

    // empty sequences give all zeros
    RougeLScore empty = rouge_l({}, ref);
    CHECK(empty.precision == 0.0);
    CHECK(empty.recall == 0.0);
    CHECK(empty.f_measure == 0.0);
}

TEST_CASE("rouge-l bounds and F <= max(P, R)") {
    Rng rng(62);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<int32_t> a(1 + rng.uniform_int(16)), b(1 + rng.uniform_int(16));
        for (auto& t : a) t = static_cast<int32_t>(rng.uniform_int(5));
        for (auto& t : b) t = static_cast<int32_t>(rng.uniform_int(5));
        RougeLScore s = rouge_l(a, b);
        CHECK(s.precision >= 0.0);
        CHECK(s.precision <= 1.0);
        CHECK(s.recall >= 0.0);
        CHECK(s.recall <= 1.0);
        CHECK(s.f_measure <= std::max(s.precision, s.recall) + 1e-12);
    }
}

TEST_CASE("exposure bias: identical models give exactly zero") {
    auto model = ModelCheckpoint::init(desk_student_config(), 5);
    Corpus corpus = micro_corpus();
    std::vector<std::vector<int32_t>> prompts;
    for (int i = 0; i < 3; ++i) {
        std::vector<int32_t> p = {kBosId};
        p.insert(p.end(), corpus.test[i].prompt_ids.begin(), corpus.test[i].prompt_ids.end());
        if (p.size() > 12) p.resize(12);
        prompts.push_back(std::move(p));
    }
    auto reports = exaccerr(model, model, prompts, {4, 8}, 4, 2025);
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) {
        CHECK(r.regret == 0.0);       // exact, not statistical
        CHECK(r.oracle_rate == 0.0);
        CHECK(r.exaccerr_pct == 0.0); // 0/0 guard
    }
}

TEST_CASE("accumulated regret and oracle error rate basics") {
    auto teacher = ModelCheckpoint::init(desk_teacher_config(), 6);
    auto student = ModelCheckpoint::init(desk_student_config(), 7);
    std::vector<int32_t> prompt = {kBosId, 5, 9, 12};

    // l=1: no generated prefix, so both agree and there is no sampling variance
    const double r1 = accumulated_regret(teacher, student, prompt, 1, 4, 99);
    const double e1 = oracle_error_rate(teacher, student, prompt, 1, 4, 99);
    CHECK(r1 == e1);
    CHECK(r1 >= 0.0);

    // monotone in the horizon: every summand is a forward KL >= 0
    const double r2 = accumulated_regret(teacher, student, prompt, 2, 4, 99);
    const double r4 = accumulated_regret(teacher, student, prompt, 4, 4, 99);
    CHECK(r2 >= r1 - 1e-15);
    CHECK(r4 >= r2 - 1e-15);

    CHECK(oracle_error_rate(teacher, student, prompt, 6, 4, 99) >= 0.0);
    CHECK_THROWS_AS(accumulated_regret(teacher, student, prompt, 0, 4, 1),
                    std::invalid_argument);
    // horizon beyond max_seq_len
    CHECK_THROWS_AS(accumulated_regret(teacher, student, prompt, 60, 2, 1),
                    std::invalid_argument);
}

TEST_CASE("exaccerr determinism and standard errors") {
    auto teacher = ModelCheckpoint::init(desk_teacher_config(), 8);
    auto student = ModelCheckpoint::init(desk_student_config(), 9);
    std::vector<std::vector<int32_t>> prompts = {{kBosId, 4, 7}, {kBosId, 11, 3, 8}};
    auto a = exaccerr(teacher, student, prompts, {3, 6}, 6, 4141);
    auto b = exaccerr(teacher, student, prompts, {3, 6}, 6, 4141);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].regret == b[i].regret);
        CHECK(a[i].exaccerr_pct == b[i].exaccerr_pct);
        CHECK(a[i].regret_se >= 0.0);
        CHECK(a[i].oracle_rate_se >= 0.0);
    }
    // a different seed moves the estimate within a few standard errors
    auto c = exaccerr(teacher, student, prompts, {3, 6}, 6, 5252);
    for (size_t i = 0; i < a.size(); ++i) {
        const double se = std::max(1e-12, std::hypot(a[i].regret_se, c[i].regret_se));
        CHECK(std::abs(a[i].regret - c[i].regret) <= 8.0 * se);
    }
    CHECK_THROWS_AS(exaccerr(teacher, student, {}, {3}, 4, 1), std::invalid_argument);
}

TEST_CASE("exaccerr: scaling the prefix-sample budget moves estimates within MC tolerance") {
    auto teacher = ModelCheckpoint::init(desk_teacher_config(), 14);
    auto student = ModelCheckpoint::init(desk_student_config(), 15);
    std::vector<std::vector<int32_t>> prompts = {{kBosId, 6, 9}, {kBosId, 20, 4, 13}};
    auto small = exaccerr(teacher, student, prompts, {6}, 6, 777);
    auto big = exaccerr(teacher, student, prompts, {6}, 24, 777);
    REQUIRE(small.size() == 1);
    REQUIRE(big.size() == 1);
    const double se = std::hypot(small[0].regret_se, big[0].regret_se);
    CHECK(std::abs(small[0].regret - big[0].regret) <= 6.0 * se + 1e-12);
    const double se_eps = std::hypot(small[0].oracle_rate_se, big[0].oracle_rate_se);
    CHECK(std::abs(small[0].oracle_rate - big[0].oracle_rate) <= 6.0 * se_eps + 1e-12);
    // more samples should not inflate the reported standard error
    CHECK(big[0].regret_se <= small[0].regret_se * 1.5);
}

TEST_CASE("layer profile: identical models give all zeros") {
    auto model = ModelCheckpoint::init(desk_student_config(), 10);
    Corpus corpus = micro_corpus(77);
    std::vector<Example> subset(corpus.test.begin(), corpus.test.begin() + 16);
    LayerMapping ident{{{1, 1}, {2, 2}}};
    auto profile = layer_kl_profile(model, model, subset, ident, DivergenceKind::FKL,
                                    LensConfig{});
    REQUIRE(profile.records.size() == 3);  // two mapped pairs + final
    for (const auto& rec : profile.records) CHECK(rec.mean_divergence == 0.0);
    CHECK(profile.records.back().is_final);
    CHECK(profile.final_divergence() == 0.0);
    CHECK(profile.mean_intermediate() == 0.0);
}

TEST_CASE("layer profile structure for distinct models") {
    auto teacher = ModelCheckpoint::init(desk_teacher_config(), 11);
    auto student = ModelCheckpoint::init(desk_student_config(), 12);
    Corpus corpus = micro_corpus(88);
    std::vector<Example> subset(corpus.test.begin(), corpus.test.begin() + 12);
    auto mapping = uniform_map(select_student_layers(3, 2), 3, 6);
    auto profile = layer_kl_profile(teacher, student, subset, mapping, DivergenceKind::FKL,
                                    LensConfig{});
    REQUIRE(profile.records.size() == mapping.pairs.size() + 1);
    for (size_t i = 0; i < mapping.pairs.size(); ++i) {
        CHECK(profile.records[i].student_layer == mapping.pairs[i].first);
        CHECK(profile.records[i].teacher_layer == mapping.pairs[i].second);
        CHECK(profile.records[i].mean_divergence > 0.0);
        CHECK_FALSE(profile.records[i].is_final);
    }
    // deterministic across calls
    auto again = layer_kl_profile(teacher, student, subset, mapping, DivergenceKind::FKL,
                                  LensConfig{});
    for (size_t i = 0; i < profile.records.size(); ++i)
        CHECK(profile.records[i].mean_divergence == again.records[i].mean_divergence);
    // JSD profile stays within the bound
    auto jsd_profile = layer_kl_profile(teacher, student, subset, mapping,
                                        DivergenceKind::JSD, LensConfig{});
    for (const auto& rec : jsd_profile.records) {
        CHECK(rec.mean_divergence >= 0.0);
        CHECK(rec.mean_divergence <= 0.6931471805599453 + 1e-12);
    }
}
