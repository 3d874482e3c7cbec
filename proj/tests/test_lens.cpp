#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dlens/errors.hpp"
#include "dlens/lens.hpp"
#include "dlens/model.hpp"
#include "dlens/rng.hpp"

using namespace dlens;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    std::vector<double> d(n);
    for (auto& x : d) x = rng.normal() * scale;
    return Tensor::from_data(std::move(shape), std::move(d));
}

int argmax(std::span<const double> xs) {
    int best = 0;
    for (size_t i = 1; i < xs.size(); ++i)
        if (xs[i] > xs[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace

TEST_CASE("zero hidden state gives the uniform distribution") {
    Rng rng(1);
    const int v = 17, d = 6;
    Tensor w_u = random_tensor({v, d}, rng);
    Tensor h = Tensor::zeros({d});
    Tensor dist = logit_lens(h, w_u, LensConfig{});
    for (int i = 0; i < v; ++i)
        CHECK(dist.data()[i] == doctest::Approx(1.0 / v).epsilon(1e-12));
}

TEST_CASE("closed-form lens output") {
    // V=3, d=2, W_U rows (1,0),(0,1),(0,0); h=(ln2, 0) -> softmax(ln2,0,0)
    Tensor w_u = Tensor::from_data({3, 2}, {1, 0, 0, 1, 0, 0});
    Tensor h = Tensor::from_data({2}, {std::log(2.0), 0.0});
    Tensor dist = logit_lens(h, w_u, LensConfig{});
    CHECK(dist.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(dist.data()[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(dist.data()[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("every emitted row is a valid distribution") {
    Rng rng(2);
    Tensor w_u = random_tensor({13, 5}, rng);
    Tensor h = random_tensor({4, 7, 5}, rng, 2.0);
    Tensor dist = logit_lens(h, w_u, LensConfig{});
    const int64_t rows = 4 * 7;
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < 13; ++j) {
            const double p = dist.data()[r * 13 + j];
            CHECK(p >= 0.0);
            s += p;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("lens is scale-aware but argmax-stable under positive scaling") {
    Rng rng(3);
    const int v = 9, d = 4;
    Tensor w_u = random_tensor({v, d}, rng);
    Tensor h = random_tensor({d}, rng);
    Tensor base = logit_lens(h, w_u, LensConfig{});
    std::vector<double> doubled(h.data().begin(), h.data().end());
    for (auto& x : doubled) x *= 2.0;
    Tensor scaled = logit_lens(Tensor::from_data({d}, doubled), w_u, LensConfig{});
    // not scale-invariant in general
    double diff = 0.0;
    for (int i = 0; i < v; ++i) diff += std::abs(base.data()[i] - scaled.data()[i]);
    CHECK(diff > 1e-6);
    // argmax(softmax(alpha W_U h)) == argmax(W_U h) for alpha > 0
    Tensor raw_logits = matmul_nt(h, w_u);
    for (double alpha : {0.1, 0.5, 1.0, 3.0, 17.0}) {
        std::vector<double> scaled_h(h.data().begin(), h.data().end());
        for (auto& x : scaled_h) x *= alpha;
        Tensor dist = logit_lens(Tensor::from_data({d}, scaled_h), w_u, LensConfig{});
        CHECK(argmax(dist.data()) == argmax(raw_logits.data()));
    }
}

TEST_CASE("lens_all_layers ordering and bounds") {
    ModelConfig cfg{.n_layers = 12, .d_model = 8, .n_heads = 2, .vocab_size = 10,
                    .max_seq_len = 8, .tie_unembedding = false};
    auto ckpt = ModelCheckpoint::init(cfg, 5);
    TokenBatch batch{{1, 3, 4}, 1, 3};
    auto trace = forward_with_states(ckpt, batch);

    // empty id list -> empty result
    CHECK(lens_all_layers(trace, ckpt, {}, LensConfig{}).empty());

    // the five-layer selection on a 12-layer model returns 5 distributions
    auto dists = lens_all_layers(trace, ckpt, {2, 4, 6, 8, 10}, LensConfig{});
    CHECK(dists.size() == 5);
    for (const auto& d : dists) CHECK(d.shape() == Shape{1, 3, 10});

    // order preserved: reversed ids give reversed outputs
    auto rev = lens_all_layers(trace, ckpt, {10, 8, 6, 4, 2}, LensConfig{});
    for (int i = 0; i < 5; ++i)
        CHECK(rev[i].data()[0] == dists[4 - i].data()[0]);

    // layer id out of range
    CHECK_THROWS_AS(lens_all_layers(trace, ckpt, {0}, LensConfig{}), std::invalid_argument);
    CHECK_THROWS_AS(lens_all_layers(trace, ckpt, {13}, LensConfig{}), std::invalid_argument);

    // final layer with final-norm matches the model distribution
    LensConfig final_cfg;
    final_cfg.apply_final_norm = true;
    auto final_dist = lens_all_layers(trace, ckpt, {12}, final_cfg);
    Tensor model_dist = softmax(trace.logits, -1);
    for (int64_t i = 0; i < model_dist.numel(); ++i)
        CHECK(std::abs(final_dist[0].data()[i] - model_dist.data()[i]) <= 1e-10);
}

TEST_CASE("lens config validation") {
    LensConfig cfg;
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    Rng rng(6);
    Tensor w_u = random_tensor({5, 3}, rng);
    Tensor h = random_tensor({3}, rng);
    CHECK_THROWS_AS(logit_lens(h, w_u, cfg), ConfigError);
    // final norm requested without norm parameters
    LensConfig with_norm;
    with_norm.apply_final_norm = true;
    CHECK_THROWS_AS(logit_lens(h, w_u, with_norm), std::invalid_argument);
    // shape mismatch
    CHECK_THROWS_AS(logit_lens(random_tensor({4}, rng), w_u, LensConfig{}),
                    std::invalid_argument);
}

TEST_CASE("temperature reshapes the distribution but not the argmax") {
    Rng rng(7);
    Tensor w_u = random_tensor({8, 4}, rng);
    Tensor h = random_tensor({4}, rng);
    LensConfig hot;
    hot.temperature = 4.0;
    Tensor base = logit_lens(h, w_u, LensConfig{});
    Tensor smooth = logit_lens(h, w_u, hot);
    CHECK(argmax(base.data()) == argmax(smooth.data()));
    // higher temperature flattens: max prob decreases
    CHECK(smooth.data()[argmax(smooth.data())] < base.data()[argmax(base.data())]);
}
