#include <doctest.h>

#include "oracles.hpp"
#include "vpfnet/losses.hpp"

using namespace vpfnet;

namespace {

Tensor randn(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

} // namespace

TEST_CASE("class weights: numeric anchors of 1/ln(k + p)") {
    // single class, p = 1
    auto w1 = compute_class_weights({100});
    CHECK(w1[0] == doctest::Approx(1.4222778260019158).epsilon(1e-12));
    // zero-count class gets p = 0
    auto w2 = compute_class_weights({100, 0});
    CHECK(w2[1] == doctest::Approx(50.4983497918439).epsilon(1e-12));
    // equal counts -> equal weights
    auto w3 = compute_class_weights({250, 250});
    CHECK(w3[0] == doctest::Approx(w3[1]));
}

TEST_CASE("class weights: all-zero histogram is an error") {
    CHECK_THROWS_AS(compute_class_weights({0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(compute_class_weights({}), std::invalid_argument);
}

TEST_CASE("weighted CE: uniform logits with two classes give ln 2") {
    ag::Var logits(Tensor({1, 2, 4, 4}, 0.7)); // equal per class
    IntTensor labels({1, 4, 4}, 1);
    ag::Var l = ag::weighted_cross_entropy(logits, labels, {1.0, 1.0});
    CHECK(l.item() == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("weighted CE: constant weights cancel against the normalization") {
    Rng rng(1);
    ag::Var logits(randn({2, 3, 5, 5}, rng));
    IntTensor labels({2, 5, 5});
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.index(3));
    double plain =
        ag::weighted_cross_entropy(logits, labels, {1.0, 1.0, 1.0}).item();
    double scaled =
        ag::weighted_cross_entropy(logits, labels, {3.7, 3.7, 3.7}).item();
    CHECK(plain == doctest::Approx(scaled).epsilon(1e-12));
}

TEST_CASE("weighted CE: hand-computed single-pixel case") {
    Tensor lv({1, 3, 1, 1});
    lv[0] = 1.0;
    lv[1] = 0.0;
    lv[2] = 0.0;
    IntTensor labels({1, 1, 1}, 0);
    ag::Var l = ag::weighted_cross_entropy(ag::Var(lv), labels, {2.0, 1.0, 1.0});
    // -log(e / (e + 2)); the label weight cancels with its own normalization
    CHECK(l.item() == doctest::Approx(0.5514447139320511).epsilon(1e-12));
}

TEST_CASE("weighted CE: unit weights equal plain CE to 1e-7") {
    Rng rng(2);
    ag::Var logits(randn({1, 4, 6, 6}, rng, 2.0));
    IntTensor labels({1, 6, 6});
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.index(4));
    double wce = ag::weighted_cross_entropy(logits, labels, {1, 1, 1, 1}).item();

    // independent plain-CE evaluation
    const Tensor& l = logits.value();
    double acc = 0.0;
    for (std::size_t px = 0; px < 36; ++px) {
        double mx = l[px];
        for (std::size_t c = 1; c < 4; ++c) mx = std::max(mx, l[c * 36 + px]);
        double z = 0.0;
        for (std::size_t c = 0; c < 4; ++c) z += std::exp(l[c * 36 + px] - mx);
        acc += mx + std::log(z) - l[static_cast<std::size_t>(labels[px]) * 36 + px];
    }
    CHECK(std::fabs(wce - acc / 36.0) < 1e-7);
}

TEST_CASE("weighted CE: raising the true-class logit strictly decreases the loss") {
    Rng rng(3);
    Tensor lv = randn({1, 3, 2, 2}, rng);
    IntTensor labels({1, 2, 2});
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.index(3));
    std::vector<double> w = {1.0, 2.0, 0.5};
    double before = ag::weighted_cross_entropy(ag::Var(lv), labels, w).item();
    Tensor bumped = lv;
    std::size_t pixel = 2;
    bumped[static_cast<std::size_t>(labels[pixel]) * 4 + pixel] += 0.3;
    double after = ag::weighted_cross_entropy(ag::Var(bumped), labels, w).item();
    CHECK(after < before);
}

TEST_CASE("weighted CE: label out of range is an error") {
    ag::Var logits(Tensor({1, 2, 2, 2}));
    IntTensor labels({1, 2, 2}, 2);
    CHECK_THROWS_WITH_AS(ag::weighted_cross_entropy(logits, labels, {1, 1}).item(),
                         "label out of range", std::invalid_argument);
}

TEST_CASE("total loss: analytic composition ln2 + 0.5 * 0.5") {
    // Uniform logits (C=2, unit weights) give wce = ln 2 exactly; posterior
    // N(0,1) against prior component N(1,1) gives KL = 0.5 per level.
    Rng rng(4);
    GmmPrior prior(1, 1, 2, rng);
    prior.mu.value().fill(1.0);
    prior.log_sigma.value().fill(0.0);

    ag::Var logits(Tensor({1, 2, 4, 4}, 0.0));
    IntTensor labels({1, 4, 4}, 0);

    std::vector<LatentPosterior> posts;
    std::vector<IntTensor> cats;
    for (int lvl = 0; lvl < 5; ++lvl) {
        LatentPosterior p;
        p.mean = ag::Var(Tensor({1, 2, 2, 2}, 0.0));
        p.log_variance = ag::Var(Tensor({1, 2, 2, 2}, 0.0));
        posts.push_back(p);
        cats.emplace_back(std::vector<std::size_t>{1, 2, 2}, 0);
    }
    TotalLoss tl = total_loss(logits, labels, {1.0, 1.0}, posts, cats, {0}, prior, 0.5);
    CHECK(tl.breakdown.wce == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    CHECK(tl.breakdown.kl_mean == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tl.breakdown.total == doctest::Approx(0.9431471805599453).epsilon(1e-9));
    CHECK(std::fabs(tl.breakdown.total -
                    (tl.breakdown.wce + tl.breakdown.beta * tl.breakdown.kl_mean)) <
          1e-6);
}

TEST_CASE("total loss: beta = 0 reduces to the weighted CE but still logs KL") {
    Rng rng(5);
    GmmPrior prior(2, 1, 2, rng);
    ag::Var logits(randn({1, 2, 4, 4}, rng));
    IntTensor labels({1, 4, 4});
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.index(2));

    std::vector<LatentPosterior> posts;
    std::vector<IntTensor> cats;
    for (int lvl = 0; lvl < 5; ++lvl) {
        LatentPosterior p;
        p.mean = ag::Var(randn({1, 2, 2, 2}, rng));
        p.log_variance = ag::Var(randn({1, 2, 2, 2}, rng, 0.3));
        posts.push_back(p);
        IntTensor c({1, 2, 2});
        for (std::size_t i = 0; i < c.size(); ++i)
            c[i] = static_cast<std::int32_t>(rng.index(2));
        cats.push_back(c);
    }
    double wce = ag::weighted_cross_entropy(logits, labels, {1.0, 1.0}).item();
    TotalLoss tl = total_loss(logits, labels, {1.0, 1.0}, posts, cats, {0}, prior, 0.0);
    CHECK(tl.breakdown.total == doctest::Approx(wce).epsilon(1e-12));
    CHECK(tl.breakdown.kl_mean > 0.0); // logged even though unconstrained
}

TEST_CASE("total loss: posterior equal to the prior component zeroes the KL") {
    Rng rng(6);
    GmmPrior prior(1, 1, 2, rng);
    ag::Var logits(randn({1, 2, 4, 4}, rng));
    IntTensor labels({1, 4, 4}, 0);
    std::vector<LatentPosterior> posts;
    std::vector<IntTensor> cats;
    for (int lvl = 0; lvl < 5; ++lvl) {
        Tensor m({1, 2, 2, 2}), lv({1, 2, 2, 2});
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t px = 0; px < 4; ++px) {
                m[k * 4 + px] = prior.mu.value()[k];
                lv[k * 4 + px] = prior.log_sigma.value()[k];
            }
        posts.push_back({ag::Var(m), ag::Var(lv)});
        cats.emplace_back(std::vector<std::size_t>{1, 2, 2}, 0);
    }
    TotalLoss tl = total_loss(logits, labels, {1.0, 1.0}, posts, cats, {0}, prior, 0.5);
    CHECK(std::fabs(tl.breakdown.kl_mean) < 1e-12);
    CHECK(tl.breakdown.total == doctest::Approx(tl.breakdown.wce).epsilon(1e-12));
}

TEST_CASE("total loss: missing level posterior is an error") {
    Rng rng(7);
    GmmPrior prior(2, 1, 2, rng);
    ag::Var logits(Tensor({1, 2, 2, 2}));
    IntTensor labels({1, 2, 2}, 0);
    std::vector<LatentPosterior> posts(3); // undefined posteriors
    std::vector<IntTensor> cats(3, IntTensor({1, 1, 1}, 0));
    CHECK_THROWS_AS(
        total_loss(logits, labels, {1.0, 1.0}, posts, cats, {0}, prior, 0.5),
        std::invalid_argument);
    CHECK_THROWS_AS(total_loss(logits, labels, {1.0, 1.0}, {}, {}, {0}, prior, 0.5),
                    std::invalid_argument);
}

TEST_CASE("batch order permutation leaves the loss unchanged") {
    Rng rng(8);
    Tensor logits = randn({3, 2, 4, 4}, rng);
    IntTensor labels({3, 4, 4});
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.index(2));
    std::vector<double> w = {1.3, 0.6};
    double base = ag::weighted_cross_entropy(ag::Var(logits), labels, w).item();

    // swap images 0 and 2
    Tensor lp(logits.shape());
    IntTensor yp(labels.shape());
    std::size_t img_f = 2 * 16, img_l = 16;
    int order[3] = {2, 1, 0};
    for (std::size_t b = 0; b < 3; ++b) {
        std::copy_n(logits.data() + static_cast<std::size_t>(order[b]) * img_f, img_f,
                    lp.data() + b * img_f);
        std::copy_n(labels.data() + static_cast<std::size_t>(order[b]) * img_l, img_l,
                    yp.data() + b * img_l);
    }
    double permuted = ag::weighted_cross_entropy(ag::Var(lp), yp, w).item();
    CHECK(base == doctest::Approx(permuted).epsilon(1e-12));
}

TEST_CASE("total loss gradients match finite differences through both terms") {
    Rng rng(9);
    GmmPrior prior(2, 2, 2, rng);
    ag::Var logits(randn({2, 3, 4, 4}, rng));
    IntTensor labels({2, 4, 4});
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.index(3));
    std::vector<double> w = {1.5, 0.8, 1.1};

    std::vector<LatentPosterior> posts;
    std::vector<IntTensor> cats;
    for (int lvl = 0; lvl < 5; ++lvl) {
        posts.push_back({ag::Var(randn({2, 2, 2, 2}, rng)),
                         ag::Var(randn({2, 2, 2, 2}, rng, 0.4))});
        IntTensor c({2, 2, 2});
        for (std::size_t i = 0; i < c.size(); ++i)
            c[i] = static_cast<std::int32_t>(rng.index(2));
        cats.push_back(c);
    }
    std::vector<int> illum = {0, 1};
    auto build = [&] {
        return total_loss(logits, labels, w, posts, cats, illum, prior, 0.5).value;
    };
    std::vector<ag::Var> checked = {logits, posts[0].mean, posts[3].log_variance,
                                    prior.mu, prior.log_sigma};
    for (ag::Var p : checked) {
        p.node_->requires_grad = true;
        p.zero_grad();
        ag::backward(build());
        Tensor analytic = p.grad();
        Rng pick(10);
        auto loss_fn = [&] { return build().item(); };
        auto r = oracles::check_gradients(loss_fn, p.value(), analytic, 1e-3, 30, pick);
        CHECK(r.checked > 0);
        CHECK(r.max_rel_err < 1e-4);
    }
}
