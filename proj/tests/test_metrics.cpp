#include <doctest.h>

#include "oracles.hpp"
#include "vpfnet/metrics.hpp"
#include "vpfnet/rng.hpp"

using namespace vpfnet;

namespace {

IntTensor random_map(std::size_t h, std::size_t w, int classes, Rng& rng) {
    IntTensor m({h, w});
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(classes)));
    return m;
}

} // namespace

TEST_CASE("accumulate: perfect prediction fills the diagonal only") {
    Rng rng(1);
    IntTensor gt = random_map(8, 8, 3, rng);
    ConfusionMatrix cm(3);
    cm.accumulate(gt, gt);
    for (int g = 0; g < 3; ++g)
        for (int p = 0; p < 3; ++p)
            if (g != p) CHECK(cm.at(g, p) == 0);
    CHECK(cm.total() == 64);
    auto s = cm.summarize();
    CHECK(s.macc == doctest::Approx(1.0));
    CHECK(s.miou == doctest::Approx(1.0));
}

TEST_CASE("accumulate: empty maps leave the matrix unchanged") {
    ConfusionMatrix cm(3);
    IntTensor empty({0, 0});
    cm.accumulate(empty, empty);
    CHECK(cm.total() == 0);
}

TEST_CASE("accumulate: hand-counted 2x2 case") {
    IntTensor pred = IntTensor::from({1, 4}, {0, 1, 1, 0});
    IntTensor gt = IntTensor::from({1, 4}, {0, 1, 0, 0});
    ConfusionMatrix cm(2);
    cm.accumulate(pred, gt);
    CHECK(cm.at(0, 0) == 2);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 1);

    auto s = cm.summarize();
    CHECK(s.iou[0] == doctest::Approx(2.0 / 3.0));
    CHECK(s.iou[1] == doctest::Approx(0.5));
    CHECK(s.miou == doctest::Approx(7.0 / 12.0));
    CHECK(s.acc[0] == doctest::Approx(2.0 / 3.0));
    CHECK(s.acc[1] == doctest::Approx(1.0));
    CHECK(s.macc == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("accumulate rejects shape and range violations") {
    ConfusionMatrix cm(2);
    IntTensor a({2, 2}, 0), b({2, 3}, 0);
    CHECK_THROWS_AS(cm.accumulate(a, b), std::invalid_argument);
    IntTensor bad({2, 2}, 5);
    CHECK_THROWS_WITH_AS(cm.accumulate(bad, a), "label out of range",
                         std::invalid_argument);
}

TEST_CASE("metrics equal the brute-force oracle exactly on 200 random cases") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        int classes = 2 + static_cast<int>(rng.index(5));
        std::size_t n_maps = 1 + rng.index(3);
        std::vector<IntTensor> preds, gts;
        ConfusionMatrix cm(classes);
        for (std::size_t m = 0; m < n_maps; ++m) {
            std::size_t h = 1 + rng.index(6), w = 1 + rng.index(6);
            preds.push_back(random_map(h, w, classes, rng));
            gts.push_back(random_map(h, w, classes, rng));
            cm.accumulate(preds.back(), gts.back());
        }
        bool excl = rng.bernoulli(0.5);
        auto s = cm.summarize(excl);
        auto ref = oracles::brute_force_metrics(preds, gts, classes, excl);
        CHECK(s.macc == doctest::Approx(ref.macc).epsilon(1e-14));
        CHECK(s.miou == doctest::Approx(ref.miou).epsilon(1e-14));
        for (int c = 0; c < classes; ++c) {
            CHECK(s.acc[c] == doctest::Approx(ref.acc[c]).epsilon(1e-14));
            CHECK(s.iou[c] == doctest::Approx(ref.iou[c]).epsilon(1e-14));
        }
    }
}

TEST_CASE("per-class IoU never exceeds per-class Acc") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        ConfusionMatrix cm(4);
        cm.accumulate(random_map(10, 10, 4, rng), random_map(10, 10, 4, rng));
        auto s = cm.summarize();
        for (int c = 0; c < 4; ++c) CHECK(s.iou[c] <= s.acc[c] + 1e-15);
        CHECK(s.macc >= 0.0);
        CHECK(s.macc <= 1.0);
        CHECK(s.miou >= 0.0);
        CHECK(s.miou <= 1.0);
    }
}

TEST_CASE("joint relabeling leaves the means unchanged") {
    Rng rng(9);
    IntTensor pred = random_map(12, 12, 3, rng);
    IntTensor gt = random_map(12, 12, 3, rng);
    ConfusionMatrix cm(3);
    cm.accumulate(pred, gt);
    auto s = cm.summarize();

    int perm[3] = {1, 2, 0};
    IntTensor pred_p(pred.shape()), gt_p(gt.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred_p[i] = perm[pred[i]];
        gt_p[i] = perm[gt[i]];
    }
    ConfusionMatrix cm_p(3);
    cm_p.accumulate(pred_p, gt_p);
    auto sp = cm_p.summarize();
    CHECK(s.macc == doctest::Approx(sp.macc).epsilon(1e-14));
    CHECK(s.miou == doctest::Approx(sp.miou).epsilon(1e-14));
}

TEST_CASE("accumulation is order-independent and merge-associative") {
    Rng rng(10);
    std::vector<IntTensor> preds, gts;
    for (int i = 0; i < 4; ++i) {
        preds.push_back(random_map(6, 6, 3, rng));
        gts.push_back(random_map(6, 6, 3, rng));
    }
    ConfusionMatrix forward_order(3), reverse_order(3), merged(3);
    for (int i = 0; i < 4; ++i) forward_order.accumulate(preds[i], gts[i]);
    for (int i = 3; i >= 0; --i) reverse_order.accumulate(preds[i], gts[i]);
    for (int i = 0; i < 4; ++i) {
        ConfusionMatrix part(3);
        part.accumulate(preds[i], gts[i]);
        merged.merge(part);
    }
    for (int g = 0; g < 3; ++g)
        for (int p = 0; p < 3; ++p) {
            CHECK(forward_order.at(g, p) == reverse_order.at(g, p));
            CHECK(forward_order.at(g, p) == merged.at(g, p));
        }

    // concatenated maps vs per-image accumulation
    std::size_t total = 4 * 36;
    IntTensor cat_pred({total}), cat_gt({total});
    for (int i = 0; i < 4; ++i) {
        std::copy_n(preds[i].data(), 36, cat_pred.data() + i * 36);
        std::copy_n(gts[i].data(), 36, cat_gt.data() + i * 36);
    }
    ConfusionMatrix concat(3);
    concat.accumulate(cat_pred, cat_gt);
    auto a = concat.summarize();
    auto b = merged.summarize();
    CHECK(a.macc == doctest::Approx(b.macc).epsilon(1e-14));
    CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-14));
}

TEST_CASE("classes absent from both gt and pred are excluded from the means") {
    ConfusionMatrix cm(4);
    IntTensor pred = IntTensor::from({1, 4}, {0, 1, 0, 1});
    IntTensor gt = IntTensor::from({1, 4}, {0, 1, 1, 0});
    cm.accumulate(pred, gt); // classes 2 and 3 never appear
    auto s = cm.summarize();
    CHECK_FALSE(s.in_mean[2]);
    CHECK_FALSE(s.in_mean[3]);
    CHECK(s.miou == doctest::Approx((1.0 / 3.0 + 1.0 / 3.0) / 2.0));
}

TEST_CASE("exclude_background drops class 0 from the means only") {
    ConfusionMatrix cm(3);
    IntTensor pred = IntTensor::from({1, 6}, {0, 0, 1, 1, 2, 2});
    IntTensor gt = IntTensor::from({1, 6}, {0, 1, 1, 2, 2, 0});
    cm.accumulate(pred, gt);
    auto incl = cm.summarize(false);
    auto excl = cm.summarize(true);
    CHECK(incl.in_mean[0]);
    CHECK_FALSE(excl.in_mean[0]);
    CHECK(excl.acc[0] == incl.acc[0]); // per-class values still reported
    CHECK(excl.miou == doctest::Approx((incl.iou[1] + incl.iou[2]) / 2.0));
}
