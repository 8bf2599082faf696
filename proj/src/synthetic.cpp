#include "vpfnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "vpfnet/image.hpp"
#include "vpfnet/rng.hpp"

namespace fs = std::filesystem;

namespace vpfnet {

namespace {

struct Canvas {
    Tensor rgb;     // [3,H,W]
    Tensor thermal; // [1,H,W]
    IntTensor label;
};

// Strong, well-separated RGB color per even class (golden-angle hues).
void class_color(int cls, double& r, double& g, double& b) {
    double hue = std::fmod(0.137 + 0.381966 * static_cast<double>(cls), 1.0) * 6.0;
    int i = static_cast<int>(hue);
    double f = hue - i;
    switch (i % 6) {
    case 0: r = 1.0; g = f; b = 0.1; break;
    case 1: r = 1.0 - f; g = 1.0; b = 0.1; break;
    case 2: r = 0.1; g = 1.0; b = f; break;
    case 3: r = 0.1; g = 1.0 - f; b = 1.0; break;
    case 4: r = f; g = 0.1; b = 1.0; break;
    default: r = 1.0; g = 0.1; b = 1.0 - f; break;
    }
}

double thermal_intensity(int cls, int num_classes) {
    // Spread odd classes over [0.55, 0.95], away from the 0.25 background.
    int odd_rank = (cls - 1) / 2;
    int odd_total = std::max(1, (num_classes - 1 + 1) / 2);
    return 0.55 + 0.4 * (static_cast<double>(odd_rank) + 0.5) /
                      static_cast<double>(odd_total);
}

Canvas render(const SyntheticSpec& spec, Rng& rng, int& illumination) {
    std::size_t h = spec.height, w = spec.width;
    Canvas cv{Tensor({3, h, w}), Tensor({1, h, w}), IntTensor({h, w})};

    // Low-frequency RGB background: bilinear blend of four corner colors.
    double corners[4][3];
    for (auto& c : corners)
        for (double& v : c) v = rng.uniform(0.25, 0.7);
    for (std::size_t y = 0; y < h; ++y) {
        double fy = static_cast<double>(y) / static_cast<double>(h - 1);
        for (std::size_t x = 0; x < w; ++x) {
            double fx = static_cast<double>(x) / static_cast<double>(w - 1);
            for (std::size_t c = 0; c < 3; ++c)
                cv.rgb.at3(c, y, x) = (1 - fy) * ((1 - fx) * corners[0][c] + fx * corners[1][c]) +
                                      fy * ((1 - fx) * corners[2][c] + fx * corners[3][c]);
        }
    }
    double thermal_bg = rng.uniform(0.2, 0.3);
    for (std::size_t i = 0; i < cv.thermal.size(); ++i) cv.thermal[i] = thermal_bg;

    int shapes = 2 + static_cast<int>(rng.index(3)); // 2..4 shapes
    for (int s = 0; s < shapes; ++s) {
        int cls = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(spec.num_classes - 1)));
        bool disc = rng.bernoulli(0.5);
        double radius = rng.uniform(4.0, 9.0);
        double cy = rng.uniform(radius + 1, static_cast<double>(h) - radius - 1);
        double cx = rng.uniform(radius + 1, static_cast<double>(w) - radius - 1);
        double cr = 0, cg = 0, cb = 0;
        if (cls % 2 == 0) class_color(cls, cr, cg, cb);
        double ti = thermal_intensity(cls, spec.num_classes);

        std::size_t y0 = static_cast<std::size_t>(std::max(0.0, cy - radius));
        std::size_t y1 = std::min(h - 1, static_cast<std::size_t>(cy + radius));
        std::size_t x0 = static_cast<std::size_t>(std::max(0.0, cx - radius));
        std::size_t x1 = std::min(w - 1, static_cast<std::size_t>(cx + radius));
        for (std::size_t y = y0; y <= y1; ++y)
            for (std::size_t x = x0; x <= x1; ++x) {
                double dy = static_cast<double>(y) - cy;
                double dx = static_cast<double>(x) - cx;
                bool inside = disc ? (dy * dy + dx * dx <= radius * radius)
                                   : (std::fabs(dy) <= radius * 0.8 &&
                                      std::fabs(dx) <= radius);
                if (!inside) continue;
                cv.label.at2(y, x) = cls;
                if (cls % 2 == 0) {
                    cv.rgb.at3(0, y, x) = cr;
                    cv.rgb.at3(1, y, x) = cg;
                    cv.rgb.at3(2, y, x) = cb;
                    // thermal untouched: even classes are invisible there
                } else {
                    cv.thermal.at3(0, y, x) = ti;
                    // rgb untouched: odd classes hide in the background texture
                }
            }
    }

    illumination = rng.bernoulli(0.5) ? 1 : 0;
    if (illumination == 1) {
        for (std::size_t i = 0; i < cv.rgb.size(); ++i) {
            double v = 0.5 + (cv.rgb[i] - 0.5) / 5.0 + 0.03 * rng.normal();
            cv.rgb[i] = std::clamp(v, 0.0, 1.0);
        }
    } else {
        for (std::size_t i = 0; i < cv.rgb.size(); ++i)
            cv.rgb[i] = std::clamp(cv.rgb[i] + 0.01 * rng.normal(), 0.0, 1.0);
    }
    for (std::size_t i = 0; i < cv.thermal.size(); ++i)
        cv.thermal[i] = std::clamp(cv.thermal[i] + 0.01 * rng.normal(), 0.0, 1.0);
    return cv;
}

} // namespace

SyntheticReport generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 3)
        throw std::invalid_argument("generate_synthetic: need at least 3 classes");
    if (spec.height < 32 || spec.width < 32)
        throw std::invalid_argument("generate_synthetic: image size too small");

    fs::create_directories(spec.root + "/rgb");
    fs::create_directories(spec.root + "/thermal");
    fs::create_directories(spec.root + "/labels");

    SyntheticReport report;
    report.label_histogram.assign(static_cast<std::size_t>(spec.num_classes), 0);

    std::ofstream train_m(spec.root + "/train.txt");
    std::ofstream val_m(spec.root + "/val.txt");
    std::ofstream test_m(spec.root + "/test.txt");
    std::ofstream illum_m(spec.root + "/illumination.txt");
    if (!train_m || !val_m || !test_m || !illum_m)
        throw std::runtime_error("cannot write manifests under " + spec.root);

    std::size_t total = spec.train + spec.val + spec.test;
    Rng rng(spec.seed);
    char name[32];
    for (std::size_t i = 0; i < total; ++i) {
        std::snprintf(name, sizeof(name), "syn_%06zu", i);
        std::string id(name);
        Rng sample_rng(mix_seed(spec.seed, i));
        int illumination = 0;
        Canvas cv = render(spec, sample_rng, illumination);

        write_png(spec.root + "/rgb/" + id + ".png", to_image(cv.rgb));
        write_png(spec.root + "/thermal/" + id + ".png", to_image(cv.thermal));
        write_png(spec.root + "/labels/" + id + ".png", label_map_to_image(cv.label));

        for (std::size_t p = 0; p < cv.label.size(); ++p)
            ++report.label_histogram[static_cast<std::size_t>(cv.label[p])];
        if (illumination == 1) ++report.night;
        else ++report.day;

        std::ofstream& m = i < spec.train ? train_m
                           : i < spec.train + spec.val ? val_m
                                                       : test_m;
        m << id << "\n";
        illum_m << id << " " << (illumination == 1 ? "night" : "day") << "\n";
    }
    report.images = total;
    (void)rng;
    return report;
}

} // namespace vpfnet
