#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vpfnet/checkpoint.hpp"
#include "vpfnet/engine.hpp"
#include "vpfnet/image.hpp"

using namespace vpfnet;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
    std::string p = (fs::temp_directory_path() / ("vpfnet_eng_" + tag)).string();
    fs::remove_all(p);
    return p;
}

// 32x32, 3 classes, small model: seconds-scale smoke configuration.
Config smoke_config(const std::string& data_root, const std::string& run_dir) {
    Config cfg;
    cfg.set("data.root", data_root);
    cfg.set("data.classes", "3");
    cfg.set("run.dir", run_dir);
    cfg.set("gen.height", "32");
    cfg.set("gen.width", "32");
    cfg.set("gen.classes", "3");
    cfg.set("gen.train", "24");
    cfg.set("gen.val", "4");
    cfg.set("gen.test", "4");
    cfg.set("gen.seed", "3");
    cfg.set("model.channels", "4,4,8,8,8");
    cfg.set("model.s", "3");
    cfg.set("model.r", "2");
    cfg.set("model.d", "2");
    cfg.set("train.epochs", "2");
    cfg.set("train.batch", "3");
    cfg.set("train.lr", "0.002");
    cfg.set("train.seed", "5");
    return cfg;
}

std::string make_dataset(const std::string& tag, Config& cfg) {
    std::string root = temp_dir("data_" + tag);
    cfg.set("data.root", root);
    engine::run_generate(cfg);
    return root;
}

} // namespace

TEST_CASE("generate: refuses to overwrite a non-empty target without force") {
    Config cfg = smoke_config(temp_dir("gen_refuse"), temp_dir("run_refuse"));
    engine::run_generate(cfg);
    CHECK_THROWS_AS(engine::run_generate(cfg), std::runtime_error);
    cfg.set("run.force", "1");
    engine::run_generate(cfg); // allowed now
    CHECK(fs::exists(cfg.get("data.root", "") + "/histogram.txt"));
}

TEST_CASE("train: loss decreases over the first five epochs on synthetic data") {
    Config cfg = smoke_config("", temp_dir("run_decrease"));
    make_dataset("decrease", cfg);
    cfg.set("train.epochs", "5");
    auto result = engine::run_train(cfg);
    REQUIRE(result.epoch_total.size() == 5);
    for (std::size_t e = 1; e < 5; ++e)
        CHECK(result.epoch_total[e] < result.epoch_total[e - 1]);
    CHECK(fs::exists(result.last_checkpoint));
    CHECK(fs::exists(cfg.get("run.dir", "") + "/config.txt"));
    CHECK(fs::exists(cfg.get("run.dir", "") + "/class_weights.txt"));
}

TEST_CASE("train: identical config and seed reproduce the checkpoint bitwise") {
    Config cfg = smoke_config("", temp_dir("run_det_a"));
    make_dataset("det", cfg);
    auto r1 = engine::run_train(cfg);
    Config cfg2 = cfg;
    cfg2.set("run.dir", temp_dir("run_det_b"));
    auto r2 = engine::run_train(cfg2);

    Checkpoint a = load_checkpoint(r1.last_checkpoint);
    Checkpoint b = load_checkpoint(r2.last_checkpoint);
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (const auto& [name, t] : a.tensors) {
        REQUIRE(b.tensors.count(name) == 1);
        const Tensor& u = b.tensors.at(name);
        REQUIRE(u.same_shape(t));
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i] != u[i]) {
                FAIL("tensor ", name, " differs at ", i);
                break;
            }
        }
    }
    CHECK(a.step == b.step);
}

TEST_CASE("train: resume continues the optimizer step counter") {
    Config cfg = smoke_config("", temp_dir("run_resume"));
    make_dataset("resume", cfg);
    cfg.set("train.epochs", "2");
    auto first = engine::run_train(cfg);
    Checkpoint after2 = load_checkpoint(first.last_checkpoint);

    cfg.set("train.epochs", "4");
    cfg.set("train.resume", "1");
    auto second = engine::run_train(cfg);
    Checkpoint after4 = load_checkpoint(second.last_checkpoint);
    CHECK(second.epochs_done == 4);
    CHECK(after4.step == 2 * after2.step);
    CHECK(after4.meta.at("epochs_done") == "4");
}

TEST_CASE("train: beta = 0 still logs the KL term") {
    Config cfg = smoke_config("", temp_dir("run_beta0"));
    make_dataset("beta0", cfg);
    cfg.set("loss.beta", "0");
    cfg.set("train.epochs", "1");
    auto result = engine::run_train(cfg);
    CHECK(std::isfinite(result.epoch_kl.back()));
    CHECK(result.epoch_kl.back() != 0.0);

    std::ifstream log(cfg.get("run.dir", "") + "/train_log.txt");
    std::string contents((std::istreambuf_iterator<char>(log)), {});
    CHECK(contents.find("kl_mean=") != std::string::npos);
}

TEST_CASE("train: non-finite loss aborts with a latent diagnostic dump") {
    Config cfg = smoke_config("", temp_dir("run_nan"));
    make_dataset("nan", cfg);

    // Build a sabotaged init checkpoint: a huge logvar bias overflows
    // exp(logvar) inside the KL.
    std::string run_a = temp_dir("run_nan_pre");
    Config pre = cfg;
    pre.set("run.dir", run_a);
    pre.set("train.epochs", "1");
    auto r = engine::run_train(pre);
    Checkpoint ckpt = load_checkpoint(r.last_checkpoint);
    ckpt.tensors.at("vffm0.logvar_head.bias").fill(1000.0);
    std::string bad = run_a + "/sabotaged.ckpt";
    save_checkpoint(bad, ckpt);

    std::string run_b = temp_dir("run_nan_go");
    cfg.set("run.dir", run_b);
    cfg.set("train.init_from", bad);
    cfg.set("train.epochs", "1");
    try {
        engine::run_train(cfg);
        FAIL("expected NumericError");
    } catch (const engine::NumericError& e) {
        CHECK(std::string(e.what()).find("latent statistics") != std::string::npos);
    }
    CHECK(fs::exists(run_b + "/FAILED"));
}

TEST_CASE("eval: writes metrics files and day/night pixels partition the total") {
    Config cfg = smoke_config("", temp_dir("run_eval"));
    make_dataset("eval", cfg);
    engine::run_train(cfg);
    auto ev = engine::run_eval(cfg);
    CHECK(fs::exists(ev.metrics_txt));
    CHECK(fs::exists(ev.metrics_csv));
    CHECK(ev.day_pixels + ev.night_pixels == 4u * 32 * 32);
    CHECK(ev.overall.miou >= 0.0);
    CHECK(ev.overall.miou <= 1.0);

    std::ifstream txt(ev.metrics_txt);
    std::string contents((std::istreambuf_iterator<char>(txt)), {});
    CHECK(contents.find("miou=") != std::string::npos);
    CHECK(contents.find("macc=") != std::string::npos);
}

TEST_CASE("eval: missing-modality protocol writes suffixed reports") {
    Config cfg = smoke_config("", temp_dir("run_eval_missing"));
    make_dataset("evalmiss", cfg);
    engine::run_train(cfg);

    auto both = engine::run_eval(cfg);
    cfg.set("eval.missing", "thermal");
    auto only_rgb = engine::run_eval(cfg);
    CHECK(only_rgb.metrics_txt != both.metrics_txt);
    CHECK(fs::exists(only_rgb.metrics_txt));
    // zeroed thermal must change the predictions somewhere
    CHECK(only_rgb.overall.miou != doctest::Approx(both.overall.miou).epsilon(1e-12));
}

TEST_CASE("infer: emits label map, confidence dump and W-map visualizations") {
    Config cfg = smoke_config("", temp_dir("run_infer"));
    std::string root = make_dataset("infer", cfg);
    engine::run_train(cfg);

    cfg.set("infer.rgb", root + "/rgb/syn_000000.png");
    cfg.set("infer.thermal", root + "/thermal/syn_000000.png");
    cfg.set("infer.out", cfg.get("run.dir", "") + "/out");
    auto inf = engine::run_infer(cfg);
    CHECK(fs::exists(inf.label_png));
    CHECK(fs::exists(inf.confidence_npy));
    CHECK(inf.factor_pngs.size() == 5);
    for (const auto& p : inf.factor_pngs) CHECK(fs::exists(p));

    // label PNG values < C
    Image lbl = read_png(inf.label_png);
    for (auto v : lbl.pixels) CHECK(v < 3);
}

TEST_CASE("ablate: fusion axis covers addition, attention and probabilistic") {
    Config cfg = smoke_config("", temp_dir("run_ablate"));
    make_dataset("ablate", cfg);
    cfg.set("train.epochs", "1");
    cfg.set("gen.train", "9");
    std::string csv = engine::run_ablate(cfg, "fusion");
    std::ifstream in(csv);
    std::string contents((std::istreambuf_iterator<char>(in)), {});
    CHECK(contents.find("addition,") != std::string::npos);
    CHECK(contents.find("attention,") != std::string::npos);
    CHECK(contents.find("probabilistic,") != std::string::npos);
    CHECK_THROWS_AS(engine::run_ablate(cfg, "nonsense"), std::invalid_argument);
}
