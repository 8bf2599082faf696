#include "vpfnet/engine.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vpfnet/checkpoint.hpp"
#include "vpfnet/dataset.hpp"
#include "vpfnet/image.hpp"
#include "vpfnet/losses.hpp"
#include "vpfnet/npy.hpp"

namespace fs = std::filesystem;

namespace vpfnet::engine {

namespace {

void ensure_run_dir(const RunConfig& rc) {
    if (rc.run_dir.empty()) throw std::invalid_argument("run.dir is required");
    fs::create_directories(rc.run_dir);
}

void echo_config(const Config& cfg, const std::string& run_dir) {
    cfg.write_file(run_dir + "/config.txt");
}

void mark_failed(const std::string& run_dir, const std::string& why) {
    std::ofstream out(run_dir + "/FAILED");
    out << why << "\n";
}

struct Batch {
    Tensor rgb, thermal;   // [N,3,H,W], [N,1,H,W]
    IntTensor labels;      // [N,H,W]
    std::vector<int> illumination;
};

Batch stack_samples(const std::vector<SamplePair>& samples) {
    std::size_t n = samples.size();
    std::size_t h = samples[0].rgb.dim(1), w = samples[0].rgb.dim(2);
    Batch b{Tensor({n, 3, h, w}), Tensor({n, 1, h, w}), IntTensor({n, h, w}), {}};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = samples[i];
        if (s.rgb.dim(1) != h || s.rgb.dim(2) != w)
            throw std::invalid_argument("batch samples disagree in size");
        std::copy_n(s.rgb.data(), 3 * h * w, b.rgb.data() + i * 3 * h * w);
        std::copy_n(s.thermal.data(), h * w, b.thermal.data() + i * h * w);
        std::copy_n(s.label.data(), h * w, b.labels.data() + i * h * w);
        b.illumination.push_back(s.illumination);
    }
    return b;
}

/// Per-level condition maps under the configured prior conditioning.
std::vector<IntTensor> level_categories(const IntTensor& labels,
                                        const std::vector<LatentPosterior>& posts,
                                        PriorCondition cond) {
    std::vector<IntTensor> out;
    for (const auto& p : posts) {
        std::size_t lh = p.mean.shape()[2], lw = p.mean.shape()[3];
        if (cond == PriorCondition::Category || cond == PriorCondition::Both)
            out.push_back(downsample_labels(labels, lh, lw));
        else
            out.emplace_back(std::vector<std::size_t>{labels.dim(0), lh, lw}, 0);
    }
    return out;
}

std::vector<int> effective_illumination(const std::vector<int>& illum,
                                        PriorCondition cond) {
    if (cond == PriorCondition::Both || cond == PriorCondition::Illumination)
        return illum;
    return std::vector<int>(illum.size(), 0);
}

std::vector<double> load_or_compute_class_weights(const RunConfig& rc,
                                                  const Dataset& data) {
    std::vector<double> weights;
    if (!rc.class_weighted) {
        weights.assign(static_cast<std::size_t>(rc.num_classes), 1.0);
        return weights;
    }
    std::string cache = rc.run_dir + "/class_weights.txt";
    if (fs::exists(cache)) {
        std::ifstream in(cache);
        double v;
        while (in >> v) weights.push_back(v);
        if (weights.size() == static_cast<std::size_t>(rc.num_classes)) return weights;
        weights.clear();
    }
    auto hist = data.label_histogram(data.split("train"));
    weights = compute_class_weights(hist, rc.weight_k);
    std::ofstream out(cache);
    out << std::setprecision(17);
    for (double v : weights) out << v << "\n";
    return weights;
}

Dataset open_dataset(const RunConfig& rc) {
    if (rc.data_root.empty()) throw std::invalid_argument("data.root is required");
    DatasetSpec spec;
    spec.root = rc.data_root;
    spec.layout = rc.data_layout;
    spec.num_classes = rc.num_classes;
    spec.resize_h = rc.resize_h;
    spec.resize_w = rc.resize_w;
    spec.include_flip_files = rc.include_flip_files;
    return Dataset(spec);
}

VpfNet model_from_checkpoint(const std::string& path, Checkpoint& ckpt_out) {
    ckpt_out = load_checkpoint(path);
    Config saved;
    for (const auto& [k, v] : ckpt_out.config) saved.set(k, v);
    RunConfig rc = RunConfig::parse(saved);
    VpfNet model(rc.model_config(), /*init_seed=*/rc.seed);
    auto params = model.params();
    auto buffers = model.buffers();
    apply_tensors(ckpt_out.tensors, params, buffers, /*allow_missing=*/true);
    return model;
}

std::string checkpoint_path_or_default(const RunConfig& rc) {
    if (!rc.checkpoint.empty()) return rc.checkpoint;
    std::string best = rc.run_dir + "/best.ckpt";
    if (fs::exists(best)) return best;
    return rc.run_dir + "/last.ckpt";
}

double validate_miou(VpfNet& model, const Dataset& data,
                     const std::vector<std::string>& ids, const RunConfig& rc) {
    if (ids.empty()) return 0.0;
    ConfusionMatrix cm(rc.num_classes);
    for (const auto& id : ids) {
        SamplePair s = data.load(id);
        auto seg = model.infer_averaged(s.rgb, s.thermal, 1, rc.eval_seed);
        cm.accumulate(seg.labels, s.label);
    }
    return cm.summarize(rc.exclude_background).miou;
}

void save_model_checkpoint(const std::string& path, VpfNet& model, nn::AdamW& opt,
                           const Config& cfg, int epochs_done) {
    Checkpoint ckpt;
    for (const auto& [k, v] : cfg.entries()) ckpt.config[k] = v;
    ckpt.meta["epochs_done"] = std::to_string(epochs_done);
    ckpt.step = opt.step_count();
    auto params = model.params();
    auto buffers = model.buffers();
    collect_tensors(params, buffers, ckpt.tensors);
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        ckpt.tensors["opt.m." + opt.params()[i].name] = opt.moment1(i);
        ckpt.tensors["opt.v." + opt.params()[i].name] = opt.moment2(i);
    }
    save_checkpoint(path, ckpt);
}

std::string latent_diagnostics(const std::vector<LatentPosterior>& posts) {
    std::ostringstream os;
    os << std::setprecision(6);
    for (std::size_t i = 0; i < posts.size(); ++i) {
        const Tensor& m = posts[i].mean.value();
        const Tensor& lv = posts[i].log_variance.value();
        os << "level" << i << " mean[min=" << m.min() << " max=" << m.max()
           << " avg=" << m.mean() << "] logvar[min=" << lv.min()
           << " max=" << lv.max() << " avg=" << lv.mean() << "]\n";
    }
    return os.str();
}

} // namespace

SyntheticReport run_generate(const Config& cfg) {
    RunConfig rc = RunConfig::parse(cfg);
    if (rc.data_root.empty()) throw std::invalid_argument("data.root is required");
    if (fs::exists(rc.data_root) && !fs::is_empty(rc.data_root) && !rc.force)
        throw std::runtime_error("target dataset directory is not empty (use run.force): " +
                                 rc.data_root);
    SyntheticSpec spec;
    spec.root = rc.data_root;
    spec.height = rc.gen_height;
    spec.width = rc.gen_width;
    spec.num_classes = rc.gen_classes;
    spec.train = rc.gen_train;
    spec.val = rc.gen_val;
    spec.test = rc.gen_test;
    spec.seed = rc.gen_seed;
    SyntheticReport report = generate_synthetic(spec);

    std::ofstream hist(rc.data_root + "/histogram.txt");
    std::uint64_t total = 0;
    for (auto c : report.label_histogram) total += c;
    for (std::size_t c = 0; c < report.label_histogram.size(); ++c)
        hist << "class_" << c << " " << report.label_histogram[c] << " "
             << static_cast<double>(report.label_histogram[c]) / static_cast<double>(total)
             << "\n";
    return report;
}

TrainResult run_train(const Config& cfg) {
    RunConfig rc = RunConfig::parse(cfg);
    ensure_run_dir(rc);
    echo_config(cfg, rc.run_dir);

    try {
        Dataset data = open_dataset(rc);
        const auto& train_ids = data.split("train");
        if (train_ids.empty()) throw std::runtime_error("empty training split");
        std::vector<double> class_weights = load_or_compute_class_weights(rc, data);

        VpfNet model(rc.model_config(), rc.seed);
        nn::AdamW::Settings os;
        os.lr = rc.lr;
        os.weight_decay = rc.weight_decay;
        nn::AdamW opt(model.params(), os);

        int start_epoch = 0;
        if (rc.resume && fs::exists(rc.run_dir + "/last.ckpt")) {
            Checkpoint ckpt = load_checkpoint(rc.run_dir + "/last.ckpt");
            auto params = model.params();
            auto buffers = model.buffers();
            apply_tensors(ckpt.tensors, params, buffers, /*allow_missing=*/true);
            for (std::size_t i = 0; i < opt.params().size(); ++i) {
                auto mit = ckpt.tensors.find("opt.m." + opt.params()[i].name);
                auto vit = ckpt.tensors.find("opt.v." + opt.params()[i].name);
                if (mit != ckpt.tensors.end()) opt.moment1(i) = mit->second;
                if (vit != ckpt.tensors.end()) opt.moment2(i) = vit->second;
            }
            opt.set_step_count(ckpt.step);
            auto it = ckpt.meta.find("epochs_done");
            if (it != ckpt.meta.end()) start_epoch = std::stoi(it->second);
        } else if (!rc.init_from.empty()) {
            Checkpoint ckpt = load_checkpoint(rc.init_from);
            auto params = model.params();
            auto buffers = model.buffers();
            apply_tensors(ckpt.tensors, params, buffers, /*allow_missing=*/true);
        }

        std::ofstream log(rc.run_dir + "/train_log.txt", std::ios::app);
        log << std::setprecision(10);

        TrainResult result;
        result.best_val_miou = -1.0;
        Rng latent_rng(mix_seed(rc.seed, 0x1a7e47));
        AugmentConfig aug{0.5, rc.crop_fraction};

        for (int epoch = start_epoch; epoch < rc.epochs; ++epoch) {
            auto t0 = std::chrono::steady_clock::now();
            // Deterministic Fisher-Yates shuffle.
            std::vector<std::size_t> order(train_ids.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng shuffle_rng(mix_seed(rc.seed, 0x5affe, static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.index(i)]);

            double sum_total = 0.0, sum_wce = 0.0, sum_kl = 0.0;
            std::size_t batches = 0;
            for (std::size_t off = 0; off < order.size();
                 off += static_cast<std::size_t>(rc.batch_size)) {
                std::size_t take = std::min<std::size_t>(rc.batch_size, order.size() - off);
                std::vector<SamplePair> samples;
                for (std::size_t i = 0; i < take; ++i) {
                    SamplePair s = data.load(train_ids[order[off + i]]);
                    if (rc.augment_enabled)
                        s = augment(s, aug,
                                    mix_seed(rc.seed, static_cast<std::uint64_t>(epoch),
                                             order[off + i]));
                    samples.push_back(std::move(s));
                }
                Batch batch = stack_samples(samples);

                auto fwd = model.forward(batch.rgb, batch.thermal, LatentMode::Random,
                                         &latent_rng, /*training=*/true);
                TotalLoss loss;
                if (model.config().fusion == FusionMode::Addition) {
                    // no posteriors exist; plain weighted CE
                    ag::Var wce = ag::weighted_cross_entropy(fwd.logits, batch.labels,
                                                             class_weights);
                    loss.value = wce;
                    loss.breakdown = {wce.item(), wce.item(), 0.0, rc.beta};
                } else {
                    auto cats = level_categories(batch.labels, fwd.posteriors,
                                                 rc.prior_condition);
                    auto illum = effective_illumination(batch.illumination,
                                                        rc.prior_condition);
                    loss = total_loss(fwd.logits, batch.labels, class_weights,
                                      fwd.posteriors, cats, illum, model.prior(),
                                      rc.beta);
                }

                if (!std::isfinite(loss.breakdown.total)) {
                    std::string dump = latent_diagnostics(fwd.posteriors);
                    log << "epoch=" << epoch + 1 << " NaN loss; latent statistics:\n"
                        << dump;
                    log.flush();
                    throw NumericError("non-finite training loss; latent statistics:\n" +
                                       dump);
                }

                opt.zero_grad();
                ag::backward(loss.value);
                opt.step();

                sum_total += loss.breakdown.total;
                sum_wce += loss.breakdown.wce;
                sum_kl += loss.breakdown.kl_mean;
                ++batches;
            }

            double avg_total = sum_total / static_cast<double>(batches);
            double avg_wce = sum_wce / static_cast<double>(batches);
            double avg_kl = sum_kl / static_cast<double>(batches);
            result.epoch_total.push_back(avg_total);
            result.epoch_wce.push_back(avg_wce);
            result.epoch_kl.push_back(avg_kl);

            double val_miou = -1.0;
            if ((epoch + 1) % rc.val_every == 0 || epoch + 1 == rc.epochs)
                val_miou = validate_miou(model, data, data.split("val"), rc);

            auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
            log << "epoch=" << epoch + 1 << " wce=" << avg_wce << " kl_mean=" << avg_kl
                << " total=" << avg_total;
            if (val_miou >= 0.0) log << " val_miou=" << val_miou;
            log << " seconds=" << dt.count() << "\n";
            log.flush();

            result.epochs_done = epoch + 1;
            save_model_checkpoint(rc.run_dir + "/last.ckpt", model, opt, cfg, epoch + 1);
            if (val_miou > result.best_val_miou) {
                result.best_val_miou = val_miou;
                save_model_checkpoint(rc.run_dir + "/best.ckpt", model, opt, cfg,
                                      epoch + 1);
            }
        }
        result.last_checkpoint = rc.run_dir + "/last.ckpt";
        result.best_checkpoint = rc.run_dir + "/best.ckpt";
        return result;
    } catch (const std::exception& e) {
        mark_failed(rc.run_dir, e.what());
        throw;
    }
}

EvalResult run_eval(const Config& cfg) {
    RunConfig rc = RunConfig::parse(cfg);
    ensure_run_dir(rc);

    Checkpoint ckpt;
    VpfNet model = model_from_checkpoint(checkpoint_path_or_default(rc), ckpt);
    Dataset data = open_dataset(rc);
    const auto& ids = data.split(rc.eval_split);
    if (ids.empty()) throw std::runtime_error("empty evaluation split: " + rc.eval_split);

    int c = model.config().num_classes;
    ConfusionMatrix overall(c), day(c), night(c);
    for (const auto& id : ids) {
        SamplePair s = data.load(id);
        SegmentationOutput seg;
        std::uint64_t seed = mix_seed(rc.eval_seed, std::hash<std::string>{}(id));
        if (rc.missing == MissingModality::None)
            seg = model.infer_averaged(s.rgb, s.thermal, rc.ns, seed);
        else
            seg = model.infer_missing_modality(&s.rgb, &s.thermal, rc.missing, rc.ns, seed);
        ConfusionMatrix cm(c);
        cm.accumulate(seg.labels, s.label);
        overall.merge(cm);
        (s.illumination == 1 ? night : day).merge(cm);
    }

    EvalResult res;
    res.overall = overall.summarize(rc.exclude_background);
    res.day = day.summarize(rc.exclude_background);
    res.night = night.summarize(rc.exclude_background);
    res.day_pixels = day.total();
    res.night_pixels = night.total();

    std::string suffix;
    if (rc.missing == MissingModality::Rgb) suffix = "_only_thermal";
    else if (rc.missing == MissingModality::Thermal) suffix = "_only_rgb";
    res.metrics_txt = rc.run_dir + "/metrics" + suffix + ".txt";
    res.metrics_csv = rc.run_dir + "/metrics" + suffix + ".csv";

    std::ofstream txt(res.metrics_txt);
    txt << std::setprecision(10);
    txt << "split=" << rc.eval_split << "\nns=" << rc.ns << "\nmissing="
        << (rc.missing == MissingModality::None
                ? "none"
                : (rc.missing == MissingModality::Rgb ? "rgb" : "thermal"))
        << "\nexclude_background=" << (rc.exclude_background ? 1 : 0) << "\n";
    txt << "macc=" << res.overall.macc << "\nmiou=" << res.overall.miou << "\n";
    if (res.day_pixels > 0)
        txt << "day_macc=" << res.day.macc << "\nday_miou=" << res.day.miou << "\n";
    if (res.night_pixels > 0)
        txt << "night_macc=" << res.night.macc << "\nnight_miou=" << res.night.miou
            << "\n";
    for (int i = 0; i < c; ++i)
        txt << "acc_" << i << "=" << res.overall.acc[i] << "\niou_" << i << "="
            << res.overall.iou[i] << "\n";

    std::ofstream csv(res.metrics_csv);
    csv << std::setprecision(10);
    csv << "class,acc,iou,acc_day,iou_day,acc_night,iou_night\n";
    for (int i = 0; i < c; ++i)
        csv << i << ',' << res.overall.acc[i] << ',' << res.overall.iou[i] << ','
            << res.day.acc[i] << ',' << res.day.iou[i] << ',' << res.night.acc[i] << ','
            << res.night.iou[i] << "\n";
    csv << "mean," << res.overall.macc << ',' << res.overall.miou << ',' << res.day.macc
        << ',' << res.day.miou << ',' << res.night.macc << ',' << res.night.miou << "\n";

    std::ofstream conf(rc.run_dir + "/confusion" + suffix + ".csv");
    conf << overall.to_csv();
    return res;
}

InferResult run_infer(const Config& cfg) {
    RunConfig rc = RunConfig::parse(cfg);
    if (rc.infer_rgb.empty() || rc.infer_thermal.empty())
        throw std::invalid_argument("infer.rgb and infer.thermal are required");
    std::string out_dir = rc.infer_out.empty() ? rc.run_dir + "/infer" : rc.infer_out;
    fs::create_directories(out_dir);

    Checkpoint ckpt;
    VpfNet model = model_from_checkpoint(checkpoint_path_or_default(rc), ckpt);

    Image rgb_img = read_png(rc.infer_rgb);
    Image th_img = read_png(rc.infer_thermal);
    Tensor rgb = to_float_chw(rgb_img);
    Tensor thermal = to_float_chw(th_img);

    SegmentationOutput seg;
    if (rc.missing == MissingModality::None)
        seg = model.infer_averaged(rgb, thermal, rc.ns, rc.eval_seed);
    else
        seg = model.infer_missing_modality(&rgb, &thermal, rc.missing, rc.ns, rc.eval_seed);

    InferResult res;
    res.label_png = out_dir + "/labels.png";
    write_png(res.label_png, label_map_to_image(seg.labels));
    res.confidence_npy = out_dir + "/confidence.npy";
    write_npy(res.confidence_npy, seg.confidence);

    if (rc.dump_wmaps && model.config().fusion != FusionMode::Addition) {
        ag::NoGradGuard no_grad;
        Tensor rgb4 = Tensor::from({1, rgb.dim(0), rgb.dim(1), rgb.dim(2)},
                                   std::vector<double>(rgb.data(), rgb.data() + rgb.size()));
        Tensor th4 = Tensor::from(
            {1, thermal.dim(0), thermal.dim(1), thermal.dim(2)},
            std::vector<double>(thermal.data(), thermal.data() + thermal.size()));
        auto fwd = model.forward(rgb4, th4, LatentMode::PosteriorMean, nullptr, false);
        for (std::size_t i = 0; i < fwd.factors.size(); ++i) {
            const Tensor& f = fwd.factors[i];
            Tensor map = Tensor::from({1, f.dim(2), f.dim(3)},
                                      std::vector<double>(f.data(), f.data() + f.size()));
            std::string path = out_dir + "/wmap_level" + std::to_string(i) + ".png";
            write_png(path, to_image(map));
            res.factor_pngs.push_back(path);
            write_npy(out_dir + "/latent_mean_level" + std::to_string(i) + ".npy",
                      fwd.posteriors[i].mean.value());
            write_npy(out_dir + "/latent_logvar_level" + std::to_string(i) + ".npy",
                      fwd.posteriors[i].log_variance.value());
        }
    }
    return res;
}

std::string run_ablate(const Config& cfg, const std::string& axis) {
    RunConfig rc = RunConfig::parse(cfg);
    ensure_run_dir(rc);

    struct Variant {
        std::string name;
        std::map<std::string, std::string> overrides;
    };
    std::vector<Variant> variants;
    bool eval_only_sweep = false;
    if (axis == "beta") {
        for (const char* b : {"0", "0.3", "0.5", "0.7", "1"})
            variants.push_back({std::string("beta_") + b, {{"loss.beta", b}}});
    } else if (axis == "ns") {
        eval_only_sweep = true;
        for (const char* n : {"1", "5", "10", "20", "50"})
            variants.push_back({std::string("ns_") + n, {{"eval.ns", n}}});
    } else if (axis == "prior") {
        variants.push_back({"none", {{"model.prior_condition", "none"}, {"loss.beta", "0"}}});
        variants.push_back({"illumination", {{"model.prior_condition", "illumination"}}});
        variants.push_back({"category", {{"model.prior_condition", "category"}}});
        variants.push_back({"both", {{"model.prior_condition", "both"}}});
    } else if (axis == "loss") {
        variants.push_back({"ce", {{"loss.class_weighted", "0"}, {"loss.beta", "0"}}});
        variants.push_back({"ce_kl", {{"loss.class_weighted", "0"}}});
        variants.push_back({"weightce", {{"loss.class_weighted", "1"}, {"loss.beta", "0"}}});
        variants.push_back({"weightce_kl", {{"loss.class_weighted", "1"}}});
    } else if (axis == "fusion") {
        variants.push_back({"addition", {{"model.fusion", "addition"}, {"loss.beta", "0"}}});
        variants.push_back({"attention", {{"model.fusion", "attention"}, {"loss.beta", "0"}}});
        variants.push_back(
            {"probabilistic", {{"model.fusion", "probabilistic"}, {"loss.beta", "0"}}});
    } else {
        throw std::invalid_argument("unknown ablation axis: " + axis);
    }

    std::string csv_path = rc.run_dir + "/ablate_" + axis + ".csv";
    std::ofstream csv(csv_path);
    csv << std::setprecision(10);
    csv << "variant,macc,miou,final_wce,final_kl\n";

    std::string shared_train_dir;
    for (const auto& v : variants) {
        Config sub = cfg;
        std::string vdir = rc.run_dir + "/ablate_" + axis + "/" + v.name;
        for (const auto& [k, val] : v.overrides) sub.set(k, val);
        double wce = 0.0, kl = 0.0;
        if (eval_only_sweep) {
            if (shared_train_dir.empty()) {
                shared_train_dir = rc.run_dir + "/ablate_" + axis + "/train";
                Config train_cfg = cfg;
                train_cfg.set("run.dir", shared_train_dir);
                TrainResult tr = run_train(train_cfg);
                wce = tr.epoch_wce.back();
                kl = tr.epoch_kl.back();
            }
            sub.set("run.dir", vdir);
            sub.set("eval.checkpoint", shared_train_dir + "/best.ckpt");
        } else {
            sub.set("run.dir", vdir);
            TrainResult tr = run_train(sub);
            wce = tr.epoch_wce.back();
            kl = tr.epoch_kl.back();
        }
        EvalResult ev = run_eval(sub);
        csv << v.name << ',' << ev.overall.macc << ',' << ev.overall.miou << ',' << wce
            << ',' << kl << "\n";
        csv.flush();
    }
    return csv_path;
}

} // namespace vpfnet::engine
