#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssrhef/eval.hpp"
#include "ssrhef/gradsuite.hpp"
#include "ssrhef/io.hpp"
#include "ssrhef/model.hpp"
#include "ssrhef/synth.hpp"
#include "ssrhef/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssrhef;

namespace {

// exit codes: 0 success, 1 usage, 2 data, 3 numerical
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct SynthArgs {
    std::string out;
    std::int64_t images = 8;
    std::int64_t easy = 8;
    std::int64_t hard = 7;
    std::int64_t size = 64;
    std::uint64_t seed = 0;
};

struct GenGtArgs {
    std::string ann;
    double sigma = 4.0;
    std::string out;
};

struct TrainArgs {
    std::string data;
    std::string out;
    std::string log;
    trainer::TrainConfig cfg;
};

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string report;
    double sigma = 4.0;
};

struct PredictArgs {
    std::string ckpt;
    std::string image;
    std::string out_dmap;
    std::string out_pgm;
};

struct AblateArgs {
    std::string data;
    std::string report;
    trainer::TrainConfig cfg;
};

int run_synth(const SynthArgs& a) {
    fs::create_directories(a.out);
    for (std::int64_t i = 0; i < a.images; ++i) {
        synth::SynthConfig cfg;
        cfg.image_size = a.size;
        cfg.n_easy = a.easy;
        cfg.n_hard = a.hard;
        cfg.seed = a.seed + static_cast<std::uint64_t>(i);
        const gt::SceneItem scene = synth::synth_scene(cfg);
        const std::string stem = (fs::path(a.out) / scene.name).string();
        io::pgm_write(stem + ".pgm", to_grid(scene.image));
        io::ann_save(stem + ".json", scene.ann);
        std::cout << stem << ".pgm: " << scene.ann.points.size() << " heads\n";
    }
    return kExitOk;
}

int run_gen_gt(const GenGtArgs& a) {
    const gt::AnnotationSet ann = io::ann_load(a.ann);
    const double count = static_cast<double>(ann.points.size());
    const gt::ClassLabelSpec spec = gt::compute_thr({count}, model::ModelConfig{}.num_classes);
    const gt::GroundTruthBundle bundle = gt::make_bundle(ann, a.sigma, spec);

    fs::create_directories(a.out);
    const std::string stem = (fs::path(a.out) / fs::path(a.ann).stem()).string();
    io::dmap_write(stem + ".density.dmap", bundle.density.values, 1);
    io::dmap_write(stem + ".density8.dmap", bundle.density8.values, 8);
    const std::uint32_t level_strides[3] = {2, 4, 8};
    for (int m = 0; m < 3; ++m) {
        io::dmap_write(stem + ".seg" + std::to_string(level_strides[m]) + ".dmap",
                       bundle.pyramid.levels[static_cast<std::size_t>(m)], level_strides[m]);
    }
    std::ofstream label(stem + ".label.json");
    label << "{\"count\": " << bundle.head_count << ", \"thr\": " << spec.thr
          << ", \"label\": " << bundle.class_label << "}\n";
    std::cout << stem << ".*: density sum " << bundle.density.values.sum() << ", label "
              << bundle.class_label << "\n";
    return kExitOk;
}

int run_train(const TrainArgs& a) {
    const std::vector<gt::SceneItem> dataset = io::load_dataset(a.data);
    const model::ModelConfig mcfg;

    std::ofstream log_file;
    std::ostream* log_stream = &std::cout;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) {
            throw DataError("cannot open log file " + a.log);
        }
        log_stream = &log_file;
    }

    const trainer::TrainResult res = trainer::train(dataset, mcfg, a.cfg, log_stream);
    model::save_checkpoint(a.out, res.params);
    if (!res.mae_log.empty()) {
        std::cout << "final train mae " << res.mae_log.back().second << "\n";
    }
    std::cout << "saved " << a.out << " (" << model::param_count(res.params) << " parameters)\n";
    return kExitOk;
}

int run_eval(const EvalArgs& a) {
    const model::ModelParams params = model::load_checkpoint(a.ckpt);
    const std::vector<gt::SceneItem> items = io::load_dataset(a.data);
    const model::ModelConfig mcfg;
    const eval::EvalReport report = eval::evaluate(mcfg, params, items, a.sigma);

    std::ofstream out(a.report);
    if (!out) {
        throw DataError("cannot open report file " + a.report);
    }
    out << eval::report_to_json(report) << "\n";
    std::cout << "mae " << report.mae << ", mse " << report.mse << " over " << items.size()
              << " images\n";
    return kExitOk;
}

int run_predict(const PredictArgs& a) {
    const model::ModelParams params = model::load_checkpoint(a.ckpt);
    Grid2D image = io::pgm_read(a.image);

    // top-left crop down to the nearest multiple of the output stride
    const std::int64_t h8 = image.h - image.h % 8;
    const std::int64_t w8 = image.w - image.w % 8;
    if (h8 < 8 || w8 < 8) {
        throw DataError("image too small to predict on: " + std::to_string(image.h) + "x" +
                        std::to_string(image.w));
    }
    Grid2D cropped(h8, w8);
    for (std::int64_t y = 0; y < h8; ++y) {
        for (std::int64_t x = 0; x < w8; ++x) {
            cropped.at(y, x) = image.at(y, x);
        }
    }

    const model::ModelConfig mcfg;
    const model::ModelOutputs out = model::forward(mcfg, params, to_tensor(cropped));
    const Grid2D density = to_grid(out.density);
    io::dmap_write(a.out_dmap, density, 8);
    io::export_density_image(density, a.out_pgm);
    std::cout << "predicted count " << model::predict_count(out.density) << "\n";
    return kExitOk;
}

int run_gradcheck(bool full_model) {
    const std::vector<gradsuite::SuiteResult> results = gradsuite::run_grad_suite(full_model);
    for (const auto& r : results) {
        std::printf("%-28s max_rel_err %.3e  coords %6lld  %s\n", r.name.c_str(), r.max_rel_err,
                    static_cast<long long>(r.coords), r.pass ? "pass" : "FAIL");
    }
    return gradsuite::all_pass(results) ? kExitOk : kExitNumerical;
}

int run_ablate(const AblateArgs& a) {
    const std::vector<gt::SceneItem> dataset = io::load_dataset(a.data);
    const model::ModelConfig mcfg;
    const eval::AblatePair pair = eval::ablate(dataset, mcfg, a.cfg);

    std::ofstream out(a.report);
    if (!out) {
        throw DataError("cannot open report file " + a.report);
    }
    out << eval::ablate_to_json(pair) << "\n";
    std::cout << "focused: mae " << pair.focused.mae << ", hard under-est "
              << pair.focused.hard.mean_under_est << "\n";
    std::cout << "plain:   mae " << pair.plain.mae << ", hard under-est "
              << pair.plain.hard.mean_under_est << "\n";
    return kExitOk;
}

void add_train_flags(CLI::App* cmd, trainer::TrainConfig& cfg) {
    cmd->add_option("--iters", cfg.iterations, "training iterations");
    cmd->add_option("--seed", cfg.seed, "rng seed");
    cmd->add_option("--gamma", cfg.gamma, "focusing exponent (0 = plain mse)");
    cmd->add_option("--lr", cfg.lr, "adam learning rate");
    cmd->add_option("--lambda-seg", cfg.lambda_seg, "segmentation loss weight");
    cmd->add_option("--lambda-cla", cfg.lambda_cla, "classification loss weight");
    cmd->add_option("--sigma", cfg.sigma, "density kernel std");
    cmd->add_option("--clip", cfg.clip, "max gradient norm, 0 disables");
    cmd->add_option("--eval-every", cfg.eval_every, "train-mae interval in iterations");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crowd counting with hard-example-focused regression"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* c_synth = app.add_subcommand("synth", "generate synthetic scenes");
    c_synth->add_option("--out", synth_args.out, "output directory")->required();
    c_synth->add_option("--images", synth_args.images, "number of scenes");
    c_synth->add_option("--easy", synth_args.easy, "easy heads per scene");
    c_synth->add_option("--hard", synth_args.hard, "hard heads per scene");
    c_synth->add_option("--size", synth_args.size, "square image side");
    c_synth->add_option("--seed", synth_args.seed, "base rng seed, +1 per scene");

    GenGtArgs gg_args;
    CLI::App* c_gg = app.add_subcommand("gen-gt", "encode ground truth for one annotation file");
    c_gg->add_option("--ann", gg_args.ann, "annotation json")->required();
    c_gg->add_option("--sigma", gg_args.sigma, "density kernel std");
    c_gg->add_option("--out", gg_args.out, "output directory")->required();

    TrainArgs train_args;
    CLI::App* c_train = app.add_subcommand("train", "train on a dataset directory");
    c_train->add_option("--data", train_args.data, "dataset directory")->required();
    c_train->add_option("--out", train_args.out, "checkpoint path")->required();
    c_train->add_option("--log", train_args.log, "loss log path (default: stdout)");
    add_train_flags(c_train, train_args.cfg);

    EvalArgs eval_args;
    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    c_eval->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
    c_eval->add_option("--data", eval_args.data, "dataset directory")->required();
    c_eval->add_option("--report", eval_args.report, "output json path")->required();
    c_eval->add_option("--sigma", eval_args.sigma, "density kernel std");

    PredictArgs pred_args;
    CLI::App* c_pred = app.add_subcommand("predict", "predict a density map for one image");
    c_pred->add_option("--ckpt", pred_args.ckpt, "checkpoint path")->required();
    c_pred->add_option("--image", pred_args.image, "input pgm")->required();
    c_pred->add_option("--out-dmap", pred_args.out_dmap, "output density container")->required();
    c_pred->add_option("--out-pgm", pred_args.out_pgm, "output visualization")->required();

    bool full_model = false;
    CLI::App* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    c_grad->add_flag("--full-model", full_model, "also check every model parameter");

    AblateArgs ab_args;
    CLI::App* c_ab = app.add_subcommand("ablate", "paired focused-vs-plain training runs");
    c_ab->add_option("--data", ab_args.data, "dataset directory")->required();
    c_ab->add_option("--report", ab_args.report, "output json path")->required();
    add_train_flags(c_ab, ab_args.cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (c_synth->parsed()) return run_synth(synth_args);
        if (c_gg->parsed()) return run_gen_gt(gg_args);
        if (c_train->parsed()) return run_train(train_args);
        if (c_eval->parsed()) return run_eval(eval_args);
        if (c_pred->parsed()) return run_predict(pred_args);
        if (c_grad->parsed()) return run_gradcheck(full_model);
        if (c_ab->parsed()) return run_ablate(ab_args);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const CacheMismatchError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
