#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "osr/commands.hpp"
#include "osr/errors.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::string seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config file (key = value lines)");
    cmd->add_option("--out", opts.out_dir, "experiment directory (overrides out_dir)");
    cmd->add_option("--seed", opts.seed, "global seed (overrides seed)");
    cmd->add_option("--set", opts.overrides, "field override, key=value (repeatable)")->take_all();
}

osr::ExperimentConfig build_config(const CommonOpts& opts) {
    osr::ExperimentConfig cfg;
    if (!opts.config_path.empty()) cfg = osr::ExperimentConfig::load(opts.config_path);
    if (!opts.out_dir.empty()) cfg.set_field("out_dir", opts.out_dir);
    if (!opts.seed.empty()) cfg.set_field("seed", opts.seed);
    for (const auto& kv : opts.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        cfg.set_field(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.require_valid();
    return cfg;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

std::vector<std::string> parse_str_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"open-set recognition trainer: teacher-student distillation with a GAN recommender"};
    app.require_subcommand(1);

    CommonOpts train_teacher_opts, train_opts, calibrate_opts, evaluate_opts, sweep_opts, grid_opts, generate_opts;

    auto* c_teacher = app.add_subcommand("train-teacher", "pretrain the teacher on the known classes");
    add_common(c_teacher, train_teacher_opts);

    auto* c_train = app.add_subcommand("train", "run augmentation, calibration and the alternating loop");
    add_common(c_train, train_opts);

    auto* c_cal = app.add_subcommand("calibrate", "recompute lambda and the class thresholds from checkpoints");
    add_common(c_cal, calibrate_opts);

    std::string strategy = "classwise";
    auto* c_eval = app.add_subcommand("evaluate", "score a test mix and write the evaluation report");
    add_common(c_eval, evaluate_opts);
    c_eval->add_option("--strategy", strategy, "'score' (unknown-score threshold) or 'classwise'");

    std::string counts_arg = "1,2,4", variants_arg = "T,TS,RS,TRS";
    int repeats = 2;
    auto* c_sweep = app.add_subcommand("sweep", "macro-F1 against openness for several variants");
    add_common(c_sweep, sweep_opts);
    c_sweep->add_option("--counts", counts_arg, "comma-separated unknown-class counts");
    c_sweep->add_option("--repeats", repeats, "random unknown-class draws per count");
    c_sweep->add_option("--variants", variants_arg, "comma-separated subset of T,TS,RS,TRS");

    std::string taus_arg = "1,2.5,5", alphas_arg = "0,0.5,1.5", grid_counts_arg = "4";
    auto* c_grid = app.add_subcommand("grid", "tau/alpha sensitivity grid");
    add_common(c_grid, grid_opts);
    c_grid->add_option("--taus", taus_arg, "comma-separated temperatures");
    c_grid->add_option("--alphas", alphas_arg, "comma-separated balance weights");
    c_grid->add_option("--counts", grid_counts_arg, "unknown-class counts (openness levels)");

    int per_class = 10;
    auto* c_gen = app.add_subcommand("generate", "emit a sample grid from the trained generator");
    add_common(c_gen, generate_opts);
    c_gen->add_option("--per-class", per_class, "samples per synthetic unknown class");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_teacher->parsed()) {
            auto stats = osr::cmd_train_teacher(build_config(train_teacher_opts));
            std::printf("teacher: %ld steps, loss %.4f -> %.4f, train accuracy %.4f\n", stats.steps,
                        stats.initial_loss, stats.final_loss, stats.train_accuracy);
        } else if (c_train->parsed()) {
            auto rows = osr::cmd_train(build_config(train_opts));
            if (!rows.empty())
                std::printf("trained %zu steps; final losses D %.4f G %.4f KD %.4f S %.4f (mask %.2f)\n", rows.size(),
                            rows.back().loss_d, rows.back().loss_g, rows.back().loss_kd, rows.back().loss_s,
                            rows.back().mask_fraction);
        } else if (c_cal->parsed()) {
            auto th = osr::cmd_calibrate(build_config(calibrate_opts));
            std::printf("lambda %.6f, %zu class thresholds written\n", th.lambda, th.epsilons.size());
        } else if (c_eval->parsed()) {
            auto rep = osr::cmd_evaluate(build_config(evaluate_opts), strategy);
            std::printf("variant %s (%s): AUROC %.4f%s, macro-F1 %.4f\n", rep.variant.c_str(), rep.strategy.c_str(),
                        rep.auroc_value,
                        rep.baseline_auroc ? (" (baseline " + std::to_string(*rep.baseline_auroc) + ")").c_str() : "",
                        rep.macro_f1_value);
        } else if (c_sweep->parsed()) {
            auto rows = osr::cmd_sweep(build_config(sweep_opts), parse_int_list(counts_arg), repeats,
                                       parse_str_list(variants_arg));
            std::printf("sweep: %zu rows written\n", rows.size());
        } else if (c_grid->parsed()) {
            auto rows = osr::cmd_grid(build_config(grid_opts), parse_double_list(taus_arg),
                                      parse_double_list(alphas_arg), parse_int_list(grid_counts_arg));
            std::printf("grid: %zu rows written\n", rows.size());
        } else if (c_gen->parsed()) {
            std::string path = osr::cmd_generate(build_config(generate_opts), per_class);
            std::printf("sample grid written to %s\n", path.c_str());
        }
    } catch (const osr::TrainingDiverged& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
