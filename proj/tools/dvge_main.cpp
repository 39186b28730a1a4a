// Command-line front end for the debiasing experiment pipeline.
//
// Subcommands: train-vae, train-sensitive, train-task, sweep, ablation,
// synth-data, report. All accept --config/--seed/--out/--jobs; --seed
// overrides the config's master_seed. Exit code 0 on success.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dvge/dvge.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t jobs = 1;
};

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config_path, "Experiment config (JSON)");
    cmd->add_option("--seed", opt.seed, "Override the config's master seed")
        ->each([&opt](const std::string&) { opt.seed_set = true; });
    cmd->add_option("--out", opt.out_dir, "Output directory for artifacts");
    cmd->add_option("--jobs", opt.jobs, "Worker threads for sweep/ablation cells");
}

dvge::exp::ExperimentConfig load_config(const CliOptions& opt) {
    dvge::exp::ExperimentConfig cfg =
        opt.config_path.empty()
            ? dvge::exp::parse_experiment_config(nlohmann::json::object())
            : dvge::exp::load_experiment_config(opt.config_path);
    if (opt.seed_set) cfg.master_seed = opt.seed;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-code debiasing experiments"};
    app.require_subcommand(1);

    CliOptions opt;
    int chosen = 0;
    auto make = [&](const char* name, const char* help, int id) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common_flags(cmd, opt);
        cmd->callback([&chosen, id] { chosen = id; });
        return cmd;
    };
    make("train-vae", "Train (or load) the encoder stage", 1);
    make("train-sensitive", "Train (or load) the protected-group classifier", 2);
    make("train-task", "Train (or load) the downstream task model", 3);
    make("sweep", "Run the hyperparameter sweep and write results CSVs", 4);
    make("ablation", "Run the sensitive-information coverage ablation", 5);
    make("synth-data", "Generate the synthetic dataset as CSV", 6);
    make("report", "Aggregate results CSVs into figure data", 7);

    CLI11_PARSE(app, argc, argv);

    try {
        using namespace dvge::exp;
        switch (chosen) {
            case 1: {
                const ExperimentConfig cfg = load_config(opt);
                const Pipeline p = build_pipeline(cfg);
                std::string path;
                ensure_vae(cfg, p, opt.out_dir, &path);
                std::cout << "encoder checkpoint: " << path << '\n';
                break;
            }
            case 2: {
                const ExperimentConfig cfg = load_config(opt);
                const Pipeline p = build_pipeline(cfg);
                const dvge::vae::VaeModel enc = ensure_vae(cfg, p, opt.out_dir);
                std::string path;
                ensure_sensitive(cfg, p, enc, opt.out_dir, &path);
                std::cout << "group-classifier checkpoint: " << path << '\n';
                break;
            }
            case 3: {
                const ExperimentConfig cfg = load_config(opt);
                const Pipeline p = build_pipeline(cfg);
                const dvge::vae::VaeModel enc = ensure_vae(cfg, p, opt.out_dir);
                const dvge::nn::Mlp sens = ensure_sensitive(cfg, p, enc, opt.out_dir);
                std::string path;
                ensure_task(cfg, p, enc, sens, opt.out_dir, &path);
                std::cout << "task checkpoint: " << path << '\n';
                break;
            }
            case 4: {
                const SweepResult res = cmd_sweep(load_config(opt), opt.out_dir, opt.jobs);
                std::cout << "results: " << res.results_path << '\n'
                          << "fronts:  " << res.pareto_path << '\n';
                if (res.failures > 0)
                    std::cout << res.failures << " run(s) failed; see "
                              << res.manifest_path << '\n';
                break;
            }
            case 5: {
                const AblationResult res = cmd_ablation(load_config(opt), opt.out_dir, opt.jobs);
                std::cout << "retrained-probe table: " << res.retrained_path << '\n'
                          << "fixed-probe table:     " << res.fixed_path << '\n';
                break;
            }
            case 6: {
                const std::string path = cmd_synth_data(load_config(opt), opt.out_dir);
                std::cout << "dataset: " << path << '\n';
                break;
            }
            case 7: {
                const ReportResult res = cmd_report(opt.out_dir);
                for (const std::string& f : res.figure_files)
                    std::cout << "figure data: " << f << '\n';
                std::cout << "summary: " << res.summary_path << '\n';
                break;
            }
            default: break;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
