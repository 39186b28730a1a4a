#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dvge/experiment.hpp"

namespace dvge::exp {

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

// One sweep run: a (method, hyperparameter, seed) cell. Failed runs keep
// their identity columns and carry the error instead of metrics.
struct RunRow {
    std::string run_id;
    std::string method;
    double eta1 = 0.0;
    double eta2 = 0.0;
    double gamma = 0.0;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double delta_dp = std::numeric_limits<double>::quiet_NaN();
    double delta_eo = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
    std::string error;  // empty on success
    std::string cell_id;  // run_id minus the seed suffix; groups replicates
};

namespace detail {

// (eta1, eta2) pairs visited in row-major order, capped at max_pairs.
inline std::vector<std::pair<double, double>> eta_pairs(const SweepConfig& s) {
    std::vector<std::pair<double, double>> pairs;
    for (double e1 : s.eta1) {
        for (double e2 : s.eta2) {
            pairs.emplace_back(e1, e2);
            if (pairs.size() >= s.max_pairs) return pairs;
        }
        if (pairs.size() >= s.max_pairs) break;
    }
    return pairs;
}

inline std::string cell_tag(double v) {
    std::string s = fmt_double(v);
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

inline RunRow eval_run(RunRow row, const nn::Mlp& model, const Tensor& x_eval,
                       const std::vector<std::size_t>& y,
                       const std::vector<std::uint8_t>& g) {
    const std::vector<std::size_t> preds = debias::infer(model, x_eval);
    const fairness::FairnessReport rep = fairness::FairnessReport::from({preds, y, g});
    row.accuracy = rep.accuracy;
    row.delta_dp = rep.delta_dp;
    row.delta_eo = rep.delta_eo;
    return row;
}

}  // namespace detail

inline std::string results_csv_line(const RunRow& r, const std::string& config_hash16) {
    std::ostringstream out;
    out << r.run_id << ',' << config_hash16 << ',' << r.method << ',' << fmt_double(r.eta1)
        << ',' << fmt_double(r.eta2) << ',' << fmt_double(r.gamma) << ','
        << fmt_double(r.lambda) << ',' << r.seed << ',' << fmt_double(r.accuracy) << ','
        << fmt_double(r.delta_dp) << ',' << fmt_double(r.delta_eo) << ','
        << fmt_double(r.seconds);
    return out.str();
}

namespace detail {

inline double parse_csv_double(const std::string& field, const std::string& where) {
    if (field == "nan" || field == "-nan")
        return std::numeric_limits<double>::quiet_NaN();
    double value = 0.0;
    if (!data::detail::parse_number(field, value))
        throw ParseError(where + ": bad numeric field '" + field + "'");
    return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

inline std::vector<RunRow> read_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kResultsHeader)
        throw ParseError(path + ": unexpected header '" + line + "'");
    std::vector<RunRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        const std::string where = path + ":" + std::to_string(lineno);
        if (f.size() != 12) throw ParseError(where + ": expected 12 fields");
        RunRow r;
        r.run_id = f[0];
        r.method = f[2];
        r.eta1 = detail::parse_csv_double(f[3], where);
        r.eta2 = detail::parse_csv_double(f[4], where);
        r.gamma = detail::parse_csv_double(f[5], where);
        r.lambda = detail::parse_csv_double(f[6], where);
        r.seed = std::stoull(f[7]);
        r.accuracy = detail::parse_csv_double(f[8], where);
        r.delta_dp = detail::parse_csv_double(f[9], where);
        r.delta_eo = detail::parse_csv_double(f[10], where);
        r.seconds = detail::parse_csv_double(f[11], where);
        const std::size_t s_pos = r.run_id.rfind("-s");
        r.cell_id = s_pos == std::string::npos ? r.run_id : r.run_id.substr(0, s_pos);
        rows.push_back(std::move(r));
    }
    return rows;
}

// Seed-mean operating points per cell, fed to the trade-off front files.
struct MeanPoint {
    std::string cell_id;
    std::string method;
    double accuracy = 0.0;
    double delta_dp = 0.0;
    double delta_eo = 0.0;
};

inline std::vector<MeanPoint> seed_mean_points(const std::vector<RunRow>& rows) {
    std::map<std::string, std::pair<MeanPoint, std::size_t>> acc;  // cell -> (sums, count)
    for (const RunRow& r : rows) {
        if (!r.error.empty()) continue;
        auto [it, inserted] = acc.try_emplace(r.cell_id);
        MeanPoint& m = it->second.first;
        if (inserted) {
            m.cell_id = r.cell_id;
            m.method = r.method;
        }
        m.accuracy += r.accuracy;
        m.delta_dp += r.delta_dp;
        m.delta_eo += r.delta_eo;
        it->second.second += 1;
    }
    std::vector<MeanPoint> out;
    for (auto& [cell, entry] : acc) {
        MeanPoint m = entry.first;
        const auto n = static_cast<double>(entry.second);
        m.accuracy /= n;
        m.delta_dp /= n;
        m.delta_eo /= n;
        out.push_back(std::move(m));
    }
    return out;
}

// Non-dominated (accuracy, disparity) subsets of the seed-mean points, one
// front per disparity metric, written as a single CSV.
inline std::string pareto_csv(const std::vector<MeanPoint>& points) {
    std::ostringstream out;
    out << "front,cell_id,method,accuracy,delta\n";
    for (const char* metric : {"dp", "eo"}) {
        std::vector<fairness::TradeoffPoint> tps;
        tps.reserve(points.size());
        for (const MeanPoint& m : points)
            tps.push_back({m.accuracy, std::string(metric) == "dp" ? m.delta_dp : m.delta_eo,
                           m.cell_id});
        std::map<std::string, const MeanPoint*> by_cell;
        for (const MeanPoint& m : points) by_cell[m.cell_id] = &m;
        for (const fairness::TradeoffPoint& p : fairness::pareto_front(tps)) {
            const MeanPoint* m = by_cell.at(p.tag);
            out << metric << ',' << m->cell_id << ',' << m->method << ','
                << fmt_double(p.acc) << ',' << fmt_double(p.delta) << '\n';
        }
    }
    return out.str();
}

namespace detail {

struct SweepContext {
    const ExperimentConfig* cfg = nullptr;
    const Pipeline* pipeline = nullptr;
    std::string out_dir;
    // Per-gamma encoder artifacts, filled before the worker pool starts.
    std::vector<double> gammas;             // effective gamma grid (one entry when empty in config)
    std::vector<vae::VaeModel> encoders;    // parallel to gammas
    std::vector<nn::Mlp> sens_classifiers;  // parallel to gammas
    std::vector<Tensor> train_codes;        // parallel to gammas
    std::vector<Tensor> test_codes;         // parallel to gammas
};

// Builds the flat run list in a deterministic order; the parallel pool
// fills slots by index, so CSV row order never depends on scheduling.
inline std::vector<RunRow> plan_runs(const SweepContext& ctx) {
    const SweepConfig& s = ctx.cfg->sweep;
    const std::string h8 = short_hash(config_hash(*ctx.cfg));
    const auto pairs = eta_pairs(s);
    std::vector<RunRow> rows;
    auto has = [&s](const char* m) {
        return std::find(s.methods.begin(), s.methods.end(), m) != s.methods.end();
    };
    for (std::size_t gi = 0; gi < ctx.gammas.size(); ++gi) {
        const double gamma = ctx.gammas[gi];
        const std::string gtag = ctx.gammas.size() > 1 ? "-g" + cell_tag(gamma) : "";
        if (has("dvge")) {
            for (const auto& [e1, e2] : pairs) {
                for (std::uint64_t seed : s.seeds) {
                    RunRow r;
                    r.method = "dvge";
                    r.eta1 = e1;
                    r.eta2 = e2;
                    r.gamma = gamma;
                    r.seed = seed;
                    r.cell_id = h8 + "-dvge" + gtag + "-e1_" + cell_tag(e1) + "-e2_" + cell_tag(e2);
                    r.run_id = r.cell_id + "-s" + std::to_string(seed);
                    rows.push_back(std::move(r));
                }
            }
        }
        if (has("plain")) {
            for (std::uint64_t seed : s.seeds) {
                RunRow r;
                r.method = "plain";
                r.gamma = gamma;
                r.seed = seed;
                r.cell_id = h8 + "-plain" + gtag;
                r.run_id = r.cell_id + "-s" + std::to_string(seed);
                rows.push_back(std::move(r));
            }
        }
        if (has("dim_removal")) {
            for (std::size_t k : s.dim_removal_k) {
                for (std::uint64_t seed : s.seeds) {
                    RunRow r;
                    r.method = "dim_removal";
                    r.gamma = gamma;
                    r.seed = seed;
                    r.cell_id = h8 + "-dim_removal" + gtag + "-k" + std::to_string(k);
                    r.run_id = r.cell_id + "-s" + std::to_string(seed);
                    rows.push_back(std::move(r));
                }
            }
        }
    }
    if (has("adt")) {
        for (std::size_t li = 0; li < s.adt_lambda.size(); ++li) {
            for (std::uint64_t seed : s.seeds) {
                RunRow r;
                r.method = "adt";
                r.lambda = s.adt_lambda[li];
                r.seed = seed;
                r.cell_id = h8 + "-adt-l" + cell_tag(r.lambda);
                r.run_id = r.cell_id + "-s" + std::to_string(seed);
                rows.push_back(std::move(r));
            }
        }
    }
    return rows;
}

inline void execute_run(const SweepContext& ctx, RunRow& row) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig& cfg = *ctx.cfg;
    const Pipeline& p = *ctx.pipeline;
    try {
        std::size_t gi = 0;
        for (std::size_t i = 0; i < ctx.gammas.size(); ++i)
            if (ctx.gammas[i] == row.gamma) gi = i;
        if (row.method == "dvge") {
            debias::TaskTrainConfig tcfg = cfg.task;
            // Distinct streams per (gamma, eta-pair, seed) replicate.
            tcfg.seed = derive_seed(cfg.master_seed, "sweep.dvge",
                                    fnv1a64(row.cell_id), row.seed);
            debias::PerturbationConfig pert;
            pert.eta1 = row.eta1;
            pert.eta2 = row.eta2;
            pert.eps_ratio = cfg.perturbation.eps_ratio;
            debias::TrainedTask trained = debias::train_task_on_codes(
                ctx.train_codes[gi], p.y_train, tcfg, &ctx.sens_classifiers[gi], &pert);
            row = eval_run(std::move(row), trained.model, ctx.test_codes[gi], p.y_test, p.g_test);
        } else if (row.method == "plain") {
            debias::TaskTrainConfig tcfg = cfg.task;
            tcfg.seed = derive_seed(cfg.master_seed, "sweep.plain",
                                    fnv1a64(row.cell_id), row.seed);
            debias::TrainedTask trained =
                debias::train_task_plain(ctx.train_codes[gi], p.y_train, tcfg);
            row = eval_run(std::move(row), trained.model, ctx.test_codes[gi], p.y_test, p.g_test);
        } else if (row.method == "dim_removal") {
            const std::size_t k_pos = row.cell_id.rfind("-k");
            const std::size_t k = std::stoul(row.cell_id.substr(k_pos + 2));
            const std::vector<std::size_t> dims =
                baselines::select_sensitive_dims(ctx.train_codes[gi], p.g_train, k);
            const Tensor train_narrow = baselines::remove_dims(ctx.train_codes[gi], dims);
            const Tensor test_narrow = baselines::remove_dims(ctx.test_codes[gi], dims);
            debias::TaskTrainConfig tcfg = cfg.task;
            tcfg.seed = derive_seed(cfg.master_seed, "sweep.dimrm",
                                    fnv1a64(row.cell_id), row.seed);
            debias::TrainedTask trained =
                debias::train_task_plain(train_narrow, p.y_train, tcfg);
            row = eval_run(std::move(row), trained.model, test_narrow, p.y_test, p.g_test);
        } else if (row.method == "adt") {
            baselines::AdtConfig acfg = cfg.adt;
            acfg.lambda = row.lambda;
            acfg.seed = derive_seed(cfg.master_seed, "sweep.adt",
                                    fnv1a64(row.cell_id), row.seed);
            baselines::TrainedAdt trained =
                baselines::train_adt(p.x_train, p.y_train, p.g_train, acfg);
            const std::vector<std::size_t> preds =
                baselines::adt_predict(trained.model, p.x_test);
            const fairness::FairnessReport rep =
                fairness::FairnessReport::from({preds, p.y_test, p.g_test});
            row.accuracy = rep.accuracy;
            row.delta_dp = rep.delta_dp;
            row.delta_eo = rep.delta_eo;
        } else {
            throw std::logic_error("unknown method " + row.method);
        }
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    row.seconds = seconds_since(t0);
}

}  // namespace detail

struct SweepResult {
    std::vector<RunRow> rows;
    std::string results_path;
    std::string pareto_path;
    std::string manifest_path;
    std::size_t failures = 0;
};

// Runs the full hyperparameter sweep: per-gamma encoder + group-classifier
// stages (cached), then every (method, cell, seed) run on the worker pool.
// Writes results-<hash>.csv, pareto-<hash>.csv, and manifest-<hash>.json.
inline SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
                             std::size_t jobs) {
    fs::create_directories(out_dir);
    const std::string hash16 = config_hash(cfg);
    const std::string h8 = short_hash(hash16);

    // Cache hit: a completed sweep for this exact config is immutable, so a
    // rerun returns the existing artifacts byte for byte.
    {
        const fs::path results_path = fs::path(out_dir) / ("results-" + h8 + ".csv");
        const fs::path pareto_path = fs::path(out_dir) / ("pareto-" + h8 + ".csv");
        const fs::path manifest_path = fs::path(out_dir) / ("manifest-" + h8 + ".json");
        if (fs::exists(results_path) && fs::exists(pareto_path) && fs::exists(manifest_path)) {
            SweepResult cached;
            cached.rows = read_results_csv(results_path.string());
            cached.results_path = results_path.string();
            cached.pareto_path = pareto_path.string();
            cached.manifest_path = manifest_path.string();
            std::ifstream in(manifest_path);
            json manifest;
            in >> manifest;
            cached.failures = manifest.value("failures", json::array()).size();
            return cached;
        }
    }

    Pipeline pipeline = build_pipeline(cfg);

    detail::SweepContext ctx;
    ctx.cfg = &cfg;
    ctx.pipeline = &pipeline;
    ctx.out_dir = out_dir;
    ctx.gammas = cfg.sweep.gammas.empty() ? std::vector<double>{cfg.encoder.gamma}
                                          : cfg.sweep.gammas;
    if (cfg.encoder_kind == "vanilla") {
        if (!cfg.sweep.gammas.empty())
            throw std::invalid_argument("sweep.gamma requires encoder.kind = 'factor'");
        ctx.gammas = {0.0};
    }
    std::sort(ctx.gammas.begin(), ctx.gammas.end());
    ctx.gammas.erase(std::unique(ctx.gammas.begin(), ctx.gammas.end()), ctx.gammas.end());

    const bool needs_codes = [&] {
        for (const std::string& m : cfg.sweep.methods)
            if (m != "adt") return true;
        return false;
    }();
    if (needs_codes) {
        for (double gamma : ctx.gammas) {
            ExperimentConfig stage_cfg = cfg;
            stage_cfg.encoder.gamma = gamma;
            if (gamma != 0.0) stage_cfg.encoder_kind = "factor";
            vae::VaeModel enc = ensure_vae(stage_cfg, pipeline, out_dir);
            nn::Mlp sens = ensure_sensitive(stage_cfg, pipeline, enc, out_dir);
            ctx.train_codes.push_back(vae::latent_codes(enc, pipeline.x_train));
            ctx.test_codes.push_back(vae::latent_codes(enc, pipeline.x_test));
            ctx.encoders.push_back(std::move(enc));
            ctx.sens_classifiers.push_back(std::move(sens));
        }
    } else {
        ctx.gammas = {0.0};
    }

    SweepResult result;
    result.rows = detail::plan_runs(ctx);
    parallel_for(result.rows.size(), jobs,
                 [&](std::size_t i) { detail::execute_run(ctx, result.rows[i]); });
    for (const RunRow& r : result.rows)
        if (!r.error.empty()) ++result.failures;

    const fs::path results_path = fs::path(out_dir) / ("results-" + h8 + ".csv");
    {
        std::ofstream out(results_path);
        if (!out) throw std::runtime_error("cannot write " + results_path.string());
        out << kResultsHeader << '\n';
        for (const RunRow& r : result.rows) {
            if (!r.error.empty()) continue;  // failed runs live in the manifest
            out << results_csv_line(r, hash16) << '\n';
        }
    }
    result.results_path = results_path.string();

    const fs::path pareto_path = fs::path(out_dir) / ("pareto-" + h8 + ".csv");
    {
        std::ofstream out(pareto_path);
        out << pareto_csv(seed_mean_points(result.rows));
    }
    result.pareto_path = pareto_path.string();

    json manifest;
    manifest["experiment_name"] = cfg.experiment_name;
    manifest["config_hash"] = hash16;
    manifest["config"] = effective_json(cfg);
    manifest["results_csv"] = results_path.filename().string();
    manifest["pareto_csv"] = pareto_path.filename().string();
    manifest["failures"] = json::array();
    for (const RunRow& r : result.rows)
        if (!r.error.empty())
            manifest["failures"].push_back(json{{"run_id", r.run_id}, {"error", r.error}});
    const fs::path manifest_path = fs::path(out_dir) / ("manifest-" + h8 + ".json");
    ckpt::write_json_file(manifest_path.string(), manifest);
    result.manifest_path = manifest_path.string();
    return result;
}

// ---------------------------------------------------------------------------
// Sensitive-information coverage ablation
// ---------------------------------------------------------------------------

struct AblationResult {
    std::vector<double> eta1_grid;
    // [encoder kind][protocol] -> per-eta means plus reference columns.
    std::map<std::string, baselines::AblationTable> retrained;
    std::map<std::string, baselines::AblationTable> fixed;
    std::string retrained_path;
    std::string fixed_path;
};

namespace detail {

inline baselines::AblationTable mean_tables(std::vector<baselines::AblationTable> tables) {
    baselines::AblationTable mean = tables.front();
    const auto reps = static_cast<double>(tables.size());
    for (std::size_t t = 1; t < tables.size(); ++t) {
        mean.no_removal += tables[t].no_removal;
        mean.removed += tables[t].removed;
        for (std::size_t i = 0; i < mean.accuracy.size(); ++i)
            mean.accuracy[i] += tables[t].accuracy[i];
    }
    mean.no_removal /= reps;
    mean.removed /= reps;
    for (double& a : mean.accuracy) a /= reps;
    return mean;
}

inline void write_ablation_csv(const std::string& path,
                               const std::vector<double>& grid,
                               const std::map<std::string, baselines::AblationTable>& tables) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "encoder,no_removal,removed";
    for (double e : grid) out << ",eta1_" << fmt_double(e);
    out << '\n';
    for (const auto& [kind, table] : tables) {
        out << kind << ',' << fmt_double(table.no_removal) << ',' << fmt_double(table.removed);
        for (double a : table.accuracy) out << ',' << fmt_double(a);
        out << '\n';
    }
}

}  // namespace detail

// Measures how much group information survives the perturbation, for both
// encoder kinds and both probes (retrained classifier vs the original
// classifier applied unchanged), averaged over the configured seeds.
inline AblationResult cmd_ablation(const ExperimentConfig& cfg, const std::string& out_dir,
                                   std::size_t jobs) {
    fs::create_directories(out_dir);
    const std::string h8 = short_hash(config_hash(cfg));
    Pipeline pipeline = build_pipeline(cfg);

    AblationResult result;
    result.eta1_grid = cfg.ablation.eta1;

    const std::vector<std::pair<std::string, double>> encoders = {
        {"vanilla", 0.0}, {"factor", cfg.ablation.gamma}};
    for (std::size_t ei = 0; ei < encoders.size(); ++ei) {
        const auto& [kind, gamma] = encoders[ei];
        ExperimentConfig stage_cfg = cfg;
        stage_cfg.encoder_kind = kind;
        stage_cfg.encoder.gamma = gamma;
        const vae::VaeModel enc = ensure_vae(stage_cfg, pipeline, out_dir);

        baselines::AblationData adata;
        adata.train_features = pipeline.x_train;
        adata.test_features = pipeline.x_test;
        adata.train_groups = pipeline.g_train;
        adata.test_groups = pipeline.g_test;

        std::vector<baselines::AblationTable> retrained_reps(cfg.ablation.seeds.size());
        std::vector<baselines::AblationTable> fixed_reps(cfg.ablation.seeds.size());
        parallel_for(cfg.ablation.seeds.size(), jobs, [&](std::size_t rep) {
            const std::uint64_t rep_seed = cfg.ablation.seeds[rep];
            // The replicate's group classifier: same budget as the main
            // sensitive stage, seeded per (encoder, replicate).
            baselines::SensitiveTrainConfig scfg = cfg.sensitive;
            scfg.seed = derive_seed(cfg.master_seed, "ablate.d", ei, rep_seed);
            const Tensor codes = vae::latent_codes(enc, pipeline.x_train);
            const nn::Mlp d =
                baselines::train_sensitive_classifier(codes, pipeline.g_train, scfg).best_model;

            baselines::SensitiveTrainConfig rcfg = cfg.sensitive;
            rcfg.seed = derive_seed(cfg.master_seed, "ablate.run", ei, rep_seed);
            retrained_reps[rep] = baselines::ablation_retrained(
                enc, d, adata, cfg.ablation.eta1, rcfg, cfg.ablation.eps_ratio, cfg.ablation.k);
            fixed_reps[rep] = baselines::ablation_fixed(enc, d, adata, cfg.ablation.eta1,
                                                        cfg.ablation.eps_ratio, cfg.ablation.k);
        });
        result.retrained[kind] = detail::mean_tables(std::move(retrained_reps));
        result.fixed[kind] = detail::mean_tables(std::move(fixed_reps));
    }

    result.retrained_path =
        (fs::path(out_dir) / ("ablation_retrained-" + h8 + ".csv")).string();
    result.fixed_path = (fs::path(out_dir) / ("ablation_fixed-" + h8 + ".csv")).string();
    detail::write_ablation_csv(result.retrained_path, result.eta1_grid, result.retrained);
    detail::write_ablation_csv(result.fixed_path, result.eta1_grid, result.fixed);
    return result;
}

// ---------------------------------------------------------------------------
// Synthetic data export
// ---------------------------------------------------------------------------

inline std::string cmd_synth_data(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    data::SyntheticSpec spec = cfg.dataset.synth;
    spec.seed = derive_seed(cfg.master_seed, "data");
    const data::DatasetTable table = data::synth_generate(spec);
    const fs::path path = fs::path(out_dir) / "synthetic.csv";
    data::write_table_csv(path.string(), table);
    return path.string();
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct ReportResult {
    std::vector<std::string> figure_files;
    std::string summary_path;
};

// Aggregates every results-*.csv found under `out_dir` into per-metric
// trade-off figures (<name>_dp.csv, <name>_eo.csv: the seed-mean points
// with a front membership flag) plus a plain-text summary. The figure data
// is re-derived from the results files alone.
inline ReportResult cmd_report(const std::string& out_dir) {
    std::vector<fs::path> inputs;
    if (fs::exists(out_dir))
        for (const auto& entry : fs::directory_iterator(out_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("results-", 0) == 0 && name.size() > 4 &&
                name.substr(name.size() - 4) == ".csv")
                inputs.push_back(entry.path());
        }
    if (inputs.empty())
        throw std::runtime_error(std::string(out_dir) + ": no results files found");
    std::sort(inputs.begin(), inputs.end());

    ReportResult result;
    std::ostringstream summary;
    for (const fs::path& input : inputs) {
        const std::vector<RunRow> rows = read_results_csv(input.string());
        // Figure stem: the experiment name from the manifest when present,
        // else the hash portion of the results file name.
        std::string stem = input.stem().string().substr(std::string("results-").size());
        const fs::path manifest = input.parent_path() / ("manifest-" + stem + ".json");
        if (fs::exists(manifest)) {
            std::ifstream in(manifest);
            json j;
            try {
                in >> j;
                if (j.contains("experiment_name")) stem = j.at("experiment_name").get<std::string>();
            } catch (const std::exception&) {
                // Unreadable manifest: keep the hash stem.
            }
        }
        const std::vector<MeanPoint> points = seed_mean_points(rows);
        for (const char* metric : {"dp", "eo"}) {
            std::vector<fairness::TradeoffPoint> tps;
            for (const MeanPoint& m : points)
                tps.push_back({m.accuracy,
                               std::string(metric) == "dp" ? m.delta_dp : m.delta_eo,
                               m.cell_id});
            std::set<std::string> on_front;
            for (const auto& p : fairness::pareto_front(tps)) on_front.insert(p.tag);
            const fs::path fig = input.parent_path() / (stem + "_" + metric + ".csv");
            std::ofstream out(fig);
            if (!out) throw std::runtime_error("cannot write " + fig.string());
            out << "cell_id,method,accuracy,delta,on_front\n";
            for (const MeanPoint& m : points)
                out << m.cell_id << ',' << m.method << ',' << fmt_double(m.accuracy) << ','
                    << fmt_double(std::string(metric) == "dp" ? m.delta_dp : m.delta_eo) << ','
                    << (on_front.count(m.cell_id) ? 1 : 0) << '\n';
            result.figure_files.push_back(fig.string());
        }
        summary << stem << ": " << rows.size() << " runs, " << points.size() << " cells\n";
        std::map<std::string, std::pair<double, std::size_t>> best_by_method;
        for (const MeanPoint& m : points) {
            auto [it, inserted] = best_by_method.try_emplace(m.method, m.accuracy, 0u);
            if (!inserted) it->second.first = std::max(it->second.first, m.accuracy);
            it->second.second += 1;
        }
        for (const auto& [method, entry] : best_by_method)
            summary << "  " << method << ": best mean accuracy " << fmt_double(entry.first)
                    << " over " << entry.second << " cells\n";
    }
    const fs::path summary_path = fs::path(out_dir) / "summary.txt";
    std::ofstream out(summary_path);
    out << summary.str();
    result.summary_path = summary_path.string();
    return result;
}

}  // namespace dvge::exp
