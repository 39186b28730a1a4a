#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dvge/baselines.hpp"
#include "dvge/checkpoint.hpp"
#include "dvge/data.hpp"
#include "dvge/debias.hpp"
#include "dvge/errors.hpp"
#include "dvge/fairness.hpp"
#include "dvge/nn.hpp"
#include "dvge/rng.hpp"
#include "dvge/vae.hpp"

namespace dvge::exp {

using nlohmann::json;
namespace fs = std::filesystem;

// Pinned schema of the sweep results file.
inline constexpr const char* kResultsHeader =
    "run_id,config_hash,method,eta1,eta2,gamma,lambda,seed,accuracy,delta_dp,delta_eo,seconds";

// Shortest decimal that parses back to the same double ("0.1", not
// "0.10000000000000001"); used for every number we emit to CSV.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Snaps grid points like 0.1 + 2*0.1 to the nearest short decimal so CSVs
// say 0.3 instead of 0.30000000000000004.
inline double snap_grid(double v) { return std::round(v * 1e10) / 1e10; }

namespace detail {

inline std::vector<double> default_eta_grid(double lo, double hi) {
    std::vector<double> g;
    for (double v = lo; v <= hi + 1e-9; v += 0.1) g.push_back(snap_grid(v));
    return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DatasetConfig {
    std::string kind = "synthetic";  // "synthetic" | "credit"
    std::string path;                // credit file; optional cached CSV for synthetic
    std::string label;               // defaults: credit_risk / label
    std::vector<data::SensitiveRule> rules;  // conjunction; default depends on kind
    std::vector<std::string> exclude_features;
    data::SyntheticSpec synth;
};

struct SweepConfig {
    std::vector<std::string> methods{"dvge", "plain", "dim_removal"};
    std::vector<double> eta1 = detail::default_eta_grid(0.1, 2.0);
    std::vector<double> eta2 = detail::default_eta_grid(0.1, 2.0);
    std::size_t max_pairs = 40;
    std::vector<double> gammas;  // factorized-encoder grid; empty = encoder's own
    std::vector<double> adt_lambda{1.0};
    std::vector<std::size_t> dim_removal_k{1, 2};
    std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct AblationConfig {
    std::vector<double> eta1 = detail::default_eta_grid(0.1, 1.0);
    std::size_t k = 1;
    double eps_ratio = 0.1;
    double gamma = 6.0;  // total-correlation weight for the factorized row
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct ExperimentConfig {
    int schema_version = 1;
    std::string experiment_name = "experiment";
    std::uint64_t master_seed = 1;
    DatasetConfig dataset;
    double train_frac = 0.8;
    std::string encoder_kind = "vanilla";  // "vanilla" | "factor"
    vae::VaeConfig encoder;                // gamma used only by "factor"
    baselines::SensitiveTrainConfig sensitive;
    debias::TaskTrainConfig task;
    debias::PerturbationConfig perturbation;
    baselines::AdtConfig adt;
    SweepConfig sweep;
    AblationConfig ablation;
};

namespace detail {

inline std::vector<double> parse_grid(const json& j, const std::string& what) {
    std::vector<double> out;
    if (j.is_array()) {
        out = j.get<std::vector<double>>();
    } else if (j.contains("values")) {
        out = j.at("values").get<std::vector<double>>();
    } else {
        const double lo = j.at("min").get<double>();
        const double hi = j.at("max").get<double>();
        const double step = j.at("step").get<double>();
        if (step <= 0.0 || hi < lo) throw ParseError(what + ": bad grid bounds");
        const auto count = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
        for (std::size_t i = 0; i < count; ++i)
            out.push_back(snap_grid(lo + static_cast<double>(i) * step));
        while (!out.empty() && out.back() > hi + 1e-9) out.pop_back();
    }
    if (out.empty()) throw ParseError(what + ": empty grid");
    return out;
}

inline data::SensitiveRule parse_rule(const json& j) {
    data::SensitiveRule r;
    r.column = j.at("column").get<std::string>();
    const std::string op = j.value("op", "ge");
    if (op == "ge") {
        r.kind = data::SensitiveRule::Kind::ge_threshold;
        r.threshold = j.at("threshold").get<double>();
    } else if (op == "in") {
        r.kind = data::SensitiveRule::Kind::in_set;
        r.values = j.at("values").get<std::vector<double>>();
    } else if (op == "identity") {
        r.kind = data::SensitiveRule::Kind::identity;
    } else {
        throw ParseError("sensitive rule: unknown op '" + op + "'");
    }
    return r;
}

inline json rule_to_json(const data::SensitiveRule& r) {
    json j;
    j["column"] = r.column;
    switch (r.kind) {
        case data::SensitiveRule::Kind::ge_threshold:
            j["op"] = "ge";
            j["threshold"] = r.threshold;
            break;
        case data::SensitiveRule::Kind::in_set:
            j["op"] = "in";
            j["values"] = r.values;
            break;
        case data::SensitiveRule::Kind::identity: j["op"] = "identity"; break;
    }
    return j;
}

inline void parse_adam(const json& j, nn::AdamConfig& adam) {
    adam.lr = j.value("lr", adam.lr);
    adam.beta1 = j.value("beta1", adam.beta1);
    adam.beta2 = j.value("beta2", adam.beta2);
    adam.eps = j.value("adam_eps", adam.eps);
}

inline json adam_to_json(const nn::AdamConfig& adam) {
    return json{{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2},
                {"adam_eps", adam.eps}};
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig cfg;
    if (j.contains("schema_version")) {
        cfg.schema_version = j.at("schema_version").get<int>();
        if (cfg.schema_version != 1)
            throw ParseError("unsupported config schema_version " +
                             std::to_string(cfg.schema_version));
    }
    cfg.experiment_name = j.value("experiment_name", cfg.experiment_name);
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    cfg.train_frac = j.value("split", json::object()).value("train_frac", cfg.train_frac);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
        if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "credit")
            throw ParseError("dataset.kind must be 'synthetic' or 'credit'");
        cfg.dataset.path = d.value("path", cfg.dataset.path);
        cfg.dataset.label = d.value("label", cfg.dataset.label);
        cfg.dataset.exclude_features =
            d.value("exclude_features", cfg.dataset.exclude_features);
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            auto& sp = cfg.dataset.synth;
            sp.n = s.value("n", sp.n);
            sp.task_features = s.value("task_features", sp.task_features);
            sp.proxy_features = s.value("proxy_features", sp.proxy_features);
            sp.noise_features = s.value("noise_features", sp.noise_features);
            sp.sensitive_prevalence = s.value("sensitive_prevalence", sp.sensitive_prevalence);
            sp.rho_p = s.value("rho_p", sp.rho_p);
            sp.beta_s = s.value("beta_s", sp.beta_s);
            sp.task_gain = s.value("task_gain", sp.task_gain);
            sp.noise = s.value("noise", sp.noise);
        }
        if (d.contains("sensitive_rules"))
            for (const json& r : d.at("sensitive_rules"))
                cfg.dataset.rules.push_back(detail::parse_rule(r));
    }
    if (cfg.dataset.label.empty())
        cfg.dataset.label = cfg.dataset.kind == "credit" ? "credit_risk"
                                                         : data::kSyntheticLabelColumn;
    if (cfg.dataset.rules.empty()) {
        if (cfg.dataset.kind == "credit") {
            data::SensitiveRule r;
            r.column = "age";
            r.kind = data::SensitiveRule::Kind::ge_threshold;
            r.threshold = 25.0;
            cfg.dataset.rules.push_back(r);
        } else {
            cfg.dataset.rules.push_back(data::synthetic_group_rule());
        }
    }

    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        cfg.encoder_kind = e.value("kind", cfg.encoder_kind);
        if (cfg.encoder_kind != "vanilla" && cfg.encoder_kind != "factor")
            throw ParseError("encoder.kind must be 'vanilla' or 'factor'");
        auto& v = cfg.encoder;
        v.latent_dim = e.value("latent_dim", v.latent_dim);
        v.enc_hidden = e.value("hidden", v.enc_hidden);
        v.dec_hidden = e.value("dec_hidden", v.enc_hidden);
        v.disc_hidden = e.value("disc_hidden", v.disc_hidden);
        v.gamma = e.value("gamma", 6.0);
        v.leaky_slope = e.value("leaky_slope", v.leaky_slope);
        v.epochs = e.value("epochs", v.epochs);
        v.batch_size = e.value("batch_size", v.batch_size);
        detail::parse_adam(e, v.adam_vae);
        if (e.contains("disc_lr")) cfg.encoder.adam_disc.lr = e.at("disc_lr").get<double>();
        if (e.contains("disc_beta1")) cfg.encoder.adam_disc.beta1 = e.at("disc_beta1").get<double>();
        if (e.contains("disc_beta2")) cfg.encoder.adam_disc.beta2 = e.at("disc_beta2").get<double>();
    } else {
        cfg.encoder.gamma = 6.0;
    }
    if (cfg.encoder_kind == "vanilla") cfg.encoder.gamma = 0.0;

    if (j.contains("sensitive_classifier")) {
        const json& s = j.at("sensitive_classifier");
        auto& c = cfg.sensitive;
        c.hidden = s.value("hidden", c.hidden);
        c.leaky_slope = s.value("leaky_slope", c.leaky_slope);
        c.epochs = s.value("epochs", c.epochs);
        c.batch_size = s.value("batch_size", c.batch_size);
        c.holdout_frac = s.value("holdout_frac", c.holdout_frac);
        detail::parse_adam(s, c.adam);
    }
    if (j.contains("task")) {
        const json& t = j.at("task");
        auto& c = cfg.task;
        c.hidden = t.value("hidden", c.hidden);
        c.leaky_slope = t.value("leaky_slope", c.leaky_slope);
        c.epochs = t.value("epochs", c.epochs);
        c.batch_size = t.value("batch_size", c.batch_size);
        detail::parse_adam(t, c.adam);
    }
    if (j.contains("perturbation")) {
        const json& p = j.at("perturbation");
        cfg.perturbation.eta1 = p.value("eta1", cfg.perturbation.eta1);
        cfg.perturbation.eta2 = p.value("eta2", cfg.perturbation.eta2);
        cfg.perturbation.eps_ratio = p.value("eps_ratio", cfg.perturbation.eps_ratio);
    }
    if (j.contains("adt")) {
        const json& a = j.at("adt");
        auto& c = cfg.adt;
        c.encoder_hidden = a.value("encoder_hidden", c.encoder_hidden);
        c.repr_width = a.value("repr_width", c.repr_width);
        c.head_hidden = a.value("head_hidden", c.head_hidden);
        c.leaky_slope = a.value("leaky_slope", c.leaky_slope);
        c.epochs = a.value("epochs", c.epochs);
        c.batch_size = a.value("batch_size", c.batch_size);
        detail::parse_adam(a, c.adam);
    }

    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        auto& c = cfg.sweep;
        c.methods = s.value("methods", c.methods);
        if (s.contains("eta1")) c.eta1 = detail::parse_grid(s.at("eta1"), "sweep.eta1");
        if (s.contains("eta2")) c.eta2 = detail::parse_grid(s.at("eta2"), "sweep.eta2");
        c.max_pairs = s.value("max_pairs", c.max_pairs);
        // An empty gamma grid means "whatever the encoder section says".
        if (s.contains("gamma") && !(s.at("gamma").is_array() && s.at("gamma").empty()))
            c.gammas = detail::parse_grid(s.at("gamma"), "sweep.gamma");
        if (s.contains("adt_lambda"))
            c.adt_lambda = detail::parse_grid(s.at("adt_lambda"), "sweep.adt_lambda");
        c.dim_removal_k = s.value("dim_removal_k", c.dim_removal_k);
        c.seeds = s.value("seeds", c.seeds);
        for (const std::string& m : c.methods)
            if (m != "dvge" && m != "plain" && m != "dim_removal" && m != "adt")
                throw ParseError("sweep.methods: unknown method '" + m + "'");
        if (c.methods.empty() || c.seeds.empty())
            throw ParseError("sweep: methods and seeds must be non-empty");
    }

    if (j.contains("ablation")) {
        const json& a = j.at("ablation");
        auto& c = cfg.ablation;
        if (a.contains("eta1")) c.eta1 = detail::parse_grid(a.at("eta1"), "ablation.eta1");
        c.k = a.value("k", c.k);
        c.eps_ratio = a.value("eps_ratio", c.eps_ratio);
        c.gamma = a.value("gamma", c.gamma);
        c.seeds = a.value("seeds", c.seeds);
        if (c.seeds.empty()) throw ParseError("ablation: seeds must be non-empty");
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open config");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(path + ": invalid JSON: " + e.what());
    }
    try {
        return parse_experiment_config(j);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

// Canonical dump of the effective (defaults-applied) configuration.
// nlohmann::json sorts object keys, so the serialization is stable.
inline json effective_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["experiment_name"] = cfg.experiment_name;
    j["master_seed"] = cfg.master_seed;
    json d;
    d["kind"] = cfg.dataset.kind;
    d["path"] = cfg.dataset.path;
    d["label"] = cfg.dataset.label;
    d["exclude_features"] = cfg.dataset.exclude_features;
    d["sensitive_rules"] = json::array();
    for (const auto& r : cfg.dataset.rules) d["sensitive_rules"].push_back(detail::rule_to_json(r));
    if (cfg.dataset.kind == "synthetic") {
        const auto& sp = cfg.dataset.synth;
        d["synthetic"] = json{{"n", sp.n},
                              {"task_features", sp.task_features},
                              {"proxy_features", sp.proxy_features},
                              {"noise_features", sp.noise_features},
                              {"sensitive_prevalence", sp.sensitive_prevalence},
                              {"rho_p", sp.rho_p},
                              {"beta_s", sp.beta_s},
                              {"task_gain", sp.task_gain},
                              {"noise", sp.noise}};
    }
    j["dataset"] = std::move(d);
    j["split"] = json{{"train_frac", cfg.train_frac}};
    json e = detail::adam_to_json(cfg.encoder.adam_vae);
    e["kind"] = cfg.encoder_kind;
    e["latent_dim"] = cfg.encoder.latent_dim;
    e["hidden"] = cfg.encoder.enc_hidden;
    e["dec_hidden"] = cfg.encoder.dec_hidden;
    e["disc_hidden"] = cfg.encoder.disc_hidden;
    e["gamma"] = cfg.encoder.gamma;
    e["leaky_slope"] = cfg.encoder.leaky_slope;
    e["epochs"] = cfg.encoder.epochs;
    e["batch_size"] = cfg.encoder.batch_size;
    e["disc_lr"] = cfg.encoder.adam_disc.lr;
    e["disc_beta1"] = cfg.encoder.adam_disc.beta1;
    e["disc_beta2"] = cfg.encoder.adam_disc.beta2;
    j["encoder"] = std::move(e);
    json s = detail::adam_to_json(cfg.sensitive.adam);
    s["hidden"] = cfg.sensitive.hidden;
    s["leaky_slope"] = cfg.sensitive.leaky_slope;
    s["epochs"] = cfg.sensitive.epochs;
    s["batch_size"] = cfg.sensitive.batch_size;
    s["holdout_frac"] = cfg.sensitive.holdout_frac;
    j["sensitive_classifier"] = std::move(s);
    json t = detail::adam_to_json(cfg.task.adam);
    t["hidden"] = cfg.task.hidden;
    t["leaky_slope"] = cfg.task.leaky_slope;
    t["epochs"] = cfg.task.epochs;
    t["batch_size"] = cfg.task.batch_size;
    j["task"] = std::move(t);
    j["perturbation"] = json{{"eta1", cfg.perturbation.eta1},
                             {"eta2", cfg.perturbation.eta2},
                             {"eps_ratio", cfg.perturbation.eps_ratio}};
    json a = detail::adam_to_json(cfg.adt.adam);
    a["encoder_hidden"] = cfg.adt.encoder_hidden;
    a["repr_width"] = cfg.adt.repr_width;
    a["head_hidden"] = cfg.adt.head_hidden;
    a["leaky_slope"] = cfg.adt.leaky_slope;
    a["epochs"] = cfg.adt.epochs;
    a["batch_size"] = cfg.adt.batch_size;
    j["adt"] = std::move(a);
    j["sweep"] = json{{"methods", cfg.sweep.methods},
                      {"eta1", cfg.sweep.eta1},
                      {"eta2", cfg.sweep.eta2},
                      {"max_pairs", cfg.sweep.max_pairs},
                      {"gamma", cfg.sweep.gammas},
                      {"adt_lambda", cfg.sweep.adt_lambda},
                      {"dim_removal_k", cfg.sweep.dim_removal_k},
                      {"seeds", cfg.sweep.seeds}};
    j["ablation"] = json{{"eta1", cfg.ablation.eta1},
                         {"k", cfg.ablation.k},
                         {"eps_ratio", cfg.ablation.eps_ratio},
                         {"gamma", cfg.ablation.gamma},
                         {"seeds", cfg.ablation.seeds}};
    return j;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    return hash_hex(fnv1a64(effective_json(cfg).dump()));
}

// Hash of only the sections a stage depends on, so caches survive edits to
// unrelated sections.
inline std::string stage_hash(const ExperimentConfig& cfg, const std::string& stage) {
    json full = effective_json(cfg);
    json j;
    for (const char* key : {"schema_version", "master_seed", "dataset", "split"})
        j[key] = full.at(key);
    if (stage == "vae" || stage == "sens" || stage == "task") j["encoder"] = full.at("encoder");
    if (stage == "sens" || stage == "task") j["sensitive_classifier"] = full.at("sensitive_classifier");
    if (stage == "task") {
        j["task"] = full.at("task");
        j["perturbation"] = full.at("perturbation");
    }
    j["stage"] = stage;
    return hash_hex(fnv1a64(j.dump()));
}

inline std::string short_hash(const std::string& hex16) { return hex16.substr(0, 8); }

// ---------------------------------------------------------------------------
// Pipeline data
// ---------------------------------------------------------------------------

struct Pipeline {
    data::DatasetTable table;  // normalized
    Tensor features;
    std::vector<std::size_t> labels;
    std::vector<std::uint8_t> groups;
    data::SplitIndices split;
    Tensor x_train, x_test;
    std::vector<std::size_t> y_train, y_test;
    std::vector<std::uint8_t> g_train, g_test;
};

inline Pipeline build_pipeline(const ExperimentConfig& cfg) {
    Pipeline p;
    if (cfg.dataset.kind == "credit") {
        if (cfg.dataset.path.empty())
            throw std::invalid_argument("credit dataset requires dataset.path");
        p.table = data::load_credit(cfg.dataset.path);
    } else if (!cfg.dataset.path.empty() && fs::exists(cfg.dataset.path)) {
        p.table = data::read_table_csv(cfg.dataset.path);
    } else {
        data::SyntheticSpec spec = cfg.dataset.synth;
        spec.seed = derive_seed(cfg.master_seed, "data");
        p.table = data::synth_generate(spec);
    }

    p.labels = p.table.binary_column(cfg.dataset.label);
    std::vector<std::vector<std::uint8_t>> tags;
    for (const auto& rule : cfg.dataset.rules) tags.push_back(data::binarize(p.table, rule));
    p.groups = data::conjunction(tags);

    data::normalize(p.table);
    p.features = p.table.feature_matrix(cfg.dataset.exclude_features);

    p.split = data::split_indices(p.table.rows(), cfg.train_frac, cfg.master_seed);
    p.x_train = tensor_rows(p.features, p.split.train);
    p.x_test = tensor_rows(p.features, p.split.test);
    for (std::size_t i : p.split.train) {
        p.y_train.push_back(p.labels[i]);
        p.g_train.push_back(p.groups[i]);
    }
    for (std::size_t i : p.split.test) {
        p.y_test.push_back(p.labels[i]);
        p.g_test.push_back(p.groups[i]);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Cached stages
// ---------------------------------------------------------------------------

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline vae::VaeConfig vae_config(const ExperimentConfig& cfg) {
    vae::VaeConfig v = cfg.encoder;
    if (cfg.encoder_kind == "vanilla") v.gamma = 0.0;
    v.seed = derive_seed(cfg.master_seed, "vae");
    return v;
}

}  // namespace detail

// Trains the configured encoder on the training split, or loads it when a
// checkpoint for the same stage hash already exists. Returns the
// checkpoint path through `path_out` when non-null.
inline vae::VaeModel ensure_vae(const ExperimentConfig& cfg, const Pipeline& p,
                                const std::string& out_dir, std::string* path_out = nullptr) {
    fs::create_directories(out_dir);
    const std::string h8 = short_hash(stage_hash(cfg, "vae"));
    const fs::path path = fs::path(out_dir) / ("vae-" + h8 + ".json");
    if (path_out) *path_out = path.string();
    if (fs::exists(path)) return ckpt::load_vae(path.string());

    const auto t0 = std::chrono::steady_clock::now();
    vae::VaeConfig vcfg = detail::vae_config(cfg);
    json meta;
    vae::VaeModel model;
    if (cfg.encoder_kind == "factor" && vcfg.gamma != 0.0) {
        vae::TrainedFactorVae trained = vae::train_factor_vae(p.x_train, vcfg);
        model = std::move(trained.model);
        meta["epoch_loss"] = trained.epoch_loss;
        meta["initial_loss"] = trained.initial_loss;
        ckpt::save_mlp((fs::path(out_dir) / ("disc-" + h8 + ".json")).string(),
                       trained.discriminator);
    } else {
        vae::TrainedVae trained = vae::train_vanilla_vae(p.x_train, vcfg);
        model = std::move(trained.model);
        meta["epoch_loss"] = trained.epoch_loss;
        meta["initial_loss"] = trained.initial_loss;
    }
    ckpt::save_vae(path.string(), model);
    meta["stage"] = "vae";
    meta["kind"] = cfg.encoder_kind;
    meta["gamma"] = vcfg.gamma;
    meta["seconds"] = detail::seconds_since(t0);
    meta["checkpoint"] = path.filename().string();
    ckpt::write_json_file((fs::path(out_dir) / ("vae-" + h8 + ".meta.json")).string(), meta);
    return model;
}

// Trains the protected-group classifier on the training-split codes (or
// loads it); the checkpoint keeps the best-holdout-epoch snapshot, which
// is what the debiasing pipeline uses as its focus source.
inline nn::Mlp ensure_sensitive(const ExperimentConfig& cfg, const Pipeline& p,
                                const vae::VaeModel& encoder, const std::string& out_dir,
                                std::string* path_out = nullptr) {
    fs::create_directories(out_dir);
    const std::string h8 = short_hash(stage_hash(cfg, "sens"));
    const fs::path path = fs::path(out_dir) / ("sens-" + h8 + ".json");
    if (path_out) *path_out = path.string();
    if (fs::exists(path)) return ckpt::load_mlp(path.string());

    const auto t0 = std::chrono::steady_clock::now();
    baselines::SensitiveTrainConfig scfg = cfg.sensitive;
    scfg.seed = derive_seed(cfg.master_seed, "sens");
    Tensor codes = vae::latent_codes(encoder, p.x_train);
    baselines::TrainedSensitive trained =
        baselines::train_sensitive_classifier(codes, p.g_train, scfg);
    ckpt::save_mlp(path.string(), trained.best_model);
    json meta;
    meta["stage"] = "sens";
    meta["holdout_accuracy"] = trained.holdout_accuracy;
    meta["best_holdout_accuracy"] = trained.best_holdout_accuracy;
    meta["epoch_holdout_acc"] = trained.epoch_holdout_acc;
    meta["seconds"] = detail::seconds_since(t0);
    meta["checkpoint"] = path.filename().string();
    ckpt::write_json_file((fs::path(out_dir) / ("sens-" + h8 + ".meta.json")).string(), meta);
    return trained.best_model;
}

// Trains the downstream task model with the config's perturbation settings
// (eta1 = eta2 = 0 means plain training), or loads it from cache.
inline nn::Mlp ensure_task(const ExperimentConfig& cfg, const Pipeline& p,
                           const vae::VaeModel& encoder, const nn::Mlp& sens,
                           const std::string& out_dir, std::string* path_out = nullptr) {
    fs::create_directories(out_dir);
    const std::string h8 = short_hash(stage_hash(cfg, "task"));
    const fs::path path = fs::path(out_dir) / ("task-" + h8 + ".json");
    if (path_out) *path_out = path.string();
    if (fs::exists(path)) return ckpt::load_mlp(path.string());

    const auto t0 = std::chrono::steady_clock::now();
    debias::TaskTrainConfig tcfg = cfg.task;
    tcfg.seed = derive_seed(cfg.master_seed, "task");
    debias::TrainedTask trained =
        debias::train_dvge(encoder, sens, p.x_train, p.y_train, tcfg, cfg.perturbation);
    ckpt::save_mlp(path.string(), trained.model);

    json meta;
    meta["stage"] = "task";
    meta["eta1"] = cfg.perturbation.eta1;
    meta["eta2"] = cfg.perturbation.eta2;
    meta["eps_ratio"] = cfg.perturbation.eps_ratio;
    meta["epoch_loss"] = trained.epoch_loss;
    Tensor test_codes = vae::latent_codes(encoder, p.x_test);
    std::vector<std::size_t> preds = debias::infer(trained.model, test_codes);
    try {
        fairness::FairnessReport rep =
            fairness::FairnessReport::from({preds, p.y_test, p.g_test});
        meta["accuracy"] = rep.accuracy;
        meta["delta_dp"] = rep.delta_dp;
        meta["delta_eo"] = rep.delta_eo;
    } catch (const UndefinedMetric& e) {
        meta["metric_error"] = e.what();
    }
    meta["seconds"] = detail::seconds_since(t0);
    meta["checkpoint"] = path.filename().string();
    ckpt::write_json_file((fs::path(out_dir) / ("task-" + h8 + ".meta.json")).string(), meta);
    return trained.model;
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

// Runs fn(0..n-1) on up to `jobs` threads. Rethrows the first exception
// after all workers finish. Job bodies that must not abort the batch are
// expected to catch internally.
inline void parallel_for(std::size_t n, std::size_t jobs,
                         const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (jobs <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    const std::size_t count = std::min(jobs, n);
    threads.reserve(count);
    for (std::size_t t = 0; t < count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dvge::exp
