#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dvge/errors.hpp"
#include "dvge/rng.hpp"
#include "dvge/tensor.hpp"

namespace dvge::data {

// `label` columns hold binary targets and are excluded from feature
// matrices and normalization automatically. Sensitive attributes are
// ordinary feature columns; protected-group tags are derived from them by
// rule, so debiasing never depends on manual feature surgery.
enum class ColumnKind { continuous, categorical, label };

inline std::string to_string(ColumnKind k) {
    switch (k) {
        case ColumnKind::continuous: return "continuous";
        case ColumnKind::categorical: return "categorical";
        case ColumnKind::label: return "label";
    }
    throw std::invalid_argument("unknown column kind");
}

inline ColumnKind kind_from_string(const std::string& s) {
    if (s == "continuous") return ColumnKind::continuous;
    if (s == "categorical") return ColumnKind::categorical;
    if (s == "label") return ColumnKind::label;
    throw ParseError("unknown column kind '" + s + "'");
}

struct DatasetTable {
    std::vector<std::string> names;
    std::vector<ColumnKind> kinds;
    std::vector<std::vector<double>> cols;  // column-major

    std::size_t rows() const { return cols.empty() ? 0 : cols[0].size(); }
    std::size_t width() const { return cols.size(); }

    std::size_t col_index(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw std::invalid_argument("no column named '" + name + "'");
    }
    const std::vector<double>& col(const std::string& name) const { return cols[col_index(name)]; }

    bool is_feature(std::size_t i) const {
        return kinds[i] == ColumnKind::continuous || kinds[i] == ColumnKind::categorical;
    }

    // Row-major matrix of all feature columns, minus any extra exclusions.
    Tensor feature_matrix(const std::vector<std::string>& exclude = {}) const {
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (!is_feature(i)) continue;
            if (std::find(exclude.begin(), exclude.end(), names[i]) != exclude.end()) continue;
            keep.push_back(i);
        }
        if (keep.empty()) throw std::invalid_argument("feature_matrix: no feature columns left");
        Tensor out = Tensor::zeros({rows(), keep.size()});
        for (std::size_t r = 0; r < rows(); ++r)
            for (std::size_t k = 0; k < keep.size(); ++k)
                out.values[r * keep.size() + k] = cols[keep[k]][r];
        return out;
    }

    std::vector<std::string> feature_names(const std::vector<std::string>& exclude = {}) const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (!is_feature(i)) continue;
            if (std::find(exclude.begin(), exclude.end(), names[i]) != exclude.end()) continue;
            out.push_back(names[i]);
        }
        return out;
    }

    std::vector<std::size_t> binary_column(const std::string& name) const {
        const std::vector<double>& c = col(name);
        std::vector<std::size_t> out(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (c[i] != 0.0 && c[i] != 1.0)
                throw std::invalid_argument("column '" + name + "' is not binary at row " +
                                            std::to_string(i));
            out[i] = c[i] == 1.0 ? 1 : 0;
        }
        return out;
    }

    DatasetTable take_rows(const std::vector<std::size_t>& idx) const {
        DatasetTable out;
        out.names = names;
        out.kinds = kinds;
        out.cols.resize(cols.size());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            out.cols[c].reserve(idx.size());
            for (std::size_t i : idx) out.cols[c].push_back(cols[c].at(i));
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Credit-scoring dataset loader
// ---------------------------------------------------------------------------

namespace detail {

// Original German column names and their English equivalents, in file order.
// The last column is the good/bad credit outcome.
struct CreditColumn {
    const char* german;
    const char* english;
    ColumnKind kind;
};

inline const std::vector<CreditColumn>& credit_columns() {
    static const std::vector<CreditColumn> cols = {
        {"laufkont", "status", ColumnKind::categorical},
        {"laufzeit", "duration", ColumnKind::continuous},
        {"moral", "credit_history", ColumnKind::categorical},
        {"verw", "purpose", ColumnKind::categorical},
        {"hoehe", "amount", ColumnKind::continuous},
        {"sparkont", "savings", ColumnKind::categorical},
        {"beszeit", "employment_duration", ColumnKind::categorical},
        {"rate", "installment_rate", ColumnKind::categorical},
        {"famges", "personal_status_sex", ColumnKind::categorical},
        {"buerge", "other_debtors", ColumnKind::categorical},
        {"wohnzeit", "present_residence", ColumnKind::categorical},
        {"verm", "property", ColumnKind::categorical},
        {"alter", "age", ColumnKind::continuous},
        {"weitkred", "other_installment_plans", ColumnKind::categorical},
        {"wohn", "housing", ColumnKind::categorical},
        {"bishkred", "number_credits", ColumnKind::categorical},
        {"beruf", "job", ColumnKind::categorical},
        {"pers", "people_liable", ColumnKind::categorical},
        {"telef", "telephone", ColumnKind::categorical},
        {"gastarb", "foreign_worker", ColumnKind::categorical},
        {"kredit", "credit_risk", ColumnKind::label},
    };
    return cols;
}

// delimiter '\0' auto-detects between comma and whitespace.
inline std::vector<std::string> split_fields(const std::string& line, char delimiter = '\0') {
    std::vector<std::string> out;
    const bool comma =
        delimiter == ',' || (delimiter == '\0' && line.find(',') != std::string::npos);
    std::string token;
    std::istringstream ss(line);
    if (comma) {
        while (std::getline(ss, token, ',')) {
            // trim surrounding whitespace
            const auto b = token.find_first_not_of(" \t\r");
            const auto e = token.find_last_not_of(" \t\r");
            out.push_back(b == std::string::npos ? "" : token.substr(b, e - b + 1));
        }
    } else {
        while (ss >> token) out.push_back(token);
    }
    return out;
}

inline bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace detail

// Loads the 21-column credit-risk table (space- or comma-separated, with or
// without a header row of German or English names). Column names come out
// in English; the outcome column is `credit_risk` (1 = good risk).
// Pass delimiter ' ' or ',' to override auto-detection.
inline DatasetTable load_credit(const std::string& path, char delimiter = '\0') {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    const auto& meta = detail::credit_columns();

    DatasetTable table;
    for (const auto& c : meta) {
        table.names.push_back(c.english);
        table.kinds.push_back(c.kind);
    }
    table.cols.resize(meta.size());

    std::string line;
    std::size_t line_no = 0;
    bool first_content_line = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> fields = detail::split_fields(line, delimiter);
        if (fields.empty()) continue;

        if (first_content_line) {
            first_content_line = false;
            double ignored;
            if (!detail::parse_number(fields[0], ignored)) {
                // header row: must name the expected columns in order
                if (fields.size() != meta.size())
                    throw ParseError(path + ":" + std::to_string(line_no) + ": header has " +
                                     std::to_string(fields.size()) + " columns, expected " +
                                     std::to_string(meta.size()));
                for (std::size_t i = 0; i < fields.size(); ++i) {
                    if (fields[i] != meta[i].german && fields[i] != meta[i].english)
                        throw ParseError(path + ":" + std::to_string(line_no) + ": column " +
                                         std::to_string(i + 1) + " is '" + fields[i] +
                                         "', expected '" + meta[i].german + "'");
                }
                continue;
            }
        }

        if (fields.size() != meta.size())
            throw ParseError(path + ":" + std::to_string(line_no) + ": row has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(meta.size()));
        for (std::size_t i = 0; i < fields.size(); ++i) {
            double v;
            if (!detail::parse_number(fields[i], v))
                throw ParseError(path + ":" + std::to_string(line_no) + ": field " +
                                 std::to_string(i + 1) + " ('" + fields[i] +
                                 "') is not a number");
            table.cols[i].push_back(v);
        }
    }
    if (table.rows() == 0) throw ParseError(path + ": no data rows");
    return table;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Scales every feature column into [0, 1], in place:
//  - continuous: divide by the column maximum (values must be non-negative
//    with a positive maximum);
//  - categorical: distinct codes, sorted, map to equally spaced points in
//    [0, 1] (a single distinct code maps to 0).
// Label/group columns are untouched. Applying it twice is a no-op.
inline void normalize(DatasetTable& table) {
    for (std::size_t c = 0; c < table.cols.size(); ++c) {
        if (!table.is_feature(c)) continue;
        std::vector<double>& col = table.cols[c];
        if (table.kinds[c] == ColumnKind::continuous) {
            double mx = 0.0;
            for (double v : col) {
                if (v < 0.0)
                    throw std::invalid_argument("normalize: negative value in continuous column '" +
                                                table.names[c] + "'");
                mx = std::max(mx, v);
            }
            if (mx <= 0.0)
                throw std::invalid_argument("normalize: column '" + table.names[c] +
                                            "' has no positive values");
            for (double& v : col) v /= mx;
        } else {
            std::vector<double> uniq = col;
            std::sort(uniq.begin(), uniq.end());
            uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
            std::map<double, double> remap;
            const std::size_t k = uniq.size();
            for (std::size_t i = 0; i < k; ++i)
                remap[uniq[i]] = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
            for (double& v : col) v = remap[v];
        }
    }
}

// ---------------------------------------------------------------------------
// Protected-group binarization
// ---------------------------------------------------------------------------

// Maps a raw column to a binary group tag: "value >= threshold",
// "value is one of a set", or "column is already 0/1". Apply to raw
// (pre-normalization) values.
struct SensitiveRule {
    enum class Kind { ge_threshold, in_set, identity };
    std::string column;
    Kind kind = Kind::ge_threshold;
    double threshold = 0.0;
    std::vector<double> values;
};

inline std::vector<std::uint8_t> binarize(const DatasetTable& table, const SensitiveRule& rule) {
    const std::vector<double>& col = table.col(rule.column);
    if (rule.kind == SensitiveRule::Kind::in_set) {
        if (rule.values.empty())
            throw std::invalid_argument("binarize: empty value set for '" + rule.column + "'");
        for (double v : rule.values)
            if (std::find(col.begin(), col.end(), v) == col.end())
                throw std::invalid_argument("binarize: value " + std::to_string(v) +
                                            " never occurs in column '" + rule.column + "'");
    }
    std::vector<std::uint8_t> out(col.size());
    for (std::size_t i = 0; i < col.size(); ++i) {
        bool hit;
        switch (rule.kind) {
            case SensitiveRule::Kind::ge_threshold: hit = col[i] >= rule.threshold; break;
            case SensitiveRule::Kind::in_set:
                hit = std::find(rule.values.begin(), rule.values.end(), col[i]) !=
                      rule.values.end();
                break;
            case SensitiveRule::Kind::identity:
            default:
                if (col[i] != 0.0 && col[i] != 1.0)
                    throw std::invalid_argument("binarize: column '" + rule.column +
                                                "' is not binary at row " + std::to_string(i));
                hit = col[i] == 1.0;
                break;
        }
        out[i] = hit ? 1 : 0;
    }
    return out;
}

inline std::vector<std::uint8_t> binarize_sensitive(const DatasetTable& table,
                                                    const std::string& column,
                                                    SensitiveRule rule) {
    rule.column = column;
    return binarize(table, rule);
}

// Intersection of several binary tags (1 only where every rule fires).
inline std::vector<std::uint8_t> conjunction(const std::vector<std::vector<std::uint8_t>>& tags) {
    if (tags.empty()) throw std::invalid_argument("conjunction: no tags");
    std::vector<std::uint8_t> out(tags[0].size(), 1);
    for (const auto& t : tags) {
        if (t.size() != out.size()) throw ShapeError("conjunction: tag length mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] && t[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

// Tabular generator with a controllable link between a binary sensitive
// attribute and the observed features/label:
//  - `sensitive_prevalence`: P(sensitive = 1).
//  - `rho_p`: proxy-sensitive correlation; each proxy column equals the
//    sensitive bit with probability (1 + rho_p) / 2, its complement
//    otherwise (rho_p = 1 makes proxies identical to it).
//  - `beta_s`: label bias; P(y = 1) is raised by beta_s (probability-space,
//    clamped to [0, 1]) whenever sensitive = 1, creating a parity gap.
//  - `task_gain`: steepness of the label's dependence on the task columns;
//    higher values make the task more learnable.
//  - `noise`: probability of flipping the final label.
// Feature columns come out as [task signals, sensitive, proxies, noise],
// then the `label` column. The sensitive column is a regular feature —
// debiasing must cope with it present — and the protected-group tag is
// derived from it by rule.
struct SyntheticSpec {
    std::size_t n = 10000;
    std::size_t task_features = 4;
    std::size_t proxy_features = 2;
    std::size_t noise_features = 2;
    double sensitive_prevalence = 0.5;
    double rho_p = 0.8;
    double beta_s = 0.3;
    double task_gain = 8.0;
    double noise = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (n == 0 || task_features == 0 || proxy_features == 0)
            throw std::invalid_argument("SyntheticSpec: need rows, task and proxy columns");
        if (sensitive_prevalence <= 0.0 || sensitive_prevalence >= 1.0)
            throw std::invalid_argument("SyntheticSpec: sensitive_prevalence outside (0, 1)");
        if (rho_p < 0.0 || rho_p > 1.0)
            throw std::invalid_argument("SyntheticSpec: rho_p outside [0, 1]");
        if (noise < 0.0 || noise >= 0.5)
            throw std::invalid_argument("SyntheticSpec: noise outside [0, 0.5)");
    }
};

inline const char* kSyntheticSensitiveColumn = "sensitive";
inline const char* kSyntheticLabelColumn = "label";

inline DatasetTable synth_generate(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, "synth"));

    DatasetTable t;
    auto add_col = [&](const std::string& name, ColumnKind kind) {
        t.names.push_back(name);
        t.kinds.push_back(kind);
        t.cols.emplace_back();
        t.cols.back().reserve(spec.n);
        return t.cols.size() - 1;
    };
    std::vector<std::size_t> task_idx, proxy_idx, noise_idx;
    for (std::size_t j = 0; j < spec.task_features; ++j)
        task_idx.push_back(add_col("task" + std::to_string(j), ColumnKind::continuous));
    const std::size_t sens_idx = add_col(kSyntheticSensitiveColumn, ColumnKind::categorical);
    for (std::size_t j = 0; j < spec.proxy_features; ++j)
        proxy_idx.push_back(add_col("proxy" + std::to_string(j), ColumnKind::categorical));
    for (std::size_t j = 0; j < spec.noise_features; ++j)
        noise_idx.push_back(add_col("noise" + std::to_string(j), ColumnKind::continuous));
    const std::size_t label_idx = add_col(kSyntheticLabelColumn, ColumnKind::label);

    const double p_match = 0.5 * (1.0 + spec.rho_p);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const int s = rng.bernoulli(spec.sensitive_prevalence) ? 1 : 0;
        double task_sum = 0.0;
        for (std::size_t j : task_idx) {
            const double v = rng.uniform();
            t.cols[j].push_back(v);
            task_sum += v;
        }
        t.cols[sens_idx].push_back(s);
        for (std::size_t j : proxy_idx) {
            const int match = rng.bernoulli(p_match) ? 1 : 0;
            t.cols[j].push_back(match ? s : 1 - s);
        }
        for (std::size_t j : noise_idx) t.cols[j].push_back(rng.uniform());

        const double centered = task_sum / static_cast<double>(spec.task_features) - 0.5;
        double p = 1.0 / (1.0 + std::exp(-spec.task_gain * centered));
        if (s == 1) p = std::min(1.0, p + spec.beta_s);
        int y = rng.bernoulli(p) ? 1 : 0;
        if (spec.noise > 0.0 && rng.bernoulli(spec.noise)) y = 1 - y;
        t.cols[label_idx].push_back(y);
    }
    return t;
}

// Default rule recovering the protected-group tag of a generated table.
inline SensitiveRule synthetic_group_rule() {
    SensitiveRule r;
    r.column = kSyntheticSensitiveColumn;
    r.kind = SensitiveRule::Kind::identity;
    return r;
}

// ---------------------------------------------------------------------------
// Train/test splitting
// ---------------------------------------------------------------------------

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Deterministic shuffled split; train gets round(train_frac * n) rows.
inline SplitIndices split_indices(std::size_t n, double train_frac, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("split_indices: need at least 2 rows");
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw std::invalid_argument("split_indices: train_frac outside (0, 1)");
    Rng rng(derive_seed(seed, "split"));
    std::vector<std::size_t> perm = rng.permutation(n);
    std::size_t n_train =
        static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    n_train = std::min(std::max<std::size_t>(n_train, 1), n - 1);
    SplitIndices out;
    out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    return out;
}

// Row-level split of a whole table (disjoint and exhaustive).
inline std::pair<DatasetTable, DatasetTable> split_table(const DatasetTable& table,
                                                         double train_frac, std::uint64_t seed) {
    SplitIndices idx = split_indices(table.rows(), train_frac, seed);
    return {table.take_rows(idx.train), table.take_rows(idx.test)};
}

// ---------------------------------------------------------------------------
// Canonical CSV I/O for tables
// ---------------------------------------------------------------------------

// Header cells are `name:kind`; values print as shortest-lossless doubles
// (%.17g survives a round trip); rows end with '\n'.
inline void write_table_csv(const std::string& path, const DatasetTable& table) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    for (std::size_t c = 0; c < table.names.size(); ++c) {
        if (c) out << ',';
        out << table.names[c] << ':' << to_string(table.kinds[c]);
    }
    out << '\n';
    char buf[64];
    for (std::size_t r = 0; r < table.rows(); ++r) {
        for (std::size_t c = 0; c < table.cols.size(); ++c) {
            if (c) out << ',';
            std::snprintf(buf, sizeof buf, "%.17g", table.cols[c][r]);
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw ParseError(path + ": write failed");
}

inline DatasetTable read_table_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    DatasetTable table;
    {
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            const auto colon = cell.rfind(':');
            if (colon == std::string::npos)
                throw ParseError(path + ": header cell '" + cell + "' lacks a kind");
            table.names.push_back(cell.substr(0, colon));
            table.kinds.push_back(kind_from_string(cell.substr(colon + 1)));
        }
    }
    if (table.names.empty()) throw ParseError(path + ": no columns");
    table.cols.resize(table.names.size());

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ss, cell, ',')) {
            if (c >= table.cols.size())
                throw ParseError(path + ":" + std::to_string(line_no) + ": too many fields");
            double v;
            if (!detail::parse_number(cell, v))
                throw ParseError(path + ":" + std::to_string(line_no) + ": field " +
                                 std::to_string(c + 1) + " ('" + cell + "') is not a number");
            table.cols[c].push_back(v);
            ++c;
        }
        if (c != table.cols.size())
            throw ParseError(path + ":" + std::to_string(line_no) + ": row has " +
                             std::to_string(c) + " fields, expected " +
                             std::to_string(table.cols.size()));
    }
    if (table.rows() == 0) throw ParseError(path + ": no data rows");
    return table;
}

}  // namespace dvge::data
