#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mprt/errors.hpp"

namespace mprt {

enum class ColumnKind { Continuous, Ordinal };

struct ColumnMeta {
    std::string name;
    ColumnKind kind = ColumnKind::Continuous;
    int levels = 0; // >= 2 for ordinal columns, unused otherwise

    bool operator==(const ColumnMeta&) const = default;
};

/// N x M mixed observation matrix. Ordinal cells are stored as integer-valued
/// reals in {1, ..., C_j}. Immutable after load; safe to share across workers.
struct Dataset {
    Eigen::MatrixXd values;
    std::vector<ColumnMeta> metas;

    int n_rows() const { return static_cast<int>(values.rows()); }
    int n_cols() const { return static_cast<int>(values.cols()); }

    int column_index(const std::string& name) const {
        for (int j = 0; j < n_cols(); ++j) {
            if (metas[j].name == name) return j;
        }
        throw InputError("unknown column '" + name + "'");
    }

    bool is_ordinal(int j) const { return metas[j].kind == ColumnKind::Ordinal; }

    /// Ordinal column as 1-based integer levels.
    std::vector<int> ordinal_levels(int j) const {
        std::vector<int> out(n_rows());
        for (int i = 0; i < n_rows(); ++i) out[i] = static_cast<int>(values(i, j));
        return out;
    }
};

/// X/Y index lists for a rank hypothesis; overlap between the sides is allowed.
struct VariableSet {
    std::vector<int> x_indices;
    std::vector<int> y_indices;
};

inline void validate_variable_set(const VariableSet& vars, int n_cols) {
    auto check = [&](const std::vector<int>& idx, const char* side) {
        if (idx.empty()) throw InputError(std::string(side) + " variable list is empty");
        std::set<int> seen;
        for (int j : idx) {
            if (j < 0 || j >= n_cols) {
                throw InputError(std::string(side) + " index " + std::to_string(j) +
                                 " out of range");
            }
            if (!seen.insert(j).second) {
                throw InputError(std::string(side) + " index " + std::to_string(j) +
                                 " repeated");
            }
        }
    };
    check(vars.x_indices, "x");
    check(vars.y_indices, "y");
}

namespace detail {

// RFC-4180-style record splitter: quoted fields, doubled-quote escapes, CRLF.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool row_started = false;
    const std::size_t n = text.size();
    for (std::size_t i = 0; i < n; ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
            continue;
        }
        switch (ch) {
        case '"':
            quoted = true;
            row_started = true;
            break;
        case ',':
            row.push_back(field);
            field.clear();
            row_started = true;
            break;
        case '\r':
            break;
        case '\n':
            if (row_started || !field.empty() || !row.empty()) {
                row.push_back(field);
                records.push_back(std::move(row));
            }
            row = {};
            field.clear();
            row_started = false;
            break;
        default:
            field.push_back(ch);
            row_started = true;
            break;
        }
    }
    if (quoted) throw InputError("CSV: unterminated quoted field");
    if (row_started || !field.empty() || !row.empty()) {
        row.push_back(field);
        records.push_back(std::move(row));
    }
    return records;
}

inline double parse_number(const std::string& s, int row, const std::string& col) {
    if (s.empty()) {
        throw InputError("missing value at row " + std::to_string(row) + ", column '" +
                         col + "'");
    }
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw InputError("unparseable number '" + s + "' at row " + std::to_string(row) +
                         ", column '" + col + "'");
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size() || !std::isfinite(v)) {
        throw InputError("unparseable number '" + s + "' at row " + std::to_string(row) +
                         ", column '" + col + "'");
    }
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

/// Parses the JSON schema sidecar:
///   {"columns": [{"name": str, "kind": "continuous"|"ordinal", "levels": int}]}
inline std::vector<ColumnMeta> load_schema(const std::string& schema_path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(detail::read_file(schema_path));
    } catch (const nlohmann::json::exception& e) {
        throw InputError("schema '" + schema_path + "': " + e.what());
    }
    if (!doc.is_object() || !doc.contains("columns") || !doc["columns"].is_array()) {
        throw InputError("schema must be an object with a 'columns' array");
    }
    std::vector<ColumnMeta> metas;
    std::set<std::string> names;
    for (const auto& col : doc["columns"]) {
        ColumnMeta meta;
        if (!col.contains("name") || !col["name"].is_string()) {
            throw InputError("schema column missing string 'name'");
        }
        meta.name = col["name"].get<std::string>();
        if (!names.insert(meta.name).second) {
            throw InputError("duplicate column name '" + meta.name + "'");
        }
        const std::string kind = col.value("kind", std::string());
        if (kind == "continuous") {
            meta.kind = ColumnKind::Continuous;
        } else if (kind == "ordinal") {
            meta.kind = ColumnKind::Ordinal;
            if (!col.contains("levels") || !col["levels"].is_number_integer()) {
                throw InputError("ordinal column '" + meta.name +
                                 "' must declare integer 'levels'");
            }
            meta.levels = col["levels"].get<int>();
            if (meta.levels < 2) {
                throw InputError("ordinal column '" + meta.name + "' needs levels >= 2");
            }
        } else {
            throw InputError("column '" + meta.name + "': kind must be 'continuous' or 'ordinal'");
        }
        metas.push_back(std::move(meta));
    }
    if (metas.empty()) throw InputError("schema declares no columns");
    return metas;
}

/// Validates a parsed matrix against its metadata: ordinal cells integral and
/// in range, >= 2 attained levels per ordinal column, no level gaps.
inline void validate_dataset(const Dataset& d) {
    if (d.n_rows() == 0) throw InputError("N=0 unsupported");
    if (static_cast<int>(d.metas.size()) != d.n_cols()) {
        throw InputError("metadata/column count mismatch");
    }
    for (int j = 0; j < d.n_cols(); ++j) {
        const auto& meta = d.metas[j];
        if (meta.kind != ColumnKind::Ordinal) continue;
        std::vector<char> seen(static_cast<std::size_t>(meta.levels) + 1, 0);
        for (int i = 0; i < d.n_rows(); ++i) {
            const double v = d.values(i, j);
            if (v != std::floor(v)) {
                throw InputError("non-integer ordinal cell at row " + std::to_string(i + 1) +
                                 ", column '" + meta.name + "'");
            }
            const int t = static_cast<int>(v);
            if (t < 1 || t > meta.levels) {
                throw InputError("level out of range at row " + std::to_string(i + 1) +
                                 ", column '" + meta.name + "' (got " + std::to_string(t) +
                                 ", levels=" + std::to_string(meta.levels) + ")");
            }
            seen[t] = 1;
        }
        int lo = 0, hi = 0, distinct = 0;
        for (int t = 1; t <= meta.levels; ++t) {
            if (!seen[t]) continue;
            if (lo == 0) lo = t;
            hi = t;
            ++distinct;
        }
        if (distinct < 2) {
            throw InputError("ordinal column '" + meta.name +
                             "' attains fewer than 2 levels in the sample");
        }
        if (hi - lo + 1 != distinct) {
            throw InputError("ordinal column '" + meta.name +
                             "' has a gap in attained levels (re-coding is not performed)");
        }
    }
}

/// Loads a CSV (header row required) against its JSON schema sidecar.
inline Dataset load_dataset(const std::string& csv_path, const std::string& schema_path) {
    Dataset d;
    d.metas = load_schema(schema_path);
    const auto records = detail::parse_csv(detail::read_file(csv_path));
    if (records.empty()) throw InputError("CSV '" + csv_path + "' is empty");
    const auto& header = records[0];
    if (header.size() != d.metas.size()) {
        throw InputError("CSV has " + std::to_string(header.size()) +
                         " columns but schema declares " + std::to_string(d.metas.size()));
    }
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] != d.metas[j].name) {
            throw InputError("CSV header column " + std::to_string(j + 1) + " is '" +
                             header[j] + "' but schema expects '" + d.metas[j].name + "'");
        }
    }
    const int n = static_cast<int>(records.size()) - 1;
    if (n == 0) throw InputError("N=0 unsupported (CSV has a header but no data rows)");
    const int m = static_cast<int>(d.metas.size());
    d.values.resize(n, m);
    for (int i = 0; i < n; ++i) {
        const auto& row = records[i + 1];
        if (static_cast<int>(row.size()) != m) {
            throw InputError("row " + std::to_string(i + 1) + " has " +
                             std::to_string(row.size()) + " fields, expected " +
                             std::to_string(m));
        }
        for (int j = 0; j < m; ++j) {
            d.values(i, j) = detail::parse_number(row[j], i + 1, d.metas[j].name);
        }
    }
    validate_dataset(d);
    return d;
}

/// Writes CSV + schema such that load_dataset round-trips bit-exactly.
inline void save_dataset(const Dataset& d, const std::string& csv_path,
                         const std::string& schema_path) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& meta : d.metas) {
        nlohmann::json col{{"name", meta.name}};
        col["kind"] = meta.kind == ColumnKind::Ordinal ? "ordinal" : "continuous";
        if (meta.kind == ColumnKind::Ordinal) col["levels"] = meta.levels;
        cols.push_back(std::move(col));
    }
    std::ofstream schema(schema_path, std::ios::binary);
    if (!schema) throw InputError("cannot write '" + schema_path + "'");
    schema << nlohmann::json{{"columns", cols}}.dump(2) << "\n";

    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw InputError("cannot write '" + csv_path + "'");
    for (int j = 0; j < d.n_cols(); ++j) {
        csv << (j ? "," : "") << d.metas[j].name;
    }
    csv << "\n";
    char buf[40];
    for (int i = 0; i < d.n_rows(); ++i) {
        for (int j = 0; j < d.n_cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", d.values(i, j));
            csv << (j ? "," : "") << buf;
        }
        csv << "\n";
    }
}

/// Centers and scales continuous columns to sample mean 0, sample variance 1
/// (N-1 denominator). Ordinal columns pass through untouched.
inline Dataset standardize(const Dataset& d) {
    if (d.n_rows() < 2) throw InputError("standardize: need N >= 2");
    Dataset out = d;
    const int n = d.n_rows();
    for (int j = 0; j < d.n_cols(); ++j) {
        if (d.metas[j].kind != ColumnKind::Continuous) continue;
        const double mean = d.values.col(j).mean();
        const double ss = (d.values.col(j).array() - mean).square().sum();
        const double var = ss / (n - 1);
        if (!(var > 0.0)) {
            throw NumericError("standardize: column '" + d.metas[j].name +
                               "' has zero variance");
        }
        out.values.col(j) = (d.values.col(j).array() - mean) / std::sqrt(var);
    }
    return out;
}

/// Order-preserving discretization: output t iff T_t < value <= T_{t+1} with
/// T_1 = -inf and T_{C+1} = +inf. `thresholds` holds the C-1 finite cuts.
inline std::vector<int> discretize_column(std::span<const double> values,
                                          std::span<const double> thresholds) {
    for (std::size_t t = 0; t + 1 < thresholds.size(); ++t) {
        if (!(thresholds[t] < thresholds[t + 1])) {
            throw InputError("discretize_column: thresholds must be strictly ascending");
        }
    }
    std::vector<int> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto it = std::lower_bound(thresholds.begin(), thresholds.end(), values[i]);
        out[i] = 1 + static_cast<int>(it - thresholds.begin());
    }
    return out;
}

} // namespace mprt
