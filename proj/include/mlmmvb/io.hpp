#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mlmmvb/data.hpp"
#include "mlmmvb/errors.hpp"

namespace mlmmvb {

enum class DesignMode { Columns, Ones, Identity };

inline DesignMode design_mode_from_string(const std::string& s) {
    if (s == "columns") return DesignMode::Columns;
    if (s == "ones") return DesignMode::Ones;
    if (s == "identity") return DesignMode::Identity;
    throw ConfigError("unknown design mode: " + s);
}

/// Ingestion contract for the long-format CSV. Identity designs are built
/// from the declared full grid (rows_per_cluster) with the rows of missing
/// observations deleted, so ragged clusters stay aligned with the grid.
struct CsvSchema {
    int p = 1, s1 = 1, s2 = 1, d = 1, g = 1;
    DesignMode x_mode = DesignMode::Columns;
    DesignMode w_mode = DesignMode::Columns;
    DesignMode v_mode = DesignMode::Columns;
    int rows_per_cluster = 0;  // required by identity designs
    bool na_error = false;     // true: reject missing responses instead of dropping

    int x_cols() const { return x_mode == DesignMode::Columns ? p : 0; }
    int w_cols() const { return w_mode == DesignMode::Columns ? s1 : 0; }
    int v_cols() const { return v_mode == DesignMode::Columns ? s2 : 0; }

    int effective_p() const { return x_mode == DesignMode::Identity ? rows_per_cluster : p; }
    int effective_s1() const {
        if (w_mode == DesignMode::Identity) return rows_per_cluster;
        return w_mode == DesignMode::Ones ? 1 : s1;
    }
    int effective_s2() const { return v_mode == DesignMode::Identity ? rows_per_cluster : s2; }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline bool is_missing(const std::string& s) {
    if (s.empty()) return true;
    std::string t;
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) t += c;
    return t.empty() || t == "NA" || t == "na" || t == "NaN";
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("cannot parse number '" + s + "' at " + where);
    }
}

inline long parse_int(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("cannot parse integer '" + s + "' at " + where);
    }
}

inline std::string expected_header(const CsvSchema& schema) {
    std::string h = "cluster_id,row_index,block_id,y";
    for (int c = 1; c <= schema.x_cols(); ++c) h += ",x_" + std::to_string(c);
    for (int c = 1; c <= schema.w_cols(); ++c) h += ",w_" + std::to_string(c);
    for (int c = 1; c <= schema.v_cols(); ++c) h += ",v_" + std::to_string(c);
    return h;
}

struct RawRow {
    int row_index = 0;
    int block_id = 0;
    double y = 0.0;
    std::vector<double> x, w, v;
};

}  // namespace detail

/// Load the long-format dataset plus its gating covariate companion file.
/// Rows with a missing response are dropped together with their design rows.
inline GroupedDataset load_dataset(const std::string& csv_path, const std::string& clusters_path,
                                   const CsvSchema& schema) {
    std::ifstream in(csv_path);
    if (!in) throw ParseError("cannot open " + csv_path);
    if ((schema.x_mode == DesignMode::Identity || schema.w_mode == DesignMode::Identity ||
         schema.v_mode == DesignMode::Identity) &&
        schema.rows_per_cluster < 1)
        throw ConfigError("identity designs require rows_per_cluster in the schema");

    std::string line;
    if (!std::getline(in, line)) throw ParseError(csv_path + ": empty file");
    {
        const auto cols = detail::split_csv_line(line);
        const auto want = detail::split_csv_line(detail::expected_header(schema));
        if (cols != want)
            throw ParseError(csv_path + ": header mismatch, expected '" +
                             detail::expected_header(schema) + "'");
    }

    std::vector<std::string> order;
    std::map<std::string, std::vector<detail::RawRow>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = csv_path + ":" + std::to_string(lineno);
        const auto f = detail::split_csv_line(line);
        const std::size_t want = 4 + schema.x_cols() + schema.w_cols() + schema.v_cols();
        if (f.size() != want)
            throw ParseError(where + ": expected " + std::to_string(want) + " fields, got " +
                             std::to_string(f.size()));
        const std::string id = f[0];
        if (!rows.count(id)) order.push_back(id);
        detail::RawRow r;
        r.row_index = static_cast<int>(detail::parse_int(f[1], where));
        r.block_id = static_cast<int>(detail::parse_int(f[2], where));
        if (r.block_id < 1 || r.block_id > schema.g)
            throw ValidationError(where + ": block_id out of range 1.." + std::to_string(schema.g));
        if (detail::is_missing(f[3])) {
            if (schema.na_error) throw ValidationError(where + ": missing response");
            continue;  // row deletion: the observation and its design rows vanish
        }
        r.y = detail::parse_double(f[3], where);
        std::size_t pos = 4;
        for (int c = 0; c < schema.x_cols(); ++c) r.x.push_back(detail::parse_double(f[pos++], where));
        for (int c = 0; c < schema.w_cols(); ++c) r.w.push_back(detail::parse_double(f[pos++], where));
        for (int c = 0; c < schema.v_cols(); ++c) r.v.push_back(detail::parse_double(f[pos++], where));
        rows[id].push_back(std::move(r));
    }

    // companion covariates
    std::map<std::string, Vec> covars;
    {
        std::ifstream cin(clusters_path);
        if (!cin) throw ParseError("cannot open " + clusters_path);
        std::string cline;
        if (!std::getline(cin, cline)) throw ParseError(clusters_path + ": empty file");
        std::string want = "cluster_id";
        for (int c = 1; c <= schema.d; ++c) want += ",u_" + std::to_string(c);
        if (detail::split_csv_line(cline) != detail::split_csv_line(want))
            throw ParseError(clusters_path + ": header mismatch, expected '" + want + "'");
        int cn = 1;
        while (std::getline(cin, cline)) {
            ++cn;
            if (cline.empty()) continue;
            const auto f = detail::split_csv_line(cline);
            if (f.size() != static_cast<std::size_t>(schema.d + 1))
                throw ParseError(clusters_path + ":" + std::to_string(cn) + ": bad field count");
            Vec u(schema.d);
            for (int c = 0; c < schema.d; ++c)
                u(c) = detail::parse_double(f[c + 1], clusters_path + ":" + std::to_string(cn));
            covars[f[0]] = u;
        }
    }

    std::vector<ClusterData> clusters;
    for (const std::string& id : order) {
        const auto& rr = rows[id];
        if (rr.empty())
            throw ValidationError("cluster " + id + ": all responses missing");
        const int ni = static_cast<int>(rr.size());
        ClusterData c;
        c.id = id;
        c.y.resize(ni);
        c.X = Mat::Zero(ni, schema.effective_p());
        c.W = Mat::Zero(ni, schema.effective_s1());
        c.V = Mat::Zero(ni, schema.effective_s2());
        c.kappa.assign(schema.g, 0);
        int last_block = 0;
        for (int t = 0; t < ni; ++t) {
            const detail::RawRow& r = rr[t];
            if (r.block_id < last_block)
                throw ValidationError("cluster " + id +
                                      ": observations must be block-contiguous (block_id decreased)");
            last_block = r.block_id;
            ++c.kappa[r.block_id - 1];
            c.y(t) = r.y;
            auto fill = [&](Mat& M, DesignMode mode, const std::vector<double>& vals,
                            const char* name) {
                switch (mode) {
                    case DesignMode::Columns:
                        for (std::size_t q = 0; q < vals.size(); ++q) M(t, q) = vals[q];
                        break;
                    case DesignMode::Ones:
                        M(t, 0) = 1.0;
                        break;
                    case DesignMode::Identity:
                        if (r.row_index < 1 || r.row_index > schema.rows_per_cluster)
                            throw ValidationError("cluster " + id + ": row_index " +
                                                  std::to_string(r.row_index) +
                                                  " outside the declared grid for " + name);
                        M(t, r.row_index - 1) = 1.0;
                        break;
                }
            };
            fill(c.X, schema.x_mode, r.x, "X");
            fill(c.W, schema.w_mode, r.w, "W");
            fill(c.V, schema.v_mode, r.v, "V");
        }
        const auto it = covars.find(id);
        if (it == covars.end())
            throw ValidationError("cluster " + id + ": no row in the gating covariate file");
        c.u = it->second;
        clusters.push_back(std::move(c));
    }
    GroupedDataset data = GroupedDataset::from_clusters(std::move(clusters));
    const auto violations = validate_dataset(data);
    if (!violations.empty()) throw ValidationError("loaded dataset invalid: " + violations.front());
    return data;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Write a dataset in full-column form (round-trips through load_dataset with
/// an all-columns schema).
inline void write_dataset(const GroupedDataset& data, const std::string& csv_path,
                          const std::string& clusters_path) {
    std::ofstream out(csv_path);
    if (!out) throw ParseError("cannot write " + csv_path);
    CsvSchema schema;
    schema.p = data.dims.p;
    schema.s1 = data.dims.s1;
    schema.s2 = data.dims.s2;
    schema.d = data.dims.d;
    schema.g = data.dims.g;
    out << detail::expected_header(schema) << "\n";
    for (const auto& c : data.clusters) {
        int block = 0, within = 0;
        for (Eigen::Index t = 0; t < c.n_obs(); ++t) {
            while (block < static_cast<int>(c.kappa.size()) && within >= c.kappa[block]) {
                ++block;
                within = 0;
            }
            out << c.id << "," << (t + 1) << "," << (block + 1) << ","
                << detail::fmt_double(c.y(t));
            for (int q = 0; q < data.dims.p; ++q) out << "," << detail::fmt_double(c.X(t, q));
            for (int q = 0; q < data.dims.s1; ++q) out << "," << detail::fmt_double(c.W(t, q));
            for (int q = 0; q < data.dims.s2; ++q) out << "," << detail::fmt_double(c.V(t, q));
            out << "\n";
            ++within;
        }
    }
    std::ofstream cout_(clusters_path);
    if (!cout_) throw ParseError("cannot write " + clusters_path);
    cout_ << "cluster_id";
    for (int c = 1; c <= data.dims.d; ++c) cout_ << ",u_" << c;
    cout_ << "\n";
    for (const auto& c : data.clusters) {
        cout_ << c.id;
        for (int q = 0; q < data.dims.d; ++q) cout_ << "," << detail::fmt_double(c.u(q));
        cout_ << "\n";
    }
}

inline void write_labels(const std::vector<std::string>& ids, const std::vector<int>& labels,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << "cluster_id,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) out << ids[i] << "," << labels[i] << "\n";
}

inline std::vector<int> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (detail::split_csv_line(line) != std::vector<std::string>{"cluster_id", "label"})
        throw ParseError(path + ": expected header 'cluster_id,label'");
    std::vector<int> labels;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 2) throw ParseError(path + ":" + std::to_string(lineno) + ": bad field count");
        labels.push_back(static_cast<int>(detail::parse_int(f[1], path + ":" + std::to_string(lineno))));
    }
    return labels;
}

}  // namespace mlmmvb
