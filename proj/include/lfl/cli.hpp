#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lfl/afa.hpp"
#include "lfl/baselines.hpp"
#include "lfl/core.hpp"
#include "lfl/io.hpp"
#include "lfl/subspace.hpp"
#include "lfl/synth.hpp"

namespace lfl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("LFL_LOG");
        if (!env) return LogLevel::Warn;
        const std::string v(env);
        if (v == "error") return LogLevel::Error;
        if (v == "warn") return LogLevel::Warn;
        if (v == "info") return LogLevel::Info;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

inline void log(LogLevel lvl, const std::string& msg) {
    if (lvl > log_level()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "lfl " << names[static_cast<int>(lvl)] << ": " << msg << '\n';
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;  // overrides the config seed
    int threads = 0;                    // 0 = hardware concurrency
};

namespace detail {

inline void reject_unknown_keys(const io::KeyValues& kv, const std::set<std::string>& allowed,
                                const std::string& command) {
    for (const auto& [k, v] : kv)
        if (!allowed.count(k))
            throw std::invalid_argument(command + ": unknown config key '" + k + "'");
}

inline std::string get_str(const io::KeyValues& kv, const std::string& key, const std::string& fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}

inline std::string get_str_required(const io::KeyValues& kv, const std::string& key, const std::string& command) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(command + ": missing required key '" + key + "'");
    return it->second;
}

inline long get_int(const io::KeyValues& kv, const std::string& key, long fallback) {
    const auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    char* end = nullptr;
    const long v = std::strtol(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0')
        throw std::invalid_argument("config: key '" + key + "' is not an integer: " + it->second);
    return v;
}

inline double get_double(const io::KeyValues& kv, const std::string& key, double fallback) {
    const auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
        throw std::invalid_argument("config: key '" + key + "' is not a number: " + it->second);
    return v;
}

inline std::uint64_t resolve_seed(const io::KeyValues& kv, const CommonOpts& opts) {
    if (opts.seed) return *opts.seed;
    return static_cast<std::uint64_t>(get_int(kv, "seed", 0));
}

inline void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto next = s.find(',', pos);
        const std::string item = io::trim(s.substr(pos, next == std::string::npos ? next : next - pos));
        if (!item.empty()) out.push_back(item);
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return out;
}

inline synth::ZPattern parse_pattern(const std::string& name) {
    if (name == "sparse") return synth::ZPattern::Sparse;
    if (name == "dense") return synth::ZPattern::Dense;
    if (name == "subspace") return synth::ZPattern::SubspaceClustering;
    if (name == "balanced") return synth::ZPattern::Balanced;
    if (name == "single") return synth::ZPattern::SingleState;
    throw std::invalid_argument("invalid pattern name '" + name +
                                "' (expected sparse|dense|subspace|balanced|single)");
}

inline json report_to_json(const FitReport& r) {
    json j;
    j["loglik_trace"] = r.loglik_trace;
    j["mae"] = r.mae;
    j["rmse_mean"] = r.rmse_mean;
    j["rmse_std"] = r.rmse_std;
    j["popularity"] = r.popularity;
    j["iterations"] = r.iterations;
    j["wall_seconds"] = r.wall_seconds;
    j["best_sweep"] = r.best_sweep;
    j["truncation_rejects"] = r.truncation_rejects;
    j["warnings"] = r.warnings;
    if (!r.eigvals.empty()) j["eigvals"] = r.eigvals;
    if (!r.k_trace.empty()) j["k_trace"] = r.k_trace;
    return j;
}

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << '\n';
}

/// 90th percentile of the generating Z's column sums, clamped to [1, K];
/// the model-L rule for benchmark cells.
inline int l_from_truth(const Matrix& Z) {
    const int N = static_cast<int>(Z.cols());
    std::vector<double> sums(N);
    for (int n = 0; n < N; ++n) sums[n] = Z.col(n).sum();
    std::sort(sums.begin(), sums.end());
    const int idx = std::min(N - 1, static_cast<int>(std::ceil(0.9 * N)) - 1);
    const int K = static_cast<int>(Z.rows());
    return std::clamp(static_cast<int>(std::lround(sums[std::max(idx, 0)])), 1, K);
}

}  // namespace detail

inline int cmd_generate(const CommonOpts& opts) {
    const io::KeyValues kv = io::parse_key_values(opts.config_path);
    detail::reject_unknown_keys(kv, {"pattern", "n", "d", "k", "l", "sigma", "sigma_w", "seed",
                                     "dense_rate", "single_state"}, "generate");

    synth::GenConfig cfg;
    cfg.pattern = detail::parse_pattern(detail::get_str_required(kv, "pattern", "generate"));
    cfg.N = static_cast<int>(detail::get_int(kv, "n", cfg.N));
    cfg.D = static_cast<int>(detail::get_int(kv, "d", cfg.D));
    cfg.K = static_cast<int>(detail::get_int(kv, "k", cfg.K));
    cfg.L = static_cast<int>(detail::get_int(kv, "l", std::min(cfg.K, 5)));
    cfg.sigma = detail::get_double(kv, "sigma", cfg.sigma);
    cfg.sigma_w = detail::get_double(kv, "sigma_w", cfg.sigma_w);
    cfg.dense_rate = detail::get_double(kv, "dense_rate", cfg.dense_rate);
    cfg.seed = detail::resolve_seed(kv, opts);
    const std::string ss = detail::get_str(kv, "single_state", "one_row");
    if (ss == "one_row") cfg.single_state = synth::SingleStateVariant::OneRow;
    else if (ss == "shared_config") cfg.single_state = synth::SingleStateVariant::SharedConfig;
    else throw std::invalid_argument("generate: single_state must be one_row|shared_config");
    if (cfg.N < 1 || cfg.D < 1 || cfg.K < 1) throw std::invalid_argument("generate: n, d, k must be >= 1");
    if (cfg.L < 1 || cfg.L > cfg.K) throw std::invalid_argument("generate: need 1 <= l <= k");

    detail::ensure_out_dir(opts.out_dir);
    Rng rng = make_rng(cfg.seed);
    const synth::Generated gen = synth::generate_dataset(cfg, rng);

    const fs::path out(opts.out_dir);
    io::write_csv((out / "data.csv").string(), gen.data.Y.transpose());
    io::write_csv((out / "truth_W.csv").string(), gen.truth.W);
    io::write_csv((out / "truth_X.csv").string(), gen.truth.X);
    io::write_csv((out / "truth_Z.csv").string(), gen.truth.Z);

    json meta;
    meta["seed"] = cfg.seed;
    meta["pattern"] = detail::get_str_required(kv, "pattern", "generate");
    meta["n"] = cfg.N;
    meta["d"] = cfg.D;
    meta["k"] = cfg.K;
    meta["l"] = cfg.L;
    meta["sigma"] = cfg.sigma;
    meta["sigma_w"] = cfg.sigma_w;
    meta["dense_rate"] = cfg.dense_rate;
    meta["single_state"] = ss;
    if (cfg.pattern == synth::ZPattern::Sparse) meta["sparse_alpha"] = cfg.K / harmonic_number(cfg.N);
    detail::write_json((out / "meta.json").string(), meta);

    io::KeyValues resolved = kv;
    resolved["seed"] = std::to_string(cfg.seed);
    resolved["n"] = std::to_string(cfg.N);
    resolved["d"] = std::to_string(cfg.D);
    resolved["k"] = std::to_string(cfg.K);
    resolved["l"] = std::to_string(cfg.L);
    resolved["sigma"] = io::format_double(cfg.sigma);
    resolved["sigma_w"] = io::format_double(cfg.sigma_w);
    resolved["dense_rate"] = io::format_double(cfg.dense_rate);
    resolved["single_state"] = ss;
    io::write_key_values((out / "config.resolved.txt").string(), resolved);
    log(LogLevel::Info, "generate: wrote " + std::to_string(cfg.N) + "x" + std::to_string(cfg.D) +
                            " dataset to " + opts.out_dir);
    return 0;
}

inline int cmd_fit(const CommonOpts& opts) {
    const io::KeyValues kv = io::parse_key_values(opts.config_path);
    detail::reject_unknown_keys(kv, {"model", "data", "k", "l", "iters", "seed", "alpha", "k_max",
                                     "temper", "sigma_w", "z_mode"}, "fit");
    const std::string model = detail::get_str_required(kv, "model", "fit");
    const std::set<std::string> known = {"afa-em", "afa-gibbs", "appca", "bnp-ppca", "fa",
                                         "fsfa", "isfa", "pca", "ppca"};
    if (!known.count(model)) throw std::invalid_argument("fit: unknown model '" + model + "'");

    const std::string data_path = detail::get_str_required(kv, "data", "fit");
    Matrix raw;
    try {
        raw = io::read_csv(data_path);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string("fit: unreadable data: ") + e.what());
    }
    const Dataset dataset = Dataset::from_matrix(raw.transpose());  // disk rows are observations
    const Dataset centered = center(dataset);
    const int D = dataset.dim();
    const int N = dataset.count();

    const int K = static_cast<int>(detail::get_int(kv, "k", 0));
    const int L = static_cast<int>(detail::get_int(kv, "l", 0));
    const int iters = static_cast<int>(detail::get_int(kv, "iters", 100));
    const int k_max = static_cast<int>(detail::get_int(kv, "k_max", std::min(D, 2 * std::max(K, 1))));
    const double alpha = detail::get_double(kv, "alpha", 2.0);
    const double temper = detail::get_double(kv, "temper", 1.0);
    const double sigma_w = detail::get_double(kv, "sigma_w", 1.0);
    const std::uint64_t seed = detail::resolve_seed(kv, opts);

    LatentState state;
    FitReport report;
    const auto t0 = std::chrono::steady_clock::now();
    if (model == "pca") {
        if (K < 1) throw std::invalid_argument("fit: model pca requires k >= 1");
        const PcaResult pca = pca_fit(dataset, K);
        state.W = pca.W;
        state.X = pca.W.transpose() * centered.Y;
        state.Z = Matrix::Ones(K, N);
        state.K = K;
        state.sigma2 = kSigma2Floor;
        report.eigvals.assign(pca.eigvals.data(), pca.eigvals.data() + pca.eigvals.size());
        report.iterations = 0;
    } else if (model == "ppca") {
        if (K < 1) throw std::invalid_argument("fit: model ppca requires k >= 1");
        const PpcaResult ppca = ppca_ml(dataset, K);
        state.W = ppca.W;
        Matrix M = ppca.W.transpose() * ppca.W;
        M.diagonal().array() += ppca.sigma2;
        state.X = M.ldlt().solve(ppca.W.transpose() * centered.Y);
        state.Z = Matrix::Ones(K, N);
        state.K = K;
        state.sigma2 = ppca.sigma2;
        if (ppca.clamped) report.warnings.push_back("eigenvalue below sigma^2 clamped to zero scale");
        report.iterations = 0;
    } else if (model == "fa") {
        auto fit = fit_vanilla_fa(dataset, K, iters);
        state = fit.state;
        report = fit.report;
    } else if (model == "afa-em" || model == "afa-gibbs") {
        AfaConfig cfg;
        cfg.K = K;
        cfg.L = L;
        cfg.iters = iters;
        cfg.seed = seed;
        cfg.temper = temper;
        cfg.sigma_w2 = sigma_w * sigma_w;
        cfg.mode = model == "afa-em" ? AfaMode::Em : AfaMode::Gibbs;
        const std::string zm = detail::get_str(kv, "z_mode", "icm");
        if (zm == "icm") cfg.em_z_mode = ZMode::Icm;
        else if (zm == "sample") cfg.em_z_mode = ZMode::Sample;
        else throw std::invalid_argument("fit: z_mode must be icm|sample");
        auto fit = fit_afa(dataset, cfg);
        state = fit.state;
        report = fit.report;
    } else if (model == "fsfa") {
        FsfaConfig cfg;
        cfg.K = K;
        cfg.alpha = alpha;
        cfg.iters = iters;
        cfg.seed = seed;
        cfg.sigma_w2 = sigma_w * sigma_w;
        auto fit = fit_fsfa(dataset, cfg);
        state = fit.state;
        report = fit.report;
    } else if (model == "isfa") {
        IsfaConfig cfg;
        cfg.K_max = k_max;
        cfg.alpha0 = alpha;
        cfg.iters = iters;
        cfg.seed = seed;
        cfg.sigma_w2 = sigma_w * sigma_w;
        auto fit = fit_isfa(dataset, cfg);
        state = fit.state;
        report = fit.report;
    } else if (model == "appca") {
        AppcaConfig cfg;
        cfg.K = K;
        cfg.L = L;
        cfg.iters = iters;
        cfg.seed = seed;
        cfg.temper = temper;
        auto fit = fit_appca(dataset, cfg);
        state = fit.state;
        report = fit.report;
    } else if (model == "bnp-ppca") {
        BnpConfig cfg;
        cfg.K_max = k_max;
        cfg.alpha0 = alpha;
        cfg.iters = iters;
        cfg.seed = seed;
        auto fit = fit_bnp_ppca(dataset, cfg);
        state = fit.state;
        report = fit.report;
    }

    if (model == "pca" || model == "ppca") {
        const Matrix rec = state.W * state.X.cwiseProduct(state.Z);
        report.mae = mae(centered.Y, rec);
        const RowRmse rr = rmse_per_row(centered.Y, rec);
        report.rmse_mean = rr.mean;
        report.rmse_std = rr.stddev;
        report.popularity = popularity_histogram(state.Z);
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    detail::ensure_out_dir(opts.out_dir);
    const fs::path out(opts.out_dir);
    io::write_csv((out / "model_W.csv").string(), state.W);
    io::write_csv((out / "model_X.csv").string(), state.X);
    io::write_csv((out / "model_Z.csv").string(), state.Z);

    json j = detail::report_to_json(report);
    j["model"] = model;
    j["seed"] = seed;
    j["sigma2"] = state.sigma2;
    j["k"] = static_cast<int>(state.Z.rows());
    detail::write_json((out / "report.json").string(), j);

    io::KeyValues resolved = kv;
    resolved["seed"] = std::to_string(seed);
    resolved["iters"] = std::to_string(iters);
    io::write_key_values((out / "config.resolved.txt").string(), resolved);
    log(LogLevel::Info, "fit: model " + model + " done, mae " + io::format_double(report.mae));
    return 0;
}

}  // namespace lfl::cli
