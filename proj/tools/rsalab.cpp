// Command-line front end: verification suites, the cost model and benchmark
// harness, the synthetic motion probe, and kernel dumps. Every command is
// deterministic under --seed (timings excluded), reports carry the full
// resolved configuration, and exit codes follow one contract:
//   0 pass, 1 assertion failure, 2 usage/config error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "rsalab/bench.hpp"
#include "rsalab/equiv.hpp"
#include "rsalab/grad.hpp"
#include "rsalab/json_io.hpp"
#include "rsalab/probe.hpp"

using nlohmann::json;
using namespace rsalab;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kConfigError = 2;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_config(const std::string& path, const std::set<std::string>& allowed) {
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    json cfg;
    try {
        is >> cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!cfg.is_object()) throw ConfigError("config root must be a JSON object");
    for (auto it = cfg.begin(); it != cfg.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config key: \"" + it.key() + "\"");
    return cfg;
}

struct Common {
    std::string config_path;
    std::uint64_t seed = 1;
    std::string dtype;  // resolved per command default when empty
    unsigned threads = 1;
    std::string out = "rsalab-out";
};

void add_common_flags(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "JSON config file; flags override its values");
    cmd->add_option("--seed", c.seed, "seed for all randomness");
    cmd->add_option("--dtype", c.dtype, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--threads", c.threads, "worker thread cap (1 = fully serial)");
    cmd->add_option("--out", c.out, "output directory");
}

void apply_common_config(const json& cfg, const CLI::App* cmd, Common& c,
                         const char* default_dtype) {
    if (cfg.contains("seed") && !cmd->count("--seed")) c.seed = cfg["seed"].get<std::uint64_t>();
    if (cfg.contains("dtype") && !cmd->count("--dtype")) c.dtype = cfg["dtype"].get<std::string>();
    if (cfg.contains("threads") && !cmd->count("--threads"))
        c.threads = cfg["threads"].get<unsigned>();
    if (cfg.contains("out") && !cmd->count("--out")) c.out = cfg["out"].get<std::string>();
    if (c.dtype.empty()) c.dtype = default_dtype;
    if (c.dtype != "f32" && c.dtype != "f64") throw ConfigError("dtype must be f32 or f64");
}

json common_json(const Common& c) {
    return {{"seed", c.seed}, {"dtype", c.dtype}, {"threads", c.threads}, {"out", c.out}};
}

void emit_report(const Common& c, const std::string& filename, const json& report) {
    const std::string text = dump_json_17(report);
    std::cout << text;
    std::filesystem::create_directories(c.out);
    std::ofstream os(std::filesystem::path(c.out) / filename);
    if (!os) throw ConfigError("cannot write report under --out " + c.out);
    os << text;
}

// Pull a numeric/bool/string field: config value unless the flag was given.
template <typename V>
void take(const json& cfg, const char* key, const CLI::App* cmd, const std::string& flag, V& out) {
    if (cfg.contains(key) && (flag.empty() || !cmd->count(flag))) out = cfg[key].get<V>();
}

NeighborhoodSpec window_from(const std::vector<int>& w) {
    if (w.size() != 3) throw ConfigError("window must have exactly three odd extents");
    return NeighborhoodSpec{w[0], w[1], w[2]};
}

json window_json(const NeighborhoodSpec& w) { return {w.m_t, w.m_h, w.m_w}; }

// ---------------------------------------------------------------------------
// equiv

int cmd_equiv(const CLI::App* cmd, Common common, std::size_t cases, double tolerance,
              bool tol_given) {
    const json cfg = load_config(common.config_path,
                                 {"seed", "dtype", "threads", "out", "cases", "tolerance"});
    apply_common_config(cfg, cmd, common, "f64");
    take(cfg, "cases", cmd, "--cases", cases);
    if (cfg.contains("tolerance") && !tol_given) tolerance = cfg["tolerance"].get<double>();
    if (tolerance < 0 && tol_given) throw ConfigError("tolerance must be non-negative");
    const bool f64 = common.dtype == "f64";
    if (tolerance < 0) tolerance = f64 ? 1e-10 : 1e-4;
    if (cases == 0) throw ConfigError("cases must be positive");

    const auto grid = default_equiv_grid(cases, common.seed);
    json case_reports = json::array();
    double max_gap = 0.0;
    for (const auto& ec : grid) {
        const EquivOutcome outcome = f64 ? run_equiv_case<double>(ec, common.threads)
                                         : run_equiv_case<float>(ec, common.threads);
        const double gap = f64 ? outcome.abs_gap : outcome.rel_gap;
        max_gap = std::max(max_gap, gap);
        case_reports.push_back({{"id", ec.id},
                                {"channels", ec.dims.channels},
                                {"queries", ec.dims.queries},
                                {"latent", ec.dims.latent},
                                {"groups", ec.dims.groups},
                                {"window", window_json(ec.dims.window)},
                                {"normalize", ec.dims.normalize},
                                {"abs_gap", outcome.abs_gap},
                                {"rel_gap", outcome.rel_gap},
                                {"pass", gap <= tolerance}});
    }
    const bool pass = max_gap <= tolerance;
    json report{{"command", "equiv"},
                {"config", common_json(common)},
                {"cases", case_reports},
                {"case_count", grid.size()},
                {"tolerance", tolerance},
                {"max_gap", max_gap},
                {"pass", pass}};
    report["config"]["cases"] = cases;
    report["config"]["tolerance"] = tolerance;
    emit_report(common, "equiv.json", report);
    return pass ? kPass : kFail;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const CLI::App* cmd, Common common, double eps, double tolerance, bool corrupt) {
    const json cfg = load_config(
        common.config_path,
        {"seed", "dtype", "threads", "out", "eps", "tolerance", "corrupt", "min_coords",
         "channels", "queries", "latent", "groups", "window", "time", "height", "width",
         "normalize"});
    apply_common_config(cfg, cmd, common, "f64");
    if (common.dtype != "f64")
        throw ConfigError("gradcheck needs f64 (central differences drown in f32 rounding)");
    take(cfg, "eps", cmd, "--eps", eps);
    take(cfg, "tolerance", cmd, "--tolerance", tolerance);
    if (cfg.contains("corrupt") && !cmd->count("--corrupt")) corrupt = cfg["corrupt"].get<bool>();
    std::size_t min_coords = 64;
    take(cfg, "min_coords", cmd, "", min_coords);

    std::size_t channels = 6, queries = 2, latent = 2, groups = 0, time = 3, height = 3,
                width = 3;
    bool normalize = true;
    std::vector<int> window{3, 1, 1};
    take(cfg, "channels", cmd, "", channels);
    take(cfg, "queries", cmd, "", queries);
    take(cfg, "latent", cmd, "", latent);
    take(cfg, "groups", cmd, "", groups);
    take(cfg, "time", cmd, "", time);
    take(cfg, "height", cmd, "", height);
    take(cfg, "width", cmd, "", width);
    take(cfg, "normalize", cmd, "", normalize);
    take(cfg, "window", cmd, "", window);
    const NeighborhoodSpec spec = window_from(window);
    if (queries == 0 || channels % queries != 0)
        throw ConfigError("queries must divide channels");
    if (groups == 0) groups = channels / queries;  // Hadamard by default

    // Inputs are redrawn until every embedded row is clear of the
    // normalization kink.
    Tensor<double> x({1, time, height, width, channels});
    RsaParams<double> params;
    Tensor<double> upstream(x.shape());
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(common.seed + attempt * 1000003ull);
        params = rsa_init<double>(channels, queries, latent, groups, spec, normalize, rng);
        fill_normal(x, rng);
        fill_normal(upstream, rng);
        const std::size_t cq = params.query_channels();
        double min_norm = 1e30;
        for (const Tensor<double>& map :
             {project_rows(x, params.e_q), project_rows(x, params.e_k),
              project_rows(x, params.e_v)})
            for (std::size_t r = 0; r < map.size() / cq; ++r)
                min_norm = std::min(
                    min_norm, row_l2_norm(std::span<const double>(map.data() + r * cq, cq)));
        if (min_norm >= 0.1) break;
    }

    auto grads = rsa_backward(x, spec, params, upstream);
    if (corrupt) grads.p1[0] += 1.0;
    std::vector<GradCheckItem<double>> items{
        {"e_q", &params.e_q, &grads.e_q}, {"e_k", &params.e_k, &grads.e_k},
        {"e_v", &params.e_v, &grads.e_v}, {"p1", &params.p1, &grads.p1},
        {"h1", &params.h1, &grads.h1},    {"h2", &params.h2, &grads.h2},
        {"g_ctx", &params.g_ctx, &grads.g_ctx}, {"input", &x, &grads.input}};
    auto fwd = [&] {
        const auto y = rsa_forward_reference(x, spec, params);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
        return s;
    };
    const GradReport gr = finite_diff_check<double>(fwd, items, eps, common.seed, min_coords);

    json entries = json::array();
    for (const auto& e : gr.entries)
        entries.push_back({{"name", e.name},
                           {"max_rel_err", e.max_rel_err},
                           {"max_abs_err", e.max_abs_err},
                           {"coords", e.coords}});
    const bool pass = gr.worst_rel_err() <= tolerance;
    json report{{"command", "gradcheck"},
                {"config", common_json(common)},
                {"eps", eps},
                {"tolerance", tolerance},
                {"corrupt", corrupt},
                {"dims",
                 {{"channels", channels},
                  {"queries", queries},
                  {"latent", latent},
                  {"groups", groups},
                  {"window", window_json(spec)},
                  {"time", time},
                  {"height", height},
                  {"width", width},
                  {"normalize", normalize}}},
                {"parameters", entries},
                {"worst_rel_err", gr.worst_rel_err()},
                {"pass", pass}};
    emit_report(common, "gradcheck.json", report);
    return pass ? kPass : kFail;
}

// ---------------------------------------------------------------------------
// flops / bench

struct GridOpts {
    std::string kernel_sizes = "3x3x3,3x5x5,3x7x7,3x9x9,5x7x7,5x9x9";
    std::vector<std::size_t> contexts;  // raw M values; alternative to windows
    std::vector<std::string> impls;
    std::size_t batch = 1, time = 4, height = 14, width = 14, channels = 64;
    std::size_t queries = 8, latent = 8, groups = 8;
    bool normalize = true;
};

std::vector<BenchConfig> build_grid(const GridOpts& g) {
    std::vector<Impl> impls;
    for (const auto& name : g.impls) {
        Impl impl;
        if (!impl_from_name(name, impl)) throw ConfigError("unknown impl: \"" + name + "\"");
        impls.push_back(impl);
    }
    std::vector<BenchConfig> grid;
    auto push = [&](const std::string& id, const Dims& dims) {
        for (Impl impl : impls) grid.push_back({id, dims, impl});
    };
    Dims base;
    base.batch = g.batch;
    base.time = g.time;
    base.height = g.height;
    base.width = g.width;
    base.channels = g.channels;
    base.queries = g.queries;
    base.latent = g.latent;
    base.groups = g.groups;
    base.normalize = g.normalize;
    if (!g.contexts.empty()) {
        for (std::size_t m : g.contexts) {
            Dims d = base;
            d.context_override = m;
            push("m" + std::to_string(m), d);
        }
    } else {
        for (const auto& spec : parse_kernel_sizes(g.kernel_sizes)) {
            Dims d = base;
            d.window = spec;
            push(std::to_string(spec.m_t) + "x" + std::to_string(spec.m_h) + "x" +
                     std::to_string(spec.m_w),
                 d);
        }
    }
    if (grid.empty()) throw ConfigError("empty grid: no kernel sizes or impls");
    return grid;
}

void grid_from_config(const json& cfg, const CLI::App* cmd, GridOpts& g) {
    take(cfg, "kernel_sizes", cmd, "--kernel-sizes", g.kernel_sizes);
    take(cfg, "contexts", cmd, "", g.contexts);
    take(cfg, "impls", cmd, "--impls", g.impls);
    take(cfg, "batch", cmd, "", g.batch);
    take(cfg, "time", cmd, "", g.time);
    take(cfg, "height", cmd, "", g.height);
    take(cfg, "width", cmd, "", g.width);
    take(cfg, "channels", cmd, "--channels", g.channels);
    take(cfg, "queries", cmd, "", g.queries);
    take(cfg, "latent", cmd, "", g.latent);
    take(cfg, "groups", cmd, "", g.groups);
    take(cfg, "normalize", cmd, "", g.normalize);
}

json grid_json(const GridOpts& g) {
    return {{"kernel_sizes", g.kernel_sizes}, {"contexts", g.contexts},
            {"impls", g.impls},               {"batch", g.batch},
            {"time", g.time},                 {"height", g.height},
            {"width", g.width},               {"channels", g.channels},
            {"queries", g.queries},           {"latent", g.latent},
            {"groups", g.groups},             {"normalize", g.normalize}};
}

int cmd_flops(const CLI::App* cmd, Common common, GridOpts grid_opts) {
    const json cfg = load_config(
        common.config_path,
        {"seed", "dtype", "threads", "out", "kernel_sizes", "contexts", "impls", "batch", "time",
         "height", "width", "channels", "queries", "latent", "groups", "normalize"});
    apply_common_config(cfg, cmd, common, "f32");
    if (grid_opts.impls.empty())
        grid_opts.impls = {"reference", "efficient", "efficient+multiquery"};
    grid_from_config(cfg, cmd, grid_opts);
    const auto grid = build_grid(grid_opts);

    std::vector<BenchResult> rows;
    for (const auto& bc : grid) {
        const CostReport cost = cost_report(bc.dims, bc.impl);
        BenchResult r;
        r.config_id = bc.id;
        r.impl = bc.impl;
        r.dtype = common.dtype;
        r.repeats = 0;  // counter-only row
        r.flops = cost.flops;
        r.params = cost.params;
        r.workset = cost.workset;
        rows.push_back(std::move(r));
    }

    std::filesystem::create_directories(common.out);
    std::ofstream csv(std::filesystem::path(common.out) / "flops.csv");
    write_bench_csv(csv, rows);

    json entries = json::array();
    for (const auto& r : rows)
        entries.push_back({{"config_id", r.config_id},
                           {"impl", impl_name(r.impl)},
                           {"flops", r.flops},
                           {"params", r.params},
                           {"workset", r.workset}});
    // FLOPs ratios between consecutive grid points, per impl.
    json ratios = json::object();
    for (const auto& name : grid_opts.impls) {
        std::vector<double> f;
        for (const auto& r : rows)
            if (impl_name(r.impl) == name) f.push_back(double(r.flops));
        json list = json::array();
        for (std::size_t i = 1; i < f.size(); ++i) list.push_back(f[i] / f[i - 1]);
        ratios[name] = list;
    }
    json report{{"command", "flops"},         {"config", common_json(common)},
                {"grid", grid_json(grid_opts)}, {"entries", entries},
                {"flops_ratios", ratios},     {"pass", true}};
    emit_report(common, "flops.json", report);
    return kPass;
}

int cmd_bench(const CLI::App* cmd, Common common, GridOpts grid_opts, int repeats, int warmup) {
    const json cfg = load_config(
        common.config_path,
        {"seed", "dtype", "threads", "out", "kernel_sizes", "contexts", "impls", "batch", "time",
         "height", "width", "channels", "queries", "latent", "groups", "normalize", "repeats",
         "warmup", "max_gib"});
    apply_common_config(cfg, cmd, common, "f32");
    if (grid_opts.impls.empty()) grid_opts.impls = {"reference", "efficient+multiquery"};
    grid_from_config(cfg, cmd, grid_opts);
    take(cfg, "repeats", cmd, "--repeats", repeats);
    take(cfg, "warmup", cmd, "--warmup", warmup);
    double max_gib = 6.0;
    take(cfg, "max_gib", cmd, "", max_gib);
    for (const auto& bc : build_grid(grid_opts))
        if (bc.dims.context_override)
            throw ConfigError("bench needs windowed kernel sizes, not raw context overrides");

    const auto grid = build_grid(grid_opts);
    const auto results =
        common.dtype == "f64"
            ? bench_run<double>(grid, repeats, warmup, common.seed, common.threads,
                                std::uint64_t(max_gib * double(std::uint64_t{1} << 30)))
            : bench_run<float>(grid, repeats, warmup, common.seed, common.threads,
                               std::uint64_t(max_gib * double(std::uint64_t{1} << 30)));

    std::filesystem::create_directories(common.out);
    std::ofstream csv(std::filesystem::path(common.out) / "bench.csv");
    write_bench_csv(csv, results);

    json entries = json::array();
    for (const auto& r : results) {
        json e{{"config_id", r.config_id}, {"impl", impl_name(r.impl)},
               {"median_ns", r.median_ns}, {"mad_ns", r.mad_ns},
               {"repeats", r.repeats},     {"dtype", r.dtype},
               {"flops", r.flops},         {"params", r.params},
               {"workset", r.workset},     {"skipped", r.skipped}};
        if (r.skipped) e["skip_reason"] = r.skip_reason;
        entries.push_back(e);
    }
    // Rank agreement between counted FLOPs and measured medians, per impl.
    json correlation = json::object();
    for (const auto& name : grid_opts.impls) {
        std::vector<double> f, t;
        for (const auto& r : results)
            if (!r.skipped && impl_name(r.impl) == name) {
                f.push_back(double(r.flops));
                t.push_back(r.median_ns);
            }
        if (f.size() >= 3) correlation[name] = spearman(f, t);
    }
    json report{{"command", "bench"},
                {"config", common_json(common)},
                {"grid", grid_json(grid_opts)},
                {"repeats", repeats},
                {"warmup", warmup},
                {"entries", entries},
                {"spearman_flops_time", correlation},
                {"pass", true}};
    emit_report(common, "bench.json", report);
    return kPass;
}

// ---------------------------------------------------------------------------
// probe / dump-kernels

struct ProbeOpts {
    std::string transform = "rsa";
    DatasetConfig data;
    ProbeConfig model;
};

void probe_from_config(const json& cfg, const CLI::App* cmd, ProbeOpts& p) {
    take(cfg, "transform", cmd, "--transform", p.transform);
    take(cfg, "clips_per_class", cmd, "", p.data.n_per_class);
    take(cfg, "time", cmd, "", p.data.time);
    take(cfg, "height", cmd, "", p.data.height);
    take(cfg, "width", cmd, "", p.data.width);
    take(cfg, "channels", cmd, "", p.model.channels);
    take(cfg, "queries", cmd, "", p.model.queries);
    take(cfg, "latent", cmd, "", p.model.latent);
    take(cfg, "groups", cmd, "", p.model.groups);
    take(cfg, "normalize", cmd, "", p.model.normalize);
    take(cfg, "epochs", cmd, "--epochs", p.model.epochs);
    take(cfg, "lr", cmd, "--lr", p.model.lr);
    take(cfg, "batch", cmd, "", p.model.batch);
    take(cfg, "stop_loss", cmd, "", p.model.stop_loss);
    std::vector<int> window{p.model.window.m_t, p.model.window.m_h, p.model.window.m_w};
    take(cfg, "window", cmd, "", window);
    p.model.window = window_from(window);
    if (!transform_from_name(p.transform, p.model.kind))
        throw ConfigError("unknown transform: \"" + p.transform + "\" (rsa, sa-content, sa-full, involution)");
}

json probe_config_json(const ProbeOpts& p) {
    return {{"transform", p.transform},
            {"clips_per_class", p.data.n_per_class},
            {"time", p.data.time},
            {"height", p.data.height},
            {"width", p.data.width},
            {"channels", p.model.channels},
            {"queries", p.model.queries},
            {"latent", p.model.latent},
            {"groups", p.model.groups},
            {"normalize", p.model.normalize},
            {"window", window_json(p.model.window)},
            {"epochs", p.model.epochs},
            {"lr", p.model.lr},
            {"batch", p.model.batch},
            {"stop_loss", p.model.stop_loss}};
}

template <typename T>
int run_probe(const Common& common, const ProbeOpts& opts) {
    auto ds = gen_dataset<T>(common.seed, opts.data);
    auto model = make_probe_model<T>(opts.model, common.seed ^ 0x9e3779b97f4a7c15ull);
    const TrainReport tr = train(model, ds, common.seed, common.threads);

    const auto ckpt_dir = std::filesystem::path(common.out) / "checkpoint";
    save_probe_checkpoint(ckpt_dir, model);

    json epochs = json::array();
    for (const auto& e : tr.epochs)
        epochs.push_back({{"train_loss", e.train_loss},
                          {"train_acc", e.train_acc},
                          {"test_loss", e.test_loss},
                          {"test_acc", e.test_acc}});
    json report{{"command", "probe"},
                {"config", common_json(common)},
                {"probe", probe_config_json(opts)},
                {"epochs", epochs},
                {"epochs_run", tr.epochs.size()},
                {"final_train_acc", tr.final_train_acc},
                {"test_acc", tr.final_test_acc},
                {"paired_gap", tr.paired_gap_max},
                {"paired_gap_frac_above_1e-3", tr.paired_gap_frac_above_1e3},
                {"diverged", tr.diverged},
                {"checkpoint", ckpt_dir.string()},
                {"pass", !tr.diverged}};
    Common c = common;
    emit_report(c, "probe.json", report);
    return tr.diverged ? kFail : kPass;
}

int cmd_probe(const CLI::App* cmd, Common common, ProbeOpts opts) {
    const json cfg = load_config(
        common.config_path,
        {"seed", "dtype", "threads", "out", "transform", "clips_per_class", "time", "height",
         "width", "channels", "queries", "latent", "groups", "normalize", "window", "epochs",
         "lr", "batch", "stop_loss"});
    apply_common_config(cfg, cmd, common, "f32");
    probe_from_config(cfg, cmd, opts);
    return common.dtype == "f64" ? run_probe<double>(common, opts) : run_probe<float>(common, opts);
}

template <typename T>
int run_dump(const Common& common, const std::string& ckpt, const DatasetConfig& dcfg,
             std::size_t clip_index, std::vector<std::size_t> position) {
    auto model = load_probe_checkpoint<T>(ckpt);
    auto ds = gen_dataset<T>(common.seed, dcfg);
    if (clip_index >= ds.clips.size()) throw ConfigError("clip_index out of range");
    const auto& clip = ds.clips[clip_index];
    const GridDims g = grid_of(clip.data);
    if (position.empty()) position = {g.time / 2, g.height / 2, g.width / 2};
    if (position.size() != 3) throw ConfigError("position must be t,h,w");
    const std::array<std::size_t, 3> pos{position[0], position[1], position[2]};

    const auto dumps = collect_kernels(model, clip.data, pos);
    const auto files = dump_kernels(model, clip.data, pos, common.out);

    auto gap_between = [&](const std::string& a, const std::string& b) {
        double gap = 0.0;
        const std::vector<T>*va = nullptr, *vb = nullptr;
        for (const auto& d : dumps) {
            if (d.name == a) va = &d.values;
            if (d.name == b) vb = &d.values;
        }
        if (!va || !vb) return -1.0;
        for (std::size_t i = 0; i < va->size(); ++i)
            gap = std::max(gap, std::abs(double((*va)[i]) - double((*vb)[i])));
        return gap;
    };
    json kernel_gaps = json::object();
    for (std::size_t l = 0; l < model.config.queries; ++l) {
        const std::string q = std::to_string(l);
        const double kv = gap_between("kv_q" + q + "_orig", "kv_q" + q + "_rev");
        const double kr = gap_between("kr_q" + q + "_orig", "kr_q" + q + "_rev");
        if (kv >= 0) kernel_gaps["kv_q" + q] = kv;
        if (kr >= 0) kernel_gaps["kr_q" + q] = kr;
    }

    json file_list = json::array();
    for (const auto& f : files) file_list.push_back(f.string());
    json report{{"command", "dump-kernels"},
                {"config", common_json(common)},
                {"checkpoint", ckpt},
                {"transform", transform_name(model.config.kind)},
                {"clip_index", clip_index},
                {"clip_label", label_name(clip.label)},
                {"position", position},
                {"files", file_list},
                {"reversal_gaps", kernel_gaps},
                {"pass", true}};
    Common c = common;
    emit_report(c, "dump-kernels.json", report);
    return kPass;
}

int cmd_dump(const CLI::App* cmd, Common common, std::string ckpt, std::size_t clip_index,
             std::vector<std::size_t> position) {
    const json cfg = load_config(common.config_path,
                                 {"seed", "dtype", "threads", "out", "checkpoint", "clip_index",
                                  "position", "clips_per_class", "time", "height", "width"});
    apply_common_config(cfg, cmd, common, "f32");
    take(cfg, "checkpoint", cmd, "--checkpoint", ckpt);
    take(cfg, "clip_index", cmd, "--clip-index", clip_index);
    take(cfg, "position", cmd, "--position", position);
    DatasetConfig dcfg;
    take(cfg, "clips_per_class", cmd, "", dcfg.n_per_class);
    take(cfg, "time", cmd, "", dcfg.time);
    take(cfg, "height", cmd, "", dcfg.height);
    take(cfg, "width", cmd, "", dcfg.width);
    if (ckpt.empty()) throw ConfigError("dump-kernels needs --checkpoint (or a config value)");

    const std::string manifest_dtype = read_manifest(ckpt).value("dtype", "f32");
    if (cmd->count("--dtype") && common.dtype != manifest_dtype)
        throw ConfigError("checkpoint dtype is " + manifest_dtype);
    common.dtype = manifest_dtype;
    return manifest_dtype == "f64" ? run_dump<double>(common, ckpt, dcfg, clip_index, position)
                                   : run_dump<float>(common, ckpt, dcfg, clip_index, position);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"relational feature-transform laboratory"};
    app.require_subcommand(1);

    Common common;
    std::size_t cases = 24;
    double tolerance = -1.0;
    double eps = 1e-5, grad_tol = 1e-4;
    bool corrupt = false;
    GridOpts grid_opts;
    int repeats = 7, warmup = 2;
    ProbeOpts probe_opts;
    std::string ckpt;
    std::size_t clip_index = 0;
    std::vector<std::size_t> position;

    auto* equiv = app.add_subcommand("equiv", "literal vs factorized forward equality");
    add_common_flags(equiv, common);
    equiv->add_option("--cases", cases, "number of grid configurations");
    equiv->add_option("--tolerance", tolerance, "max allowed gap (abs for f64, rel for f32)");

    auto* gradcheck = app.add_subcommand("gradcheck", "analytic gradients vs central differences");
    add_common_flags(gradcheck, common);
    gradcheck->add_option("--eps", eps, "finite-difference step, in [1e-7, 1e-3]");
    gradcheck->add_option("--tolerance", grad_tol, "max allowed relative error");
    gradcheck->add_flag("--corrupt", corrupt, "corrupt one gradient entry (negative control)");

    auto* flops = app.add_subcommand("flops", "analytic FLOP/parameter/workset counts");
    add_common_flags(flops, common);
    flops->add_option("--kernel-sizes", grid_opts.kernel_sizes, "comma list like 3x3x3,5x7x7");
    flops->add_option("--impls", grid_opts.impls, "impl names");
    flops->add_option("--channels", grid_opts.channels, "channel width");

    auto* bench = app.add_subcommand("bench", "wall-time benchmark over a configuration grid");
    add_common_flags(bench, common);
    bench->add_option("--kernel-sizes", grid_opts.kernel_sizes, "comma list like 3x3x3,5x7x7");
    bench->add_option("--impls", grid_opts.impls, "impl names");
    bench->add_option("--channels", grid_opts.channels, "channel width");
    bench->add_option("--repeats", repeats, "timed repeats per config (>= 5)");
    bench->add_option("--warmup", warmup, "untimed warmup evaluations");

    auto* probe = app.add_subcommand("probe", "train the synthetic motion probe");
    add_common_flags(probe, common);
    probe->add_option("--transform", probe_opts.transform, "rsa | sa-content | sa-full | involution");
    probe->add_option("--epochs", probe_opts.model.epochs, "epoch cap");
    probe->add_option("--lr", probe_opts.model.lr, "learning rate");

    auto* dump = app.add_subcommand("dump-kernels", "write per-query kernel grids as CSV");
    add_common_flags(dump, common);
    dump->add_option("--checkpoint", ckpt, "checkpoint directory from `probe`");
    dump->add_option("--clip-index", clip_index, "clip to probe");
    dump->add_option("--position", position, "t h w target position")->expected(3);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfigError;
    }

    try {
        if (app.got_subcommand(equiv))
            return cmd_equiv(equiv, common, cases, tolerance, equiv->count("--tolerance") > 0);
        if (app.got_subcommand(gradcheck))
            return cmd_gradcheck(gradcheck, common, eps, grad_tol, corrupt);
        if (app.got_subcommand(flops)) return cmd_flops(flops, common, grid_opts);
        if (app.got_subcommand(bench)) return cmd_bench(bench, common, grid_opts, repeats, warmup);
        if (app.got_subcommand(probe)) return cmd_probe(probe, common, probe_opts);
        if (app.got_subcommand(dump)) return cmd_dump(dump, common, ckpt, clip_index, position);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
    return kConfigError;
}
