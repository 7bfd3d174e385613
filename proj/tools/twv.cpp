// twv: command-line front end for the transmission-wave toolkit.

#include <openssl/evp.h>

#include <filesystem>
#include <iostream>
#include <mutex>

#include "CLI11.hpp"
#include "json.hpp"
#include "twv/experiment.hpp"

namespace fs = std::filesystem;
using namespace twv;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    require(EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) == 1, ErrorKind::Numerical,
            "sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

/// The only path by which files are written; records hashes for the manifest.
class OutputWriter {
public:
    explicit OutputWriter(fs::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        require(!ec, ErrorKind::Config, "cannot create output directory " + dir_.string());
    }

    void write(const std::string& name, const std::string& bytes) {
        std::lock_guard lock(mu_);
        const fs::path p = fs::path(name).is_absolute() ? fs::path(name) : dir_ / name;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        write_text(p.string(), bytes);
        files_[name] = {sha256_hex(bytes), bytes.size()};
    }

    void manifest(const nlohmann::json& header) {
        nlohmann::json m = header;
        m["outputs"] = nlohmann::json::array();
        for (const auto& [name, f] : files_) m["outputs"].push_back({{"path", name}, {"sha256", f.first}, {"bytes", f.second}});
        write_text((dir_ / "manifest.json").string(), m.dump(2) + "\n");
    }

private:
    fs::path dir_;
    std::mutex mu_;
    std::map<std::string, std::pair<std::string, std::size_t>> files_;
};

struct RunContext {
    std::string command;
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    Config cfg;
    std::string config_hash;

    void load() {
        const std::string text = read_file(config_path);
        cfg = Config::parse(text, config_path);
        std::string h = text;
        for (const auto& o : overrides) {
            cfg.set(o);
            h += "\n" + o;
        }
        config_hash = sha256_hex(h);
        check_known_keys(cfg);
    }

    nlohmann::json header() const {
        nlohmann::json j;
        j["tool"] = "twv";
        j["version"] = kVersion;
        j["command"] = command;
        j["config"] = config_path;
        j["config_sha256"] = config_hash;
        j["overrides"] = overrides;
        nlohmann::json seeds = nlohmann::json::object();
        for (const auto& [k, v] : cfg.entries())
            if (k.size() > 5 && k.compare(k.size() - 5, 5, ".seed") == 0)
                if (const auto* d = std::get_if<double>(&v)) seeds[k] = *d;
        j["seeds"] = seeds;
        return j;
    }
};

std::string rows_csv(const std::vector<ReportRow>& rows) {
    CsvTable t({"quantity", "value", "pass"});
    for (const auto& r : rows) t.row({r.quantity, fmt_num(r.value), r.pass ? "true" : "false"});
    return t.str();
}

void emit(OutputWriter& out, const std::string& name, const std::string& text, bool echo = true) {
    out.write(name, text);
    if (echo) std::cout << text;
}

// ---------------------------------------------------------------------------

void geometry_check(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    auto rows = geometry_report(dp, rc.cfg.count("geometry.theta_samples", default_theta_samples));
    if (rc.cfg.has("weights.pole1") || rc.cfg.has("weights.pole")) {
        const WeightSetup w = [&] {
            WeightSetup s;
            s.poles = rc.cfg.has("weights.pole") ? std::vector<Vec2>{rc.cfg.point("weights.pole")}
                                                 : std::vector<Vec2>{rc.cfg.point("weights.pole1"), rc.cfg.point("weights.pole2")};
            return s;
        }();
        for (std::size_t j = 0; j < w.poles.size(); ++j) {
            const PoleData pd = pole_data(dp, w.poles[j]);
            const std::string p = "pole" + std::to_string(j + 1);
            rows.push_back({p + "_alpha", pd.alpha, pd.alpha > 0.0});
            rows.push_back({p + "_R_sup", pd.R_sup, true});
            rows.push_back({p + "_D_max", pd.D_max, true});
        }
        if (w.poles.size() == 2) rows.push_back({"epsilon_bound", epsilon_bound(dp, w.poles[0], w.poles[1]), true});
    }
    emit(out, "geometry.csv", rows_csv(rows));
    CsvTable curves({"curve", "theta", "x", "y", "rho", "curvature"});
    const std::size_t n = 256;
    for (int which = 0; which < 2; ++which) {
        const InterfaceCurve& cv = which ? dp.outer() : dp.inner();
        for (std::size_t i = 0; i < n; ++i) {
            const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n);
            const Vec2 p = cv.point(th);
            curves.row({which ? "outer" : "inner", fmt_num(th), fmt_num(p.x), fmt_num(p.y), fmt_num(cv.rho(th)),
                        fmt_num(curvature(cv, th))});
        }
    }
    emit(out, "curves.csv", curves.str(), false);
}

void weights_check(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    const WeightSetup w = weights_from(rc.cfg, dp);
    emit(out, "weights_check.csv", weights_check_table(dp, w).str());
}

void weights_window(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    WeightSetup w = weight_basis(rc.cfg, dp);
    std::vector<double> betas = rc.cfg.list("window.betas", {});
    if (betas.empty()) {
        if (rc.cfg.is_auto("weights.beta") || !rc.cfg.has("weights.beta")) betas.push_back(auto_window(w.window_inputs).beta);
        else betas.push_back(rc.cfg.number("weights.beta"));
    }
    emit(out, "window.csv", window_table(w.window_inputs, betas).str());
    const auto& in = w.window_inputs;
    CsvTable inputs({"input", "value"});
    for (const auto& [k, v] : std::vector<std::pair<std::string, double>>{{"a1", in.a1}, {"a2", in.a2}, {"delta1", in.delta1},
                                                                         {"M", in.M}, {"T", in.T}, {"diam", in.diam},
                                                                         {"norm_laplacian", in.norm_laplacian}})
        inputs.row({k, fmt_num(v)});
    emit(out, "window_inputs.csv", inputs.str(), false);
}

void carleman_sweep(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    const WeightSetup w = weights_from(rc.cfg, dp);
    const SweepReport r = run_carleman_sweep(rc.cfg, dp, w);
    emit(out, "sweep.csv", sweep_table(r).str());
    std::string summary = onset_text(r);
    summary += "fields=" + std::to_string(r.fields) + " kind=" + r.field_kind + " outside_X=" +
               std::to_string(r.fields_outside_X) + " nodes=" + std::to_string(r.nodes) + "\n";
    summary += "beta=" + fmt_num(w.params.beta) + " gamma=" + fmt_num(w.params.gamma) + "\n";
    emit(out, "onset.txt", summary);
}

void carleman_identity(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    const WeightSetup w = weights_from(rc.cfg, dp);
    const auto rows = run_identity(rc.cfg, dp, w);
    CsvTable t({"h", "residual", "order"});
    for (const auto& r : rows) t.row({fmt_num(r.h), fmt_num(r.residual), fmt_num(r.order)});
    emit(out, "identity.csv", t.str());
}

void forward_run(RunContext& rc, OutputWriter& out, std::optional<std::size_t> snap_flag, const std::string& trace_out) {
    const DomainPair dp = domains_from(rc.cfg);
    const SimGrid g(dp, grid_options_from(rc.cfg));
    const std::vector<double> u0 = forward_initial_data(rc.cfg, g);
    const std::size_t every = snap_flag ? *snap_flag : rc.cfg.count("forward.snapshot_every", 0);
    WaveSolver solver(g, std::vector<double>(g.n_active(), rc.cfg.number("forward.potential", 0.0)));
    CsvTable energy({"step", "time", "energy"});
    SolveOptions opt;
    opt.snapshot_every = every;
    opt.on_snapshot = [&](const WaveState& s) {
        char name[32];
        std::snprintf(name, sizeof(name), "snap_%06zu.twv", s.n);
        out.write(name, encode_snapshot(grid_snapshot(g, s.u_curr, s.t)));
    };
    opt.on_step = [&](const WaveState& s) {
        if (s.n > 0) energy.row({std::to_string(s.n), fmt_num(s.t), fmt_num(solver.energy(s))});
    };
    const SolveResult r = solve(solver, u0, {}, opt);
    out.write(trace_out.empty() ? "trace.csv" : trace_out, trace_csv(r.trace).str());
    out.write("energy.csv", energy.str());
    std::cout << "steps=" << g.nt() << " dt=" << fmt_num(g.dt()) << " h=" << fmt_num(g.h())
              << " active=" << g.n_active() << "\n";
}

void rays_trace(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    const RayRunReport r = run_rays(rc.cfg, dp);
    if (r.events.size() > 0) out.write("events.csv", r.events.str());
    std::vector<ReportRow> rows{{"origins", static_cast<double>(r.origins), true},
                                {"rays", static_cast<double>(r.crossing.rays), true},
                                {"crossing_fraction", r.crossing.fraction, true},
                                {"max_exit_incidence", r.crossing.max_exit_incidence, true},
                                {"min_trapped_incidence", r.crossing.min_trapped_incidence, true}};
    if (r.critical_angle) rows.push_back({"critical_angle", *r.critical_angle, true});
    emit(out, "crossing.csv", rows_csv(rows));
}

void rays_envelope(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    const EnvelopeResult r = run_envelope(rc.cfg, dp);
    CsvTable t({"x0", "y0", "x1", "y1"});
    for (const auto& s : r.curve) t.row({fmt_num(s.a.x), fmt_num(s.a.y), fmt_num(s.b.x), fmt_num(s.b.y)});
    out.write("contour.csv", t.str());
    if (rc.cfg.boolean("envelope.pgm", false)) {
        const auto [lo, hi] = std::minmax_element(r.field.v.begin(), r.field.v.end());
        out.write("envelope.pgm", encode_pgm(r.field.nx, r.field.ny, r.field.v, *lo, *hi));
    }
    const std::vector<ReportRow> rows{{"segments", static_cast<double>(r.curve.size()), true},
                                      {"raster_h", r.field.h, true},
                                      {"hausdorff", r.hausdorff.value_or(std::nan("")), true},
                                      {"low_coverage", r.low_coverage ? 1.0 : 0.0, !r.low_coverage}};
    emit(out, "envelope.csv", rows_csv(rows));
}

void invert_stability(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    const InverseSetup s = inverse_from(rc.cfg, dp);
    const StabilityReport r = run_stability(rc.cfg, s);
    emit(out, "stability.csv", stability_table(r).str(), false);
    const std::vector<ReportRow> rows{{"T", s.T, true},
                                      {"T0", s.T0, true},
                                      {"max_ratio", r.max_ratio, r.all_finite},
                                      {"median_ratio", r.median_ratio, true},
                                      {"max_over_median", r.spread(), r.spread() <= 2.0}};
    emit(out, "stability_summary.csv", rows_csv(rows));
}

void invert_reconstruct(RunContext& rc, OutputWriter& out) {
    const DomainPair dp = domains_from(rc.cfg);
    const InverseSetup s = inverse_from(rc.cfg, dp);
    const ReconstructionReport r = run_reconstruct(rc.cfg, s);
    out.write("estimate.twv", encode_snapshot(grid_snapshot(*s.grid, r.estimate, 0.0)));
    emit(out, "log.csv", reconstruction_log(r).str(), false);
    std::vector<ReportRow> rows{{"T", s.T, true}, {"relative_error", r.rel_error, true}, {"converged", r.converged ? 1.0 : 0.0, true}};
    if (!std::isnan(r.dot_test)) rows.push_back({"dot_test", r.dot_test, r.dot_test <= 1e-8});
    emit(out, "reconstruct_summary.csv", rows_csv(rows));
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Infeasible: return 2;
        case ErrorKind::Numerical: return 3;
        default: return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"twv: wave transmission experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    RunContext rc;
    std::optional<std::size_t> snapshot_every;
    std::string trace_out;
    std::function<void(OutputWriter&)> action;

    auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& help, auto fn) {
        CLI::App* sub = parent->add_subcommand(name, help);
        sub->add_option("config", rc.config_path, "experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--set", rc.overrides, "override a config key (key=value), repeatable");
        sub->add_option("--out", rc.out_dir, "output directory");
        sub->callback([&, parent, name, fn] {
            rc.command = parent->get_name() + " " + name;
            action = fn;
        });
        return sub;
    };
    auto group = [&](const std::string& name, const std::string& help) {
        CLI::App* g = app.add_subcommand(name, help);
        g->require_subcommand(1);
        return g;
    };

    CLI::App* geo = group("geometry", "curve and nesting checks");
    leaf(geo, "check", "convexity / nesting report", [&](OutputWriter& o) { geometry_check(rc, o); });
    CLI::App* wts = group("weights", "weight function checks");
    leaf(wts, "check", "weight conditions (a)-(f) on a grid", [&](OutputWriter& o) { weights_check(rc, o); });
    leaf(wts, "window", "feasible (beta, gamma) window", [&](OutputWriter& o) { weights_window(rc, o); });
    CLI::App* car = group("carleman", "Carleman ratio experiments");
    leaf(car, "sweep", "ensemble ratio over s and lambda", [&](OutputWriter& o) { carleman_sweep(rc, o); });
    leaf(car, "identity", "conjugation identity convergence", [&](OutputWriter& o) { carleman_identity(rc, o); });
    CLI::App* fwd = group("forward", "forward solver");
    CLI::App* run = leaf(fwd, "run", "solve and export snapshots / traces",
                         [&](OutputWriter& o) { forward_run(rc, o, snapshot_every, trace_out); });
    run->add_option("--snapshot-every", snapshot_every, "write a snapshot every N steps");
    run->add_option("--trace-out", trace_out, "flux trace CSV path");
    CLI::App* rays = group("rays", "ray tracing");
    leaf(rays, "trace", "trace rays and report crossing", [&](OutputWriter& o) { rays_trace(rc, o); });
    leaf(rays, "envelope", "interface from traveltime envelopes", [&](OutputWriter& o) { rays_envelope(rc, o); });
    CLI::App* inv = group("invert", "inverse problems");
    leaf(inv, "stability", "stability-ratio ensemble", [&](OutputWriter& o) { invert_stability(rc, o); });
    leaf(inv, "reconstruct", "linearized or potential reconstruction", [&](OutputWriter& o) { invert_reconstruct(rc, o); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        rc.load();
        OutputWriter out(rc.out_dir);
        action(out);
        out.manifest(rc.header());
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
