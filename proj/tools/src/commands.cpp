// SPDX-License-Identifier: Apache-2.0

#include "elasreg_cli/commands.hpp"

#include <elasreg/errors.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace elasreg::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || !std::isfinite(out)) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "off" || v == "no") {
        return false;
    }
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <class T, class Parse>
std::vector<T> to_list(const std::string& key, const std::string& v, Parse parse) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse(key, trim(item)));
    }
    if (out.empty()) {
        throw ConfigError(key + ": empty list");
    }
    return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string fmt(int v) { return std::to_string(v); }

template <class T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + fmt(v[i]);
    }
    return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

// Applies each recognised key; anything left over is an error.
class Applier {
public:
    explicit Applier(const KeyValues& values) : values_(values) {}

    template <class F>
    Applier& on(const std::string& key, F f) {
        const auto it = values_.find(key);
        if (it != values_.end()) {
            f(key, it->second);
            seen_.push_back(key);
        }
        return *this;
    }

    void finish() const {
        for (const auto& [k, v] : values_) {
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) {
                throw ConfigError("unknown configuration key '" + k + "'");
            }
        }
    }

private:
    const KeyValues& values_;
    std::vector<std::string> seen_;
};

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    }
}

} // namespace

KeyValues read_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config " + path.string());
    }
    KeyValues out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path.string() + ":" + std::to_string(n) + ": empty key");
        }
        if (!out.emplace(key, value).second) {
            throw ConfigError(path.string() + ":" + std::to_string(n) + ": repeated key '" + key + "'");
        }
    }
    return out;
}

void write_manifest(const KeyValues& values, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& [k, v] : values) {
        out << k << " = " << v << '\n';
    }
}

// ---------------------------------------------------------------- verify

KeyValues VerifyOptions::to_key_values() const {
    KeyValues kv{{"case", case_name},
                 {"mode", mode},
                 {"degree", std::to_string(degree)},
                 {"levels", std::to_string(levels)},
                 {"theta_refine", fmt(theta_refine)},
                 {"solver.tol", fmt(tol)},
                 {"solver.max_iter", std::to_string(max_iter)},
                 {"solver.aa_depth", std::to_string(aa_depth)},
                 {"out", out_dir.string()}};
    const bool smooth = case_name == "smooth";
    kv["amplitude"] = fmt(amplitude.value_or(smooth ? ManufacturedCase::smooth().amplitude : 1.0));
    return kv;
}

void VerifyOptions::apply(const KeyValues& values) {
    Applier(values)
        .on("case", [&](auto&, auto& v) { case_name = v; })
        .on("mode", [&](auto&, auto& v) { mode = v; })
        .on("degree", [&](auto& k, auto& v) { degree = to_int(k, v); })
        .on("levels", [&](auto& k, auto& v) { levels = to_int(k, v); })
        .on("theta_refine", [&](auto& k, auto& v) { theta_refine = to_double(k, v); })
        .on("amplitude", [&](auto& k, auto& v) { amplitude = to_double(k, v); })
        .on("solver.tol", [&](auto& k, auto& v) { tol = to_double(k, v); })
        .on("solver.max_iter", [&](auto& k, auto& v) { max_iter = to_int(k, v); })
        .on("solver.aa_depth", [&](auto& k, auto& v) { aa_depth = to_int(k, v); })
        .on("out", [&](auto&, auto& v) { out_dir = v; })
        .finish();
}

void VerifyOptions::validate() const {
    parse_case(case_name);
    parse_mode(mode);
    if (amplitude && !(*amplitude > 0.0)) {
        throw ConfigError("amplitude must be positive");
    }
    ConvergenceConfig cc;
    cc.degree = degree;
    cc.levels = levels;
    cc.theta_refine = theta_refine;
    cc.solver.tol = tol;
    cc.solver.max_iter = max_iter;
    cc.solver.aa_depth = aa_depth;
    cc.validate();
}

VerifyOutcome run_verify(const VerifyOptions& o) {
    o.validate();
    ConvergenceConfig cc;
    const CaseKind kind = parse_case(o.case_name);
    cc.mc = kind == CaseKind::Smooth ? ManufacturedCase::smooth() : ManufacturedCase::singular();
    if (o.amplitude) {
        cc.mc.amplitude = *o.amplitude;
    }
    cc.mode = parse_mode(o.mode);
    cc.degree = o.degree;
    cc.levels = o.levels;
    cc.theta_refine = o.theta_refine;
    cc.solver.tol = o.tol;
    cc.solver.max_iter = o.max_iter;
    cc.solver.aa_depth = o.aa_depth;
    cc.solver.q_img = 2 * o.degree + 4;
    cc.solver.track_similarity = false;

    VerifyOutcome out;
    out.rows = run_convergence(cc);
    ensure_dir(o.out_dir);
    const std::string stem = "convergence_" + o.case_name + "_" + o.mode + "_k" + std::to_string(o.degree);
    out.csv = o.out_dir / (stem + ".csv");
    write_convergence_csv(out.rows, out.csv);
    write_error_dofs(out.rows, o.out_dir / (stem + ".dat"));

    const auto& rows = out.rows;
    const double last_rate = rows.back().rate.value_or(0.0);
    const double k = o.degree;
    if (cc.mode == RefinementMode::Uniform) {
        const double expected = kind == CaseKind::Smooth ? k : std::min(k, cc.mc.beta);
        if (std::abs(last_rate - expected) > 0.05) {
            out.failures.push_back("finest rate " + fmt(last_rate) + " outside " + fmt(expected) + " +- 0.05");
        }
    } else {
        double sum = 0.0;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            sum += *rows[i].rate;
        }
        const double mean = sum / static_cast<double>(rows.size() - 1);
        const double floor = kind == CaseKind::Smooth ? k - 0.1 : cc.mc.beta;
        if (mean < floor) {
            out.failures.push_back("mean adaptive rate " + fmt(mean) + " below " + fmt(floor));
        }
    }
    const auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(),
                                              [](const auto& a, const auto& b) { return a.eff < b.eff; });
    if (cc.mode == RefinementMode::Uniform && hi->eff > 2.0 * lo->eff) {
        out.failures.push_back("effectivity spread " + fmt(hi->eff / lo->eff) + " exceeds 2");
    }
    return out;
}

// ---------------------------------------------------------------- register

RegisterOptions::RegisterOptions() {
    params.alpha = 1e4;
    params.dt = 1e-5;
    params.kappa = 0.0;
    solver.tol = 1e-4;
    solver.aa_depth = 10;
    solver.q_img = 6;
    solver.max_iter = 5000;
}

KeyValues RegisterOptions::to_key_values() const {
    return {{"reference", reference.string()},
            {"target", target.string()},
            {"synthetic", synthetic},
            {"synthetic.size", std::to_string(synthetic_size)},
            {"image.sigma", fmt(sigma)},
            {"material.E", fmt(params.E)},
            {"material.nu", fmt(params.nu)},
            {"material.kappa", fmt(params.kappa)},
            {"material.alpha", fmt(params.alpha)},
            {"material.dt", fmt(params.dt)},
            {"solver.tol", fmt(solver.tol)},
            {"solver.max_iter", std::to_string(solver.max_iter)},
            {"solver.stop", solver.stop_mode == StopMode::Velocity ? "velocity" : "residual"},
            {"solver.aa_depth", std::to_string(solver.aa_depth)},
            {"solver.proximal", solver.proximal == ProximalKind::H1 ? "h1" : "identity"},
            {"solver.q_img", std::to_string(solver.q_img)},
            {"solver.cond_limit", fmt(solver.cond_limit)},
            {"solver.divergence_limit", fmt(solver.divergence_limit)},
            {"fe.degree", std::to_string(degree)},
            {"amr.enabled", bool_str(adaptive)},
            {"amr.n0_ref", std::to_string(n0_ref)},
            {"amr.n_ref", std::to_string(n_ref)},
            {"amr.theta_refine", fmt(theta_refine)},
            {"amr.theta_coarsen", fmt(theta_coarsen)},
            {"amr.tol", fmt(adaptive_tol)},
            {"amr.compare_fixed", bool_str(compare_fixed)},
            {"output.vtk", bool_str(write_vtk)},
            {"out", out_dir.string()}};
}

void RegisterOptions::apply(const KeyValues& values) {
    Applier(values)
        .on("reference", [&](auto&, auto& v) { reference = v; })
        .on("target", [&](auto&, auto& v) { target = v; })
        .on("synthetic", [&](auto&, auto& v) { synthetic = v; })
        .on("synthetic.size", [&](auto& k, auto& v) { synthetic_size = to_int(k, v); })
        .on("image.sigma", [&](auto& k, auto& v) { sigma = to_double(k, v); })
        .on("material.E", [&](auto& k, auto& v) { params.E = to_double(k, v); })
        .on("material.nu", [&](auto& k, auto& v) { params.nu = to_double(k, v); })
        .on("material.kappa", [&](auto& k, auto& v) { params.kappa = to_double(k, v); })
        .on("material.alpha", [&](auto& k, auto& v) { params.alpha = to_double(k, v); })
        .on("material.dt", [&](auto& k, auto& v) { params.dt = to_double(k, v); })
        .on("solver.tol", [&](auto& k, auto& v) { solver.tol = to_double(k, v); })
        .on("solver.max_iter", [&](auto& k, auto& v) { solver.max_iter = to_int(k, v); })
        .on("solver.stop",
            [&](auto& k, auto& v) {
                if (v == "residual") {
                    solver.stop_mode = StopMode::StationaryResidual;
                } else if (v == "velocity") {
                    solver.stop_mode = StopMode::Velocity;
                } else {
                    throw ConfigError(k + ": expected residual|velocity");
                }
            })
        .on("solver.aa_depth", [&](auto& k, auto& v) { solver.aa_depth = to_int(k, v); })
        .on("solver.proximal",
            [&](auto& k, auto& v) {
                if (v == "identity") {
                    solver.proximal = ProximalKind::Identity;
                } else if (v == "h1") {
                    solver.proximal = ProximalKind::H1;
                } else {
                    throw ConfigError(k + ": expected identity|h1");
                }
            })
        .on("solver.q_img", [&](auto& k, auto& v) { solver.q_img = to_int(k, v); })
        .on("solver.cond_limit", [&](auto& k, auto& v) { solver.cond_limit = to_double(k, v); })
        .on("solver.divergence_limit", [&](auto& k, auto& v) { solver.divergence_limit = to_double(k, v); })
        .on("fe.degree", [&](auto& k, auto& v) { degree = to_int(k, v); })
        .on("amr.enabled", [&](auto& k, auto& v) { adaptive = to_bool(k, v); })
        .on("amr.n0_ref", [&](auto& k, auto& v) { n0_ref = to_int(k, v); })
        .on("amr.n_ref", [&](auto& k, auto& v) { n_ref = to_int(k, v); })
        .on("amr.theta_refine", [&](auto& k, auto& v) { theta_refine = to_double(k, v); })
        .on("amr.theta_coarsen", [&](auto& k, auto& v) { theta_coarsen = to_double(k, v); })
        .on("amr.tol", [&](auto& k, auto& v) { adaptive_tol = to_double(k, v); })
        .on("amr.compare_fixed", [&](auto& k, auto& v) { compare_fixed = to_bool(k, v); })
        .on("output.vtk", [&](auto& k, auto& v) { write_vtk = to_bool(k, v); })
        .on("out", [&](auto&, auto& v) { out_dir = v; })
        .finish();
}

void RegisterOptions::validate() const {
    if (synthetic.empty()) {
        if (reference.empty() || target.empty()) {
            throw ConfigError("register needs reference and target images (or synthetic)");
        }
    } else if (synthetic != "quadratic" && synthetic != "phantom") {
        throw ConfigError("synthetic must be quadratic or phantom");
    }
    if (synthetic_size < 2) {
        throw ConfigError("synthetic.size must be at least 2");
    }
    if (!(sigma >= 0.0)) {
        throw ConfigError("image.sigma must be non-negative");
    }
    if (adaptive_tol < 0.0) {
        throw ConfigError("amr.tol must be non-negative");
    }
    params.validate();
    solver.validate();
    AmrConfig ac;
    ac.n0_ref = n0_ref;
    ac.n_ref = adaptive ? n_ref : 0;
    ac.theta_refine = theta_refine;
    ac.theta_coarsen = theta_coarsen;
    ac.degree = degree;
    ac.params = params;
    ac.solver = solver;
    ac.validate();
}

namespace {

// Template of the synthetic phantom pair: the reference resampled through a smooth warp.
constexpr double kPhantomWarp = 0.15;

struct Fields {
    std::unique_ptr<ScalarField> T;
    std::unique_ptr<ScalarField> R;
    Rect domain;
    int width;
    int height;
};

Fields load_fields(const RegisterOptions& o) {
    Fields f;
    if (o.synthetic == "quadratic") {
        const ManufacturedCase mc = ManufacturedCase::smooth();
        f.T = std::make_unique<AnalyticField>(mc.target());
        f.R = std::make_unique<AnalyticField>(mc.reference());
        f.domain = Rect{{0.0, 0.0}, {1.0, 1.0}};
        f.width = f.height = o.synthetic_size;
        return f;
    }
    RasterImage ref = o.synthetic == "phantom" ? brain_phantom(o.synthetic_size) : load_raster(o.reference);
    RasterImage tpl = o.synthetic == "phantom" ? brain_phantom(o.synthetic_size, kPhantomWarp) : load_raster(o.target);
    if (ref.width() != tpl.width() || ref.height() != tpl.height()) {
        throw ConfigError("reference and target sizes differ");
    }
    f.width = ref.width();
    f.height = ref.height();
    f.domain = image_domain(f.width, f.height);
    f.T = std::make_unique<ImageField>(build_field(tpl, f.domain, o.sigma));
    f.R = std::make_unique<ImageField>(build_field(ref, f.domain, o.sigma));
    return f;
}

AmrConfig amr_config(const RegisterOptions& o, const Rect& domain) {
    AmrConfig ac;
    ac.n0_ref = o.n0_ref;
    ac.n_ref = o.adaptive ? o.n_ref : 0;
    ac.theta_refine = o.theta_refine;
    ac.theta_coarsen = o.theta_coarsen;
    ac.solver = o.solver;
    if (o.adaptive_tol > 0.0) {
        ac.adaptive_solver = o.solver;
        ac.adaptive_solver->tol = o.adaptive_tol;
    }
    ac.params = o.params;
    ac.degree = o.degree;
    ac.domain = domain;
    return ac;
}

} // namespace

RegisterOutcome run_register(const RegisterOptions& o) {
    o.validate();
    const auto start = std::chrono::steady_clock::now();
    ensure_dir(o.out_dir);
    write_manifest(o.to_key_values(), o.out_dir / "manifest.txt");
    const Fields f = load_fields(o);

    AmrConfig ac = amr_config(o, f.domain);
    if (o.write_vtk) {
        ac.vtk_dir = o.out_dir / "vtk";
    }
    AmrResult res = [&] {
        try {
            return run_amr(ac, *f.T, *f.R);
        } catch (const DivergenceError& e) {
            e.log().write_csv(o.out_dir / "iterations_diverged.csv");
            throw;
        }
    }();

    RegisterOutcome out;
    out.levels = res.levels;
    out.checks = res.checks;
    out.dofs = res.levels.back().dofs;
    out.similarity = res.levels.back().similarity;
    out.initial_similarity = similarity(*f.T, *f.R, FeFunction(res.u.space_ptr()), o.solver.q_img);
    for (std::size_t l = 0; l < res.logs.size(); ++l) {
        out.iterations += res.levels[l].iterations;
        res.logs[l].write_csv(o.out_dir / ("iterations_level" + std::to_string(l) + ".csv"));
    }
    write_level_csv(res.levels, o.out_dir / "levels.csv");
    write_marking_csv(res.levels, o.out_dir / "marking.csv");
    save_png(warp_image(*f.T, res.u, f.width, f.height, f.domain), o.out_dir / "warped.png");

    if (o.compare_fixed) {
        // smallest uniform mesh with at least the adaptive dof count
        AmrConfig fc = amr_config(o, f.domain);
        fc.n_ref = 0;
        fc.theta_coarsen = 0.0;
        for (int level = 1;; ++level) {
            auto forest = std::make_shared<const QuadForest>(QuadForest(f.domain).uniform_refine(level));
            const auto space = FeSpace::build(forest, o.degree, o.params, o.params.kappa == 0.0);
            if (space->n_dofs() >= out.dofs || level >= 12) {
                fc.n0_ref = level;
                break;
            }
        }
        const AmrResult fixed = run_amr(fc, *f.T, *f.R);
        out.fixed_similarity = fixed.levels.back().similarity;
        out.fixed_dofs = fixed.levels.back().dofs;
        if (out.similarity > *out.fixed_similarity) {
            out.flag = "adaptive similarity " + fmt(out.similarity) + " exceeds fixed-mesh similarity " +
                       fmt(*out.fixed_similarity) + " at " + std::to_string(*out.fixed_dofs) + " dofs";
        }
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

// ---------------------------------------------------------------- quadrature

KeyValues QuadratureOptions::to_key_values() const {
    return {{"reference", reference.string()},
            {"target", target.string()},
            {"synthetic", synthetic},
            {"synthetic.size", std::to_string(synthetic_size)},
            {"sigmas", join(sigmas)},
            {"ppe", join(pixels_per_element)},
            {"max_order", std::to_string(max_order)},
            {"q_truth", std::to_string(q_truth)},
            {"out", out_dir.string()}};
}

void QuadratureOptions::apply(const KeyValues& values) {
    Applier(values)
        .on("reference", [&](auto&, auto& v) { reference = v; })
        .on("target", [&](auto&, auto& v) { target = v; })
        .on("synthetic", [&](auto&, auto& v) { synthetic = v; })
        .on("synthetic.size", [&](auto& k, auto& v) { synthetic_size = to_int(k, v); })
        .on("sigmas", [&](auto& k, auto& v) { sigmas = to_list<double>(k, v, to_double); })
        .on("ppe", [&](auto& k, auto& v) { pixels_per_element = to_list<int>(k, v, to_int); })
        .on("max_order", [&](auto& k, auto& v) { max_order = to_int(k, v); })
        .on("q_truth", [&](auto& k, auto& v) { q_truth = to_int(k, v); })
        .on("out", [&](auto&, auto& v) { out_dir = v; })
        .finish();
}

void QuadratureOptions::validate() const {
    if (synthetic.empty() && (reference.empty() || target.empty())) {
        throw ConfigError("quadrature needs reference and target images (or synthetic = phantom)");
    }
    if (!synthetic.empty() && synthetic != "phantom") {
        throw ConfigError("synthetic must be phantom");
    }
    if (max_order < 1) {
        throw ConfigError("max_order must be at least 1");
    }
    if (q_truth <= max_order) {
        throw ConfigError("q_truth must exceed max_order");
    }
    for (double s : sigmas) {
        if (!(s >= 0.0)) {
            throw ConfigError("sigmas must be non-negative");
        }
    }
    for (int p : pixels_per_element) {
        if (p < 1) {
            throw ConfigError("ppe entries must be positive");
        }
    }
}

QuadratureOutcome run_quadrature(const QuadratureOptions& o) {
    o.validate();
    const RasterImage ref = o.synthetic == "phantom" ? brain_phantom(o.synthetic_size) : load_raster(o.reference);
    const RasterImage tpl = o.synthetic == "phantom" ? brain_phantom(o.synthetic_size, kPhantomWarp) : load_raster(o.target);
    if (ref.width() != tpl.width() || ref.height() != tpl.height()) {
        throw ConfigError("reference and target sizes differ");
    }
    const Rect domain = image_domain(ref.width(), ref.height());
    std::vector<int> orders;
    for (int q = 1; q <= o.max_order; q += 2) {
        orders.push_back(q);
    }
    ensure_dir(o.out_dir);
    write_manifest(o.to_key_values(), o.out_dir / "manifest.txt");
    QuadratureOutcome out;
    for (double s : o.sigmas) {
        const ImageField T = build_field(tpl, domain, s);
        const ImageField R = build_field(ref, domain, s);
        QuadratureStudyResult r = quadrature_study(T, R, o.pixels_per_element, orders, o.q_truth);
        std::ostringstream name;
        name << "quadrature_sigma" << s << ".csv";
        write_quadrature_csv(r, o.out_dir / name.str());
        out.studies.emplace_back(s, std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------- entry point

namespace {

// Registers `--name` so that a given value lands in `flags[key]`.
void flag(CLI::App* app, KeyValues& flags, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
}

KeyValues merged(const std::string& config, const KeyValues& flags) {
    KeyValues kv = config.empty() ? KeyValues{} : read_config(config);
    for (const auto& [k, v] : flags) {
        kv[k] = v;
    }
    return kv;
}

} // namespace

int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Elastic image registration with adaptive quadtree finite elements"};
    app.require_subcommand(1);

    std::string verify_config;
    KeyValues verify_flags;
    CLI::App* verify = app.add_subcommand("verify", "Manufactured-solution convergence study");
    verify->add_option("--config", verify_config, "key = value file");
    flag(verify, verify_flags, "--case", "case", "smooth | singular");
    flag(verify, verify_flags, "--mode", "mode", "uniform | adaptive");
    flag(verify, verify_flags, "-k,--degree", "degree", "polynomial degree (1 or 2)");
    flag(verify, verify_flags, "--levels", "levels", "number of meshes (>= 2)");
    flag(verify, verify_flags, "--theta-refine", "theta_refine", "adaptive refinement fraction");
    flag(verify, verify_flags, "--amplitude", "amplitude", "scale of the manufactured displacement");
    flag(verify, verify_flags, "--tol", "solver.tol", "relative stationary residual tolerance");
    flag(verify, verify_flags, "--max-iter", "solver.max_iter", "iteration cap per level");
    flag(verify, verify_flags, "--aa-depth", "solver.aa_depth", "Anderson depth");
    flag(verify, verify_flags, "-o,--out", "out", "output directory");

    std::string register_config;
    KeyValues register_flags;
    CLI::App* reg = app.add_subcommand("register", "Register a template image onto a reference");
    reg->add_option("--config", register_config, "key = value file");
    flag(reg, register_flags, "--reference", "reference", "reference image (PNG/PGM)");
    flag(reg, register_flags, "--target", "target", "template image to deform (PNG/PGM)");
    flag(reg, register_flags, "--synthetic", "synthetic", "quadratic | phantom instead of files");
    flag(reg, register_flags, "--size", "synthetic.size", "phantom side length in pixels");
    flag(reg, register_flags, "--sigma", "image.sigma", "Gaussian smoothing in pixels");
    flag(reg, register_flags, "--alpha", "material.alpha", "similarity weight");
    flag(reg, register_flags, "--dt", "material.dt", "pseudo-time step");
    flag(reg, register_flags, "--kappa", "material.kappa", "boundary spring stiffness");
    flag(reg, register_flags, "--tol", "solver.tol", "stopping tolerance");
    flag(reg, register_flags, "--stop", "solver.stop", "residual | velocity");
    flag(reg, register_flags, "--max-iter", "solver.max_iter", "iteration cap per level");
    flag(reg, register_flags, "-m,--aa-depth", "solver.aa_depth", "Anderson depth");
    flag(reg, register_flags, "--proximal", "solver.proximal", "identity | h1");
    flag(reg, register_flags, "-k,--degree", "fe.degree", "polynomial degree");
    flag(reg, register_flags, "--adaptive", "amr.enabled", "true to adapt the mesh");
    flag(reg, register_flags, "--n0-ref", "amr.n0_ref", "initial uniform refinements");
    flag(reg, register_flags, "--n-ref", "amr.n_ref", "adaptive cycles");
    flag(reg, register_flags, "--theta-refine", "amr.theta_refine", "refinement fraction");
    flag(reg, register_flags, "--theta-coarsen", "amr.theta_coarsen", "coarsening fraction");
    flag(reg, register_flags, "--adaptive-tol", "amr.tol", "tolerance on adapted levels");
    flag(reg, register_flags, "--compare-fixed", "amr.compare_fixed", "also solve on a uniform mesh");
    flag(reg, register_flags, "--vtk", "output.vtk", "write a VTK file per level");
    flag(reg, register_flags, "-o,--out", "out", "output directory");

    std::string quad_config;
    KeyValues quad_flags;
    CLI::App* quad = app.add_subcommand("quadrature", "Image quadrature accuracy study");
    quad->add_option("--config", quad_config, "key = value file");
    flag(quad, quad_flags, "--reference", "reference", "reference image");
    flag(quad, quad_flags, "--target", "target", "template image");
    flag(quad, quad_flags, "--synthetic", "synthetic", "phantom instead of files");
    flag(quad, quad_flags, "--size", "synthetic.size", "phantom side length in pixels");
    flag(quad, quad_flags, "--sigmas", "sigmas", "comma-separated smoothing values");
    flag(quad, quad_flags, "--ppe", "ppe", "comma-separated pixels per element");
    flag(quad, quad_flags, "--max-order", "max_order", "largest order studied");
    flag(quad, quad_flags, "--q-truth", "q_truth", "reference order");
    flag(quad, quad_flags, "-o,--out", "out", "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kUsageError;
    }

    try {
        if (verify->parsed()) {
            VerifyOptions o;
            o.apply(merged(verify_config, verify_flags));
            o.validate();
            const VerifyOutcome r = run_verify(o);
            out << "dofs,h,error,rate,eff\n";
            for (const ConvergenceRow& row : r.rows) {
                out << row.dofs << ',' << row.h << ',' << row.error << ',';
                if (row.rate) {
                    out << *row.rate;
                }
                out << ',' << row.eff << '\n';
            }
            KeyValues manifest = o.to_key_values();
            manifest["output.csv"] = r.csv.string();
            write_manifest(manifest, o.out_dir / "manifest.txt");
            for (const std::string& f : r.failures) {
                err << "band missed: " << f << '\n';
            }
            return r.failures.empty() ? kSuccess : kAcceptanceFailure;
        }
        if (reg->parsed()) {
            RegisterOptions o;
            o.apply(merged(register_config, register_flags));
            o.validate();
            const RegisterOutcome r = run_register(o);
            out << "dofs,similarity,iterations,seconds\n"
                << r.dofs << ',' << r.similarity << ',' << r.iterations << ',' << r.seconds << '\n';
            if (r.flag) {
                err << "flag: " << *r.flag << '\n';
            }
            for (const LevelStats& s : r.levels) {
                if (!s.converged) {
                    err << "warning: level " << s.level << " stopped at max_iter\n";
                }
            }
            return kSuccess;
        }
        if (quad->parsed()) {
            QuadratureOptions o;
            o.apply(merged(quad_config, quad_flags));
            o.validate();
            const QuadratureOutcome r = run_quadrature(o);
            out << "sigma,pixels_per_element,median_e\n";
            for (const auto& [s, study] : r.studies) {
                for (int p : o.pixels_per_element) {
                    std::vector<double> e;
                    for (const auto& row : study.rows) {
                        if (row.pixels_per_element == p && row.order < o.q_truth) {
                            e.push_back(row.error);
                        }
                    }
                    if (e.empty()) {
                        continue;
                    }
                    std::sort(e.begin(), e.end());
                    const std::size_t n = e.size();
                    out << s << ',' << p << ',' << (n % 2 == 1 ? e[n / 2] : 0.5 * (e[n / 2 - 1] + e[n / 2])) << '\n';
                }
            }
            return kSuccess;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const IoError& e) {
        err << "input error: " << e.what() << '\n';
        return kUsageError;
    } catch (const DivergenceError& e) {
        err << "diverged: " << e.what() << '\n';
        return kDivergence;
    } catch (const SolverError& e) {
        err << "solver failure: " << e.what() << '\n';
        return kDivergence;
    }
    return kUsageError;
}

} // namespace elasreg::cli
