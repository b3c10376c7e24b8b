// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <elasreg/amr.hpp>
#include <elasreg/verify.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace elasreg::cli {

enum ExitCode : int {
    kSuccess = 0,
    kAcceptanceFailure = 1,
    kUsageError = 2,
    kDivergence = 3,
};

/// Flat configuration: dotted keys mapped to their textual values.
using KeyValues = std::map<std::string, std::string>;

/// Reads `key = value` lines; `#` starts a comment. Throws ConfigError on
/// malformed lines or repeated keys, IoError when unreadable.
KeyValues read_config(const std::filesystem::path& path);

/// Writes the resolved configuration as sorted `key = value` lines.
void write_manifest(const KeyValues& values, const std::filesystem::path& path);

struct VerifyOptions {
    std::string case_name = "smooth";
    std::string mode = "uniform";
    int degree = 1;
    int levels = 6;
    double theta_refine = 0.15;
    std::optional<double> amplitude;
    double tol = 1e-10;
    int max_iter = 2000;
    int aa_depth = 0;
    std::filesystem::path out_dir = ".";

    KeyValues to_key_values() const;
    /// Unknown keys throw ConfigError.
    void apply(const KeyValues& values);
    /// Throws ConfigError.
    void validate() const;
};

struct VerifyOutcome {
    std::vector<ConvergenceRow> rows;
    std::vector<std::string> failures; ///< one line per missed band
    std::filesystem::path csv;
};

/// Runs the study, writes `convergence_<case>_<mode>_k<k>.csv` and a `.dat`
/// error-vs-dofs file, and checks the rate and effectivity bands.
VerifyOutcome run_verify(const VerifyOptions& options);

struct RegisterOptions {
    std::filesystem::path reference;
    std::filesystem::path target;
    /// "", "quadratic" (analytic pair on the unit square) or "phantom".
    std::string synthetic;
    int synthetic_size = 128;
    double sigma = 1.0;
    MaterialParams params;
    SolverConfig solver;
    int degree = 1;
    bool adaptive = false;
    int n0_ref = 4;
    int n_ref = 5;
    double theta_refine = 0.4;
    double theta_coarsen = 0.2;
    /// Solver tolerance on adapted levels; 0 keeps solver.tol.
    double adaptive_tol = 0.0;
    /// Also solve on the smallest uniform mesh with at least as many dofs and compare similarity.
    bool compare_fixed = false;
    bool write_vtk = true;
    std::filesystem::path out_dir = "out";

    RegisterOptions();
    KeyValues to_key_values() const;
    void apply(const KeyValues& values);
    void validate() const;
};

struct RegisterOutcome {
    std::size_t dofs = 0;
    double similarity = 0.0;
    double initial_similarity = 0.0;
    int iterations = 0;
    double seconds = 0.0;
    std::vector<LevelStats> levels;
    std::vector<MeshCheck> checks;
    std::optional<double> fixed_similarity;
    std::optional<std::size_t> fixed_dofs;
    /// Set when the adaptive similarity is worse than the fixed-mesh one.
    std::optional<std::string> flag;
};

/// Throws DivergenceError (after writing the partial log) on divergence.
RegisterOutcome run_register(const RegisterOptions& options);

struct QuadratureOptions {
    std::filesystem::path reference;
    std::filesystem::path target;
    /// "" or "phantom".
    std::string synthetic;
    int synthetic_size = 200;
    std::vector<double> sigmas{0.0, 1.0, 5.0, 10.0};
    std::vector<int> pixels_per_element{5, 10, 20, 50};
    /// Odd orders 1, 3, ..., max_order are studied.
    int max_order = 51;
    int q_truth = 201;
    std::filesystem::path out_dir = "quadrature";

    KeyValues to_key_values() const;
    void apply(const KeyValues& values);
    void validate() const;
};

struct QuadratureOutcome {
    std::vector<std::pair<double, QuadratureStudyResult>> studies; ///< per sigma
};

QuadratureOutcome run_quadrature(const QuadratureOptions& options);

/// Full command-line entry point; returns an ExitCode.
int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace elasreg::cli
