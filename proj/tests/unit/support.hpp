// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/fespace.hpp"
#include "elasreg/mesh.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <string>

namespace elasreg::test {

inline std::shared_ptr<const QuadForest> uniform_forest(int n, Rect domain = {}) {
    return std::make_shared<const QuadForest>(QuadForest(domain).uniform_refine(n));
}

/// 2x2 mesh with the lower-left cell split once more: 7 leaves, two hanging edges.
inline std::shared_ptr<const QuadForest> corner_refined_forest() {
    const QuadForest base = QuadForest(Rect{}).uniform_refine(1);
    const MortonKey first = base.leaf(0);
    return std::make_shared<const QuadForest>(base.adapt(std::span(&first, 1), {}).forest);
}

inline MaterialParams unit_params(double kappa = 0.0) {
    MaterialParams p;
    p.kappa = kappa;
    return p;
}

inline std::shared_ptr<const FeSpace> make_space(std::shared_ptr<const QuadForest> forest, int degree = 1,
                                                 double kappa = 0.0, bool rm = true) {
    return FeSpace::build(std::move(forest), degree, unit_params(kappa), rm);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("elasreg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace elasreg::test
