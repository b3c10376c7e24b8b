// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/geometry.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace elasreg {

class FeFunction;

/// Grayscale pixel grid with intensities in [0, 1], stored row-major.
///
/// Pixel (i, j) is column i, row j. Row 0 is mapped to the lowest y coordinate
/// when the raster is placed in a physical domain.
class RasterImage {
public:
    RasterImage(int width, int height, std::vector<double> intensity);
    RasterImage(int width, int height, double fill);

    int width() const { return width_; }
    int height() const { return height_; }
    double operator()(int i, int j) const { return data_[static_cast<std::size_t>(j) * width_ + i]; }
    double& operator()(int i, int j) { return data_[static_cast<std::size_t>(j) * width_ + i]; }
    std::span<const double> data() const { return data_; }
    double mean() const;

private:
    int width_;
    int height_;
    std::vector<double> data_;
};

/// Reads an 8/16-bit grayscale PNG or a binary/ASCII PGM, rescaling by the
/// maximum representable value. Throws IoError.
RasterImage load_raster(const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG; intensities are clamped to [0, 1].
void save_png(const RasterImage& img, const std::filesystem::path& path);

/// Writes an 8-bit binary PGM.
void save_pgm(const RasterImage& img, const std::filesystem::path& path);

/// Separable Gaussian blur, kernel truncated at radius ceil(4 sigma) and
/// renormalised; clamp-to-edge boundary handling. sigma == 0 is the identity.
RasterImage gaussian_smooth(const RasterImage& img, double sigma);

/// Intensity field that can be sampled anywhere in the plane.
class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual double value(const Vec2& x) const = 0;
    virtual Vec2 gradient(const Vec2& x) const = 0;
};

/// Bilinear interpolant of a smoothed raster. Pixel centres are spread
/// uniformly over `domain`; queries outside are clamped onto it.
class ImageField final : public ScalarField {
public:
    ImageField(RasterImage smoothed, Rect domain, double sigma);

    double value(const Vec2& x) const override;

    /// Exact derivative of the interpolant. On a pixel-cell edge the cell on
    /// the lesser-coordinate side is used; in the clamped border band the
    /// normal derivative is zero.
    Vec2 gradient(const Vec2& x) const override;

    const RasterImage& coefficients() const { return coeffs_; }
    const Rect& domain() const { return domain_; }
    double sigma() const { return sigma_; }
    double pixel_width() const { return dx_; }
    double pixel_height() const { return dy_; }
    Vec2 pixel_center(int i, int j) const;

private:
    RasterImage coeffs_;
    Rect domain_;
    double sigma_;
    double dx_;
    double dy_;
};

/// Smooths `img` with `sigma` and builds the interpolant over `domain`.
ImageField build_field(const RasterImage& img, const Rect& domain, double sigma);

/// Piecewise-constant head-like phantom on an n x n raster: skull ring, a
/// folded cortex band, ventricles and background, with sharp interfaces.
/// `warp` displaces the sampling point by warp * (sin(2 pi y), sin(2 pi x)) / (2 pi),
/// giving a smoothly deformed copy for registration tests.
RasterImage brain_phantom(int n, double warp = 0.0);

/// Physical domain for a raster: the longer side has unit length.
Rect image_domain(int width, int height);

/// Closed-form field, used for synthetic images.
class AnalyticField final : public ScalarField {
public:
    AnalyticField(std::function<double(const Vec2&)> value, std::function<Vec2(const Vec2&)> gradient)
        : value_(std::move(value)), gradient_(std::move(gradient)) {}

    double value(const Vec2& x) const override { return value_(x); }
    Vec2 gradient(const Vec2& x) const override { return gradient_(x); }

    /// |x - c|^2.
    static AnalyticField squared_distance(const Vec2& c);

private:
    std::function<double(const Vec2&)> value_;
    std::function<Vec2(const Vec2&)> gradient_;
};

/// Registration force (T(x+u) - R(x)) grad T(x+u).
Vec2 forcing(const ScalarField& T, const ScalarField& R, const Vec2& x, const Vec2& u_at_x);

/// Integral of (T(x+u(x)) - R(x))^2 over the mesh of `u`, using the tensor
/// Gauss rule exact for degree `q_img` on every cell.
double similarity(const ScalarField& T, const ScalarField& R, const FeFunction& u, int q_img);

struct QuadratureStudyRow {
    int pixels_per_element;
    int order;
    double error;
};

struct QuadratureStudyResult {
    std::vector<QuadratureStudyRow> rows;
};

/// Relative error |W(q) - W(q_truth)| / |W(q_truth)| of the Q1 residual vector
/// [W(q)]_i = int (T - R) grad T . v_i, on structured meshes whose cells each
/// hold `ppe` x `ppe` pixels of a `width_px` x `height_px` raster over `domain`.
/// Each ppe block ends with a q_truth row (e = 0). Throws ConfigError when a
/// mesh does not align with the pixel grid or an order is not below q_truth.
QuadratureStudyResult quadrature_study(const ScalarField& T, const ScalarField& R, const Rect& domain,
                                       int width_px, int height_px, std::span<const int> pixels_per_element,
                                       std::span<const int> orders, int q_truth);

/// Same study with the pixel geometry taken from the template field.
QuadratureStudyResult quadrature_study(const ImageField& T, const ImageField& R,
                                       std::span<const int> pixels_per_element, std::span<const int> orders,
                                       int q_truth);

/// Writes `pixels_per_element,order,e_q` rows.
void write_quadrature_csv(const QuadratureStudyResult& result, const std::filesystem::path& path);

} // namespace elasreg
