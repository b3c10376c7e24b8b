// SPDX-License-Identifier: Apache-2.0

#include "elasreg/image.hpp"

#include "elasreg/errors.hpp"
#include "elasreg/quadrature.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>

namespace elasreg {

RasterImage::RasterImage(int width, int height, std::vector<double> intensity)
    : width_(width), height_(height), data_(std::move(intensity)) {
    if (width_ < 2 || height_ < 2) {
        throw ConfigError("RasterImage: both dimensions must be at least 2 pixels");
    }
    if (data_.size() != static_cast<std::size_t>(width_) * height_) {
        throw ConfigError("RasterImage: intensity grid size does not match dimensions");
    }
    for (double v : data_) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ConfigError("RasterImage: intensities must lie in [0, 1]");
        }
    }
}

RasterImage::RasterImage(int width, int height, double fill)
    : RasterImage(width, height,
                  std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill)) {}

double RasterImage::mean() const {
    return std::accumulate(data_.begin(), data_.end(), 0.0) / static_cast<double>(data_.size());
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

RasterImage load_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) {
        throw IoError("cannot open " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG: " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    if (color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("not a grayscale PNG: " + path.string());
    }
    if (depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (depth == 16 && std::endian::native == std::endian::little) {
        png_set_swap(png);
    }
    png_read_update_info(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * static_cast<std::size_t>(height));
    rows.resize(static_cast<std::size_t>(height));
    for (int j = 0; j < height; ++j) {
        rows[j] = buffer.data() + rowbytes * j;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (width < 2 || height < 2) {
        throw IoError("degenerate image dimensions in " + path.string());
    }
    std::vector<double> values(static_cast<std::size_t>(width) * height);
    for (int j = 0; j < height; ++j) {
        for (int i = 0; i < width; ++i) {
            double v;
            if (depth == 16) {
                std::uint16_t s;
                std::memcpy(&s, rows[j] + 2 * i, 2);
                v = s / 65535.0;
            } else {
                v = rows[j][i] / 255.0;
            }
            values[static_cast<std::size_t>(j) * width + i] = v;
        }
    }
    return RasterImage(width, height, std::move(values));
}

// Skips whitespace and '#' comments in a PNM header.
int read_pnm_int(std::istream& in) {
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    if (!in) {
        throw IoError("malformed PGM header");
    }
    return v;
}

RasterImage load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic == "P3" || magic == "P6") {
        throw IoError("not a grayscale image: " + path.string());
    }
    const bool binary = magic == "P5";
    if (!binary && magic != "P2") {
        throw IoError("unsupported image format: " + path.string());
    }
    const int width = read_pnm_int(in);
    const int height = read_pnm_int(in);
    const int maxval = read_pnm_int(in);
    if (width < 2 || height < 2) {
        throw IoError("degenerate image dimensions in " + path.string());
    }
    if (maxval <= 0 || maxval > 65535) {
        throw IoError("invalid PGM maxval in " + path.string());
    }
    std::vector<double> values(static_cast<std::size_t>(width) * height);
    if (binary) {
        in.get(); // single whitespace after maxval
        const int bytes = maxval < 256 ? 1 : 2;
        std::vector<unsigned char> raw(values.size() * bytes);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
            throw IoError("truncated PGM data in " + path.string());
        }
        for (std::size_t p = 0; p < values.size(); ++p) {
            const int s = bytes == 1 ? raw[p] : (raw[2 * p] << 8) | raw[2 * p + 1];
            values[p] = std::min(1.0, static_cast<double>(s) / maxval);
        }
    } else {
        for (double& v : values) {
            v = std::min(1.0, static_cast<double>(read_pnm_int(in)) / maxval);
        }
    }
    return RasterImage(width, height, std::move(values));
}

} // namespace

RasterImage load_raster(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) {
        throw IoError("cannot open " + path.string());
    }
    unsigned char sig[8] = {};
    probe.read(reinterpret_cast<char*>(sig), 8);
    if (probe.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) {
        return load_png(path);
    }
    if (probe.gcount() >= 2 && sig[0] == 'P') {
        return load_pgm(path);
    }
    throw IoError("unrecognised image format: " + path.string());
}

void save_png(const RasterImage& img, const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) {
        throw IoError("cannot write " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    std::vector<unsigned char> buffer(static_cast<std::size_t>(img.width()) * img.height());
    for (int j = 0; j < img.height(); ++j) {
        for (int i = 0; i < img.width(); ++i) {
            const double v = std::clamp(img(i, j), 0.0, 1.0);
            buffer[static_cast<std::size_t>(j) * img.width() + i] = static_cast<unsigned char>(std::lround(255.0 * v));
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height()));
    for (int j = 0; j < img.height(); ++j) {
        rows[j] = buffer.data() + static_cast<std::size_t>(j) * img.width();
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_pgm(const RasterImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    for (double v : img.data()) {
        out.put(static_cast<char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))));
    }
}

RasterImage gaussian_smooth(const RasterImage& img, double sigma) {
    if (sigma < 0.0) {
        throw ConfigError("gaussian_smooth: sigma must be non-negative");
    }
    if (sigma == 0.0) {
        return img;
    }
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    }
    const double total = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (double& w : kernel) {
        w /= total;
    }

    const int w = img.width();
    const int h = img.height();
    std::vector<double> tmp(static_cast<std::size_t>(w) * h);
    for (int j = 0; j < h; ++j) {
        for (int i = 0; i < w; ++i) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += kernel[k + radius] * img(std::clamp(i + k, 0, w - 1), j);
            }
            tmp[static_cast<std::size_t>(j) * w + i] = acc;
        }
    }
    std::vector<double> out(tmp.size());
    for (int j = 0; j < h; ++j) {
        for (int i = 0; i < w; ++i) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += kernel[k + radius] * tmp[static_cast<std::size_t>(std::clamp(j + k, 0, h - 1)) * w + i];
            }
            out[static_cast<std::size_t>(j) * w + i] = std::clamp(acc, 0.0, 1.0);
        }
    }
    return RasterImage(w, h, std::move(out));
}

ImageField::ImageField(RasterImage smoothed, Rect domain, double sigma)
    : coeffs_(std::move(smoothed)), domain_(domain), sigma_(sigma) {
    if (!(domain_.width() > 0.0 && domain_.height() > 0.0)) {
        throw ConfigError("ImageField: domain must have positive side lengths");
    }
    dx_ = domain_.width() / coeffs_.width();
    dy_ = domain_.height() / coeffs_.height();
}

Vec2 ImageField::pixel_center(int i, int j) const {
    return {domain_.lo[0] + (i + 0.5) * dx_, domain_.lo[1] + (j + 0.5) * dy_};
}

namespace {

// Continuous pixel coordinate clamped to the centre lattice [0, n - 1].
inline double lattice_coord(double x, double lo, double d, int n) {
    return std::clamp((x - lo) / d - 0.5, 0.0, static_cast<double>(n - 1));
}

inline int interp_cell(double s, int n) { return std::min(static_cast<int>(std::floor(s)), n - 2); }

} // namespace

double ImageField::value(const Vec2& x) const {
    const int w = coeffs_.width();
    const int h = coeffs_.height();
    const double s = lattice_coord(x[0], domain_.lo[0], dx_, w);
    const double t = lattice_coord(x[1], domain_.lo[1], dy_, h);
    const int i = interp_cell(s, w);
    const int j = interp_cell(t, h);
    const double a = s - i;
    const double b = t - j;
    return (1 - a) * (1 - b) * coeffs_(i, j) + a * (1 - b) * coeffs_(i + 1, j) + (1 - a) * b * coeffs_(i, j + 1) +
           a * b * coeffs_(i + 1, j + 1);
}

Vec2 ImageField::gradient(const Vec2& x) const {
    const int w = coeffs_.width();
    const int h = coeffs_.height();
    const Vec2 xc = domain_.clamp(x);
    const double sraw = (xc[0] - domain_.lo[0]) / dx_ - 0.5;
    const double traw = (xc[1] - domain_.lo[1]) / dy_ - 0.5;
    const double s = std::clamp(sraw, 0.0, static_cast<double>(w - 1));
    const double t = std::clamp(traw, 0.0, static_cast<double>(h - 1));

    Vec2 g{0.0, 0.0};
    if (sraw > 0.0 && sraw <= w - 1) {
        const int i = std::clamp(static_cast<int>(std::ceil(sraw)) - 1, 0, w - 2);
        const int j = interp_cell(t, h);
        const double b = t - j;
        const double dv = (1 - b) * (coeffs_(i + 1, j) - coeffs_(i, j)) + b * (coeffs_(i + 1, j + 1) - coeffs_(i, j + 1));
        g[0] = dv / dx_;
    }
    if (traw > 0.0 && traw <= h - 1) {
        const int j = std::clamp(static_cast<int>(std::ceil(traw)) - 1, 0, h - 2);
        const int i = interp_cell(s, w);
        const double a = s - i;
        const double dv = (1 - a) * (coeffs_(i, j + 1) - coeffs_(i, j)) + a * (coeffs_(i + 1, j + 1) - coeffs_(i + 1, j));
        g[1] = dv / dy_;
    }
    return g;
}

ImageField build_field(const RasterImage& img, const Rect& domain, double sigma) {
    return ImageField(gaussian_smooth(img, sigma), domain, sigma);
}

RasterImage brain_phantom(int n, double warp) {
    if (n < 2) {
        throw ConfigError("phantom size must be at least 2");
    }
    constexpr double two_pi = 2.0 * std::numbers::pi;
    RasterImage img(n, n, 0.0);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            double x = (i + 0.5) / n;
            double y = (j + 0.5) / n;
            const double sx = warp * std::sin(two_pi * y) / two_pi;
            const double sy = warp * std::sin(two_pi * x) / two_pi;
            x += sx;
            y += sy;
            const double ex = (x - 0.5) / 0.42;
            const double ey = (y - 0.5) / 0.36;
            const double r = std::hypot(ex, ey);
            const double t = std::atan2(ey, ex);
            double v = 0.0;
            if (r < 1.0) {
                v = 0.85; // skull
            }
            // cortex boundary folds with angle
            const double fold = 0.86 + 0.05 * std::sin(9.0 * t);
            if (r < fold) {
                v = 0.35;
            }
            if (r < fold - 0.12 - 0.04 * std::sin(7.0 * t + 1.0)) {
                v = 0.6; // white matter
            }
            const double vx = std::abs(x - 0.5);
            if (vx > 0.03 && vx < 0.11 && std::abs(y - 0.52) < 0.13 - 0.4 * (vx - 0.07) * (vx - 0.07) * 10.0) {
                v = 0.15; // ventricles
            }
            img(i, j) = v;
        }
    }
    return img;
}

Rect image_domain(int width, int height) {
    const double scale = static_cast<double>(std::max(width, height));
    return Rect{{0.0, 0.0}, {width / scale, height / scale}};
}

AnalyticField AnalyticField::squared_distance(const Vec2& c) {
    return AnalyticField([c](const Vec2& x) { return dot(x - c, x - c); },
                         [c](const Vec2& x) { return 2.0 * (x - c); });
}

Vec2 forcing(const ScalarField& T, const ScalarField& R, const Vec2& x, const Vec2& u_at_x) {
    const Vec2 y = x + u_at_x;
    return (T.value(y) - R.value(x)) * T.gradient(y);
}

namespace {

// Residual vector of the study on an nx-by-ny Q1 grid, interleaved (x, y) per node.
std::vector<double> study_residual(const ScalarField& T, const ScalarField& R, const Rect& domain, int nx, int ny,
                                   int order) {
    const GaussRule& rule = gauss_for_order(order);
    const double hx = domain.width() / nx;
    const double hy = domain.height() / ny;
    std::vector<double> W(2 * static_cast<std::size_t>(nx + 1) * (ny + 1), 0.0);
    for (int cj = 0; cj < ny; ++cj) {
        for (int ci = 0; ci < nx; ++ci) {
            double local[4][2] = {};
            for (std::size_t qy = 0; qy < rule.size(); ++qy) {
                for (std::size_t qx = 0; qx < rule.size(); ++qx) {
                    const double xi = rule.points[qx];
                    const double eta = rule.points[qy];
                    const Vec2 x{domain.lo[0] + (ci + xi) * hx, domain.lo[1] + (cj + eta) * hy};
                    const double w = rule.weights[qx] * rule.weights[qy] * hx * hy;
                    const Vec2 f = (T.value(x) - R.value(x)) * T.gradient(x);
                    const double phi[4] = {(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta};
                    for (int a = 0; a < 4; ++a) {
                        local[a][0] += w * f[0] * phi[a];
                        local[a][1] += w * f[1] * phi[a];
                    }
                }
            }
            for (int a = 0; a < 4; ++a) {
                const int ni = ci + (a & 1);
                const int nj = cj + (a >> 1);
                const std::size_t node = static_cast<std::size_t>(nj) * (nx + 1) + ni;
                W[2 * node] += local[a][0];
                W[2 * node + 1] += local[a][1];
            }
        }
    }
    return W;
}

} // namespace

QuadratureStudyResult quadrature_study(const ScalarField& T, const ScalarField& R, const Rect& domain,
                                       int width_px, int height_px, std::span<const int> pixels_per_element,
                                       std::span<const int> orders, int q_truth) {
    for (int q : orders) {
        if (q < 0 || q >= q_truth) {
            throw ConfigError("quadrature_study: every order must be below q_truth");
        }
    }
    QuadratureStudyResult result;
    for (int ppe : pixels_per_element) {
        if (ppe <= 0 || width_px % ppe != 0 || height_px % ppe != 0) {
            throw ConfigError("quadrature_study: " + std::to_string(ppe) +
                              " pixels per element does not divide the " + std::to_string(width_px) + "x" +
                              std::to_string(height_px) + " raster");
        }
        const int nx = width_px / ppe;
        const int ny = height_px / ppe;
        const std::vector<double> truth = study_residual(T, R, domain, nx, ny, q_truth);
        double truth_norm = 0.0;
        for (double v : truth) {
            truth_norm += v * v;
        }
        truth_norm = std::sqrt(truth_norm);
        auto add_row = [&](int q, const std::vector<double>& W) {
            double diff = 0.0;
            for (std::size_t i = 0; i < W.size(); ++i) {
                diff += (W[i] - truth[i]) * (W[i] - truth[i]);
            }
            const double e = truth_norm > 0.0 ? std::sqrt(diff) / truth_norm : std::sqrt(diff);
            result.rows.push_back({ppe, q, e});
        };
        for (int q : orders) {
            add_row(q, study_residual(T, R, domain, nx, ny, q));
        }
        add_row(q_truth, truth);
    }
    return result;
}

QuadratureStudyResult quadrature_study(const ImageField& T, const ImageField& R,
                                       std::span<const int> pixels_per_element, std::span<const int> orders,
                                       int q_truth) {
    if (T.coefficients().width() != R.coefficients().width() ||
        T.coefficients().height() != R.coefficients().height()) {
        throw ConfigError("quadrature_study: reference and template rasters differ in size");
    }
    return quadrature_study(T, R, T.domain(), T.coefficients().width(), T.coefficients().height(),
                            pixels_per_element, orders, q_truth);
}

void write_quadrature_csv(const QuadratureStudyResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "pixels_per_element,order,e_q\n";
    out.precision(10);
    for (const auto& row : result.rows) {
        out << row.pixels_per_element << ',' << row.order << ',' << row.error << '\n';
    }
}

} // namespace elasreg
