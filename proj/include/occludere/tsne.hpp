#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "occludere/binio.hpp"
#include "occludere/error.hpp"

namespace occludere {

struct TsneConfig {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    double learning_rate = 200.0;
    double momentum = 0.5;
    double final_momentum = 0.8;
    std::size_t momentum_switch = 250;
    std::uint64_t seed = 0;

    void validate(std::size_t n) const {
        require(perplexity > 1.0 && perplexity < static_cast<double>(n), ErrorKind::config,
                "t-SNE perplexity must lie in (1, point count)");
        require(iterations >= 1, ErrorKind::config, "t-SNE needs at least one iteration");
        require(learning_rate > 0.0 && exaggeration >= 1.0, ErrorKind::config, "bad t-SNE step settings");
    }
};

inline constexpr double kAffinityFloor = 1e-12;

/// Row-major n x n matrix stored flat.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> v;

    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t size, double fill = 0.0) : n(size), v(size * size, fill) {}
    double& operator()(std::size_t i, std::size_t j) { return v[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * n + j]; }
};

inline SquareMatrix squared_distances(std::span<const double> x, std::size_t n, std::size_t dim) {
    require(x.size() == n * dim, ErrorKind::shape, "t-SNE input must be n x dim");
    SquareMatrix d(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = x[i * dim + k] - x[j * dim + k];
                s += diff * diff;
            }
            d(i, j) = d(j, i) = s;
        }
    return d;
}

struct AffinityRow {
    std::vector<double> p;  // conditional p_{j|i}, p_{i|i} = 0
    double precision = 0.0; // beta = 1 / (2 sigma^2)
    double entropy_bits = 0.0;
    bool degenerate = false;
};

/// Gaussian conditional distribution of row i at a given precision.
inline AffinityRow affinity_row(const SquareMatrix& d2, std::size_t i, double precision) {
    AffinityRow row;
    row.precision = precision;
    row.p.assign(d2.n, 0.0);
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d2.n; ++j)
        if (j != i) dmin = std::min(dmin, d2(i, j));
    double z = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < d2.n; ++j) {
        if (j == i) continue;
        const double shifted = d2(i, j) - dmin;
        const double w = std::exp(-precision * shifted);
        row.p[j] = w;
        z += w;
        weighted += w * shifted;
    }
    for (auto& p : row.p) p /= z;
    row.entropy_bits = (std::log(z) + precision * weighted / z) / std::log(2.0);
    return row;
}

/// Bisects the precision of row i until its entropy is log2(perplexity)
/// within `tol` bits. Rows whose exact duplicates alone already carry
/// at least the target entropy fall back to uniform over those duplicates.
inline AffinityRow calibrate_row(const SquareMatrix& d2, std::size_t i, double perplexity, double tol = 1e-5,
                                 std::size_t max_iter = 200) {
    const double target = std::log2(perplexity);
    std::size_t duplicates = 0;
    for (std::size_t j = 0; j < d2.n; ++j) duplicates += j != i && d2(i, j) == 0.0;
    if (duplicates > 0 && std::log2(static_cast<double>(duplicates)) >= target - tol) {
        AffinityRow row;
        row.p.assign(d2.n, 0.0);
        for (std::size_t j = 0; j < d2.n; ++j)
            if (j != i && d2(i, j) == 0.0) row.p[j] = 1.0 / static_cast<double>(duplicates);
        row.precision = std::numeric_limits<double>::infinity();
        row.entropy_bits = std::log2(static_cast<double>(duplicates));
        row.degenerate = true;
        return row;
    }
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), beta = 1.0;
    AffinityRow row = affinity_row(d2, i, beta);
    for (std::size_t it = 0; it < max_iter && std::abs(row.entropy_bits - target) > tol; ++it) {
        if (row.entropy_bits > target) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        row = affinity_row(d2, i, beta);
    }
    return row;
}

struct Affinities {
    SquareMatrix conditional;  // row i holds p_{j|i}
    SquareMatrix joint;        // symmetrized, sums to 1
    std::vector<double> precision;
    std::vector<double> entropy_bits;
};

inline Affinities conditional_affinities(std::span<const double> x, std::size_t n, std::size_t dim,
                                         double perplexity, double tol = 1e-5) {
    require(n >= 3, ErrorKind::contract, "t-SNE needs at least three points");
    require(perplexity > 1.0 && perplexity < static_cast<double>(n), ErrorKind::config,
            "perplexity must lie in (1, point count)");
    const auto d2 = squared_distances(x, n, dim);
    Affinities a{SquareMatrix(n), SquareMatrix(n), std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = calibrate_row(d2, i, perplexity, tol);
        for (std::size_t j = 0; j < n; ++j) a.conditional(i, j) = row.p[j];
        a.precision[i] = row.precision;
        a.entropy_bits[i] = row.entropy_bits;
    }
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            a.joint(i, j) = i == j ? 0.0 : (a.conditional(i, j) + a.conditional(j, i)) / denom;
    return a;
}

/// KL(P || Q) for a 2-D map y (n x 2) with Student-t Q; both floored at 1e-12.
inline double kl_divergence(const SquareMatrix& p, std::span<const double> y) {
    const std::size_t n = p.n;
    double z = 0.0;
    SquareMatrix w(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            w(i, j) = 1.0 / (1.0 + dx * dx + dy * dy);
            z += w(i, j);
        }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = std::max(p(i, j), kAffinityFloor);
            const double qij = std::max(w(i, j) / z, kAffinityFloor);
            kl += pij * std::log(pij / qij);
        }
    return kl;
}

/// Gradient of KL(exaggeration * P || Q) with respect to y.
inline std::vector<double> kl_gradient(const SquareMatrix& p, std::span<const double> y, double exaggeration = 1.0) {
    const std::size_t n = p.n;
    SquareMatrix w(n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            w(i, j) = w(j, i) = 1.0 / (1.0 + dx * dx + dy * dy);
            z += 2.0 * w(i, j);
        }
    std::vector<double> g(2 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = exaggeration * std::max(p(i, j), kAffinityFloor);
            const double qij = w(i, j) / z;
            const double coeff = 4.0 * (pij - qij) * w(i, j);
            g[2 * i] += coeff * (y[2 * i] - y[2 * j]);
            g[2 * i + 1] += coeff * (y[2 * i + 1] - y[2 * j + 1]);
        }
    return g;
}

struct TsneResult {
    std::vector<double> y;                              // n x 2
    std::vector<std::pair<std::size_t, double>> kl;     // (iteration, KL) every 50 iterations and at the end
};

/// Gradient descent with momentum and per-coordinate adaptive gains.
inline TsneResult tsne_descent(const SquareMatrix& p, const TsneConfig& cfg) {
    cfg.validate(p.n);
    const std::size_t n = p.n;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> init(0.0, 1e-2);
    TsneResult r;
    r.y.resize(2 * n);
    for (auto& v : r.y) v = init(rng);
    std::vector<double> velocity(2 * n, 0.0), gains(2 * n, 1.0);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double exaggeration = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
        const double momentum = it < cfg.momentum_switch ? cfg.momentum : cfg.final_momentum;
        const auto g = kl_gradient(p, r.y, exaggeration);
        for (std::size_t k = 0; k < 2 * n; ++k) {
            gains[k] = (g[k] > 0.0) != (velocity[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
            gains[k] = std::max(gains[k], 0.01);
            velocity[k] = momentum * velocity[k] - cfg.learning_rate * gains[k] * g[k];
            r.y[k] += velocity[k];
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += r.y[2 * i + c];
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) r.y[2 * i + c] -= mean;
        }
        for (double v : r.y)
            require(std::isfinite(v), ErrorKind::numeric, "t-SNE produced non-finite coordinates at iteration " +
                                                              std::to_string(it + 1));
        if ((it + 1) % 50 == 0 || it + 1 == cfg.iterations) {
            const double kl = kl_divergence(p, r.y);
            require(std::isfinite(kl), ErrorKind::numeric, "t-SNE KL became non-finite at iteration " +
                                                               std::to_string(it + 1));
            r.kl.emplace_back(it + 1, kl);
        }
    }
    return r;
}

inline TsneResult tsne(std::span<const double> x, std::size_t n, std::size_t dim, const TsneConfig& cfg) {
    cfg.validate(n);
    return tsne_descent(conditional_affinities(x, n, dim, cfg.perplexity).joint, cfg);
}

// ---------------------------------------------------------------------------
// Angle-range labels and neighbourhood consistency

/// Index of the half-open interval [origin + k*width, origin + (k+1)*width) holding angle.
inline int angle_bin_index(double angle, double width = 20.0, double origin = -90.0) {
    return static_cast<int>(std::floor((angle - origin) / width));
}

inline std::string angle_bin_label(int index, double width = 20.0, double origin = -90.0) {
    const double lo = origin + width * index;
    return "[" + format_number(lo) + "," + format_number(lo + width) + ")";
}

inline std::string bin_by_angle(double angle, double width = 20.0, double origin = -90.0) {
    return angle_bin_label(angle_bin_index(angle, width, origin), width, origin);
}

/// Mean fraction of each point's k nearest map neighbours whose label index
/// equals its own or an adjacent one. Ties in distance resolve by index.
inline double neighborhood_consistency(std::span<const double> y, std::span<const int> labels, std::size_t k) {
    const std::size_t n = labels.size();
    require(y.size() == 2 * n, ErrorKind::shape, "neighborhood_consistency: map and labels differ in length");
    require(k >= 1 && k < n, ErrorKind::contract, "neighborhood_consistency: need 1 <= k < point count");
    double total = 0.0;
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < n; ++i) {
        d.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            d.emplace_back(dx * dx + dy * dy, j);
        }
        std::partial_sort(d.begin(), d.begin() + static_cast<long>(k), d.end());
        std::size_t good = 0;
        for (std::size_t m = 0; m < k; ++m) good += std::abs(labels[d[m].second] - labels[i]) <= 1;
        total += static_cast<double>(good) / static_cast<double>(k);
    }
    return total / static_cast<double>(n);
}

struct MapRow {
    std::string id;
    double x = 0.0;
    double y = 0.0;
    std::string label;
};

inline void write_map_csv(const std::filesystem::path& path, const std::vector<MapRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write map " + path.string());
    out << "id,x,y,label\n";
    for (const auto& r : rows) out << r.id << ',' << format_fixed(r.x, 6) << ',' << format_fixed(r.y, 6) << ',' << r.label << "\n";
}

/// gnuplot script plotting one colour per label from the map CSV.
inline void write_gnuplot_stub(const std::filesystem::path& path, const std::filesystem::path& csv,
                               const std::vector<std::string>& labels, const std::string& title) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write " + path.string());
    out << "# gnuplot " << path.filename().string() << "\n"
        << "set datafile separator ','\n"
        << "set title '" << title << "'\n"
        << "set key outside right\n"
        << "unset xtics\nunset ytics\n"
        << "plot ";
    for (std::size_t i = 0; i < labels.size(); ++i)
        out << (i ? ", \\\n     " : "") << "'" << csv.filename().string() << "' using 2:(strcol(4) eq '" << labels[i]
            << "' ? $3 : 1/0) every ::1 with points pt 7 ps 0.6 title '" << labels[i] << "'";
    out << "\n";
}

} // namespace occludere
