#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "occludere/error.hpp"

namespace occludere {

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline constexpr int kNoise = -1;

/// Density-based clustering. Returns a label per point: a cluster id
/// (numbered by the first core point met in input order) or kNoise.
/// A point's neighbourhood includes itself.
class Dbscan {
public:
    Dbscan(double eps, std::size_t min_points) : eps_(eps), min_points_(min_points) {
        require(eps > 0.0, ErrorKind::contract, "dbscan: eps must be positive");
        require(min_points >= 1, ErrorKind::contract, "dbscan: min_points must be >= 1");
    }

    std::vector<int> run(std::span<const Point3> points) const {
        constexpr int unvisited = -2;
        std::vector<int> labels(points.size(), unvisited);
        if (points.empty()) return labels;
        const Grid grid(points, eps_);

        int cluster = 0;
        std::vector<std::size_t> neighbors, frontier;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (labels[i] != unvisited) continue;
            grid.query(points, i, eps_, neighbors);
            if (neighbors.size() < min_points_) {
                labels[i] = kNoise;
                continue;
            }
            labels[i] = cluster;
            frontier.assign(neighbors.begin(), neighbors.end());
            for (std::size_t f = 0; f < frontier.size(); ++f) {
                const std::size_t q = frontier[f];
                if (labels[q] == kNoise) labels[q] = cluster;
                if (labels[q] != unvisited) continue;
                labels[q] = cluster;
                grid.query(points, q, eps_, neighbors);
                if (neighbors.size() >= min_points_)
                    frontier.insert(frontier.end(), neighbors.begin(), neighbors.end());
            }
            ++cluster;
        }
        return labels;
    }

private:
    // Uniform hash grid with cell edge eps; a query scans the 27 surrounding cells.
    class Grid {
    public:
        Grid(std::span<const Point3> points, double cell) : cell_(cell) {
            for (std::size_t i = 0; i < points.size(); ++i) cells_[key(coords(points[i]))].push_back(i);
        }

        void query(std::span<const Point3> points, std::size_t index, double eps,
                   std::vector<std::size_t>& out) const {
            out.clear();
            const Point3& p = points[index];
            const auto c = coords(p);
            const double eps2 = eps * eps;
            for (long dx = -1; dx <= 1; ++dx)
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dz = -1; dz <= 1; ++dz) {
                        const auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
                        if (it == cells_.end()) continue;
                        for (std::size_t j : it->second) {
                            const double ex = points[j].x - p.x, ey = points[j].y - p.y,
                                         ez = points[j].z - p.z;
                            if (ex * ex + ey * ey + ez * ez <= eps2) out.push_back(j);
                        }
                    }
            // Sorted neighbour lists make expansion order independent of grid layout.
            std::sort(out.begin(), out.end());
        }

    private:
        std::array<long, 3> coords(const Point3& p) const {
            return {static_cast<long>(std::floor(p.x / cell_)), static_cast<long>(std::floor(p.y / cell_)),
                    static_cast<long>(std::floor(p.z / cell_))};
        }
        static std::uint64_t key(const std::array<long, 3>& c) {
            const auto mix = [](long v) { return static_cast<std::uint64_t>(v) & 0x1fffff; };
            return (mix(c[0]) << 42) | (mix(c[1]) << 21) | mix(c[2]);
        }

        double cell_;
        std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
    };

    double eps_;
    std::size_t min_points_;
};

inline std::vector<int> dbscan(std::span<const Point3> points, double eps, std::size_t min_points) {
    return Dbscan(eps, min_points).run(points);
}

} // namespace occludere
