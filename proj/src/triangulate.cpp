#include "patterncloth/triangulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "patterncloth/errors.hpp"
#include "patterncloth/rng.hpp"

namespace patterncloth::tri {

namespace {

double point_ray_distance(const Eigen::Vector3d& p, const Ray& r) {
    const Eigen::Vector3d v = p - r.origin;
    return (v - r.direction * r.direction.dot(v)).norm();
}

std::pair<Eigen::Vector3d, double> solve_normal_equations(const std::vector<Ray>& rays,
                                                          const std::vector<int>& subset) {
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (int idx : subset) {
        const Ray& r = rays[static_cast<std::size_t>(idx)];
        const Eigen::Matrix3d P = Eigen::Matrix3d::Identity() - r.direction * r.direction.transpose();
        A += P;
        b += P * r.origin;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(A);
    // The projector sum has eigenvalues in [0, n]; a vanishing one relative to
    // the largest means every ray runs along the same line.
    if (es.eigenvalues()(0) < 1e-12 * std::max(1.0, es.eigenvalues()(2)))
        throw DegenerateRays("least_squares_point: near-parallel ray bundle");
    const Eigen::Vector3d p = es.eigenvectors() *
                              (es.eigenvalues().cwiseInverse().asDiagonal() *
                               (es.eigenvectors().transpose() * b));
    double ss = 0.0;
    for (int idx : subset) {
        const double d = point_ray_distance(p, rays[static_cast<std::size_t>(idx)]);
        ss += d * d;
    }
    return {p, std::sqrt(ss / static_cast<double>(subset.size()))};
}

}  // namespace

Ray backproject(const cam::Camera& camera, const Eigen::Vector2d& pixel) {
    const Eigen::Vector3d dir_cam((pixel.x() - camera.cx) / camera.fx,
                                  (pixel.y() - camera.cy) / camera.fy, 1.0);
    Ray r;
    r.origin = camera.center();
    r.direction = (camera.R.transpose() * dir_cam).normalized();
    r.camera_id = camera.id;
    return r;
}

std::pair<Eigen::Vector3d, double> least_squares_point(const std::vector<Ray>& rays) {
    if (rays.size() < 2) throw DegenerateRays("least_squares_point: need at least 2 rays");
    std::vector<int> all(rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) all[i] = static_cast<int>(i);
    return solve_normal_equations(rays, all);
}

std::optional<RegisteredPoint> ransac_point(const std::vector<Ray>& rays,
                                            const TriangulateParams& params) {
    const int n = static_cast<int>(rays.size());
    if (n < params.min_rays) return std::nullopt;

    // Hypotheses come from ray pairs: enumerate them all when that is within
    // the iteration budget, otherwise sample pairs with a seeded generator so
    // results stay reproducible.
    const long long n_pairs = static_cast<long long>(n) * (n - 1) / 2;
    std::vector<std::pair<int, int>> pairs;
    if (n_pairs <= params.max_iters) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    } else {
        Rng rng(derive_seed(params.seed, "triangulate.ransac"));
        pairs.reserve(static_cast<std::size_t>(params.max_iters));
        for (int it = 0; it < params.max_iters; ++it) {
            const int i = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
            int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - 1)));
            if (j >= i) ++j;
            pairs.emplace_back(std::min(i, j), std::max(i, j));
        }
    }

    std::vector<int> best_inliers;
    double best_rms = std::numeric_limits<double>::infinity();
    for (const auto& [i, j] : pairs) {
        Eigen::Vector3d hyp;
        try {
            hyp = solve_normal_equations(rays, {i, j}).first;
        } catch (const DegenerateRays&) {
            continue;  // parallel pair pins no point
        }
        std::vector<int> inliers;
        double ss = 0.0;
        for (int k = 0; k < n; ++k) {
            const double d = point_ray_distance(hyp, rays[static_cast<std::size_t>(k)]);
            if (d <= params.radius_mm) {
                inliers.push_back(k);
                ss += d * d;
            }
        }
        if (inliers.empty()) continue;
        const double rms = std::sqrt(ss / static_cast<double>(inliers.size()));
        if (inliers.size() > best_inliers.size() ||
            (inliers.size() == best_inliers.size() && rms < best_rms)) {
            best_inliers = std::move(inliers);
            best_rms = rms;
        }
    }
    if (static_cast<int>(best_inliers.size()) < params.min_rays) return std::nullopt;

    const auto [position, rms] = solve_normal_equations(rays, best_inliers);
    RegisteredPoint p;
    p.position = position;
    p.inlier_count = static_cast<int>(best_inliers.size());
    p.rms_residual = rms;
    return p;
}

RegisteredPointCloud triangulate_frame(const std::vector<reg::RegisteredPixel>& pixels,
                                       const std::vector<cam::Camera>& cameras,
                                       int n_template_cells,
                                       const TriangulateParams& params) {
    std::unordered_map<int, const cam::Camera*> cam_by_id;
    for (const auto& c : cameras) cam_by_id[c.id] = &c;

    // Per board coordinate, keep one pixel per camera (highest confidence;
    // ties keep the first seen for determinism).
    std::map<std::pair<int, int>, std::unordered_map<int, const reg::RegisteredPixel*>> groups;
    RegisteredPointCloud cloud;
    for (const auto& px : pixels) {
        if (!cam_by_id.count(px.camera_id)) continue;
        auto& per_cam = groups[{px.row, px.col}];
        auto it = per_cam.find(px.camera_id);
        if (it == per_cam.end() || px.confidence > it->second->confidence) per_cam[px.camera_id] = &px;
        cloud.frame_t = px.frame_t;
    }

    for (const auto& [coord, per_cam] : groups) {
        std::vector<Ray> rays;
        rays.reserve(per_cam.size());
        for (const auto& c : cameras) {  // camera order, not hash order
            auto it = per_cam.find(c.id);
            if (it != per_cam.end()) rays.push_back(backproject(c, it->second->pixel));
        }
        auto point = ransac_point(rays, params);
        if (!point) continue;
        point->row = coord.first;
        point->col = coord.second;
        cloud.points.emplace(coord, *point);
    }
    cloud.coverage = n_template_cells > 0
                         ? static_cast<double>(cloud.points.size()) / n_template_cells
                         : 0.0;
    return cloud;
}

}  // namespace patterncloth::tri
