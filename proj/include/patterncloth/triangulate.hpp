#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "patterncloth/camera.hpp"
#include "patterncloth/registration.hpp"

namespace patterncloth::tri {

struct Ray {
    Eigen::Vector3d origin;     // camera center, world mm
    Eigen::Vector3d direction;  // unit
    int camera_id = -1;
};

struct RegisteredPoint {
    int row = 0;
    int col = 0;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();  // mm
    int inlier_count = 0;      // rays within the acceptance radius, distinct cameras
    double rms_residual = 0.0; // mm, over the inlier set
};

struct RegisteredPointCloud {
    int frame_t = 0;
    std::map<std::pair<int, int>, RegisteredPoint> points;  // by (row, col)
    double coverage = 0.0;  // accepted coordinates / template active cells
};

struct TriangulateParams {
    double radius_mm = 1.0;  // inlier acceptance radius around the hypothesis
    int min_rays = 3;        // accepted points need this many distinct-camera inliers
    int max_iters = 50;      // hypothesis pairs examined (all pairs when fewer)
    std::uint64_t seed = 0;  // for pair sampling beyond the exhaustive regime
};

// Ray through the camera center and the pixel; project(point on ray) returns
// the pixel back.
Ray backproject(const cam::Camera& camera, const Eigen::Vector2d& pixel);

// Point minimizing the sum of squared point-to-ray distances, with the rms of
// those distances. Throws DegenerateRays when the bundle is near-parallel
// (rank-deficient normal matrix).
std::pair<Eigen::Vector3d, double> least_squares_point(const std::vector<Ray>& rays);

// Pair-sampled RANSAC with a least-squares refit over the winning inlier set.
// Rays must already be deduplicated to one per camera. Returns nothing when
// the best hypothesis explains fewer than min_rays rays.
std::optional<RegisteredPoint> ransac_point(const std::vector<Ray>& rays,
                                            const TriangulateParams& params = {});

// Group one frame's registrations by board coordinate (keeping, per camera,
// the highest-confidence pixel), triangulate each group, and report coverage
// against the template's active-cell count.
RegisteredPointCloud triangulate_frame(const std::vector<reg::RegisteredPixel>& pixels,
                                       const std::vector<cam::Camera>& cameras,
                                       int n_template_cells,
                                       const TriangulateParams& params = {});

}  // namespace patterncloth::tri
