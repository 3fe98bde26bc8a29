#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "patterncloth/board.hpp"
#include "patterncloth/camera.hpp"
#include "patterncloth/geometry.hpp"

namespace patterncloth::sim {

struct NoiseConfig {
    double pixel_jitter_sigma = 0.0;  // px
    double dropout_rate = 0.0;
    double outlier_rate = 0.0;
    double color_ambiguity_rate = 0.0;  // two-candidate color sets containing the truth
    double color_error_rate = 0.0;      // single wrong color
    std::uint64_t seed = 0;
};

struct Detection {
    enum class Kind : std::uint8_t { center, corner };
    Kind kind = Kind::center;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    std::vector<board::ColorId> color_candidates;  // sorted; empty for corners
    // Hidden oracle tag, never read by the pipeline. Centers carry the cell
    // (row, col); corners the lattice-corner (i, j); outliers carry nothing.
    std::optional<std::pair<int, int>> gt_board_coord;
};

struct DetectionSet {
    int camera_id = 0;
    int frame_t = 0;
    std::vector<Detection> detections;
};

// Deformed cloth sampled at cell centers (template vertex order) plus the
// lattice corner points. Corner (i, j), i in [0..rows], j in [0..cols], sits
// between cells (i-1..i, j-1..j).
struct ClothState {
    Eigen::MatrixX3d centers;
    std::vector<std::pair<std::pair<int, int>, Eigen::Vector3d>> corners;
};

// Extra geometry that blocks rays but emits no detections.
struct Occluder {
    Eigen::MatrixX3d vertices;
    Eigen::MatrixX3i triangles;
};

// Axis-aligned BVH over triangles for exact ray occlusion tests.
class TriBvh {
public:
    TriBvh(Eigen::MatrixX3d V, Eigen::MatrixX3i F);
    ~TriBvh();
    TriBvh(TriBvh&&) noexcept;
    TriBvh& operator=(TriBvh&&) noexcept;

    // True iff some triangle intersects origin + s*dir for s in (0, smax).
    bool any_hit_before(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double smax) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// All lattice corners adjacent to at least one active cell, positioned by the
// same material embedding the centers came from.
std::vector<std::pair<std::pair<int, int>, Eigen::Vector3d>> corner_lattice(
    const geom::TemplateMesh& tmpl, const std::function<Eigen::Vector3d(double, double)>& embedding);

// One frame of synthetic detections for every camera. A keypoint is emitted
// iff front-facing and unoccluded, then survives dropout and jitter; colors
// and outliers follow the noise model. Pure for fixed inputs.
std::vector<DetectionSet> simulate_frame(const geom::TemplateMesh& tmpl, const board::Board& b,
                                         const ClothState& state, const std::vector<cam::Camera>& cameras,
                                         const NoiseConfig& noise, int frame_t,
                                         const Occluder* occluder = nullptr);

}  // namespace patterncloth::sim
