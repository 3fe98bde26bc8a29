#include "patterncloth/capture_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "patterncloth/rng.hpp"

namespace patterncloth::sim {

namespace {

struct Aabb {
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());
    void grow(const Eigen::Vector3d& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    void grow(const Aabb& o) {
        lo = lo.cwiseMin(o.lo);
        hi = hi.cwiseMax(o.hi);
    }
    bool hit(const Eigen::Vector3d& o, const Eigen::Vector3d& inv_d, double smax) const {
        double t0 = 0.0, t1 = smax;
        for (int a = 0; a < 3; ++a) {
            double ta = (lo[a] - o[a]) * inv_d[a];
            double tb = (hi[a] - o[a]) * inv_d[a];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            if (t0 > t1) return false;
        }
        return true;
    }
};

}  // namespace

struct TriBvh::Impl {
    struct Node {
        Aabb box;
        int left = -1, right = -1;  // children, or leaf range when left < 0
        int begin = 0, end = 0;
    };
    Eigen::MatrixX3d V;
    Eigen::MatrixX3i F;
    std::vector<int> order;  // triangle indices, leaf ranges index into this
    std::vector<Node> nodes;

    int build(int begin, int end, std::vector<Eigen::Vector3d>& centroids) {
        Node node;
        for (int i = begin; i < end; ++i)
            for (int e = 0; e < 3; ++e) node.box.grow(V.row(F(order[static_cast<std::size_t>(i)], e)).transpose());
        const int idx = static_cast<int>(nodes.size());
        nodes.push_back(node);
        if (end - begin <= 4) {
            nodes[static_cast<std::size_t>(idx)].begin = begin;
            nodes[static_cast<std::size_t>(idx)].end = end;
            return idx;
        }
        Eigen::Vector3d ext = node.box.hi - node.box.lo;
        int axis = 0;
        ext.maxCoeff(&axis);
        const int mid = (begin + end) / 2;
        std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                         [&](int a, int b) {
                             const double ca = centroids[static_cast<std::size_t>(a)][axis];
                             const double cb = centroids[static_cast<std::size_t>(b)][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        const int l = build(begin, mid, centroids);
        const int r = build(mid, end, centroids);
        nodes[static_cast<std::size_t>(idx)].left = l;
        nodes[static_cast<std::size_t>(idx)].right = r;
        return idx;
    }

    // Moller-Trumbore; returns parameter s or infinity.
    double tri_hit(int f, const Eigen::Vector3d& o, const Eigen::Vector3d& d) const {
        const Eigen::Vector3d a = V.row(F(f, 0)), b = V.row(F(f, 1)), c = V.row(F(f, 2));
        const Eigen::Vector3d e1 = b - a, e2 = c - a;
        const Eigen::Vector3d p = d.cross(e2);
        const double det = e1.dot(p);
        if (std::abs(det) < 1e-14) return std::numeric_limits<double>::infinity();
        const double inv = 1.0 / det;
        const Eigen::Vector3d tv = o - a;
        const double u = tv.dot(p) * inv;
        if (u < 0.0 || u > 1.0) return std::numeric_limits<double>::infinity();
        const Eigen::Vector3d q = tv.cross(e1);
        const double v = d.dot(q) * inv;
        if (v < 0.0 || u + v > 1.0) return std::numeric_limits<double>::infinity();
        const double s = e2.dot(q) * inv;
        return s > 0.0 ? s : std::numeric_limits<double>::infinity();
    }
};

TriBvh::TriBvh(Eigen::MatrixX3d V, Eigen::MatrixX3i F) : impl_(std::make_unique<Impl>()) {
    impl_->V = std::move(V);
    impl_->F = std::move(F);
    const int n = static_cast<int>(impl_->F.rows());
    impl_->order.resize(static_cast<std::size_t>(n));
    std::iota(impl_->order.begin(), impl_->order.end(), 0);
    if (n == 0) return;
    std::vector<Eigen::Vector3d> centroids(static_cast<std::size_t>(n));
    for (int f = 0; f < n; ++f)
        centroids[static_cast<std::size_t>(f)] =
            (impl_->V.row(impl_->F(f, 0)) + impl_->V.row(impl_->F(f, 1)) + impl_->V.row(impl_->F(f, 2))) / 3.0;
    impl_->nodes.reserve(static_cast<std::size_t>(2 * n));
    impl_->build(0, n, centroids);
}

TriBvh::~TriBvh() = default;
TriBvh::TriBvh(TriBvh&&) noexcept = default;
TriBvh& TriBvh::operator=(TriBvh&&) noexcept = default;

bool TriBvh::any_hit_before(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double smax) const {
    if (impl_->nodes.empty()) return false;
    const Eigen::Vector3d inv_d = dir.cwiseInverse();
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const auto& node = impl_->nodes[static_cast<std::size_t>(stack.back())];
        stack.pop_back();
        if (!node.box.hit(origin, inv_d, smax)) continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i)
                if (impl_->tri_hit(impl_->order[static_cast<std::size_t>(i)], origin, dir) < smax) return true;
        } else {
            stack.push_back(node.left);
            stack.push_back(node.right);
        }
    }
    return false;
}

std::vector<std::pair<std::pair<int, int>, Eigen::Vector3d>> corner_lattice(
    const geom::TemplateMesh& tmpl, const std::function<Eigen::Vector3d(double, double)>& embedding) {
    std::vector<std::pair<std::pair<int, int>, Eigen::Vector3d>> out;
    std::set<std::pair<int, int>> seen;
    for (const auto& bc : tmpl.board_coords) {
        if (!bc) continue;
        for (int di = 0; di <= 1; ++di)
            for (int dj = 0; dj <= 1; ++dj) seen.insert({bc->first + di, bc->second + dj});
    }
    out.reserve(seen.size());
    for (auto [i, j] : seen) out.push_back({{i, j}, embedding(i - 0.5, j - 0.5)});
    return out;
}

namespace {

bool visible_point(const Eigen::Vector3d& p, const Eigen::Vector3d& n, const cam::Camera& c,
                   const TriBvh& bvh, double eps_mm) {
    const Eigen::Vector3d cc = c.center();
    const Eigen::Vector3d to_cam = cc - p;
    const double dist = to_cam.norm();
    if (dist < 1e-9 || n.dot(to_cam) <= 0.0) return false;  // behind or edge-on
    const Eigen::Vector3d dir = to_cam / dist;
    // Start the ray eps off the surface so the point's own triangles (hit at
    // s ~ +-roundoff on curved sheets) never count as occluders.
    return !bvh.any_hit_before(p + eps_mm * dir, dir, dist - 2.0 * eps_mm);
}

}  // namespace

std::vector<DetectionSet> simulate_frame(const geom::TemplateMesh& tmpl, const board::Board& b,
                                         const ClothState& state, const std::vector<cam::Camera>& cameras,
                                         const NoiseConfig& noise, int frame_t, const Occluder* occluder) {
    for (double rate : {noise.dropout_rate, noise.outlier_rate, noise.color_ambiguity_rate, noise.color_error_rate})
        if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("simulate_frame: noise rate outside [0,1]");
    if (state.centers.rows() != tmpl.vertices.rows())
        throw std::invalid_argument("simulate_frame: state size mismatch");

    // Ray-test geometry: deformed cloth plus any occluder.
    Eigen::MatrixX3d V = state.centers;
    Eigen::MatrixX3i F = tmpl.triangles;
    if (occluder && occluder->triangles.rows() > 0) {
        const Eigen::Index nv = V.rows(), nf = F.rows();
        V.conservativeResize(nv + occluder->vertices.rows(), 3);
        V.bottomRows(occluder->vertices.rows()) = occluder->vertices;
        F.conservativeResize(nf + occluder->triangles.rows(), 3);
        F.bottomRows(occluder->triangles.rows()) = occluder->triangles.array() + static_cast<int>(nv);
    }
    const TriBvh bvh(V, F);
    const double eps_mm = 0.25 * tmpl.cell_size_mm;

    const Eigen::MatrixX3d normals = geom::vertex_normals(state.centers, tmpl.triangles);

    // Corner normals: mean of the adjacent cells' vertex normals.
    std::vector<Eigen::Vector3d> corner_normals(state.corners.size());
    for (std::size_t ci = 0; ci < state.corners.size(); ++ci) {
        auto [ij, pos] = state.corners[ci];
        Eigen::Vector3d n = Eigen::Vector3d::Zero();
        for (int di = -1; di <= 0; ++di)
            for (int dj = -1; dj <= 0; ++dj) {
                const int v = tmpl.vertex_for_cell(ij.first + di, ij.second + dj);
                if (v >= 0) n += normals.row(v).transpose();
            }
        const double len = n.norm();
        corner_normals[ci] = len > 1e-12 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::UnitZ();
    }

    std::vector<DetectionSet> out;
    out.reserve(cameras.size());
    for (const auto& camera : cameras) {
        DetectionSet ds;
        ds.camera_id = camera.id;
        ds.frame_t = frame_t;
        Rng rng(derive_seed(noise.seed, "sim/f" + std::to_string(frame_t) + "/c" + std::to_string(camera.id)));

        auto emit = [&](const Eigen::Vector3d& p, const Eigen::Vector3d& n, Detection det) -> bool {
            if (!visible_point(p, n, camera, bvh, eps_mm)) return false;
            Eigen::Vector2d px;
            try {
                px = cam::project(camera, p);
            } catch (const BehindCamera&) {
                return false;
            }
            if (!cam::in_bounds(camera, px)) return false;
            if (rng.bernoulli(noise.dropout_rate)) return false;
            px.x() += rng.normal(0.0, noise.pixel_jitter_sigma);
            px.y() += rng.normal(0.0, noise.pixel_jitter_sigma);
            if (!cam::in_bounds(camera, px)) return false;
            det.pixel = px;
            ds.detections.push_back(std::move(det));
            return true;
        };

        int n_centers = 0;
        for (Eigen::Index v = 0; v < state.centers.rows(); ++v) {
            const auto& bc = tmpl.board_coords[static_cast<std::size_t>(v)];
            if (!bc) continue;
            Detection det;
            det.kind = Detection::Kind::center;
            det.gt_board_coord = *bc;
            const board::ColorId truth = b.at(bc->first, bc->second);
            // Color model draws happen only for emitted detections, after the
            // geometric emit decision; draw them lazily below.
            if (!emit(state.centers.row(v), normals.row(v), std::move(det))) continue;
            auto& placed = ds.detections.back();
            if (rng.bernoulli(noise.color_ambiguity_rate)) {
                const auto other = static_cast<board::ColorId>(
                    (truth + 1 + rng.uniform_index(static_cast<std::uint64_t>(b.n_colors - 1))) % b.n_colors);
                placed.color_candidates = {std::min(truth, other), std::max(truth, other)};
            } else if (rng.bernoulli(noise.color_error_rate)) {
                placed.color_candidates = {static_cast<board::ColorId>(
                    (truth + 1 + rng.uniform_index(static_cast<std::uint64_t>(b.n_colors - 1))) % b.n_colors)};
            } else {
                placed.color_candidates = {truth};
            }
            ++n_centers;
        }

        int n_corners = 0;
        for (std::size_t ci = 0; ci < state.corners.size(); ++ci) {
            Detection det;
            det.kind = Detection::Kind::corner;
            det.gt_board_coord = state.corners[ci].first;
            if (emit(state.corners[ci].second, corner_normals[ci], std::move(det))) ++n_corners;
        }

        const auto add_outliers = [&](int count, Detection::Kind kind) {
            for (int i = 0; i < count; ++i) {
                Detection det;
                det.kind = kind;
                det.pixel = {rng.uniform(0.0, camera.width), rng.uniform(0.0, camera.height)};
                if (kind == Detection::Kind::center)
                    det.color_candidates = {static_cast<board::ColorId>(rng.uniform_index(static_cast<std::uint64_t>(b.n_colors)))};
                ds.detections.push_back(std::move(det));
            }
        };
        add_outliers(static_cast<int>(std::lround(noise.outlier_rate * n_centers)), Detection::Kind::center);
        add_outliers(static_cast<int>(std::lround(noise.outlier_rate * n_corners)), Detection::Kind::corner);

        out.push_back(std::move(ds));
    }
    return out;
}

}  // namespace patterncloth::sim
