#include "patterncloth/registration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <queue>

namespace patterncloth::reg {

namespace {

// Exact 2D k-nearest-neighbor queries over a fixed point set. Implicit
// balanced tree: the median of each index range is the split node.
class KdTree2 {
public:
    explicit KdTree2(std::vector<Eigen::Vector2d> pts) : pts_(std::move(pts)) {
        idx_.resize(pts_.size());
        std::iota(idx_.begin(), idx_.end(), 0);
        if (!idx_.empty()) build(0, static_cast<int>(idx_.size()), 0);
    }

    // Indices of (up to) the k nearest points, closest first. Distance ties
    // break on index so results never depend on traversal order.
    std::vector<int> knn(const Eigen::Vector2d& q, int k) const {
        std::priority_queue<std::pair<double, int>> heap;  // worst kept on top
        if (!idx_.empty() && k > 0) search(0, static_cast<int>(idx_.size()), 0, q, k, heap);
        std::vector<std::pair<double, int>> best;
        while (!heap.empty()) {
            best.push_back(heap.top());
            heap.pop();
        }
        std::sort(best.begin(), best.end());
        std::vector<int> out(best.size());
        for (std::size_t i = 0; i < best.size(); ++i) out[i] = best[i].second;
        return out;
    }

private:
    void build(int lo, int hi, int axis) {
        if (hi - lo <= 1) return;
        const int mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                         [&](int a, int b) {
                             return pts_[a][axis] < pts_[b][axis] ||
                                    (pts_[a][axis] == pts_[b][axis] && a < b);
                         });
        build(lo, mid, axis ^ 1);
        build(mid + 1, hi, axis ^ 1);
    }

    void search(int lo, int hi, int axis, const Eigen::Vector2d& q, int k,
                std::priority_queue<std::pair<double, int>>& heap) const {
        if (lo >= hi) return;
        const int mid = (lo + hi) / 2;
        const int i = idx_[mid];
        heap.emplace((pts_[i] - q).squaredNorm(), i);
        if (static_cast<int>(heap.size()) > k) heap.pop();
        const double diff = q[axis] - pts_[i][axis];
        const bool left_first = diff < 0;
        const int nlo = left_first ? lo : mid + 1, nhi = left_first ? mid : hi;
        const int flo = left_first ? mid + 1 : lo, fhi = left_first ? hi : mid;
        search(nlo, nhi, axis ^ 1, q, k, heap);
        if (static_cast<int>(heap.size()) < k || diff * diff <= heap.top().first)
            search(flo, fhi, axis ^ 1, q, k, heap);
    }

    std::vector<Eigen::Vector2d> pts_;
    std::vector<int> idx_;
};

constexpr std::array<std::array<int, 2>, 4> kStep = {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

int opposite(int label) { return label ^ 1; }

int label_for(int sx, int sy) {
    if (sx == 1) return GridGraph::kPlusX;
    if (sx == -1) return GridGraph::kMinusX;
    return sy == 1 ? GridGraph::kPlusY : GridGraph::kMinusY;
}

// Quarter-turn rotation matrices acting on integer lattice steps.
std::array<int, 2> rot_step(int r, std::array<int, 2> s) {
    switch (r & 3) {
        case 0: return s;
        case 1: return {-s[1], s[0]};
        case 2: return {-s[0], -s[1]};
        default: return {s[1], -s[0]};
    }
}

Eigen::Matrix2d rot_matrix(int r) {
    Eigen::Matrix2d m;
    switch (r & 3) {
        case 0: m << 1, 0, 0, 1; break;
        case 1: m << 0, -1, 1, 0; break;
        case 2: m << -1, 0, 0, -1; break;
        default: m << 0, 1, -1, 0; break;
    }
    return m;
}

// Board-coordinate step (d_row, d_col) implied by one lattice step (sx, sy)
// when the query window equals rotate^rot of the board window.
std::array<int, 2> board_step(int rot, int sx, int sy) {
    switch (rot & 3) {
        case 0: return {sy, sx};
        case 1: return {-sx, sy};
        case 2: return {-sy, -sx};
        default: return {sx, -sy};
    }
}

}  // namespace

HeteroGraph build_hetero_graph(const sim::DetectionSet& det, const Params& params) {
    HeteroGraph g;
    g.camera_id = det.camera_id;
    g.frame_t = det.frame_t;

    std::vector<Eigen::Vector2d> corner_px;
    std::vector<int> corner_det;
    for (std::size_t i = 0; i < det.detections.size(); ++i) {
        const auto& d = det.detections[i];
        if (d.kind == sim::Detection::Kind::corner) {
            corner_px.push_back(d.pixel);
            corner_det.push_back(static_cast<int>(i));
        } else {
            g.centers.push_back({d.pixel, d.color_candidates, static_cast<int>(i)});
        }
    }
    g.center_edges.resize(g.centers.size());
    g.frames.resize(g.centers.size());

    const KdTree2 tree(corner_px);
    // Edges reference raw corner candidates first; unused corners are
    // compacted away at the end.
    std::vector<int> corner_used(corner_px.size(), 0);

    struct RawEdge {
        int corner;
        double residual;
    };
    std::vector<std::vector<RawEdge>> raw_edges(g.centers.size());

    for (std::size_t ci = 0; ci < g.centers.size(); ++ci) {
        const Eigen::Vector2d p = g.centers[ci].pixel;
        const std::vector<int> nn = tree.knn(p, params.knn);
        if (nn.size() < 2) continue;

        std::vector<Eigen::Vector2d> d(nn.size());
        std::vector<double> dist(nn.size());
        for (std::size_t i = 0; i < nn.size(); ++i) {
            d[i] = corner_px[static_cast<std::size_t>(nn[i])] - p;
            dist[i] = d[i].norm();
        }
        std::vector<double> sorted = dist;
        std::sort(sorted.begin(), sorted.end());
        const double threshold = params.pair_residual_factor * sorted[sorted.size() / 2];

        // The cell is the best affine image of the unit square centred on
        // this detection. Every ordered candidate pair (i, j) proposes itself
        // as two adjacent cell corners, which pins the affine map and
        // predicts the full corner set at offsets {d_i, d_j, -d_i, -d_j}.
        // Accepting each covered corner on its own residual keeps
        // three-corner cells fully linked where an all-or-nothing diagonal
        // test would drop a corner merely because its opposite went
        // undetected.
        //
        // Scoring is structural, not just a cover count. A cell viewed at a
        // grazing angle is squashed along one diagonal, so its long corners
        // sit over twice as far out as its short ones and a tight distance
        // gate around the nearest ring throws the true generators away.
        // Conversely, when one own corner drops out, the four second-ring
        // corners form a double-size rotated cell that out-covers the damaged
        // true one. What separates them is what they leave unexplained: the
        // double cell strands every surviving own corner strictly inside its
        // own reach, while the true cell strands nothing. Each unmatched
        // candidate inside the hypothesis's reach therefore counts double
        // against the cover: a bigger cell can always buy one extra inlier
        // from the outer ring per own corner it strands, so at equal weight
        // the trade would be a wash. Two forms of "inside" count. A lone
        // unmatched candidate counts when it sits more than one slop width
        // inside reach: "inside" must not hinge on the slop alone, since a
        // squashed cell's stranded long diagonal can fall within one slop
        // width of an oversized cell's reach. Those near-reach candidates
        // count instead when they have an unmatched mirror partner within
        // reach: real corners come in center-symmetric pairs, stray
        // detections do not. Reach is taken inclusively, so a hypothesis
        // cannot park a stranded pair exactly on its own reach line, yet a
        // mirror-looking coincidence of strays just beyond the corner ring
        // stays out: the corner lattice keeps every non-own pair at least
        // sqrt(9+s^2) short half-diagonals from the center (s the cell
        // aspect), so nothing honest is lost at the boundary. Pairing is
        // judged against the candidate's own radius, not the matching slop,
        // which on clean detections grows lax enough to pair strangers.
        // Candidates hugging the center (inside 0.6x the second-nearest
        // distance) are too close to be corners of any cell and never count,
        // or one stray detection there would poison every honest hypothesis.
        // Generators are still gated loosely on the second-nearest candidate
        // (so far rings cannot seed hypotheses wholesale) plus a
        // collinearity guard, since opposite corners pin no frame.
        const double ring = sorted[1];
        struct Slot {
            int cand = -1;      // index into nn/d, not a corner id
            double residual = 0.0;
        };
        std::array<Slot, 4> best_slots{};
        int best_score = std::numeric_limits<int>::min();
        int best_inliers = 0;
        double best_cost = 0.0;
        double best_scale = 0.0;
        std::vector<char> taken(nn.size());
        for (std::size_t i = 0; i < nn.size(); ++i)
            for (std::size_t j = 0; j < nn.size(); ++j) {
                if (i == j) continue;
                if (std::max(dist[i], dist[j]) > 2.6 * ring) continue;
                const double cross = d[i].x() * d[j].y() - d[i].y() * d[j].x();
                if (std::abs(cross) < 0.3 * dist[i] * dist[j]) continue;  // near-collinear
                const std::array<Eigen::Vector2d, 4> slot_pos = {d[i], d[j], -d[i], -d[j]};
                std::array<Slot, 4> slots{};
                std::fill(taken.begin(), taken.end(), 0);
                int inliers = 0;
                double cost = 0.0;
                for (std::size_t s = 0; s < 4; ++s) {
                    for (std::size_t c = 0; c < nn.size(); ++c) {
                        if (taken[c]) continue;
                        const double r = (d[c] - slot_pos[s]).norm();
                        if (r > threshold) continue;
                        if (slots[s].cand < 0 || r < slots[s].residual)
                            slots[s] = {static_cast<int>(c), r};
                    }
                    if (slots[s].cand >= 0) {
                        taken[static_cast<std::size_t>(slots[s].cand)] = 1;
                        ++inliers;
                        cost += slots[s].residual;
                    }
                }
                const double reach = std::max(dist[i], dist[j]);
                int unexplained = 0;
                for (std::size_t c = 0; c < nn.size(); ++c) {
                    if (taken[c] || dist[c] <= 0.6 * ring || dist[c] > reach)
                        continue;
                    bool counts = dist[c] + threshold < reach;
                    for (std::size_t m = 0; m < nn.size() && !counts; ++m)
                        counts = m != c && !taken[m] && dist[m] <= reach &&
                                 (d[c] + d[m]).norm() <= 0.25 * dist[c];
                    if (counts) ++unexplained;
                }
                const int score = inliers - 2 * unexplained;
                const double scale = dist[i] + dist[j];
                const bool better =
                    score > best_score ||
                    (score == best_score && inliers > best_inliers) ||
                    (score == best_score && inliers == best_inliers && cost < best_cost) ||
                    (score == best_score && inliers == best_inliers && cost == best_cost &&
                     scale < best_scale);
                if (better) {
                    best_slots = slots;
                    best_score = score;
                    best_inliers = inliers;
                    best_cost = cost;
                    best_scale = scale;
                }
            }

        auto accept = [&](int cand, double residual) {
            const int corner = nn[static_cast<std::size_t>(cand)];
            raw_edges[ci].push_back({corner, residual});
            corner_used[static_cast<std::size_t>(corner)] = 1;
        };
        if (best_score >= 2) {
            for (const auto& s : best_slots)
                if (s.cand >= 0) accept(s.cand, s.residual);
            // Half-diagonals from the covered corners: slots 0/2 and 1/3 are
            // opposite, so average them when both sides are present.
            auto axis = [&](std::size_t a, std::size_t b) {
                if (best_slots[a].cand >= 0 && best_slots[b].cand >= 0)
                    return Eigen::Vector2d(0.5 * (d[best_slots[a].cand] - d[best_slots[b].cand]));
                if (best_slots[a].cand >= 0) return Eigen::Vector2d(d[best_slots[a].cand]);
                return Eigen::Vector2d(-d[best_slots[b].cand]);
            };
            Eigen::Vector2d u1 = axis(0, 2);
            Eigen::Vector2d u2 = axis(1, 3);
            // The diagonals are the images of (.5,.5) and (.5,-.5); the frame
            // columns are their sum and difference. Fix the chirality to the
            // patterned side as imaged (image y down makes that det < 0).
            if (u1.x() * u2.y() - u1.y() * u2.x() < 0) std::swap(u1, u2);
            Eigen::Matrix2d frame;
            frame.col(0) = u1 + u2;
            frame.col(1) = u1 - u2;
            g.frames[ci] = frame;
        } else {
            // No two linearly independent corners: the survivors can still
            // form one clean diagonal (opposite corners whose midpoint lands
            // on the center). Two edges, no full frame.
            int pa = -1, pb = -1;
            double best_r = 0.0;
            for (std::size_t i = 0; i < nn.size(); ++i)
                for (std::size_t j = i + 1; j < nn.size(); ++j) {
                    if (std::max(dist[i], dist[j]) > 2.6 * ring) continue;
                    const double r = 0.5 * (d[i] + d[j]).norm();
                    if (r <= threshold && (pa < 0 || r < best_r)) {
                        pa = static_cast<int>(i);
                        pb = static_cast<int>(j);
                        best_r = r;
                    }
                }
            if (pa >= 0) {
                accept(pa, best_r);
                accept(pb, best_r);
            }
        }
    }

    // Compact corners down to those with at least one edge.
    std::vector<int> remap(corner_px.size(), -1);
    for (std::size_t i = 0; i < corner_px.size(); ++i)
        if (corner_used[i]) {
            remap[i] = static_cast<int>(g.corners.size());
            g.corners.push_back({corner_px[i], corner_det[i]});
        }
    for (std::size_t ci = 0; ci < g.centers.size(); ++ci)
        for (const auto& e : raw_edges[ci])
            g.center_edges[ci].push_back({remap[static_cast<std::size_t>(e.corner)], e.residual});
    return g;
}

GridGraph build_grid_graph(const HeteroGraph& hetero) {
    const int n = static_cast<int>(hetero.centers.size());
    GridGraph g;
    g.neighbors.assign(static_cast<std::size_t>(n), {-1, -1, -1, -1});
    g.component.assign(static_cast<std::size_t>(n), -1);
    g.coords.assign(static_cast<std::size_t>(n), {0, 0});

    // Count corners shared by each center pair; exactly two shared corners
    // (one cell edge) marks lattice adjacency.
    std::vector<std::vector<int>> corner_centers(hetero.corners.size());
    for (int c = 0; c < n; ++c)
        for (const auto& e : hetero.center_edges[static_cast<std::size_t>(c)])
            corner_centers[static_cast<std::size_t>(e.corner)].push_back(c);
    std::map<std::pair<int, int>, int> shared;
    for (const auto& list : corner_centers)
        for (std::size_t i = 0; i < list.size(); ++i)
            for (std::size_t j = i + 1; j < list.size(); ++j)
                ++shared[{std::min(list[i], list[j]), std::max(list[i], list[j])}];
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (const auto& [pair, count] : shared)
        if (count == 2) {
            adj[static_cast<std::size_t>(pair.first)].push_back(pair.second);
            adj[static_cast<std::size_t>(pair.second)].push_back(pair.first);
        }

    std::vector<Eigen::Matrix2d> phi(static_cast<std::size_t>(n));  // lattice step -> pixel offset
    std::vector<char> visited(static_cast<std::size_t>(n), 0);
    int comp = 0;

    // Map a pixel offset to a unit lattice step through a frame; nullopt when
    // the offset is not close to a single step.
    auto classify = [](const Eigen::Matrix2d& frame, const Eigen::Vector2d& w)
        -> std::optional<std::array<int, 2>> {
        if (std::abs(frame.determinant()) < 1e-9) return std::nullopt;
        const Eigen::Vector2d s = frame.inverse() * w;
        const int sx = static_cast<int>(std::lround(s.x()));
        const int sy = static_cast<int>(std::lround(s.y()));
        if (std::abs(sx) + std::abs(sy) != 1) return std::nullopt;
        if ((s - Eigen::Vector2d(sx, sy)).norm() > 0.35) return std::nullopt;
        return std::array<int, 2>{sx, sy};
    };

    for (int root = 0; root < n; ++root) {
        if (visited[static_cast<std::size_t>(root)]) continue;
        visited[static_cast<std::size_t>(root)] = 1;
        g.component[static_cast<std::size_t>(root)] = comp;
        if (adj[static_cast<std::size_t>(root)].empty()) {
            ++comp;
            continue;
        }
        // The root's frame fixes the component's axis convention.
        if (hetero.frames[static_cast<std::size_t>(root)]) {
            phi[static_cast<std::size_t>(root)] = *hetero.frames[static_cast<std::size_t>(root)];
        } else {
            const Eigen::Vector2d w =
                hetero.centers[static_cast<std::size_t>(adj[static_cast<std::size_t>(root)][0])].pixel -
                hetero.centers[static_cast<std::size_t>(root)].pixel;
            phi[static_cast<std::size_t>(root)].col(0) = w;
            phi[static_cast<std::size_t>(root)].col(1) = Eigen::Vector2d(-w.y(), w.x());
        }
        std::map<std::pair<int, int>, int> occupied;
        occupied[{0, 0}] = root;
        std::queue<int> queue;
        queue.push(root);
        while (!queue.empty()) {
            const int a = queue.front();
            queue.pop();
            for (int b : adj[static_cast<std::size_t>(a)]) {
                bool linked = false;
                for (int l = 0; l < 4; ++l)
                    if (g.neighbors[static_cast<std::size_t>(a)][static_cast<std::size_t>(l)] == b) linked = true;
                if (linked) continue;
                const Eigen::Vector2d w = hetero.centers[static_cast<std::size_t>(b)].pixel -
                                          hetero.centers[static_cast<std::size_t>(a)].pixel;
                const auto step = classify(phi[static_cast<std::size_t>(a)], w);
                if (!step) continue;
                const int label = label_for((*step)[0], (*step)[1]);
                if (g.neighbors[static_cast<std::size_t>(a)][static_cast<std::size_t>(label)] != -1) continue;
                const std::array<int, 2> bc = {g.coords[static_cast<std::size_t>(a)][0] + (*step)[0],
                                               g.coords[static_cast<std::size_t>(a)][1] + (*step)[1]};
                if (!visited[static_cast<std::size_t>(b)]) {
                    if (occupied.count({bc[0], bc[1]})) continue;  // coordinate clash
                    // Align b's private frame to the component axes via the
                    // back edge. Both endpoints must agree the offset spans
                    // one lattice step: when b's own frame reads the back
                    // edge as a multi-cell jump, the adjacency is vetoed
                    // rather than pushed through on a's say-so alone -- two
                    // centers can share a pair of collinear corners without
                    // being lattice neighbours, and that mistake is invisible
                    // to one side when its own frame is the damaged one. A
                    // frame that rounds to a unit step but misses the snap
                    // tolerance is merely noisy, so the edge survives on a's
                    // frame and b inherits the component axes.
                    Eigen::Matrix2d fb = phi[static_cast<std::size_t>(a)];
                    if (hetero.frames[static_cast<std::size_t>(b)] &&
                        std::abs(hetero.frames[static_cast<std::size_t>(b)]->determinant()) > 1e-9) {
                        const Eigen::Matrix2d& bf = *hetero.frames[static_cast<std::size_t>(b)];
                        const Eigen::Vector2d s = bf.inverse() * (-w);
                        const int sx = static_cast<int>(std::lround(s.x()));
                        const int sy = static_cast<int>(std::lround(s.y()));
                        if (std::abs(sx) + std::abs(sy) != 1) continue;
                        if ((s - Eigen::Vector2d(sx, sy)).norm() <= 0.35) {
                            const std::array<int, 2> want = {-(*step)[0], -(*step)[1]};
                            for (int r = 0; r < 4; ++r)
                                if (rot_step(r, want) == std::array<int, 2>{sx, sy}) {
                                    fb = bf * rot_matrix(r);
                                    break;
                                }
                        }
                    }
                    visited[static_cast<std::size_t>(b)] = 1;
                    g.component[static_cast<std::size_t>(b)] = comp;
                    g.coords[static_cast<std::size_t>(b)] = bc;
                    phi[static_cast<std::size_t>(b)] = fb;
                    occupied[{bc[0], bc[1]}] = b;
                    g.neighbors[static_cast<std::size_t>(a)][static_cast<std::size_t>(label)] = b;
                    g.neighbors[static_cast<std::size_t>(b)][static_cast<std::size_t>(opposite(label))] = a;
                    queue.push(b);
                } else {
                    // Closing edge: keep only when it matches the integer
                    // embedding (this enforces consistency around 4-cycles).
                    if (g.component[static_cast<std::size_t>(b)] != comp) continue;
                    if (g.coords[static_cast<std::size_t>(b)] != bc) continue;
                    if (g.neighbors[static_cast<std::size_t>(b)][static_cast<std::size_t>(opposite(label))] != -1)
                        continue;
                    g.neighbors[static_cast<std::size_t>(a)][static_cast<std::size_t>(label)] = b;
                    g.neighbors[static_cast<std::size_t>(b)][static_cast<std::size_t>(opposite(label))] = a;
                }
            }
        }
        ++comp;
    }
    return g;
}

std::vector<NodeWindow> extract_windows(const GridGraph& grid, const HeteroGraph& hetero) {
    const int n = static_cast<int>(grid.n_nodes());
    std::vector<NodeWindow> out(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
        out[static_cast<std::size_t>(v)].node = v;
        const auto& nbr = grid.neighbors[static_cast<std::size_t>(v)];
        for (int sy = -1; sy <= 1; ++sy)
            for (int sx = -1; sx <= 1; ++sx) {
                int target = -1;
                if (sx == 0 && sy == 0) {
                    target = v;
                } else if (sy == 0) {
                    target = nbr[static_cast<std::size_t>(label_for(sx, 0))];
                } else if (sx == 0) {
                    target = nbr[static_cast<std::size_t>(label_for(0, sy))];
                } else {
                    // Two-step walks; either axis order may be intact.
                    const int lx = label_for(sx, 0), ly = label_for(0, sy);
                    int m = nbr[static_cast<std::size_t>(lx)];
                    if (m != -1) target = grid.neighbors[static_cast<std::size_t>(m)][static_cast<std::size_t>(ly)];
                    if (target == -1) {
                        m = nbr[static_cast<std::size_t>(ly)];
                        if (m != -1)
                            target = grid.neighbors[static_cast<std::size_t>(m)][static_cast<std::size_t>(lx)];
                    }
                }
                if (target != -1)
                    out[static_cast<std::size_t>(v)].cells[static_cast<std::size_t>((sy + 1) * 3 + (sx + 1))] =
                        hetero.centers[static_cast<std::size_t>(target)].color_candidates;
            }
    }
    return out;
}

std::vector<std::vector<Candidate>> decode(const std::vector<NodeWindow>& windows,
                                           const board::Codebook& codebook, const Params& params) {
    std::vector<std::vector<Candidate>> out(windows.size());
    std::vector<board::ColorId> palette(static_cast<std::size_t>(codebook.n_colors()));
    for (std::size_t i = 0; i < palette.size(); ++i) palette[i] = static_cast<board::ColorId>(i);

    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
        const auto& cells = windows[wi].cells;
        std::array<const std::vector<board::ColorId>*, 9> options{};
        std::uint64_t completions = 1;
        for (int i = 0; i < 9; ++i) {
            options[static_cast<std::size_t>(i)] =
                cells[static_cast<std::size_t>(i)].empty() ? &palette : &cells[static_cast<std::size_t>(i)];
            completions *= options[static_cast<std::size_t>(i)]->size();
            if (completions > static_cast<std::uint64_t>(params.expansion_budget)) break;
        }
        if (completions > static_cast<std::uint64_t>(params.expansion_budget)) continue;

        std::array<std::size_t, 9> pick{};
        board::Window w;
        for (std::uint64_t it = 0; it < completions; ++it) {
            for (int i = 0; i < 9; ++i)
                w[static_cast<std::size_t>(i)] = (*options[static_cast<std::size_t>(i)])[pick[static_cast<std::size_t>(i)]];
            if (const auto hit = codebook.lookup(w)) {
                bool dup = false;
                for (const auto& c : out[wi])
                    if (c.row == hit->row && c.col == hit->col && c.rotation == hit->rotation) dup = true;
                if (!dup) out[wi].push_back(*hit);
            }
            for (int i = 0; i < 9; ++i) {  // odometer
                if (++pick[static_cast<std::size_t>(i)] < options[static_cast<std::size_t>(i)]->size()) break;
                pick[static_cast<std::size_t>(i)] = 0;
            }
        }
    }
    return out;
}

std::vector<RegisteredPixel> neighbor_vote(const std::vector<std::vector<Candidate>>& candidates_in,
                                           const GridGraph& grid, const HeteroGraph& hetero,
                                           const Params& params) {
    // Window axes are aligned per component, so every correct candidate in a
    // component carries one shared rotation. Nodes that decoded unambiguously
    // anchor that rotation; when a strict majority of anchors agree, drop the
    // candidates that disagree — they can only come from corrupted windows,
    // and left in place they can corroborate each other into confidently
    // wrong assignments.
    std::vector<std::vector<Candidate>> candidates = candidates_in;
    std::map<int, std::array<int, 4>> rot_anchors;
    for (std::size_t v = 0; v < candidates.size(); ++v)
        if (candidates[v].size() == 1)
            ++rot_anchors[grid.component[v]][static_cast<std::size_t>(candidates[v][0].rotation & 3)];
    for (const auto& [comp, hist] : rot_anchors) {
        const int total = hist[0] + hist[1] + hist[2] + hist[3];
        int top = 0;
        for (int r = 1; r < 4; ++r)
            if (hist[static_cast<std::size_t>(r)] > hist[static_cast<std::size_t>(top)]) top = r;
        bool tie = false;
        for (int r = 0; r < 4; ++r)
            if (r != top && hist[static_cast<std::size_t>(r)] == hist[static_cast<std::size_t>(top)]) tie = true;
        if (tie || 2 * hist[static_cast<std::size_t>(top)] <= total) continue;
        for (std::size_t v = 0; v < candidates.size(); ++v)
            if (grid.component[v] == comp)
                std::erase_if(candidates[v],
                              [top](const Candidate& c) { return (c.rotation & 3) != top; });
    }

    struct Provisional {
        int node;
        Candidate cand;
        double confidence;
        int corroborations;
    };
    std::vector<Provisional> prov;
    const int n = static_cast<int>(grid.n_nodes());
    for (int v = 0; v < n; ++v) {
        const auto& cset = candidates[static_cast<std::size_t>(v)];
        if (cset.empty()) continue;

        struct Voter {
            int node;
            int sx, sy;
        };
        std::vector<Voter> voters;
        for (int l = 0; l < 4; ++l) {
            const int m = grid.neighbors[static_cast<std::size_t>(v)][static_cast<std::size_t>(l)];
            if (m != -1 && !candidates[static_cast<std::size_t>(m)].empty())
                voters.push_back({m, kStep[static_cast<std::size_t>(l)][0], kStep[static_cast<std::size_t>(l)][1]});
        }
        const int n_voters = static_cast<int>(voters.size());

        int best = -1, best_count = -1, best_ties = 0;
        for (std::size_t ci = 0; ci < cset.size(); ++ci) {
            int count = 0;
            for (const auto& voter : voters) {
                const auto d = board_step(cset[ci].rotation, voter.sx, voter.sy);
                const int row = cset[ci].row + d[0], col = cset[ci].col + d[1];
                for (const auto& mc : candidates[static_cast<std::size_t>(voter.node)])
                    if (mc.row == row && mc.col == col && mc.rotation == cset[ci].rotation) {
                        ++count;
                        break;
                    }
            }
            if (count > best_count) {
                best_count = count;
                best = static_cast<int>(ci);
                best_ties = 1;
            } else if (count == best_count) {
                ++best_ties;
            }
        }

        int chosen = -1;
        double confidence = params.floor_confidence;
        if (n_voters == 0) {
            if (cset.size() == 1) chosen = 0;
        } else if (2 * best_count > n_voters) {
            if (best_ties == 1) {
                chosen = best;
                // Full confidence needs at least two corroborating neighbors;
                // a single voter might itself be corrupted, so one-voter
                // confirmations stay at the floor.
                confidence = static_cast<double>(best_count) / std::max(n_voters, 2);
            }
        } else if (cset.size() == 1 && n_voters - best_count < 2) {
            chosen = 0;  // singleton with at most one dissenter survives
        }
        if (chosen < 0) continue;
        prov.push_back({v, cset[static_cast<std::size_t>(chosen)], confidence,
                        chosen == best ? best_count : 0});
    }

    // Correct assignments within one component all realize one lattice
    // transform: board = origin + step(rotation, coords). Full-confidence
    // assignments elect that transform per component (strict majority with a
    // minimum quorum); it then arbitrates globally what local votes cannot.
    // A candidate that decodes and votes consistently but disagrees with the
    // component transform is a correlated misread, so it drops to floor
    // confidence — and with no elected transform there is no corroboration
    // beyond the immediate neighborhood, which correlated misreads can fake,
    // so fragments that elect nothing keep no full-confidence assignment at
    // all. A node the local vote left open registers at floor confidence
    // when its candidate set contains exactly the identity the transform
    // implies for its lattice position (the transform vouches for the cell,
    // not for the detection under it, so full confidence stays reserved for
    // independently voted nodes).
    constexpr int kConsensusQuorum = 5;
    struct Transform {
        int rot, row0, col0;
        auto operator<=>(const Transform&) const = default;
    };
    auto origin_of = [](const Candidate& c, const std::array<int, 2>& xy) {
        const auto d = board_step(c.rotation, xy[0], xy[1]);
        return Transform{c.rotation & 3, static_cast<int>(c.row) - d[0],
                         static_cast<int>(c.col) - d[1]};
    };
    std::map<int, std::map<Transform, int>> tally;
    for (const auto& p : prov)
        if (p.confidence == 1.0)
            ++tally[grid.component[static_cast<std::size_t>(p.node)]]
                   [origin_of(p.cand, grid.coords[static_cast<std::size_t>(p.node)])];
    std::map<int, Transform> consensus;
    for (const auto& [comp, hist] : tally) {
        int total = 0, top_count = 0;
        Transform top{};
        for (const auto& [tf, count] : hist) {
            total += count;
            if (count > top_count) {
                top_count = count;
                top = tf;
            }
        }
        if (top_count >= kConsensusQuorum && 2 * top_count > total) consensus[comp] = top;
    }
    auto implied_at = [&](const Transform& tf, int node) {
        const auto& xy = grid.coords[static_cast<std::size_t>(node)];
        const auto d = board_step(tf.rot, xy[0], xy[1]);
        return std::array<int, 2>{tf.row0 + d[0], tf.col0 + d[1]};
    };
    std::vector<char> has_reg(static_cast<std::size_t>(n));
    for (const auto& p : prov) has_reg[static_cast<std::size_t>(p.node)] = 1;
    for (auto& p : prov) {
        const auto it = consensus.find(grid.component[static_cast<std::size_t>(p.node)]);
        if (it == consensus.end()) {
            // Correlated misreads can fake one or two agreeing neighbors but
            // not three; short of that, an unvouched fragment registers at
            // floor confidence only.
            if (p.corroborations < 3) p.confidence = std::min(p.confidence, params.floor_confidence);
            continue;
        }
        const auto want = implied_at(it->second, p.node);
        if (static_cast<int>(p.cand.row) != want[0] || static_cast<int>(p.cand.col) != want[1])
            p.confidence = params.floor_confidence;
    }
    for (int v = 0; v < n; ++v) {
        if (has_reg[static_cast<std::size_t>(v)] || candidates[static_cast<std::size_t>(v)].empty())
            continue;
        const auto it = consensus.find(grid.component[static_cast<std::size_t>(v)]);
        if (it == consensus.end()) continue;
        const auto want = implied_at(it->second, v);
        for (const auto& c : candidates[static_cast<std::size_t>(v)])
            if (static_cast<int>(c.row) == want[0] && static_cast<int>(c.col) == want[1] &&
                (c.rotation & 3) == it->second.rot) {
                prov.push_back({v, c, params.floor_confidence, 0});
                break;
            }
    }

    std::sort(prov.begin(), prov.end(),
              [](const Provisional& a, const Provisional& b) { return a.node < b.node; });
    std::vector<RegisteredPixel> out;
    out.reserve(prov.size());
    for (const auto& p : prov) {
        RegisteredPixel rp;
        rp.camera_id = hetero.camera_id;
        rp.frame_t = hetero.frame_t;
        rp.pixel = hetero.centers[static_cast<std::size_t>(p.node)].pixel;
        rp.row = static_cast<int>(p.cand.row);
        rp.col = static_cast<int>(p.cand.col);
        rp.confidence = p.confidence;
        rp.detection_index = hetero.centers[static_cast<std::size_t>(p.node)].detection_index;
        out.push_back(rp);
    }
    return out;
}

std::vector<RegisteredPixel> register_frame(const sim::DetectionSet& det,
                                            const board::Codebook& codebook, const Params& params) {
    const HeteroGraph hetero = build_hetero_graph(det, params);
    const GridGraph grid = build_grid_graph(hetero);
    const std::vector<NodeWindow> windows = extract_windows(grid, hetero);
    const std::vector<std::vector<Candidate>> candidates = decode(windows, codebook, params);
    return neighbor_vote(candidates, grid, hetero, params);
}

}  // namespace patterncloth::reg
