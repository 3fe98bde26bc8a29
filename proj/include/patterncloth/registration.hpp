#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "patterncloth/board.hpp"
#include "patterncloth/capture_sim.hpp"

namespace patterncloth::reg {

// Tuning knobs for the per-(camera, frame) registration pipeline. Defaults
// favor cheap decoding; raise expansion_budget to recover cells near
// visibility boundaries where several window cells are unknown.
struct Params {
    int knn = 8;                      // candidate corners examined per center
    double pair_residual_factor = 0.25;  // vs. median candidate-corner distance
    int expansion_budget = 64;        // max window completions enumerated per node
    double floor_confidence = 0.5;    // for nodes accepted without a voting majority
};

// Bipartite view of one detection set: centers linked to the cell corners
// that survive the local affine-consistency test.
struct HeteroGraph {
    struct Center {
        Eigen::Vector2d pixel;
        std::vector<board::ColorId> color_candidates;
        int detection_index;  // into the source DetectionSet
    };
    struct Corner {
        Eigen::Vector2d pixel;
        int detection_index;
    };
    struct Edge {
        int corner;       // index into corners
        double residual;  // offset from the fitted cell-corner position, px
    };

    std::vector<Center> centers;
    std::vector<Corner> corners;  // only corners that kept at least one edge
    std::vector<std::vector<Edge>> center_edges;  // per center, <= 4 entries
    // Local unit-cell frame per center: columns are the pixel offsets of
    // one-cell steps along the two local lattice axes. Chirality is fixed to
    // the patterned side as imaged (with image y down that means det < 0);
    // the four-fold rotation ambiguity is left for decoding. Absent when
    // the accepted corners do not span both axes.
    std::vector<std::optional<Eigen::Matrix2d>> frames;

    int camera_id = 0;
    int frame_t = 0;
};

// Lattice adjacency between centers. Step labels live in a per-component
// axis convention fixed by the component root; absolute board orientation is
// recovered later by the codebook. Labels: 0:+x 1:-x 2:+y 3:-y.
struct GridGraph {
    static constexpr int kPlusX = 0, kMinusX = 1, kPlusY = 2, kMinusY = 3;

    std::vector<std::array<int, 4>> neighbors;  // per center, -1 when absent
    std::vector<int> component;                 // component id per center
    // Integer lattice embedding within each component (root at the origin).
    // Every surviving edge satisfies coord[b] == coord[a] + step(label).
    std::vector<std::array<int, 2>> coords;     // (x, y)

    std::size_t n_nodes() const { return neighbors.size(); }
};

// 3x3 neighborhood of color-candidate sets around one center, indexed
// row-major by local offset: cell (sx, sy) at [(sy+1)*3 + (sx+1)].
// An empty set marks an unknown cell.
struct NodeWindow {
    int node = 0;
    std::array<std::vector<board::ColorId>, 9> cells;
};

// Candidate board identity for a node: query window == rotate^rotation of
// the board window at (row, col).
using Candidate = board::LookupResult;

struct RegisteredPixel {
    int camera_id = 0;
    int frame_t = 0;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    int row = 0;
    int col = 0;
    double confidence = 1.0;  // in (0, 1]
    int detection_index = -1;  // provenance into the source DetectionSet
};

// Link each center to the <= 4 corners of the best affine image of the unit
// cell: candidate pairs propose the cell frame, the hypothesis covering the
// most candidates within the residual threshold wins, and each covered
// corner is accepted on its own residual. Corners linked nowhere are dropped.
HeteroGraph build_hetero_graph(const sim::DetectionSet& det, const Params& params = {});

// Centers sharing exactly two corners become lattice neighbors; labels are
// assigned by BFS and edges violating the integer-lattice embedding (or
// duplicating a label) are removed.
GridGraph build_grid_graph(const HeteroGraph& hetero);

// Fill each node's 3x3 window by one- and two-step label walks; cells not
// reachable that way stay unknown.
std::vector<NodeWindow> extract_windows(const GridGraph& grid, const HeteroGraph& hetero);

// Enumerate every completion of unknown/ambiguous cells and collect the
// codebook hits. Windows whose completion count exceeds the expansion budget
// yield an empty candidate set.
std::vector<std::vector<Candidate>> decode(const std::vector<NodeWindow>& windows,
                                           const board::Codebook& codebook,
                                           const Params& params = {});

// Keep, per node, the candidate consistent with a strict majority of its
// decoded grid neighbors (confidence = consistent fraction, and full
// confidence needs at least two corroborating neighbors). Candidates whose
// rotation disagrees with a strict majority of the component's unambiguous
// decodes are dropped up front. Singleton candidates survive fewer than two
// dissenters at floor confidence; isolated singletons are accepted at floor
// confidence.
std::vector<RegisteredPixel> neighbor_vote(const std::vector<std::vector<Candidate>>& candidates,
                                           const GridGraph& grid, const HeteroGraph& hetero,
                                           const Params& params = {});

// Full per-(camera, frame) pipeline: graphs, windows, decode, vote.
std::vector<RegisteredPixel> register_frame(const sim::DetectionSet& det,
                                            const board::Codebook& codebook,
                                            const Params& params = {});

}  // namespace patterncloth::reg
