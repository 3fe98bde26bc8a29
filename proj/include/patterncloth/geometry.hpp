#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "patterncloth/board.hpp"

namespace patterncloth::geom {

// Single-panel garment template: one vertex per active board cell, regular
// grid triangulation, UV = affine map of board coordinates.
struct TemplateMesh {
    Eigen::MatrixX3d vertices;  // rest positions, mm
    Eigen::MatrixX3i triangles;
    std::vector<std::optional<std::pair<int, int>>> board_coords;  // per vertex
    Eigen::MatrixX2d uv;                                           // [0,1]^2
    std::vector<std::pair<int, int>> edges;                        // unique, i < j
    double cell_size_mm = 2.7;
    int board_rows = 0;
    int board_cols = 0;

    std::unordered_map<std::int64_t, int> cell_to_vertex;

    static std::int64_t cell_key(int r, int c) { return (static_cast<std::int64_t>(r) << 32) | static_cast<std::uint32_t>(c); }
    int vertex_for_cell(int r, int c) const {
        auto it = cell_to_vertex.find(cell_key(r, c));
        return it == cell_to_vertex.end() ? -1 : it->second;
    }
    int n_active_cells() const { return static_cast<int>(cell_to_vertex.size()); }
};

struct SpectralBasis {
    Eigen::VectorXd eigenvalues;    // ascending, 1/mm^2
    Eigen::MatrixXd eigenfunctions; // n_verts x k, M-orthonormal columns
    Eigen::VectorXd mass;           // lumped diagonal, mm^2
};

struct AugmentParams {
    double alpha = 50.0;    // filter decay rate
    double sigma_mm = 20.0; // scale std
    int n_modes = 64;
    std::uint64_t seed = 0;
};

// mask is rows*cols row-major; embedding maps (row, col) of an active cell to
// its rest-space position. Throws DisconnectedMask when the active set has
// more than one 4-connected component.
TemplateMesh build_template(const board::Board& b, const std::vector<std::uint8_t>& active_mask,
                            const std::function<Eigen::Vector3d(int, int)>& embedding);

// Area-weighted per-vertex normals (normalized; zero for isolated vertices).
Eigen::MatrixX3d vertex_normals(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F);

// Symmetric cotangent Laplacian (positive semi-definite convention: diagonal
// positive, off-diagonal negative). Weights clamped from below.
Eigen::SparseMatrix<double> cotangent_laplacian(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F,
                                                double clamp = 1e-6);

// Barycentric lumped mass diagonal.
Eigen::VectorXd lumped_mass(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F);

// Harmonic interpolation of unconstrained positions, cotangent weights on the
// rest mesh. Throws SingularSystem when a connected component of the topology
// has no constrained vertex.
Eigen::MatrixX3d laplacian_fill(const TemplateMesh& tmpl, const std::vector<std::uint8_t>& constrained,
                                const Eigen::MatrixX3d& constrained_positions);

// Same boundary-value setup for the bilaplacian: minimizes ||L x||^2 over the
// free vertices. Used to inpaint per-vertex offset fields.
Eigen::MatrixX3d biharmonic_inpaint(const TemplateMesh& tmpl, const std::vector<std::uint8_t>& constrained,
                                    const Eigen::MatrixX3d& constrained_values);

// k smallest generalized eigenpairs of (L_cot, M_lumped) by shift-inverted
// subspace iteration. Throws ConvergenceFailure if residuals stall.
SpectralBasis lb_eigenbasis(const TemplateMesh& tmpl, int k);

// Normal-direction displacement from decayed spectral modes:
// D = A * sum_n q_n e^{-alpha n} phi_n, A ~ N(0, sigma), q_n ~ Bernoulli(1/2).
Eigen::MatrixX3d spectral_augment(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F,
                                  const SpectralBasis& basis, const AugmentParams& params);

}  // namespace patterncloth::geom
