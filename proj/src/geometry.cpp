#include "patterncloth/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <stdexcept>

#include "patterncloth/errors.hpp"
#include "patterncloth/rng.hpp"

namespace patterncloth::geom {

TemplateMesh build_template(const board::Board& b, const std::vector<std::uint8_t>& active_mask,
                            const std::function<Eigen::Vector3d(int, int)>& embedding) {
    const int rows = b.rows, cols = b.cols;
    if (static_cast<int>(active_mask.size()) != rows * cols)
        throw std::invalid_argument("build_template: mask size mismatch");

    TemplateMesh t;
    t.cell_size_mm = b.cell_size_mm;
    t.board_rows = rows;
    t.board_cols = cols;

    // One vertex per active cell, raster order.
    std::vector<int> vid(active_mask.size(), -1);
    int n = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (active_mask[static_cast<std::size_t>(r) * cols + c]) vid[static_cast<std::size_t>(r) * cols + c] = n++;
    if (n == 0) throw std::invalid_argument("build_template: empty mask");

    // The active set must be one 4-connected component.
    {
        std::vector<std::uint8_t> seen(active_mask.size(), 0);
        std::deque<std::pair<int, int>> q;
        for (int i = 0; i < rows * cols && q.empty(); ++i)
            if (active_mask[static_cast<std::size_t>(i)]) {
                q.push_back({i / cols, i % cols});
                seen[static_cast<std::size_t>(i)] = 1;
            }
        int reached = 0;
        while (!q.empty()) {
            auto [r, c] = q.front();
            q.pop_front();
            ++reached;
            const int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
            for (int d = 0; d < 4; ++d) {
                const int rr = r + dr[d], cc = c + dc[d];
                if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
                const std::size_t idx = static_cast<std::size_t>(rr) * cols + cc;
                if (active_mask[idx] && !seen[idx]) {
                    seen[idx] = 1;
                    q.push_back({rr, cc});
                }
            }
        }
        if (reached != n) throw DisconnectedMask("build_template: active mask has multiple components");
    }

    t.vertices.resize(n, 3);
    t.board_coords.resize(static_cast<std::size_t>(n));
    t.uv.resize(n, 2);
    int rmin = rows, rmax = -1, cmin = cols, cmax = -1;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const int v = vid[static_cast<std::size_t>(r) * cols + c];
            if (v < 0) continue;
            t.vertices.row(v) = embedding(r, c);
            t.board_coords[static_cast<std::size_t>(v)] = {r, c};
            t.cell_to_vertex[TemplateMesh::cell_key(r, c)] = v;
            rmin = std::min(rmin, r); rmax = std::max(rmax, r);
            cmin = std::min(cmin, c); cmax = std::max(cmax, c);
        }
    const double rspan = std::max(1, rmax - rmin), cspan = std::max(1, cmax - cmin);
    for (int v = 0; v < n; ++v) {
        auto [r, c] = *t.board_coords[static_cast<std::size_t>(v)];
        t.uv(v, 0) = (c - cmin) / cspan;
        t.uv(v, 1) = (r - rmin) / rspan;
    }

    // Two triangles per fully active 2x2 block, CCW seen from +z for the
    // planar embedding (x = col, y = row).
    std::vector<Eigen::RowVector3i> tris;
    for (int r = 0; r + 1 < rows; ++r)
        for (int c = 0; c + 1 < cols; ++c) {
            const int v00 = vid[static_cast<std::size_t>(r) * cols + c];
            const int v01 = vid[static_cast<std::size_t>(r) * cols + c + 1];
            const int v10 = vid[static_cast<std::size_t>(r + 1) * cols + c];
            const int v11 = vid[static_cast<std::size_t>(r + 1) * cols + c + 1];
            if (v00 < 0 || v01 < 0 || v10 < 0 || v11 < 0) continue;
            tris.push_back({v00, v01, v11});
            tris.push_back({v00, v11, v10});
        }
    t.triangles.resize(static_cast<Eigen::Index>(tris.size()), 3);
    for (std::size_t i = 0; i < tris.size(); ++i) t.triangles.row(static_cast<Eigen::Index>(i)) = tris[i];

    std::set<std::pair<int, int>> edge_set;
    for (Eigen::Index f = 0; f < t.triangles.rows(); ++f)
        for (int e = 0; e < 3; ++e) {
            int a = t.triangles(f, e), bb = t.triangles(f, (e + 1) % 3);
            edge_set.insert({std::min(a, bb), std::max(a, bb)});
        }
    t.edges.assign(edge_set.begin(), edge_set.end());
    return t;
}

Eigen::MatrixX3d vertex_normals(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F) {
    Eigen::MatrixX3d N = Eigen::MatrixX3d::Zero(V.rows(), 3);
    for (Eigen::Index f = 0; f < F.rows(); ++f) {
        const Eigen::Vector3d a = V.row(F(f, 0)), b = V.row(F(f, 1)), c = V.row(F(f, 2));
        const Eigen::Vector3d an = (b - a).cross(c - a);  // 2x area-weighted
        for (int e = 0; e < 3; ++e) N.row(F(f, e)) += an;
    }
    for (Eigen::Index v = 0; v < N.rows(); ++v) {
        const double len = N.row(v).norm();
        if (len > 1e-15) N.row(v) /= len;
    }
    return N;
}

Eigen::SparseMatrix<double> cotangent_laplacian(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F,
                                                double clamp) {
    std::unordered_map<std::int64_t, double> w;
    auto key = [](int i, int j) {
        if (i > j) std::swap(i, j);
        return (static_cast<std::int64_t>(i) << 32) | static_cast<std::uint32_t>(j);
    };
    for (Eigen::Index f = 0; f < F.rows(); ++f)
        for (int e = 0; e < 3; ++e) {
            const int i = F(f, (e + 1) % 3), j = F(f, (e + 2) % 3), o = F(f, e);
            const Eigen::Vector3d u = Eigen::Vector3d(V.row(i)) - Eigen::Vector3d(V.row(o));
            const Eigen::Vector3d v = Eigen::Vector3d(V.row(j)) - Eigen::Vector3d(V.row(o));
            const double cross = u.cross(v).norm();
            if (cross < 1e-15) continue;  // degenerate corner; clamp keeps the edge alive
            w[key(i, j)] += 0.5 * u.dot(v) / cross;
        }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(w.size() * 4);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(V.rows());
    for (const auto& [k, wij] : w) {
        const int i = static_cast<int>(k >> 32), j = static_cast<int>(k & 0xffffffff);
        const double wc = std::max(wij, clamp);
        trips.emplace_back(i, j, -wc);
        trips.emplace_back(j, i, -wc);
        diag[i] += wc;
        diag[j] += wc;
    }
    for (int i = 0; i < V.rows(); ++i) trips.emplace_back(i, i, diag[i]);
    Eigen::SparseMatrix<double> L(V.rows(), V.rows());
    L.setFromTriplets(trips.begin(), trips.end());
    return L;
}

Eigen::VectorXd lumped_mass(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F) {
    Eigen::VectorXd M = Eigen::VectorXd::Zero(V.rows());
    for (Eigen::Index f = 0; f < F.rows(); ++f) {
        const Eigen::Vector3d a = V.row(F(f, 0)), b = V.row(F(f, 1)), c = V.row(F(f, 2));
        const double third = (b - a).cross(c - a).norm() / 6.0;
        for (int e = 0; e < 3; ++e) M[F(f, e)] += third;
    }
    return M;
}

namespace {

// Dirichlet solve of K x = 0 on free vertices for each coordinate of a
// per-vertex field, K being the (bi)laplacian of the rest mesh.
Eigen::MatrixX3d constrained_solve(const TemplateMesh& tmpl, const std::vector<std::uint8_t>& constrained,
                                   const Eigen::MatrixX3d& values, bool biharmonic) {
    const Eigen::Index n = tmpl.vertices.rows();
    if (static_cast<Eigen::Index>(constrained.size()) != n || values.rows() != n)
        throw std::invalid_argument("constrained_solve: size mismatch");

    // Every connected component needs at least one constraint.
    {
        std::vector<int> comp(static_cast<std::size_t>(n), -1);
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
        for (auto [a, b] : tmpl.edges) {
            adj[static_cast<std::size_t>(a)].push_back(b);
            adj[static_cast<std::size_t>(b)].push_back(a);
        }
        int nc = 0;
        for (Eigen::Index s = 0; s < n; ++s) {
            if (comp[static_cast<std::size_t>(s)] >= 0) continue;
            std::deque<int> q{static_cast<int>(s)};
            comp[static_cast<std::size_t>(s)] = nc;
            while (!q.empty()) {
                int v = q.front();
                q.pop_front();
                for (int u : adj[static_cast<std::size_t>(v)])
                    if (comp[static_cast<std::size_t>(u)] < 0) {
                        comp[static_cast<std::size_t>(u)] = nc;
                        q.push_back(u);
                    }
            }
            ++nc;
        }
        std::vector<std::uint8_t> has(static_cast<std::size_t>(nc), 0);
        for (Eigen::Index v = 0; v < n; ++v)
            if (constrained[static_cast<std::size_t>(v)]) has[static_cast<std::size_t>(comp[static_cast<std::size_t>(v)])] = 1;
        for (int c = 0; c < nc; ++c)
            if (!has[static_cast<std::size_t>(c)])
                throw SingularSystem("constrained solve: component without constraints");
    }

    Eigen::SparseMatrix<double> K = cotangent_laplacian(tmpl.vertices, tmpl.triangles);
    if (biharmonic) K = (K * K).pruned();

    std::vector<int> free_idx(static_cast<std::size_t>(n), -1);
    int nf = 0;
    for (Eigen::Index v = 0; v < n; ++v)
        if (!constrained[static_cast<std::size_t>(v)]) free_idx[static_cast<std::size_t>(v)] = nf++;

    Eigen::MatrixX3d out = values;
    if (nf == 0) return out;

    std::vector<Eigen::Triplet<double>> tA;
    Eigen::MatrixX3d rhs = Eigen::MatrixX3d::Zero(nf, 3);
    for (int col = 0; col < K.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(K, col); it; ++it) {
            const int i = static_cast<int>(it.row()), j = static_cast<int>(it.col());
            if (free_idx[static_cast<std::size_t>(i)] < 0) continue;
            if (free_idx[static_cast<std::size_t>(j)] >= 0)
                tA.emplace_back(free_idx[static_cast<std::size_t>(i)], free_idx[static_cast<std::size_t>(j)], it.value());
            else
                rhs.row(free_idx[static_cast<std::size_t>(i)]) -= it.value() * values.row(j);
        }
    Eigen::SparseMatrix<double> A(nf, nf);
    A.setFromTriplets(tA.begin(), tA.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
    if (solver.info() != Eigen::Success) throw SingularSystem("constrained solve: factorization failed");
    Eigen::MatrixX3d X = solver.solve(rhs);
    for (Eigen::Index v = 0; v < n; ++v)
        if (free_idx[static_cast<std::size_t>(v)] >= 0) out.row(v) = X.row(free_idx[static_cast<std::size_t>(v)]);
    return out;
}

}  // namespace

Eigen::MatrixX3d laplacian_fill(const TemplateMesh& tmpl, const std::vector<std::uint8_t>& constrained,
                                const Eigen::MatrixX3d& constrained_positions) {
    return constrained_solve(tmpl, constrained, constrained_positions, /*biharmonic=*/false);
}

Eigen::MatrixX3d biharmonic_inpaint(const TemplateMesh& tmpl, const std::vector<std::uint8_t>& constrained,
                                    const Eigen::MatrixX3d& constrained_values) {
    return constrained_solve(tmpl, constrained, constrained_values, /*biharmonic=*/true);
}

SpectralBasis lb_eigenbasis(const TemplateMesh& tmpl, int k) {
    const Eigen::Index n = tmpl.vertices.rows();
    if (k < 1 || k > n) throw std::invalid_argument("lb_eigenbasis: k out of range");

    SpectralBasis basis;
    basis.mass = lumped_mass(tmpl.vertices, tmpl.triangles);
    Eigen::SparseMatrix<double> L = cotangent_laplacian(tmpl.vertices, tmpl.triangles);
    const Eigen::VectorXd& M = basis.mass;

    auto fix_signs = [](Eigen::MatrixXd& X) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            Eigen::Index imax = 0;
            X.col(j).cwiseAbs().maxCoeff(&imax);
            if (X(imax, j) < 0) X.col(j) = -X.col(j);
        }
    };

    if (n <= 400) {
        // Small meshes: dense generalized solve.
        Eigen::MatrixXd Ld = Eigen::MatrixXd(L);
        Eigen::MatrixXd Md = M.asDiagonal();
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Ld, Md);
        if (es.info() != Eigen::Success) throw ConvergenceFailure("lb_eigenbasis: dense solve failed");
        basis.eigenvalues = es.eigenvalues().head(k);
        basis.eigenfunctions = es.eigenvectors().leftCols(k);
        fix_signs(basis.eigenfunctions);
        return basis;
    }

    // Shift-inverted subspace iteration with Rayleigh-Ritz extraction.
    const int p = std::min<Eigen::Index>(n, k + std::max(8, k / 2));
    const double sigma = 1e-6 * (L.diagonal().sum() / n) / (M.sum() / n);
    Eigen::SparseMatrix<double> A = L;
    for (Eigen::Index i = 0; i < n; ++i) A.coeffRef(i, i) += sigma * M[i];
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> fact(A);
    if (fact.info() != Eigen::Success) throw ConvergenceFailure("lb_eigenbasis: shift factorization failed");

    Rng rng(derive_seed(0, "lb_eigenbasis"));
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) X(i, j) = rng.normal();

    auto m_orthonormalize = [&](Eigen::MatrixXd& Y) {
        for (Eigen::Index j = 0; j < Y.cols(); ++j) {
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index i = 0; i < j; ++i)
                    Y.col(j) -= (Y.col(i).dot(M.cwiseProduct(Y.col(j)))) * Y.col(i);
            const double nrm = std::sqrt(Y.col(j).dot(M.cwiseProduct(Y.col(j))));
            if (nrm < 1e-300) throw ConvergenceFailure("lb_eigenbasis: subspace collapsed");
            Y.col(j) /= nrm;
        }
    };

    Eigen::VectorXd evals;
    const int max_iters = 500;
    bool converged = false;
    for (int iter = 0; iter < max_iters && !converged; ++iter) {
        Eigen::MatrixXd Y = fact.solve(M.asDiagonal() * X);
        m_orthonormalize(Y);
        Eigen::MatrixXd Ar = Y.transpose() * (L * Y);
        Ar = 0.5 * (Ar + Ar.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ar);
        X = Y * es.eigenvectors();
        evals = es.eigenvalues();

        // Residual scale keeps a matrix-magnitude floor so the near-zero
        // constant mode doesn't demand sub-roundoff residuals.
        const double lam_scale = (L.diagonal().sum() / n) / (M.sum() / n);
        converged = true;
        for (int j = 0; j < k && converged; ++j) {
            const Eigen::VectorXd lx = L * X.col(j);
            const Eigen::VectorXd mx = M.cwiseProduct(X.col(j));
            const double res = (lx - evals[j] * mx).norm();
            const double scale = lx.norm() + (std::abs(evals[j]) + lam_scale) * mx.norm();
            if (res > 1e-8 * scale) converged = false;
        }
    }
    if (!converged) throw ConvergenceFailure("lb_eigenbasis: subspace iteration stalled");

    basis.eigenvalues = evals.head(k);
    basis.eigenfunctions = X.leftCols(k);
    fix_signs(basis.eigenfunctions);
    return basis;
}

Eigen::MatrixX3d spectral_augment(const Eigen::MatrixX3d& V, const Eigen::MatrixX3i& F,
                                  const SpectralBasis& basis, const AugmentParams& params) {
    if (params.alpha <= 0) throw std::invalid_argument("spectral_augment: alpha must be positive");
    const int k = std::min<int>(params.n_modes, static_cast<int>(basis.eigenfunctions.cols()));
    if (params.n_modes > basis.eigenfunctions.cols())
        throw std::invalid_argument("spectral_augment: n_modes exceeds basis size");
    if (V.rows() != basis.eigenfunctions.rows())
        throw std::invalid_argument("spectral_augment: vertex count mismatch with basis");

    Rng rng(params.seed);
    const double A = rng.normal(0.0, params.sigma_mm);
    Eigen::VectorXd D = Eigen::VectorXd::Zero(V.rows());
    for (int m = 1; m <= k; ++m) {
        const bool q = rng.bernoulli(0.5);
        if (!q) continue;
        D += std::exp(-params.alpha * m) * basis.eigenfunctions.col(m - 1);
    }
    D *= A;

    const Eigen::MatrixX3d N = vertex_normals(V, F);
    Eigen::MatrixX3d out = V;
    for (Eigen::Index v = 0; v < V.rows(); ++v) out.row(v) += D[v] * N.row(v);
    return out;
}

}  // namespace patterncloth::geom
